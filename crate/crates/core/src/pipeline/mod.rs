//! Declarative registration of higher-order-function applications.
//!
//! Each registered node names its kind, the operator to apply, the labeled
//! products it consumes (each at a declared level), the products it
//! creates and its concurrency limit. Nodes never declare edges; the
//! dependency graph is derived from labels by [`crate::graph`].

mod config;

pub use config::{config_get, ConfigMap, ConfigValue, FromConfig, TypeMismatch};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchySpec, LevelName};
use crate::store::{ProductLabel, TypeTag, SOURCE_PROVENANCE};

/// Error raised by a user operator.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct OperatorError(pub String);

impl OperatorError {
    pub fn new(msg: impl Into<String>) -> Self {
        OperatorError(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Transform,
    Filter,
    Monitor,
    Fold,
    Unfold,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Transform => "transform",
            NodeKind::Filter => "filter",
            NodeKind::Monitor => "monitor",
            NodeKind::Fold => "fold",
            NodeKind::Unfold => "unfold",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maximum number of simultaneous invocations of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Concurrency {
    Bounded(NonZeroUsize),
    /// As many as the worker pool allows.
    Unlimited,
}

impl Concurrency {
    pub fn bounded(n: usize) -> Option<Self> {
        NonZeroUsize::new(n).map(Concurrency::Bounded)
    }

    pub fn serial() -> Self {
        Concurrency::Bounded(NonZeroUsize::MIN)
    }

    /// Effective cap for a pool of the given width.
    pub fn cap(self, width: usize) -> usize {
        match self {
            Concurrency::Bounded(n) => n.get(),
            Concurrency::Unlimited => width.max(1),
        }
    }
}

impl fmt::Display for Concurrency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Concurrency::Bounded(n) => write!(f, "{n}"),
            Concurrency::Unlimited => f.write_str("unlimited"),
        }
    }
}

/// A consumed product: its label, the level it lives on, and its type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InputSpec {
    pub label: ProductLabel,
    pub level: LevelName,
    pub type_tag: TypeTag,
}

impl InputSpec {
    /// Panics on invalid tokens; intended for literals in code.
    pub fn new(label: &str, level: &str, type_tag: &str) -> Self {
        InputSpec {
            label: ProductLabel::new(label).expect("valid label"),
            level: LevelName::new(level).expect("valid level"),
            type_tag: TypeTag::new(type_tag).expect("valid type tag"),
        }
    }
}

/// A created product. Temporary products are never persisted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OutputSpec {
    pub label: ProductLabel,
    pub type_tag: TypeTag,
    pub temporary: bool,
}

impl OutputSpec {
    /// Panics on invalid tokens; intended for literals in code.
    pub fn new(label: &str, type_tag: &str) -> Self {
        OutputSpec {
            label: ProductLabel::new(label).expect("valid label"),
            type_tag: TypeTag::new(type_tag).expect("valid type tag"),
            temporary: false,
        }
    }

    pub fn temporary(label: &str, type_tag: &str) -> Self {
        OutputSpec {
            temporary: true,
            ..OutputSpec::new(label, type_tag)
        }
    }
}

/// Catalog reference used by file-driven pipelines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ConfigValue>,
}

impl OperatorRef {
    pub fn new(name: &str) -> Self {
        OperatorRef {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: ConfigValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

pub type TransformFn<P> = dyn Fn(&[&P]) -> Result<Vec<P>, OperatorError> + Send + Sync;
pub type PredicateFn<P> = dyn Fn(&[&P]) -> Result<bool, OperatorError> + Send + Sync;
pub type MonitorFn<P> = dyn Fn(&[&P]) -> Result<(), OperatorError> + Send + Sync;
pub type FoldFn<P> = dyn Fn(P, &[&P]) -> Result<P, OperatorError> + Send + Sync;
/// One unfold step: `None` terminates, `Some((outputs, next_state))` creates a child.
pub type UnfoldFn<P> = dyn Fn(P) -> Result<Option<(Vec<P>, P)>, OperatorError> + Send + Sync;

/// The callable applied by a node; the variant fixes the operator signature.
pub enum Operator<P> {
    Transform(Arc<TransformFn<P>>),
    Filter(Arc<PredicateFn<P>>),
    Monitor(Arc<MonitorFn<P>>),
    Fold { op: Arc<FoldFn<P>>, init: P },
    Unfold(Arc<UnfoldFn<P>>),
}

impl<P> Operator<P> {
    pub fn kind(&self) -> NodeKind {
        match self {
            Operator::Transform(_) => NodeKind::Transform,
            Operator::Filter(_) => NodeKind::Filter,
            Operator::Monitor(_) => NodeKind::Monitor,
            Operator::Fold { .. } => NodeKind::Fold,
            Operator::Unfold(_) => NodeKind::Unfold,
        }
    }
}

impl<P: Clone> Clone for Operator<P> {
    fn clone(&self) -> Self {
        match self {
            Operator::Transform(f) => Operator::Transform(Arc::clone(f)),
            Operator::Filter(f) => Operator::Filter(Arc::clone(f)),
            Operator::Monitor(f) => Operator::Monitor(Arc::clone(f)),
            Operator::Fold { op, init } => Operator::Fold {
                op: Arc::clone(op),
                init: init.clone(),
            },
            Operator::Unfold(f) => Operator::Unfold(Arc::clone(f)),
        }
    }
}

impl<P: fmt::Debug> fmt::Debug for Operator<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Fold { init, .. } => f.debug_struct("Fold").field("init", init).finish_non_exhaustive(),
            other => write!(f, "{}", other.kind()),
        }
    }
}

/// One registered node.
///
/// Equality compares the declaration (name, kind, catalog reference, fold
/// initializer, inputs, outputs, levels and concurrency), not the callable.
#[derive(Clone, Debug)]
pub struct NodeSpec<P> {
    name: Arc<str>,
    operator: Operator<P>,
    operator_ref: Option<OperatorRef>,
    inputs: Vec<InputSpec>,
    outputs: Vec<OutputSpec>,
    concurrency: Concurrency,
    fold_level: Option<LevelName>,
    unfold_child_level: Option<LevelName>,
}

impl<P> NodeSpec<P> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> NodeKind {
        self.operator.kind()
    }

    pub fn operator(&self) -> &Operator<P> {
        &self.operator
    }

    pub fn operator_ref(&self) -> Option<&OperatorRef> {
        self.operator_ref.as_ref()
    }

    /// Records the catalog reference this node was bound from.
    pub fn set_operator_ref(&mut self, r: OperatorRef) -> &mut Self {
        self.operator_ref = Some(r);
        self
    }

    pub fn inputs(&self) -> &[InputSpec] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[OutputSpec] {
        &self.outputs
    }

    pub fn concurrency(&self) -> Concurrency {
        self.concurrency
    }

    pub fn fold_level(&self) -> Option<&LevelName> {
        self.fold_level.as_ref()
    }

    pub fn unfold_child_level(&self) -> Option<&LevelName> {
        self.unfold_child_level.as_ref()
    }

    pub fn fold_init(&self) -> Option<&P> {
        match &self.operator {
            Operator::Fold { init, .. } => Some(init),
            _ => None,
        }
    }
}

impl<P: PartialEq> PartialEq for NodeSpec<P> {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.kind() == other.kind()
            && self.operator_ref == other.operator_ref
            && self.fold_init() == other.fold_init()
            && self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.concurrency == other.concurrency
            && self.fold_level == other.fold_level
            && self.unfold_child_level == other.unfold_child_level
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("node name `{0}` is already registered or reserved")]
    DuplicateNodeName(String),
    #[error("`{0}` is not a valid node name")]
    InvalidNodeName(String),
    #[error("node `{node}`: output label `{label}` is already produced by another node")]
    DuplicateOutputLabel { node: String, label: String },
    #[error("node `{node}`: {detail}")]
    ArityMismatch { node: String, detail: String },
    #[error("node `{node}`: unknown level `{level}`")]
    UnknownLevel { node: String, level: String },
    #[error("node `{node}`: fold level `{fold_level}` is not a proper ancestor of input level `{input_level}`")]
    LevelNotAncestor {
        node: String,
        fold_level: String,
        input_level: String,
    },
    #[error("node `{node}`: level `{child_level}` is not a child of input level `{input_level}`")]
    LevelNotChild {
        node: String,
        child_level: String,
        input_level: String,
    },
    #[error("node `{node}`: pass-through `{label}` must keep the input type `{expected}`")]
    PassThroughType {
        node: String,
        label: String,
        expected: String,
    },
}

impl RegistrationError {
    pub fn node(&self) -> &str {
        match self {
            RegistrationError::DuplicateNodeName(n) | RegistrationError::InvalidNodeName(n) => n,
            RegistrationError::DuplicateOutputLabel { node, .. }
            | RegistrationError::ArityMismatch { node, .. }
            | RegistrationError::UnknownLevel { node, .. }
            | RegistrationError::LevelNotAncestor { node, .. }
            | RegistrationError::LevelNotChild { node, .. }
            | RegistrationError::PassThroughType { node, .. } => node,
        }
    }
}

/// A hierarchy, its registered nodes and the configuration they were
/// registered with.
#[derive(Clone, Debug)]
pub struct Pipeline<P> {
    hierarchy: HierarchySpec,
    nodes: Vec<NodeSpec<P>>,
    config: ConfigMap,
    output_labels: HashSet<ProductLabel>,
}

impl<P: PartialEq> PartialEq for Pipeline<P> {
    fn eq(&self, other: &Self) -> bool {
        self.hierarchy == other.hierarchy && self.nodes == other.nodes && self.config == other.config
    }
}

impl<P> Pipeline<P> {
    pub fn new(hierarchy: HierarchySpec) -> Self {
        Self::with_config(hierarchy, ConfigMap::new())
    }

    pub fn with_config(hierarchy: HierarchySpec, config: ConfigMap) -> Self {
        Pipeline {
            hierarchy,
            nodes: Vec::new(),
            config,
            output_labels: HashSet::new(),
        }
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn config(&self) -> &ConfigMap {
        &self.config
    }

    pub fn nodes(&self) -> &[NodeSpec<P>] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec<P>> {
        self.nodes.iter().find(|n| &*n.name == name)
    }

    /// `f: α → β`, applied once per driving cell.
    pub fn register_transform<F>(
        &mut self,
        name: &str,
        operator: F,
        inputs: Vec<InputSpec>,
        outputs: Vec<OutputSpec>,
        concurrency: Concurrency,
    ) -> Result<&mut NodeSpec<P>, RegistrationError>
    where
        F: Fn(&[&P]) -> Result<Vec<P>, OperatorError> + Send + Sync + 'static,
    {
        if outputs.is_empty() {
            return Err(arity(name, "a transform needs at least one output"));
        }
        self.register(
            name,
            Operator::Transform(Arc::new(operator)),
            inputs,
            outputs,
            concurrency,
            None,
            None,
        )
    }

    /// `f: α → Boolean`. Accepted inputs are re-emitted unchanged under
    /// `pass_labels`; pass label `k` carries input `k`.
    pub fn register_filter<F>(
        &mut self,
        name: &str,
        predicate: F,
        inputs: Vec<InputSpec>,
        pass_labels: Vec<OutputSpec>,
        concurrency: Concurrency,
    ) -> Result<&mut NodeSpec<P>, RegistrationError>
    where
        F: Fn(&[&P]) -> Result<bool, OperatorError> + Send + Sync + 'static,
    {
        if pass_labels.is_empty() || pass_labels.len() > inputs.len() {
            return Err(arity(name, "a filter needs between one and one-per-input pass labels"));
        }
        for (input, pass) in inputs.iter().zip(&pass_labels) {
            if input.type_tag != pass.type_tag {
                return Err(RegistrationError::PassThroughType {
                    node: name.to_string(),
                    label: pass.label.to_string(),
                    expected: input.type_tag.to_string(),
                });
            }
        }
        self.register(
            name,
            Operator::Filter(Arc::new(predicate)),
            inputs,
            pass_labels,
            concurrency,
            None,
            None,
        )
    }

    /// `f: α → 1`; produces nothing.
    pub fn register_monitor<F>(
        &mut self,
        name: &str,
        operator: F,
        inputs: Vec<InputSpec>,
        concurrency: Concurrency,
    ) -> Result<&mut NodeSpec<P>, RegistrationError>
    where
        F: Fn(&[&P]) -> Result<(), OperatorError> + Send + Sync + 'static,
    {
        self.register(
            name,
            Operator::Monitor(Arc::new(operator)),
            inputs,
            Vec::new(),
            concurrency,
            None,
            None,
        )
    }

    /// `f: β × α → β`, seeded with `init`; one result per `fold_level` cell.
    #[allow(clippy::too_many_arguments)]
    pub fn register_fold<F>(
        &mut self,
        name: &str,
        operator: F,
        init: P,
        inputs: Vec<InputSpec>,
        result: OutputSpec,
        fold_level: &str,
        concurrency: Concurrency,
    ) -> Result<&mut NodeSpec<P>, RegistrationError>
    where
        F: Fn(P, &[&P]) -> Result<P, OperatorError> + Send + Sync + 'static,
    {
        let level = self.known_level(name, fold_level)?;
        for input in &inputs {
            if !self.hierarchy.is_proper_ancestor(fold_level, input.level.as_str()) {
                return Err(RegistrationError::LevelNotAncestor {
                    node: name.to_string(),
                    fold_level: fold_level.to_string(),
                    input_level: input.level.to_string(),
                });
            }
        }
        let op = Operator::Fold {
            op: Arc::new(operator),
            init,
        };
        self.register(name, op, inputs, vec![result], concurrency, Some(level), None)
    }

    /// `f: β → 1 + α × β`, iterated from the input product; each step creates
    /// one child cell at `child_level` holding the step's outputs.
    pub fn register_unfold<F>(
        &mut self,
        name: &str,
        operator: F,
        input: InputSpec,
        child_level: &str,
        child_outputs: Vec<OutputSpec>,
        concurrency: Concurrency,
    ) -> Result<&mut NodeSpec<P>, RegistrationError>
    where
        F: Fn(P) -> Result<Option<(Vec<P>, P)>, OperatorError> + Send + Sync + 'static,
    {
        let level = self.known_level(name, child_level)?;
        if child_outputs.is_empty() {
            return Err(arity(name, "an unfold needs at least one child output"));
        }
        if self.hierarchy.parent_of(child_level) != Some(&input.level) {
            return Err(RegistrationError::LevelNotChild {
                node: name.to_string(),
                child_level: child_level.to_string(),
                input_level: input.level.to_string(),
            });
        }
        self.register(
            name,
            Operator::Unfold(Arc::new(operator)),
            vec![input],
            child_outputs,
            concurrency,
            None,
            Some(level),
        )
    }

    fn known_level(&self, node: &str, level: &str) -> Result<LevelName, RegistrationError> {
        self.hierarchy
            .level(level)
            .cloned()
            .map_err(|_| RegistrationError::UnknownLevel {
                node: node.to_string(),
                level: level.to_string(),
            })
    }

    #[allow(clippy::too_many_arguments)]
    fn register(
        &mut self,
        name: &str,
        operator: Operator<P>,
        inputs: Vec<InputSpec>,
        outputs: Vec<OutputSpec>,
        concurrency: Concurrency,
        fold_level: Option<LevelName>,
        unfold_child_level: Option<LevelName>,
    ) -> Result<&mut NodeSpec<P>, RegistrationError> {
        if !crate::hierarchy::is_token(name) {
            return Err(RegistrationError::InvalidNodeName(name.to_string()));
        }
        if name == SOURCE_PROVENANCE || self.node(name).is_some() {
            return Err(RegistrationError::DuplicateNodeName(name.to_string()));
        }
        if inputs.is_empty() {
            return Err(arity(name, "at least one input is required"));
        }
        for input in &inputs {
            self.known_level(name, input.level.as_str())?;
        }
        let mut seen = HashSet::new();
        for out in &outputs {
            if self.output_labels.contains(&out.label) || !seen.insert(out.label.clone()) {
                return Err(RegistrationError::DuplicateOutputLabel {
                    node: name.to_string(),
                    label: out.label.to_string(),
                });
            }
        }
        self.output_labels.extend(seen);
        self.nodes.push(NodeSpec {
            name: Arc::from(name),
            operator,
            operator_ref: None,
            inputs,
            outputs,
            concurrency,
            fold_level,
            unfold_child_level,
        });
        Ok(self.nodes.last_mut().unwrap())
    }
}

fn arity(node: &str, detail: &str) -> RegistrationError {
    RegistrationError::ArityMismatch {
        node: node.to_string(),
        detail: detail.to_string(),
    }
}
