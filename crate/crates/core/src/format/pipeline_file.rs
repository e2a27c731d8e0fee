//! TOML pipeline descriptions.
//!
//! The file mirrors the registration calls one-to-one: a hierarchy, the
//! source labels, and one `[[nodes]]` table per node naming a catalog
//! operator. String fields of nodes may reference `[config]` entries as
//! `"${key}"`; a field consisting of a single reference takes the config
//! value with its type, otherwise the value is spliced into the string.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog;
use crate::graph::{build_graph, PipelineGraph, SourceSpec, ValidationError, ValidationKind};
use crate::hierarchy::{HierarchySpec, LevelDecl, LevelName};
use crate::pipeline::{
    Concurrency, ConfigMap, ConfigValue, FromConfig, InputSpec, NodeKind, OperatorRef, OutputSpec, Pipeline,
    RegistrationError,
};
use crate::store::{ProductLabel, TypeTag};
use crate::value::Value;

/// Type recorded for inputs whose type is neither declared nor inferable.
const UNKNOWN_TYPE: &str = "?";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    #[serde(default, skip_serializing_if = "ConfigMap::is_empty")]
    pub config: ConfigMap,
    #[serde(default)]
    pub hierarchy: Vec<LevelDecl>,
    #[serde(default)]
    pub sources: Vec<SourceDecl>,
    #[serde(default)]
    pub nodes: Vec<NodeDecl>,
}

fn yes() -> bool {
    true
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDecl {
    pub label: String,
    pub level: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub persist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDecl {
    pub label: String,
    pub level: String,
    /// Defaults to the producer's declared type.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub type_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDecl {
    pub label: String,
    /// Required except for filter pass labels, which keep their input's type.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub type_tag: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub temporary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDecl {
    pub name: String,
    pub kind: NodeKind,
    pub operator: OperatorRef,
    pub inputs: Vec<InputDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<OutputDecl>,
    /// Positive integer or `"unlimited"` (the default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<ConfigValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ConfigValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_level: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    /// 1-based position, when the problem maps to one.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn general(message: impl Into<String>) -> Self {
        ParseError {
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn from_toml(text: &str, err: &toml::de::Error) -> Self {
        let (line, column) = match err.span() {
            Some(span) => {
                let before = &text[..span.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                (Some(line), Some(column))
            }
            None => (None, None),
        };
        ParseError {
            line,
            column,
            message: err.message().trim().to_string(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "parse error at line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "parse error at line {l}: {}", self.message),
            _ => write!(f, "parse error: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("pipeline is invalid ({} problems)", .0.len())]
    Invalid(Vec<ValidationError>),
}

pub fn parse_pipeline_file(text: &str) -> Result<PipelineFile, ParseError> {
    toml::from_str(text).map_err(|e| ParseError::from_toml(text, &e))
}

/// Parses, binds and validates a pipeline description.
pub fn load_pipeline(text: &str) -> Result<PipelineGraph<Value>, LoadError> {
    parse_pipeline_file(text)?.into_graph()
}

// ---------------------------------------------------------------------------
// Interpolation

fn splice(s: &str, config: &ConfigMap) -> Result<ConfigValue, ParseError> {
    let missing = |key: &str| ParseError::general(format!("`${{{key}}}` does not name a config entry"));
    if let Some(key) = s.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
        if !key.contains("${") && !key.contains('}') {
            return config.raw(key).cloned().ok_or_else(|| missing(key));
        }
    }
    let mut out = String::new();
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 2..];
        let end = tail
            .find('}')
            .ok_or_else(|| ParseError::general(format!("unterminated `${{` in {s:?}")))?;
        let key = &tail[..end];
        match config.raw(key).ok_or_else(|| missing(key))? {
            ConfigValue::Str(v) => out.push_str(v),
            v => out.push_str(&v.to_string()),
        }
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(ConfigValue::Str(out))
}

fn interp_value(v: &ConfigValue, config: &ConfigMap) -> Result<ConfigValue, ParseError> {
    match v {
        ConfigValue::Str(s) => splice(s, config),
        ConfigValue::List(xs) => xs
            .iter()
            .map(|x| interp_value(x, config))
            .collect::<Result<_, _>>()
            .map(ConfigValue::List),
        other => Ok(other.clone()),
    }
}

fn interp_str(s: &str, config: &ConfigMap) -> Result<String, ParseError> {
    Ok(match splice(s, config)? {
        ConfigValue::Str(s) => s,
        other => other.to_string(),
    })
}

fn config_to_value(v: &ConfigValue) -> Option<Value> {
    match v {
        ConfigValue::Int(i) => Some(Value::Int(*i)),
        ConfigValue::Float(x) => Some(Value::Float(*x)),
        ConfigValue::Str(s) => Some(Value::Str(s.clone())),
        ConfigValue::List(xs) => xs.iter().map(config_to_value).collect::<Option<_>>().map(Value::List),
        ConfigValue::Bool(_) => None,
    }
}

fn value_to_config(v: &Value) -> ConfigValue {
    match v {
        Value::Int(i) => ConfigValue::Int(*i),
        Value::Float(x) => ConfigValue::Float(*x),
        Value::Str(s) => ConfigValue::Str(s.clone()),
        Value::List(xs) => ConfigValue::List(xs.iter().map(value_to_config).collect()),
    }
}

// ---------------------------------------------------------------------------
// Binding

fn token<T>(what: &str, s: &str, make: impl Fn(&str) -> Option<T>) -> Result<T, ParseError> {
    make(s).ok_or_else(|| ParseError::general(format!("invalid {what} {s:?}")))
}

fn label(s: &str) -> Result<ProductLabel, ParseError> {
    token("label", s, |s| ProductLabel::new(s).ok())
}

fn level(s: &str) -> Result<LevelName, ParseError> {
    token("level", s, |s| LevelName::new(s).ok())
}

fn type_tag(s: &str) -> Result<TypeTag, ParseError> {
    token("type", s, |s| TypeTag::new(s).ok())
}

/// Node declaration after interpolation, before registration.
struct Resolved {
    name: String,
    kind: NodeKind,
    operator: OperatorRef,
    inputs: Vec<(String, String, Option<String>)>,
    outputs: Vec<(String, Option<String>, bool)>,
    concurrency: Option<ConfigValue>,
    init: Option<ConfigValue>,
    fold_level: Option<String>,
    child_level: Option<String>,
}

impl NodeDecl {
    fn resolve(&self, config: &ConfigMap) -> Result<Resolved, ParseError> {
        let s = |x: &str| interp_str(x, config);
        let opt = |x: &Option<String>| x.as_deref().map(s).transpose();
        Ok(Resolved {
            name: self.name.clone(),
            kind: self.kind,
            operator: OperatorRef {
                name: self.operator.name.clone(),
                params: self
                    .operator
                    .params
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), interp_value(v, config)?)))
                    .collect::<Result<_, ParseError>>()?,
            },
            inputs: self
                .inputs
                .iter()
                .map(|i| Ok((s(&i.label)?, s(&i.level)?, opt(&i.type_tag)?)))
                .collect::<Result<_, ParseError>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|o| Ok((s(&o.label)?, opt(&o.type_tag)?, o.temporary)))
                .collect::<Result<_, ParseError>>()?,
            concurrency: self.concurrency.as_ref().map(|c| interp_value(c, config)).transpose()?,
            init: self.init.as_ref().map(|c| interp_value(c, config)).transpose()?,
            fold_level: opt(&self.fold_level)?,
            child_level: opt(&self.child_level)?,
        })
    }
}

struct Registered {
    pipeline: Pipeline<Value>,
    sources: Vec<SourceSpec>,
    errors: Vec<ValidationError>,
    /// Outputs of nodes that could not be registered.
    skipped_outputs: HashSet<String>,
}

fn invalid(node: &str, label: &str, detail: impl Into<String>) -> ValidationError {
    ValidationError::new(ValidationKind::InvalidNode, vec![node.to_string()], label, detail)
}

fn register(p: &mut Pipeline<Value>, n: &Resolved, types: &HashMap<String, String>) -> Result<(), ValidationError> {
    let name = n.name.as_str();
    let first_out = n.outputs.first().map(|o| o.0.as_str()).unwrap_or("");
    let fail = |detail: String| invalid(name, first_out, detail);
    let bad = |e: ParseError| fail(e.message);

    let mut inputs = Vec::with_capacity(n.inputs.len());
    for (l, lv, t) in &n.inputs {
        let t = t
            .clone()
            .or_else(|| types.get(l).cloned())
            .unwrap_or_else(|| UNKNOWN_TYPE.into());
        inputs.push(InputSpec {
            label: label(l).map_err(bad)?,
            level: level(lv).map_err(bad)?,
            type_tag: type_tag(&t).map_err(bad)?,
        });
    }
    let mut outputs = Vec::with_capacity(n.outputs.len());
    for (k, (l, t, temporary)) in n.outputs.iter().enumerate() {
        let t = match (t, n.kind) {
            (Some(t), _) => t.clone(),
            (None, NodeKind::Filter) => match inputs.get(k) {
                Some(i) => i.type_tag.to_string(),
                None => return Err(fail(format!("pass label `{l}` has no matching input"))),
            },
            (None, _) => return Err(fail(format!("output `{l}` needs a type"))),
        };
        outputs.push(OutputSpec {
            label: label(l).map_err(bad)?,
            type_tag: type_tag(&t).map_err(bad)?,
            temporary: *temporary,
        });
    }
    let concurrency = match &n.concurrency {
        None => Concurrency::Unlimited,
        Some(c) => Concurrency::from_config(c)
            .ok_or_else(|| fail(format!("concurrency must be a {}, found {c}", Concurrency::EXPECTED)))?,
    };
    let unexpected = |field: &str, present: bool, allowed: bool| {
        if present && !allowed {
            Err(fail(format!("`{field}` does not apply to a {}", n.kind)))
        } else {
            Ok(())
        }
    };
    unexpected("init", n.init.is_some(), n.kind == NodeKind::Fold)?;
    unexpected("fold_level", n.fold_level.is_some(), n.kind == NodeKind::Fold)?;
    unexpected("child_level", n.child_level.is_some(), n.kind == NodeKind::Unfold)?;
    unexpected("outputs", !n.outputs.is_empty(), n.kind != NodeKind::Monitor)?;

    let op = &n.operator;
    let cat = |e: catalog::CatalogError| fail(e.to_string());
    let tags: Vec<TypeTag> = outputs.iter().map(|o| o.type_tag.clone()).collect();
    let reg = |e: RegistrationError| match e {
        RegistrationError::DuplicateOutputLabel { node, label } => ValidationError::new(
            ValidationKind::MultipleProducers,
            vec![node],
            &label,
            "label has more than one producer",
        ),
        other => fail(other.to_string()),
    };
    let node = match n.kind {
        NodeKind::Transform => {
            let f = catalog::transform(op, inputs.len(), &tags).map_err(cat)?;
            p.register_transform(name, move |xs: &[&Value]| f(xs), inputs, outputs, concurrency)
        }
        NodeKind::Filter => {
            let f = catalog::predicate(op, inputs.len()).map_err(cat)?;
            p.register_filter(name, move |xs: &[&Value]| f(xs), inputs, outputs, concurrency)
        }
        NodeKind::Monitor => {
            let f = catalog::monitor(op, inputs.len(), name).map_err(cat)?;
            p.register_monitor(name, move |xs: &[&Value]| f(xs), inputs, concurrency)
        }
        NodeKind::Fold => {
            if outputs.len() != 1 {
                return Err(fail("a fold declares exactly one output".into()));
            }
            let level = n
                .fold_level
                .as_deref()
                .ok_or_else(|| fail("fold needs `fold_level`".into()))?;
            let init = n
                .init
                .as_ref()
                .ok_or_else(|| fail("fold needs `init`".into()))
                .and_then(|i| config_to_value(i).ok_or_else(|| fail(format!("unsupported init value {i}"))))?
                .coerce(tags[0].as_str())
                .map_err(|e| fail(format!("init: {e}")))?;
            let f = catalog::fold(op, inputs.len(), &tags[0]).map_err(cat)?;
            let result = outputs.into_iter().next().expect("one output");
            p.register_fold(
                name,
                move |acc, xs: &[&Value]| f(acc, xs),
                init,
                inputs,
                result,
                level,
                concurrency,
            )
        }
        NodeKind::Unfold => {
            if inputs.len() != 1 {
                return Err(fail("an unfold takes exactly one input".into()));
            }
            let child = n
                .child_level
                .as_deref()
                .ok_or_else(|| fail("unfold needs `child_level`".into()))?;
            let f = catalog::unfold(op, &tags).map_err(cat)?;
            let input = inputs.into_iter().next().expect("one input");
            p.register_unfold(name, move |s| f(s), input, child, outputs, concurrency)
        }
    }
    .map_err(reg)?;
    node.set_operator_ref(op.clone());
    Ok(())
}

impl PipelineFile {
    fn hierarchy_spec(&self) -> Result<HierarchySpec, ParseError> {
        let decls: Vec<(&str, &str)> = self
            .hierarchy
            .iter()
            .map(|d| (d.level.as_str(), d.parent.as_str()))
            .collect();
        HierarchySpec::define(&decls).map_err(|e| ParseError::general(format!("hierarchy: {e}")))
    }

    fn register_all(&self) -> Result<Registered, ParseError> {
        let config = &self.config;
        let hierarchy = self.hierarchy_spec()?;
        let mut sources = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            sources.push(SourceSpec {
                label: label(&interp_str(&s.label, config)?)?,
                level: level(&interp_str(&s.level, config)?)?,
                type_tag: type_tag(&interp_str(&s.type_tag, config)?)?,
                persist: s.persist,
            });
        }
        let nodes: Vec<Resolved> = self.nodes.iter().map(|n| n.resolve(config)).collect::<Result<_, _>>()?;

        // Declared types by label; filter pass labels inherit from their
        // inputs, which may themselves be inherited.
        let mut types: HashMap<String, String> = HashMap::new();
        for s in &sources {
            types
                .entry(s.label.to_string())
                .or_insert_with(|| s.type_tag.to_string());
        }
        for n in &nodes {
            for (l, t, _) in &n.outputs {
                if let Some(t) = t {
                    types.entry(l.clone()).or_insert_with(|| t.clone());
                }
            }
        }
        for _ in 0..=nodes.len() {
            let mut changed = false;
            for n in nodes.iter().filter(|n| n.kind == NodeKind::Filter) {
                for ((l, t, _), (il, _, it)) in n.outputs.iter().zip(&n.inputs) {
                    if t.is_some() || types.contains_key(l) {
                        continue;
                    }
                    if let Some(t) = it.clone().or_else(|| types.get(il).cloned()) {
                        types.insert(l.clone(), t);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut pipeline = Pipeline::with_config(hierarchy, config.clone());
        let mut errors = Vec::new();
        let mut skipped_outputs = HashSet::new();
        let mut producers: HashMap<&str, &str> = HashMap::new();
        for n in &nodes {
            if let Err(mut e) = register(&mut pipeline, n, &types) {
                if e.kind == ValidationKind::MultipleProducers {
                    if let Some(prev) = producers.get(e.label.as_str()) {
                        e.nodes.insert(0, prev.to_string());
                    }
                }
                skipped_outputs.extend(n.outputs.iter().map(|o| o.0.clone()));
                errors.push(e);
                continue;
            }
            for (l, _, _) in &n.outputs {
                producers.entry(l.as_str()).or_insert(n.name.as_str());
            }
        }
        Ok(Registered {
            pipeline,
            sources,
            errors,
            skipped_outputs,
        })
    }

    /// Binds every node to the catalog, without graph validation.
    pub fn into_pipeline(&self) -> Result<(Pipeline<Value>, Vec<SourceSpec>), LoadError> {
        let r = self.register_all()?;
        if r.errors.is_empty() {
            Ok((r.pipeline, r.sources))
        } else {
            Err(LoadError::Invalid(r.errors))
        }
    }

    /// Binds and validates, reporting every problem found.
    pub fn into_graph(&self) -> Result<PipelineGraph<Value>, LoadError> {
        let r = self.register_all()?;
        let mut errors = r.errors;
        match build_graph(r.pipeline, r.sources) {
            Ok(g) if errors.is_empty() => return Ok(g),
            Ok(_) => {}
            Err(graph_errors) => errors.extend(graph_errors.into_iter().filter(|e| {
                // Dangling references to a rejected node's outputs are
                // consequences of that rejection, not separate problems.
                !(e.kind == ValidationKind::UnknownLabel && r.skipped_outputs.contains(&e.label))
            })),
        }
        errors.sort();
        errors.dedup();
        Err(LoadError::Invalid(errors))
    }

    /// The file form of a pipeline whose nodes were all bound from the
    /// catalog; `None` if any node carries an in-process operator.
    pub fn from_pipeline(pipeline: &Pipeline<Value>, sources: &[SourceSpec]) -> Option<PipelineFile> {
        let nodes = pipeline
            .nodes()
            .iter()
            .map(|n| {
                Some(NodeDecl {
                    name: n.name().to_string(),
                    kind: n.kind(),
                    operator: n.operator_ref()?.clone(),
                    inputs: n
                        .inputs()
                        .iter()
                        .map(|i| InputDecl {
                            label: i.label.to_string(),
                            level: i.level.to_string(),
                            type_tag: Some(i.type_tag.to_string()),
                        })
                        .collect(),
                    outputs: n
                        .outputs()
                        .iter()
                        .map(|o| OutputDecl {
                            label: o.label.to_string(),
                            type_tag: Some(o.type_tag.to_string()),
                            temporary: o.temporary,
                        })
                        .collect(),
                    concurrency: Some(match n.concurrency() {
                        Concurrency::Bounded(k) => ConfigValue::Int(k.get() as i64),
                        Concurrency::Unlimited => ConfigValue::Str("unlimited".into()),
                    }),
                    init: n.fold_init().map(value_to_config),
                    fold_level: n.fold_level().map(|l| l.to_string()),
                    child_level: n.unfold_child_level().map(|l| l.to_string()),
                })
            })
            .collect::<Option<_>>()?;
        Some(PipelineFile {
            config: pipeline.config().clone(),
            hierarchy: pipeline.hierarchy().decls(),
            sources: sources
                .iter()
                .map(|s| SourceDecl {
                    label: s.label.to_string(),
                    level: s.level.to_string(),
                    type_tag: s.type_tag.to_string(),
                    persist: s.persist,
                })
                .collect(),
            nodes,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline files always serialize")
    }
}
