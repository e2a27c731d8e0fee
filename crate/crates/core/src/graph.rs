//! Dependency graph derived from product labels, its validation, and DOT
//! export.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::hierarchy::{HierarchySpec, LevelName};
use crate::pipeline::{NodeKind, NodeSpec, Pipeline};
use crate::store::{ProductLabel, TypeTag, SOURCE_PROVENANCE};

/// A label entering the job through the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceSpec {
    pub label: ProductLabel,
    pub level: LevelName,
    pub type_tag: TypeTag,
    /// Source products are persisted unless this is false.
    pub persist: bool,
}

impl SourceSpec {
    /// Panics on invalid tokens; intended for literals in code.
    pub fn new(label: &str, level: &str, type_tag: &str) -> Self {
        SourceSpec {
            label: ProductLabel::new(label).expect("valid label"),
            level: LevelName::new(level).expect("valid level"),
            type_tag: TypeTag::new(type_tag).expect("valid type tag"),
            persist: true,
        }
    }

    pub fn transient(mut self) -> Self {
        self.persist = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Producer {
    Source(usize),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub producer: String,
    pub label: ProductLabel,
    pub consumer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValidationKind {
    UnknownLabel,
    TypeConflict,
    MultipleProducers,
    Cycle,
    LevelIncompatible,
    /// A node declaration that could not be registered at all.
    InvalidNode,
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Error)]
#[error("{kind}: nodes [{}] label `{label}`: {detail}", nodes.join(", "))]
pub struct ValidationError {
    pub kind: ValidationKind,
    pub nodes: Vec<String>,
    pub label: String,
    pub detail: String,
}

impl ValidationError {
    pub fn new(kind: ValidationKind, nodes: Vec<String>, label: &str, detail: impl Into<String>) -> Self {
        ValidationError {
            kind,
            nodes,
            label: label.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node `{node}` has inputs on orthogonal levels `{a}` and `{b}`")]
    AmbiguousDrivingLevel { node: String, a: String, b: String },
}

/// The deepest input level of `node`; every other input level must be an
/// ancestor of it.
pub fn driving_level<P>(hierarchy: &HierarchySpec, node: &NodeSpec<P>) -> Result<LevelName, GraphError> {
    let mut deepest = &node.inputs()[0].level;
    for input in &node.inputs()[1..] {
        let l = &input.level;
        if hierarchy.is_ancestor_or_self(deepest.as_str(), l.as_str()) {
            deepest = l;
        } else if !hierarchy.is_ancestor_or_self(l.as_str(), deepest.as_str()) {
            return Err(GraphError::AmbiguousDrivingLevel {
                node: node.name().to_string(),
                a: deepest.to_string(),
                b: l.to_string(),
            });
        }
    }
    Ok(deepest.clone())
}

/// A validated pipeline together with its sources and label-mediated edges.
#[derive(Debug, Clone)]
pub struct PipelineGraph<P> {
    pipeline: Pipeline<P>,
    sources: Vec<SourceSpec>,
    producers: HashMap<ProductLabel, Producer>,
    edges: BTreeSet<Edge>,
    driving: Vec<usize>,
}

struct Parts {
    producers: HashMap<ProductLabel, Producer>,
    edges: BTreeSet<Edge>,
    driving: Vec<Option<usize>>,
    errors: Vec<ValidationError>,
}

fn output_level<P>(
    pipeline: &Pipeline<P>,
    sources: &[SourceSpec],
    driving: &[Option<usize>],
    producer: Producer,
) -> Option<usize> {
    let h = pipeline.hierarchy();
    match producer {
        Producer::Source(i) => h.level_index(sources[i].level.as_str()),
        Producer::Node(n) => {
            let node = &pipeline.nodes()[n];
            match node.kind() {
                NodeKind::Fold => node.fold_level().and_then(|l| h.level_index(l.as_str())),
                NodeKind::Unfold => node.unfold_child_level().and_then(|l| h.level_index(l.as_str())),
                _ => driving[n],
            }
        }
    }
}

fn producer_name<P>(pipeline: &Pipeline<P>, producer: Producer) -> String {
    match producer {
        Producer::Source(_) => SOURCE_PROVENANCE.to_string(),
        Producer::Node(n) => pipeline.nodes()[n].name().to_string(),
    }
}

fn producer_type<'a, P>(
    pipeline: &'a Pipeline<P>,
    sources: &'a [SourceSpec],
    producer: Producer,
    label: &str,
) -> &'a TypeTag {
    match producer {
        Producer::Source(i) => &sources[i].type_tag,
        Producer::Node(n) => {
            &pipeline.nodes()[n]
                .outputs()
                .iter()
                .find(|o| o.label.as_str() == label)
                .expect("producer declares the label")
                .type_tag
        }
    }
}

fn analyze<P>(pipeline: &Pipeline<P>, sources: &[SourceSpec]) -> Parts {
    let h = pipeline.hierarchy();
    let mut errors = Vec::new();
    let mut producers: HashMap<ProductLabel, Producer> = HashMap::new();

    for (i, s) in sources.iter().enumerate() {
        if !h.contains(s.level.as_str()) {
            errors.push(ValidationError::new(
                ValidationKind::LevelIncompatible,
                vec![SOURCE_PROVENANCE.into()],
                s.label.as_str(),
                format!("source level `{}` is not in the hierarchy", s.level),
            ));
        }
        if producers.insert(s.label.clone(), Producer::Source(i)).is_some() {
            errors.push(ValidationError::new(
                ValidationKind::MultipleProducers,
                vec![SOURCE_PROVENANCE.into()],
                s.label.as_str(),
                "source label declared more than once",
            ));
        }
    }
    for (n, node) in pipeline.nodes().iter().enumerate() {
        for out in node.outputs() {
            if let Some(&prev) = producers.get(&out.label) {
                errors.push(ValidationError::new(
                    ValidationKind::MultipleProducers,
                    vec![producer_name(pipeline, prev), node.name().to_string()],
                    out.label.as_str(),
                    "label has more than one producer",
                ));
            } else {
                producers.insert(out.label.clone(), Producer::Node(n));
            }
        }
    }

    let mut driving = Vec::with_capacity(pipeline.nodes().len());
    for node in pipeline.nodes() {
        match driving_level(h, node) {
            Ok(l) => driving.push(h.level_index(l.as_str())),
            Err(GraphError::AmbiguousDrivingLevel { a, b, .. }) => {
                let label = node
                    .inputs()
                    .iter()
                    .find(|i| i.level.as_str() == b)
                    .unwrap()
                    .label
                    .to_string();
                errors.push(ValidationError::new(
                    ValidationKind::LevelIncompatible,
                    vec![node.name().to_string()],
                    &label,
                    format!("inputs on orthogonal levels `{a}` and `{b}` leave no driving level"),
                ));
                driving.push(None);
            }
        }
    }

    let mut edges = BTreeSet::new();
    for node in pipeline.nodes() {
        for input in node.inputs() {
            let Some(&producer) = producers.get(&input.label) else {
                errors.push(ValidationError::new(
                    ValidationKind::UnknownLabel,
                    vec![node.name().to_string()],
                    input.label.as_str(),
                    "no source or node produces this label",
                ));
                continue;
            };
            edges.insert(Edge {
                producer: producer_name(pipeline, producer),
                label: input.label.clone(),
                consumer: node.name().to_string(),
            });
            let produced = producer_type(pipeline, sources, producer, input.label.as_str());
            if *produced != input.type_tag {
                errors.push(ValidationError::new(
                    ValidationKind::TypeConflict,
                    vec![producer_name(pipeline, producer), node.name().to_string()],
                    input.label.as_str(),
                    format!("produced as `{produced}`, consumed as `{}`", input.type_tag),
                ));
            }
        }
    }

    errors.extend(level_errors(pipeline, sources, &producers, &driving));
    errors.extend(cycle_errors(pipeline, &edges));
    Parts {
        producers,
        edges,
        driving,
        errors,
    }
}

fn level_errors<P>(
    pipeline: &Pipeline<P>,
    sources: &[SourceSpec],
    producers: &HashMap<ProductLabel, Producer>,
    driving: &[Option<usize>],
) -> Vec<ValidationError> {
    let h = pipeline.hierarchy();
    let mut errors = Vec::new();
    for node in pipeline.nodes() {
        for input in node.inputs() {
            let Some(&producer) = producers.get(&input.label) else {
                continue;
            };
            let Some(level) = output_level(pipeline, sources, driving, producer) else {
                continue;
            };
            if h.level_index(input.level.as_str()) != Some(level) {
                errors.push(ValidationError::new(
                    ValidationKind::LevelIncompatible,
                    vec![producer_name(pipeline, producer), node.name().to_string()],
                    input.label.as_str(),
                    format!(
                        "produced at level `{}`, declared at level `{}`",
                        h.level_name(level),
                        input.level
                    ),
                ));
            }
        }
    }
    errors
}

fn cycle_errors<P>(pipeline: &Pipeline<P>, edges: &BTreeSet<Edge>) -> Vec<ValidationError> {
    let mut g = DiGraph::<&str, &str>::new();
    let idx: HashMap<&str, _> = pipeline
        .nodes()
        .iter()
        .map(|n| (n.name(), g.add_node(n.name())))
        .collect();
    for e in edges {
        if let (Some(&a), Some(&b)) = (idx.get(e.producer.as_str()), idx.get(e.consumer.as_str())) {
            g.add_edge(a, b, e.label.as_str());
        }
    }
    let mut errors = Vec::new();
    for scc in tarjan_scc(&g) {
        let members: BTreeSet<&str> = scc.iter().map(|&i| g[i]).collect();
        let internal: Vec<&Edge> = edges
            .iter()
            .filter(|e| members.contains(e.producer.as_str()) && members.contains(e.consumer.as_str()))
            .collect();
        if internal.is_empty() {
            continue;
        }
        errors.push(ValidationError::new(
            ValidationKind::Cycle,
            members.iter().map(|s| s.to_string()).collect(),
            internal[0].label.as_str(),
            "nodes depend on each other's outputs",
        ));
    }
    errors
}

/// Builds and validates the dependency graph, reporting every problem found.
pub fn build_graph<P>(
    pipeline: Pipeline<P>,
    sources: Vec<SourceSpec>,
) -> Result<PipelineGraph<P>, Vec<ValidationError>> {
    let parts = analyze(&pipeline, &sources);
    if !parts.errors.is_empty() {
        let mut errors = parts.errors;
        errors.sort();
        errors.dedup();
        return Err(errors);
    }
    Ok(PipelineGraph {
        pipeline,
        sources,
        producers: parts.producers,
        edges: parts.edges,
        driving: parts.driving.into_iter().map(|d| d.expect("validated")).collect(),
    })
}

/// Re-checks that each consumer declares a label at the producer's level.
pub fn check_level_compatibility<P>(graph: &PipelineGraph<P>) -> Vec<ValidationError> {
    let driving: Vec<Option<usize>> = graph.driving.iter().copied().map(Some).collect();
    level_errors(&graph.pipeline, &graph.sources, &graph.producers, &driving)
}

impl<P> PipelineGraph<P> {
    pub fn pipeline(&self) -> &Pipeline<P> {
        &self.pipeline
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        self.pipeline.hierarchy()
    }

    pub fn nodes(&self) -> &[NodeSpec<P>] {
        self.pipeline.nodes()
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn source(&self, label: &str) -> Option<&SourceSpec> {
        match self.producers.get(label)? {
            Producer::Source(i) => Some(&self.sources[*i]),
            Producer::Node(_) => None,
        }
    }

    pub fn producer(&self, label: &str) -> Option<Producer> {
        self.producers.get(label).copied()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    /// Node names plus `source` when any source label exists.
    pub fn node_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self.nodes().iter().map(|n| n.name().to_string()).collect();
        if !self.sources.is_empty() {
            names.insert(SOURCE_PROVENANCE.to_string());
        }
        names
    }

    /// Index of the level each node is invoked on.
    pub fn driving_level_index(&self, node: usize) -> usize {
        self.driving[node]
    }

    pub fn driving_level(&self, node: usize) -> &LevelName {
        self.hierarchy().level_name(self.driving[node])
    }

    /// Level index that products under `label` attach to.
    pub fn label_level_index(&self, label: &str) -> Option<usize> {
        let driving: Vec<Option<usize>> = self.driving.iter().copied().map(Some).collect();
        output_level(&self.pipeline, &self.sources, &driving, self.producer(label)?)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn quote(s: &str) -> String {
    format!("\"{}\"", escape(s))
}

/// Deterministic DOT rendering: nodes sorted by name, then edges sorted by
/// (producer, label, consumer).
pub fn export_dot<P>(graph: &PipelineGraph<P>) -> String {
    let mut out = String::from("digraph pipeline {\n");
    let mut nodes: Vec<(String, String)> = graph
        .nodes()
        .iter()
        .map(|n| (n.name().to_string(), n.kind().as_str().to_string()))
        .collect();
    if !graph.sources.is_empty() {
        nodes.push((SOURCE_PROVENANCE.to_string(), SOURCE_PROVENANCE.to_string()));
    }
    nodes.sort();
    for (name, kind) in &nodes {
        if kind == SOURCE_PROVENANCE {
            let _ = writeln!(out, "  {} [shape=box];", quote(name));
        } else {
            let _ = writeln!(
                out,
                "  {} [shape=ellipse, label=\"{}\\n{kind}\"];",
                quote(name),
                escape(name)
            );
        }
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -> {} [label={}];",
            quote(&e.producer),
            quote(&e.consumer),
            quote(e.label.as_str())
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::define_hierarchy;
    use crate::pipeline::{Concurrency, InputSpec, OperatorError, OutputSpec};

    fn id(xs: &[&i64]) -> Result<Vec<i64>, OperatorError> {
        Ok(vec![*xs[0]])
    }

    fn sum(acc: i64, xs: &[&i64]) -> Result<i64, OperatorError> {
        Ok(acc + xs.iter().map(|x| **x).sum::<i64>())
    }

    fn calibration() -> (Pipeline<i64>, Vec<SourceSpec>) {
        let h = define_hierarchy(&[("run", "job"), ("subrun", "run"), ("event", "subrun")]).unwrap();
        let mut p = Pipeline::new(h);
        p.register_transform(
            "make_offset",
            id,
            vec![InputSpec::new("CalibrationEntry", "run", "entry")],
            vec![OutputSpec::temporary("CalibrationOffset", "offset")],
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_transform(
            "make_tracks",
            id,
            vec![
                InputSpec::new("GoodHits", "event", "hits"),
                InputSpec::new("CalibrationOffset", "run", "offset"),
            ],
            vec![OutputSpec::new("GoodTracks", "tracks")],
            Concurrency::Unlimited,
        )
        .unwrap();
        let sources = vec![
            SourceSpec::new("CalibrationEntry", "run", "entry"),
            SourceSpec::new("GoodHits", "event", "hits"),
        ];
        (p, sources)
    }

    fn kinds(errors: &[ValidationError]) -> Vec<ValidationKind> {
        errors.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn offset_feeds_tracks() {
        let (p, s) = calibration();
        let g = build_graph(p, s).unwrap();
        assert!(g.edges().contains(&Edge {
            producer: "make_offset".into(),
            label: ProductLabel::new("CalibrationOffset").unwrap(),
            consumer: "make_tracks".into(),
        }));
        assert_eq!(g.driving_level(1).as_str(), "event");
        assert_eq!(g.driving_level(0).as_str(), "run");
        assert!(check_level_compatibility(&g).is_empty());
        let dot = export_dot(&g);
        assert!(dot.contains("\"make_offset\" -> \"make_tracks\" [label=\"CalibrationOffset\"];"));
        assert!(dot.contains("\"make_offset\" [shape=ellipse, label=\"make_offset\\ntransform\"];"));
    }

    #[test]
    fn empty_pipeline() {
        let p: Pipeline<i64> = Pipeline::new(HierarchySpec::job_only());
        let g = build_graph(p, vec![]).unwrap();
        assert!(g.edges().is_empty());
        assert_eq!(export_dot(&g), "digraph pipeline {\n}\n");
    }

    #[test]
    fn two_cycle_lists_both_nodes() {
        let h = define_hierarchy(&[("event", "job")]).unwrap();
        let mut p: Pipeline<i64> = Pipeline::new(h);
        for (name, input, output) in [("A", "y", "x"), ("B", "x", "y")] {
            p.register_transform(
                name,
                id,
                vec![InputSpec::new(input, "event", "int")],
                vec![OutputSpec::new(output, "int")],
                Concurrency::Unlimited,
            )
            .unwrap();
        }
        let errors = build_graph(p, vec![]).unwrap_err();
        assert_eq!(kinds(&errors), vec![ValidationKind::Cycle]);
        assert_eq!(errors[0].nodes, vec!["A", "B"]);
    }

    #[test]
    fn level_mismatch_for_fold_result() {
        let h = define_hierarchy(&[("run", "job"), ("subrun", "run"), ("event", "subrun")]).unwrap();
        let mut p: Pipeline<i64> = Pipeline::new(h);
        p.register_fold(
            "g",
            sum,
            0,
            vec![InputSpec::new("c", "event", "int")],
            OutputSpec::new("J", "int"),
            "subrun",
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_monitor(
            "m",
            |_| Ok(()),
            vec![InputSpec::new("J", "event", "int")],
            Concurrency::Unlimited,
        )
        .unwrap();
        let errors = build_graph(p, vec![SourceSpec::new("c", "event", "int")]).unwrap_err();
        assert_eq!(kinds(&errors), vec![ValidationKind::LevelIncompatible]);
        assert_eq!(errors[0].label, "J");
    }

    #[test]
    fn driving_levels() {
        let h = define_hierarchy(&[("run", "job"), ("event", "run"), ("trigger_primitive", "job")]).unwrap();
        let mut p: Pipeline<i64> = Pipeline::new(h.clone());
        p.register_monitor(
            "mixed",
            |_| Ok(()),
            vec![
                InputSpec::new("GoodHits", "event", "int"),
                InputSpec::new("CalibrationEntry", "run", "int"),
            ],
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_monitor(
            "single",
            |_| Ok(()),
            vec![InputSpec::new("R", "run", "int")],
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_monitor(
            "orthogonal",
            |_| Ok(()),
            vec![
                InputSpec::new("R", "run", "int"),
                InputSpec::new("T", "trigger_primitive", "int"),
            ],
            Concurrency::Unlimited,
        )
        .unwrap();
        assert_eq!(driving_level(&h, &p.nodes()[0]).unwrap().as_str(), "event");
        assert_eq!(driving_level(&h, &p.nodes()[1]).unwrap().as_str(), "run");
        assert!(matches!(
            driving_level(&h, &p.nodes()[2]),
            Err(GraphError::AmbiguousDrivingLevel { .. })
        ));
    }

    #[test]
    fn all_errors_are_collected() {
        let h = define_hierarchy(&[("event", "job")]).unwrap();
        let mut p: Pipeline<i64> = Pipeline::new(h);
        p.register_monitor(
            "dangling",
            |_| Ok(()),
            vec![InputSpec::new("nope", "event", "int")],
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_monitor(
            "typed",
            |_| Ok(()),
            vec![InputSpec::new("a", "event", "float")],
            Concurrency::Unlimited,
        )
        .unwrap();
        p.register_transform(
            "dup",
            id,
            vec![InputSpec::new("a", "event", "int")],
            vec![OutputSpec::new("a", "int")],
            Concurrency::Unlimited,
        )
        .unwrap();
        let errors = build_graph(p, vec![SourceSpec::new("a", "event", "int")]).unwrap_err();
        assert_eq!(
            kinds(&errors),
            vec![
                ValidationKind::UnknownLabel,
                ValidationKind::TypeConflict,
                ValidationKind::MultipleProducers
            ]
        );
        assert!(errors.iter().all(|e| !e.nodes.is_empty() && !e.label.is_empty()));
    }
}
