//! Concurrent execution of pure user operators over hierarchical data
//! domains.
//!
//! Jobs are described declaratively as applications of five higher-order
//! functions (transform, filter, monitor, fold, unfold) to labeled data
//! products. The engine derives the dependency graph from the labels each
//! node consumes and produces, streams domain cells (runs, subruns, events,
//! ...) through it, and reports a per-level hierarchy summary at the end.
//!
//! The engine is generic over the payload type `P`, which it never
//! inspects. [`Value`] is the payload model used by the file-driven
//! operator catalog; the `Value*` aliases below bind the generic types to it.

pub mod catalog;
pub mod executor;
pub mod format;
pub mod graph;
pub mod hierarchy;
pub mod pipeline;
pub mod store;
pub mod value;

pub use executor::{run, DatasetEvent, ExecError, ExecutionReport, RunOptions, Sink, VecSink};
pub use graph::{build_graph, PipelineGraph, SourceSpec, ValidationError, ValidationKind};
pub use hierarchy::{define_hierarchy, CellId, DataCell, HierarchySpec, HierarchySummary, LevelName};
pub use pipeline::{
    Concurrency, ConfigMap, ConfigValue, InputSpec, NodeKind, NodeSpec, OperatorError, OperatorRef, OutputSpec,
    Pipeline,
};
pub use store::{DataProduct, ProductLabel, ProductStore, TypeTag};
pub use value::Value;

pub type ValuePipeline = Pipeline<Value>;
pub type ValueGraph = PipelineGraph<Value>;
pub type ValueProduct = DataProduct<Value>;
pub type ValueEvent = DatasetEvent<Value>;
pub type ValueSink = VecSink<Value>;
