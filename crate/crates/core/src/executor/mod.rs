//! Concurrent execution of a validated graph over a streamed dataset.
//!
//! A single coordinator owns all bookkeeping (open cells, pending
//! invocations, fold accumulators) and hands complete invocations to a
//! fixed-width worker pool. Workers only run operators; their results come
//! back to the coordinator, which stores products, settles cells and
//! retires them once nothing can consume their products any more.
//!
//! Results do not depend on the pool width as long as operators are pure
//! and fold operators are associative and commutative: fold steps for one
//! accumulator are serialized but applied in arrival order.

mod apply;
mod engine;
mod slots;
mod zip;

pub use apply::{
    apply_filter, apply_monitor, apply_transform, apply_unfold, fold_step, FoldState, Invocation, UnfoldChildren,
};
pub use slots::{InFlightGauge, SlotGate, SlotPermit};
pub use zip::{zip_join, ZipOutcome};

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::graph::PipelineGraph;
use crate::hierarchy::{CellId, HierarchySummary};
use crate::pipeline::NodeKind;
use crate::store::DataProduct;

/// One record of the streamed dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetEvent<P> {
    Begin(CellId),
    Product(DataProduct<P>),
    End(CellId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed source{}: {detail}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
pub struct MalformedSource {
    pub line: Option<usize>,
    pub detail: String,
}

impl MalformedSource {
    pub fn new(detail: impl Into<String>) -> Self {
        MalformedSource {
            line: None,
            detail: detail.into(),
        }
    }

    pub fn at_line(line: usize, detail: impl Into<String>) -> Self {
        MalformedSource {
            line: Some(line),
            detail: detail.into(),
        }
    }
}

pub type SourceItem<P> = Result<DatasetEvent<P>, MalformedSource>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("operator failure in node `{node}` at {cell}: {message}")]
    OperatorFailure {
        node: String,
        cell: String,
        message: String,
    },
    #[error("node `{node}` at {cell}: input `{label}` never arrived")]
    MissingInput { node: String, cell: String, label: String },
    #[error(transparent)]
    MalformedSource(#[from] MalformedSource),
    #[error("unfold `{node}` at {cell} exceeded {limit} children")]
    RunawayUnfold { node: String, cell: String, limit: usize },
    #[error("fold `{node}` finalized twice at {cell}")]
    DoubleFinalize { node: String, cell: String },
    #[error("cell {cell} created twice")]
    DuplicateCell { cell: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ExecError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExecError::OperatorFailure { .. } => "OperatorFailure",
            ExecError::MissingInput { .. } => "MissingInput",
            ExecError::MalformedSource(_) => "MalformedSource",
            ExecError::RunawayUnfold { .. } => "RunawayUnfold",
            ExecError::DoubleFinalize { .. } => "DoubleFinalize",
            ExecError::DuplicateCell { .. } => "DuplicateCell",
            ExecError::Internal(_) => "Internal",
        }
    }
}

/// Random per-invocation delay injected by workers before running an
/// operator; used to shake out ordering assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Jitter {
    pub seed: u64,
    pub max_micros: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Number of worker threads.
    pub width: usize,
    /// Open cells allowed per level before the source is paused.
    pub max_inflight_cells: usize,
    /// Children a single unfold invocation may create.
    pub max_unfold_children: usize,
    pub jitter: Option<Jitter>,
    /// Record start/end times of every invocation.
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            width: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            max_inflight_cells: 64,
            max_unfold_children: 1_000_000,
            jitter: None,
            trace: false,
        }
    }
}

impl RunOptions {
    pub fn with_width(width: usize) -> Self {
        RunOptions {
            width: width.max(1),
            ..Default::default()
        }
    }
}

/// Destination of persisted (non-temporary) products.
pub trait Sink<P> {
    fn persist(&mut self, product: Arc<DataProduct<P>>);
}

/// Collects persisted products in memory.
#[derive(Debug)]
pub struct VecSink<P> {
    products: Vec<Arc<DataProduct<P>>>,
}

impl<P> Default for VecSink<P> {
    fn default() -> Self {
        VecSink { products: Vec::new() }
    }
}

impl<P> VecSink<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Products in canonical order: by cell path, then by label.
    pub fn into_sorted(mut self) -> Vec<Arc<DataProduct<P>>> {
        self.products
            .sort_by(|a, b| a.cell.cmp(&b.cell).then_with(|| a.label.cmp(&b.label)));
        self.products
    }
}

impl<P> Sink<P> for VecSink<P> {
    fn persist(&mut self, product: Arc<DataProduct<P>>) {
        self.products.push(product);
    }
}

/// Timing of one operator application, relative to the start of the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub node: String,
    pub cell: CellId,
    pub start: Duration,
    pub end: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeReport {
    pub name: String,
    pub kind: NodeKind,
    pub invocations: u64,
    /// Most applications of this node observed running at once.
    pub max_in_flight: usize,
    /// Effective concurrency cap for this run.
    pub cap: usize,
}

#[derive(Debug, Clone)]
pub struct ExecutionReport {
    pub summary: HierarchySummary,
    pub nodes: Vec<NodeReport>,
    pub persisted: usize,
    pub wall_time: Duration,
    /// Highest number of simultaneously open cells, per level.
    pub peak_open_cells: BTreeMap<String, usize>,
    pub trace: Vec<TraceEntry>,
}

impl ExecutionReport {
    pub fn node(&self, name: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn total_invocations(&self) -> u64 {
        self.nodes.iter().map(|n| n.invocations).sum()
    }
}

/// Executes `graph` over `source`, handing persisted products to `sink`.
pub fn run<P, S, K>(
    graph: &PipelineGraph<P>,
    source: S,
    options: &RunOptions,
    sink: &mut K,
) -> Result<ExecutionReport, ExecError>
where
    P: Clone + Send + Sync + 'static,
    S: IntoIterator<Item = SourceItem<P>>,
    K: Sink<P> + ?Sized,
{
    engine::execute(graph, source.into_iter(), options, sink)
}
