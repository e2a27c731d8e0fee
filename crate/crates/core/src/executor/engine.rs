//! The coordinator loop and its worker pool.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::graph::{PipelineGraph, Producer};
use crate::hierarchy::{CellId, DataCell, SummaryCollector};
use crate::pipeline::NodeKind;
use crate::store::{DataProduct, ProductStore, SOURCE_PROVENANCE};

use super::apply::{apply_filter, apply_monitor, apply_transform, apply_unfold, fold_step, FoldState, Invocation};
use super::slots::{InFlightGauge, SlotGate, SlotPermit};
use super::{
    DatasetEvent, ExecError, ExecutionReport, MalformedSource, NodeReport, RunOptions, Sink, SourceItem, TraceEntry,
};

fn internal(e: impl std::fmt::Display) -> ExecError {
    ExecError::Internal(e.to_string())
}

fn malformed(detail: impl Into<String>) -> ExecError {
    ExecError::MalformedSource(MalformedSource::new(detail))
}

// ---------------------------------------------------------------------------
// Workers

enum Job<P> {
    Apply {
        inv: Invocation<P>,
        permit: SlotPermit,
    },
    Fold {
        inv: Invocation<P>,
        fold_cell: CellId,
        acc: P,
        permit: SlotPermit,
    },
}

enum Outcome<P> {
    Products(Vec<DataProduct<P>>),
    Rejected,
    Observed,
    Folded(P),
    Children(Vec<(DataCell, Vec<DataProduct<P>>)>),
}

struct Completion<P> {
    node: usize,
    cell: CellId,
    fold_cell: Option<CellId>,
    result: Result<Outcome<P>, ExecError>,
    span: (Duration, Duration),
}

struct WorkerEnv<'a, P> {
    graph: &'a PipelineGraph<P>,
    gauges: &'a [InFlightGauge],
    start: Instant,
    max_children: usize,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("operator panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("operator panicked: {s}")
    } else {
        "operator panicked".to_string()
    }
}

fn apply_job<P: Clone>(env: &WorkerEnv<'_, P>, inv: &Invocation<P>, acc: Option<P>) -> Result<Outcome<P>, ExecError> {
    let node = &env.graph.nodes()[inv.node];
    match node.kind() {
        NodeKind::Transform => apply_transform(node, inv).map(Outcome::Products),
        NodeKind::Filter => Ok(match apply_filter(node, inv)? {
            Some(products) => Outcome::Products(products),
            None => Outcome::Rejected,
        }),
        NodeKind::Monitor => apply_monitor(node, inv).map(|()| Outcome::Observed),
        NodeKind::Fold => {
            let acc = acc.ok_or_else(|| internal("fold step dispatched without an accumulator"))?;
            fold_step(node, acc, inv).map(Outcome::Folded)
        }
        NodeKind::Unfold => apply_unfold(node, env.graph.hierarchy(), inv, env.max_children).map(Outcome::Children),
    }
}

fn worker<P: Clone>(
    env: &WorkerEnv<'_, P>,
    jobs: Receiver<Job<P>>,
    done: Sender<Completion<P>>,
    mut jitter: Option<(StdRng, u64)>,
) {
    while let Ok(job) = jobs.recv() {
        if let Some((rng, max)) = jitter.as_mut() {
            let micros = rng.random_range(0..=*max);
            if micros > 0 {
                std::thread::sleep(Duration::from_micros(micros));
            }
        }
        let (inv, fold_cell, acc, permit) = match job {
            Job::Apply { inv, permit } => (inv, None, None, permit),
            Job::Fold {
                inv,
                fold_cell,
                acc,
                permit,
            } => (inv, Some(fold_cell), Some(acc), permit),
        };
        let begin = env.start.elapsed();
        let result = {
            let _running = env.gauges[inv.node].enter();
            catch_unwind(AssertUnwindSafe(|| apply_job(env, &inv, acc))).unwrap_or_else(|payload| {
                Err(ExecError::OperatorFailure {
                    node: env.graph.nodes()[inv.node].name().to_string(),
                    cell: inv.cell.to_string(),
                    message: panic_message(&*payload),
                })
            })
        };
        let end = env.start.elapsed();
        drop(permit);
        let completion = Completion {
            node: inv.node,
            cell: inv.cell,
            fold_cell,
            result,
            span: (begin, end),
        };
        if done.send(completion).is_err() {
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Coordinator state

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemState {
    Pending,
    Scheduled,
    Done,
    Rejected,
}

#[derive(Debug)]
struct CellState {
    level: usize,
    generated_by: Option<usize>,
    ended: bool,
    /// Ended, every child complete and no unfold left to create children.
    complete: bool,
    children: BTreeSet<CellId>,
    incomplete_children: usize,
    open_source_children: usize,
    /// One entry per node driven on this cell's level.
    items: Vec<(usize, ItemState)>,
    unresolved: usize,
    pending_unfolds: usize,
}

struct FoldSlot<P> {
    state: FoldState<P>,
    queue: VecDeque<Invocation<P>>,
    running: bool,
    in_ready: bool,
}

enum Task<P> {
    Apply(Invocation<P>),
    /// Next queued step of the fold accumulator at this cell.
    Fold(CellId),
}

enum Fate<P> {
    Ready(Vec<Arc<DataProduct<P>>>),
    Wait,
    Dead,
    Missing(String),
}

struct Coordinator<'a, P, K: ?Sized> {
    graph: &'a PipelineGraph<P>,
    options: &'a RunOptions,
    sink: &'a mut K,
    width: usize,
    store: ProductStore<P>,
    cells: HashMap<CellId, CellState>,
    folds: HashMap<(usize, CellId), FoldSlot<P>>,
    /// level -> nodes whose driving level it is
    driven_at: Vec<Vec<usize>>,
    /// level -> fold nodes accumulating into cells of that level
    folds_at: Vec<Vec<usize>>,
    ready: Vec<VecDeque<Task<P>>>,
    gates: Vec<Arc<SlotGate>>,
    invocations: Vec<u64>,
    rr: usize,
    outstanding: usize,
    sequence: u64,
    dirty: BTreeSet<CellId>,
    summary: SummaryCollector,
    open_per_level: Vec<usize>,
    peak_per_level: Vec<usize>,
    persisted: usize,
    trace: Vec<TraceEntry>,
    job_started: bool,
    job_done: bool,
}

impl<'a, P, K> Coordinator<'a, P, K>
where
    P: Clone + Send + Sync + 'static,
    K: Sink<P> + ?Sized,
{
    fn new(graph: &'a PipelineGraph<P>, options: &'a RunOptions, sink: &'a mut K) -> Self {
        let h = graph.hierarchy();
        let width = options.width.max(1);
        let mut driven_at = vec![Vec::new(); h.len()];
        let mut folds_at = vec![Vec::new(); h.len()];
        for (n, node) in graph.nodes().iter().enumerate() {
            driven_at[graph.driving_level_index(n)].push(n);
            if let Some(l) = node.fold_level().and_then(|l| h.level_index(l.as_str())) {
                folds_at[l].push(n);
            }
        }
        Coordinator {
            graph,
            options,
            sink,
            width,
            store: ProductStore::new(),
            cells: HashMap::new(),
            folds: HashMap::new(),
            driven_at,
            folds_at,
            ready: graph.nodes().iter().map(|_| VecDeque::new()).collect(),
            gates: graph
                .nodes()
                .iter()
                .map(|n| SlotGate::new(n.concurrency().cap(width)))
                .collect(),
            invocations: vec![0; graph.nodes().len()],
            rr: 0,
            outstanding: 0,
            sequence: 0,
            dirty: BTreeSet::new(),
            summary: SummaryCollector::new(h.clone()),
            open_per_level: vec![0; h.len()],
            peak_per_level: vec![0; h.len()],
            persisted: 0,
            trace: Vec::new(),
            job_started: false,
            job_done: false,
        }
    }

    fn kind(&self, n: usize) -> NodeKind {
        self.graph.nodes()[n].kind()
    }

    fn node_name(&self, n: usize) -> String {
        self.graph.nodes()[n].name().to_string()
    }

    fn cell(&self, id: &CellId) -> Result<&CellState, ExecError> {
        self.cells
            .get(id)
            .ok_or_else(|| internal(format!("cell {id} is not open")))
    }

    fn cell_mut(&mut self, id: &CellId) -> Result<&mut CellState, ExecError> {
        self.cells
            .get_mut(id)
            .ok_or_else(|| internal(format!("cell {id} is not open")))
    }

    fn fold_cell_of(&self, n: usize, contributor: &CellId) -> Result<CellId, ExecError> {
        let level = self.graph.nodes()[n]
            .fold_level()
            .ok_or_else(|| internal("fold without a fold level"))?;
        contributor
            .ancestor(level.as_str())
            .ok_or_else(|| internal(format!("{contributor} has no `{level}` ancestor")))
    }

    fn slot_mut(&mut self, n: usize, fold_cell: &CellId) -> Result<&mut FoldSlot<P>, ExecError> {
        self.folds
            .get_mut(&(n, fold_cell.clone()))
            .ok_or_else(|| internal(format!("no accumulator for node {n} at {fold_cell}")))
    }

    /// Marks `id` and every open descendant for re-evaluation.
    fn mark_subtree(&mut self, id: &CellId) {
        let mut stack = vec![id.clone()];
        while let Some(c) = stack.pop() {
            if let Some(st) = self.cells.get(&c) {
                stack.extend(st.children.iter().cloned());
            }
            self.dirty.insert(c);
        }
    }

    // -- cell lifecycle ----------------------------------------------------

    /// Opens a cell. Returns a description of the conflict when the cell
    /// cannot be opened so callers can attribute it.
    fn open_cell(&mut self, id: CellId, generated_by: Option<usize>) -> Result<Result<(), String>, ExecError> {
        let h = self.graph.hierarchy();
        let level = h
            .level_index(id.level().as_str())
            .ok_or_else(|| internal(format!("level of {id} is unknown")))?;
        if self.cells.contains_key(&id) {
            return Ok(Err(format!("cell {id} is already open")));
        }
        if let Err(e) = self.summary.begin(&id) {
            return Ok(Err(e.to_string()));
        }
        self.store.open_cell(&id).map_err(internal)?;
        if let Some(parent) = id.parent() {
            let p = self.cell_mut(&parent)?;
            p.children.insert(id.clone());
            p.incomplete_children += 1;
            if generated_by.is_none() {
                p.open_source_children += 1;
            }
        }

        let items: Vec<(usize, ItemState)> = self.driven_at[level].iter().map(|&n| (n, ItemState::Pending)).collect();
        let pending_unfolds = items.iter().filter(|(n, _)| self.kind(*n) == NodeKind::Unfold).count();
        for &n in &self.folds_at[level] {
            let init = self.graph.nodes()[n]
                .fold_init()
                .ok_or_else(|| internal("fold without an initial value"))?
                .clone();
            self.folds.insert(
                (n, id.clone()),
                FoldSlot {
                    state: FoldState::new(n, id.clone(), init),
                    queue: VecDeque::new(),
                    running: false,
                    in_ready: false,
                },
            );
        }
        for &(n, _) in &items {
            if self.kind(n) == NodeKind::Fold {
                let f = self.fold_cell_of(n, &id)?;
                self.slot_mut(n, &f)?.state.expect_contribution();
            }
        }

        self.cells.insert(
            id.clone(),
            CellState {
                level,
                generated_by,
                ended: generated_by.is_some(),
                complete: false,
                children: BTreeSet::new(),
                incomplete_children: 0,
                open_source_children: 0,
                unresolved: items.len(),
                items,
                pending_unfolds,
            },
        );
        self.open_per_level[level] += 1;
        self.peak_per_level[level] = self.peak_per_level[level].max(self.open_per_level[level]);
        self.dirty.insert(id);
        Ok(Ok(()))
    }

    fn retire(&mut self, id: &CellId) -> Result<(), ExecError> {
        for product in self.store.retire_cell(id).map_err(internal)? {
            self.sink.persist(product);
            self.persisted += 1;
        }
        self.summary.end(id).map_err(internal)?;
        let st = self
            .cells
            .remove(id)
            .ok_or_else(|| internal(format!("cell {id} retired twice")))?;
        for &n in &self.folds_at[st.level] {
            self.folds.remove(&(n, id.clone()));
        }
        self.open_per_level[st.level] -= 1;
        match id.parent() {
            Some(parent) => {
                self.cell_mut(&parent)?.children.remove(id);
                self.dirty.insert(parent);
            }
            None => self.job_done = true,
        }
        log::trace!("retired {id}");
        Ok(())
    }

    // -- source ------------------------------------------------------------

    fn source_event(&mut self, event: DatasetEvent<P>) -> Result<(), ExecError> {
        match event {
            DatasetEvent::Begin(id) => self.source_begin(id),
            DatasetEvent::Product(p) => self.source_product(p),
            DatasetEvent::End(id) => self.source_end(id),
        }
    }

    fn source_begin(&mut self, id: CellId) -> Result<(), ExecError> {
        let h = self.graph.hierarchy();
        h.validate_cell(&id)
            .map_err(|e| malformed(format!("begin {id}: {e}")))?;
        if !self.job_started {
            if !id.is_root() {
                return Err(malformed(format!("dataset must begin with the job cell, found {id}")));
            }
            self.job_started = true;
        } else if id.is_root() {
            return Err(malformed("job cell begun twice"));
        } else {
            let parent = id.parent().expect("non-root cell has a parent");
            match self.cells.get(&parent) {
                None => return Err(malformed(format!("begin {id}: parent is not open"))),
                Some(p) if p.ended => return Err(malformed(format!("begin {id}: parent already ended"))),
                Some(_) => {}
            }
        }
        self.open_cell(id.clone(), None)?
            .map_err(|detail| malformed(format!("begin {id}: {detail}")))
    }

    fn source_product(&mut self, product: DataProduct<P>) -> Result<(), ExecError> {
        let at = format!("product `{}` at {}", product.label, product.cell);
        match self.cells.get(&product.cell) {
            None => return Err(malformed(format!("{at}: cell is not open"))),
            Some(st) if st.ended => return Err(malformed(format!("{at}: cell already ended"))),
            Some(_) => {}
        }
        let spec = self
            .graph
            .source(product.label.as_str())
            .ok_or_else(|| malformed(format!("{at}: label is not a declared source")))?;
        if spec.level != *product.cell.level() {
            return Err(malformed(format!(
                "{at}: source label belongs to level `{}`",
                spec.level
            )));
        }
        if spec.type_tag != product.type_tag {
            return Err(malformed(format!("{at}: declared type is `{}`", spec.type_tag)));
        }
        let product = product.with_provenance(SOURCE_PROVENANCE).with_temporary(!spec.persist);
        let cell = product.cell.clone();
        self.store.put(product).map_err(|e| malformed(format!("{at}: {e}")))?;
        self.mark_subtree(&cell);
        Ok(())
    }

    fn source_end(&mut self, id: CellId) -> Result<(), ExecError> {
        let st = self
            .cells
            .get_mut(&id)
            .ok_or_else(|| malformed(format!("end {id}: cell is not open")))?;
        if st.ended {
            return Err(malformed(format!("end {id}: cell already ended")));
        }
        if st.generated_by.is_some() {
            return Err(malformed(format!("end {id}: cell was not begun by the dataset")));
        }
        if st.open_source_children > 0 {
            return Err(malformed(format!(
                "end {id}: {} child cells still open",
                st.open_source_children
            )));
        }
        st.ended = true;
        if let Some(parent) = id.parent() {
            self.cell_mut(&parent)?.open_source_children -= 1;
        }
        self.mark_subtree(&id);
        Ok(())
    }

    // -- item evaluation ---------------------------------------------------

    fn item_state(&self, n: usize, cell: &CellId) -> Result<ItemState, ExecError> {
        self.cell(cell)?
            .items
            .iter()
            .find(|(m, _)| *m == n)
            .map(|(_, s)| *s)
            .ok_or_else(|| internal(format!("node {n} has no item at {cell}")))
    }

    fn set_item(&mut self, n: usize, cell: &CellId, state: ItemState) -> Result<(), ExecError> {
        let st = self.cell_mut(cell)?;
        let item = st
            .items
            .iter_mut()
            .find(|(m, _)| *m == n)
            .ok_or_else(|| internal(format!("node {n} has no item at {cell}")))?;
        item.1 = state;
        Ok(())
    }

    fn input_fate(&self, n: usize, cell: &CellId) -> Result<Fate<P>, ExecError> {
        let node = &self.graph.nodes()[n];
        let mut found = Vec::with_capacity(node.inputs().len());
        let (mut wait, mut dead) = (false, false);
        for input in node.inputs() {
            let label = input.label.as_str();
            let x = cell
                .ancestor(input.level.as_str())
                .ok_or_else(|| internal(format!("{cell} has no `{}` ancestor", input.level)))?;
            if let Some(p) = self.store.get(label, &x) {
                found.push(p);
                continue;
            }
            let producer = self
                .graph
                .producer(label)
                .ok_or_else(|| internal(format!("label `{label}` has no producer")))?;
            match producer {
                Producer::Source(_) => {
                    if self.cell(&x)?.ended {
                        return Ok(Fate::Missing(label.to_string()));
                    }
                    wait = true;
                }
                Producer::Node(m) => match self.kind(m) {
                    NodeKind::Transform | NodeKind::Filter => match self.item_state(m, &x)? {
                        ItemState::Rejected => dead = true,
                        ItemState::Pending | ItemState::Scheduled => wait = true,
                        ItemState::Done => {
                            return Err(internal(format!("`{label}` at {x} resolved without a product")))
                        }
                    },
                    NodeKind::Fold => wait = true,
                    NodeKind::Unfold => return Ok(Fate::Missing(label.to_string())),
                    NodeKind::Monitor => return Err(internal("monitor declared as a producer")),
                },
            }
        }
        Ok(if dead {
            Fate::Dead
        } else if wait {
            Fate::Wait
        } else {
            Fate::Ready(found)
        })
    }

    fn evaluate_items(&mut self, cell: &CellId) -> Result<(), ExecError> {
        let pending: Vec<usize> = self
            .cell(cell)?
            .items
            .iter()
            .filter(|(_, s)| *s == ItemState::Pending)
            .map(|(n, _)| *n)
            .collect();
        for n in pending {
            match self.input_fate(n, cell)? {
                Fate::Wait => {}
                Fate::Missing(label) => {
                    return Err(ExecError::MissingInput {
                        node: self.node_name(n),
                        cell: cell.to_string(),
                        label,
                    })
                }
                Fate::Dead => self.resolve_item(n, cell, ItemState::Rejected)?,
                Fate::Ready(inputs) => self.schedule(n, cell, inputs)?,
            }
        }
        Ok(())
    }

    fn schedule(&mut self, n: usize, cell: &CellId, inputs: Vec<Arc<DataProduct<P>>>) -> Result<(), ExecError> {
        self.set_item(n, cell, ItemState::Scheduled)?;
        self.sequence += 1;
        let inv = Invocation {
            node: n,
            cell: cell.clone(),
            inputs,
            sequence: self.sequence,
        };
        if self.kind(n) == NodeKind::Fold {
            let f = self.fold_cell_of(n, cell)?;
            let slot = self.slot_mut(n, &f)?;
            slot.queue.push_back(inv);
            if !slot.running && !slot.in_ready {
                slot.in_ready = true;
                self.ready[n].push_back(Task::Fold(f));
            }
        } else {
            self.ready[n].push_back(Task::Apply(inv));
        }
        Ok(())
    }

    /// Records the final state of an item and wakes whatever depends on it.
    fn resolve_item(&mut self, n: usize, cell: &CellId, state: ItemState) -> Result<(), ExecError> {
        self.set_item(n, cell, state)?;
        let kind = self.kind(n);
        let st = self.cell_mut(cell)?;
        st.unresolved -= 1;
        if kind == NodeKind::Unfold {
            st.pending_unfolds -= 1;
        }
        match kind {
            NodeKind::Fold if state == ItemState::Rejected => {
                let f = self.fold_cell_of(n, cell)?;
                self.slot_mut(n, &f)?.state.skip_contribution();
                self.dirty.insert(f);
            }
            NodeKind::Transform | NodeKind::Filter => self.mark_subtree(cell),
            _ => {}
        }
        self.dirty.insert(cell.clone());
        Ok(())
    }

    // -- settling ----------------------------------------------------------

    fn settle(&mut self, id: CellId) -> Result<(), ExecError> {
        if !self.cells.contains_key(&id) {
            return Ok(());
        }
        self.evaluate_items(&id)?;

        let st = self.cell_mut(&id)?;
        if !st.complete && st.ended && st.pending_unfolds == 0 && st.incomplete_children == 0 {
            st.complete = true;
            if let Some(parent) = id.parent() {
                self.cell_mut(&parent)?.incomplete_children -= 1;
                self.dirty.insert(parent);
            }
        }
        let st = self.cell(&id)?;
        if !st.complete {
            return Ok(());
        }

        let level = st.level;
        let mut all_final = true;
        let graph = self.graph;
        for n in self.folds_at[level].clone() {
            let slot = self.slot_mut(n, &id)?;
            if slot.state.is_finalized() {
                continue;
            }
            if slot.state.is_settled() && slot.queue.is_empty() && !slot.running {
                let product = slot.state.finalize(&graph.nodes()[n])?;
                self.store.put(product).map_err(internal)?;
                self.mark_subtree(&id);
            } else {
                all_final = false;
            }
        }

        let st = self.cell(&id)?;
        if all_final && st.children.is_empty() && st.unresolved == 0 {
            self.retire(&id)?;
        }
        Ok(())
    }

    fn settle_dirty(&mut self) -> Result<(), ExecError> {
        while let Some(id) = self.dirty.pop_first() {
            self.settle(id)?;
        }
        Ok(())
    }

    // -- dispatch and completion ------------------------------------------

    fn dispatch(&mut self, jobs: &Sender<Job<P>>) -> Result<(), ExecError> {
        let count = self.ready.len();
        'fill: while self.outstanding < self.width {
            for k in 0..count {
                let n = (self.rr + k) % count;
                if self.ready[n].is_empty() {
                    continue;
                }
                let Some(permit) = self.gates[n].try_acquire() else {
                    continue;
                };
                let task = self.ready[n].pop_front().expect("non-empty queue");
                let job = match task {
                    Task::Apply(inv) => Job::Apply { inv, permit },
                    Task::Fold(f) => {
                        let slot = self.slot_mut(n, &f)?;
                        slot.in_ready = false;
                        let inv = slot
                            .queue
                            .pop_front()
                            .ok_or_else(|| internal("fold scheduled with an empty queue"))?;
                        let acc = slot.state.take()?;
                        slot.running = true;
                        Job::Fold {
                            inv,
                            fold_cell: f,
                            acc,
                            permit,
                        }
                    }
                };
                self.invocations[n] += 1;
                self.outstanding += 1;
                jobs.send(job).map_err(|_| internal("worker pool shut down"))?;
                self.rr = (n + 1) % count;
                continue 'fill;
            }
            break;
        }
        Ok(())
    }

    fn complete(&mut self, c: Completion<P>) -> Result<(), ExecError> {
        self.outstanding -= 1;
        if self.options.trace {
            self.trace.push(TraceEntry {
                node: self.node_name(c.node),
                cell: c.cell.clone(),
                start: c.span.0,
                end: c.span.1,
            });
        }
        let (n, cell) = (c.node, c.cell);
        match c.result? {
            Outcome::Products(products) => {
                for p in products {
                    self.store.put(p).map_err(internal)?;
                }
                self.resolve_item(n, &cell, ItemState::Done)
            }
            Outcome::Rejected => self.resolve_item(n, &cell, ItemState::Rejected),
            Outcome::Observed => self.resolve_item(n, &cell, ItemState::Done),
            Outcome::Folded(acc) => {
                let f = c
                    .fold_cell
                    .ok_or_else(|| internal("fold completion without its cell"))?;
                let slot = self.slot_mut(n, &f)?;
                slot.state.restore(acc)?;
                slot.running = false;
                if !slot.queue.is_empty() {
                    slot.in_ready = true;
                    self.ready[n].push_back(Task::Fold(f.clone()));
                }
                self.dirty.insert(f);
                self.resolve_item(n, &cell, ItemState::Done)
            }
            Outcome::Children(children) => {
                for (child, products) in children {
                    let id = child.into_id();
                    self.open_cell(id.clone(), Some(n))?
                        .map_err(|_| ExecError::DuplicateCell { cell: id.to_string() })?;
                    for p in products {
                        self.store.put(p).map_err(internal)?;
                    }
                }
                self.resolve_item(n, &cell, ItemState::Done)
            }
        }
    }

    // -- main loop ---------------------------------------------------------

    fn throttled(&self, next: Option<&SourceItem<P>>) -> bool {
        match next {
            Some(Ok(DatasetEvent::Begin(id))) => self
                .graph
                .hierarchy()
                .level_index(id.level().as_str())
                .is_some_and(|l| self.open_per_level[l] >= self.options.max_inflight_cells.max(1)),
            _ => false,
        }
    }

    fn idle(&self) -> bool {
        self.outstanding == 0 && self.ready.iter().all(VecDeque::is_empty)
    }

    fn drive<I>(&mut self, source: I, jobs: &Sender<Job<P>>, done: &Receiver<Completion<P>>) -> Result<(), ExecError>
    where
        I: Iterator<Item = SourceItem<P>>,
    {
        let mut source = source.peekable();
        let mut exhausted = false;
        loop {
            while let Ok(c) = done.try_recv() {
                self.complete(c)?;
            }
            self.settle_dirty()?;
            self.dispatch(jobs)?;

            if self.job_done {
                return match source.next() {
                    None => Ok(()),
                    Some(Err(e)) => Err(e.into()),
                    Some(Ok(_)) => Err(malformed("event after the job cell ended")),
                };
            }
            // Pausing the source is only a memory bound; it must never be
            // the reason nothing can make progress.
            if !exhausted && (!self.throttled(source.peek()) || self.idle()) {
                match source.next() {
                    Some(item) => self.source_event(item?)?,
                    None => {
                        exhausted = true;
                        if !self.job_started {
                            return Err(malformed("dataset is empty"));
                        }
                        if !self
                            .cells
                            .get(&self.graph.hierarchy().job_cell())
                            .is_some_and(|s| s.ended)
                        {
                            return Err(malformed("dataset ended with open cells"));
                        }
                    }
                }
                continue;
            }
            if self.outstanding > 0 {
                let c = done.recv().map_err(|_| internal("worker pool shut down"))?;
                self.complete(c)?;
                continue;
            }
            return Err(self.stall_error());
        }
    }

    /// Explains why nothing can run although the job is unfinished.
    fn stall_error(&self) -> ExecError {
        let mut waiting: Vec<(&CellId, usize)> = self
            .cells
            .iter()
            .flat_map(|(id, st)| {
                st.items
                    .iter()
                    .filter(|(_, s)| *s == ItemState::Pending)
                    .map(move |(n, _)| (id, *n))
            })
            .collect();
        waiting.sort();
        for (cell, n) in waiting {
            let node = &self.graph.nodes()[n];
            let absent = node.inputs().iter().find(|i| {
                cell.ancestor(i.level.as_str())
                    .is_none_or(|x| self.store.get(i.label.as_str(), &x).is_none())
            });
            if let Some(input) = absent {
                return ExecError::MissingInput {
                    node: node.name().to_string(),
                    cell: cell.to_string(),
                    label: input.label.to_string(),
                };
            }
        }
        internal(format!("execution stalled with {} open cells", self.cells.len()))
    }
}

pub(super) fn execute<P, I, K>(
    graph: &PipelineGraph<P>,
    source: I,
    options: &RunOptions,
    sink: &mut K,
) -> Result<ExecutionReport, ExecError>
where
    P: Clone + Send + Sync + 'static,
    I: Iterator<Item = SourceItem<P>>,
    K: Sink<P> + ?Sized,
{
    let start = Instant::now();
    let gauges: Vec<InFlightGauge> = graph.nodes().iter().map(|_| InFlightGauge::default()).collect();
    let env = WorkerEnv {
        graph,
        gauges: &gauges,
        start,
        max_children: options.max_unfold_children,
    };
    let mut coord = Coordinator::new(graph, options, sink);
    let (job_tx, job_rx) = unbounded::<Job<P>>();
    let (done_tx, done_rx) = unbounded::<Completion<P>>();

    let result = std::thread::scope(|s| {
        for w in 0..coord.width {
            let (jobs, done, env) = (job_rx.clone(), done_tx.clone(), &env);
            let jitter = options.jitter.map(|j| {
                let seed = j.seed ^ (w as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                (StdRng::seed_from_u64(seed), j.max_micros)
            });
            s.spawn(move || worker(env, jobs, done, jitter));
        }
        drop(job_rx);
        drop(done_tx);
        let result = coord.drive(source, &job_tx, &done_rx);
        drop(job_tx);
        result
    });
    result?;

    let h = graph.hierarchy();
    let nodes = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(n, node)| NodeReport {
            name: node.name().to_string(),
            kind: node.kind(),
            invocations: coord.invocations[n],
            max_in_flight: gauges[n].max(),
            cap: coord.gates[n].cap(),
        })
        .collect();
    let peak_open_cells: BTreeMap<String, usize> = coord
        .peak_per_level
        .iter()
        .enumerate()
        .map(|(l, &peak)| (h.level_name(l).to_string(), peak))
        .collect();
    let mut trace = std::mem::take(&mut coord.trace);
    trace.sort_by_key(|t| (t.start, t.end));
    let persisted = coord.persisted;
    let summary = coord.summary.finish().map_err(internal)?;
    Ok(ExecutionReport {
        summary,
        nodes,
        persisted,
        wall_time: start.elapsed(),
        peak_open_cells,
        trace,
    })
}
