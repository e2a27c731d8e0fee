//! Shared test support: dataset builders and a sequential reference
//! evaluator that the concurrent engine is compared against.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use cellflow::executor::{Jitter, SourceItem};
use cellflow::pipeline::Operator;
use cellflow::{
    define_hierarchy, run, CellId, DataProduct, DatasetEvent, ExecError, ExecutionReport, HierarchySpec, PipelineGraph,
    ProductLabel, RunOptions, TypeTag, VecSink,
};

pub type Record<P> = (CellId, String, P);
pub type Persisted<P> = Vec<Arc<DataProduct<P>>>;

pub fn art() -> HierarchySpec {
    define_hierarchy(&[("run", "job"), ("subrun", "run"), ("event", "subrun")]).unwrap()
}

pub fn product<P>(label: &str, cell: &CellId, type_tag: &str, value: P) -> DataProduct<P> {
    DataProduct::new(
        ProductLabel::new(label).unwrap(),
        cell.clone(),
        TypeTag::new(type_tag).unwrap(),
        value,
    )
}

/// Events for a run/subrun/event dataset. `runs[r][s]` is the number of
/// events in subrun `s` of run `r`; indices start at 1. Each cell's
/// products come right after its begin.
pub fn art_events<P, F>(h: &HierarchySpec, runs: &[Vec<usize>], products: F) -> Vec<DatasetEvent<P>>
where
    F: Fn(&CellId) -> Vec<DataProduct<P>>,
{
    let mut out = Vec::new();
    let job = h.job_cell();
    let open = |out: &mut Vec<DatasetEvent<P>>, c: &CellId| {
        out.push(DatasetEvent::Begin(c.clone()));
        out.extend(products(c).into_iter().map(DatasetEvent::Product));
    };
    open(&mut out, &job);
    for (r, subruns) in runs.iter().enumerate() {
        let run = h.make_cell(&job, "run", r as u64 + 1).unwrap().into_id();
        open(&mut out, &run);
        for (s, &events) in subruns.iter().enumerate() {
            let sub = h.make_cell(&run, "subrun", s as u64 + 1).unwrap().into_id();
            open(&mut out, &sub);
            for e in 0..events {
                let ev = h.make_cell(&sub, "event", e as u64 + 1).unwrap().into_id();
                open(&mut out, &ev);
                out.push(DatasetEvent::End(ev));
            }
            out.push(DatasetEvent::End(sub));
        }
        out.push(DatasetEvent::End(run));
    }
    out.push(DatasetEvent::End(job));
    out
}

/// Events for `n` cells of `level` directly under the job.
pub fn flat_events<P, F>(h: &HierarchySpec, level: &str, n: usize, products: F) -> Vec<DatasetEvent<P>>
where
    F: Fn(&CellId) -> Vec<DataProduct<P>>,
{
    let job = h.job_cell();
    let mut out = vec![DatasetEvent::Begin(job.clone())];
    for i in 0..n {
        let c = h.make_cell(&job, level, i as u64 + 1).unwrap().into_id();
        out.push(DatasetEvent::Begin(c.clone()));
        out.extend(products(&c).into_iter().map(DatasetEvent::Product));
        out.push(DatasetEvent::End(c));
    }
    out.push(DatasetEvent::End(job));
    out
}

pub fn source<P: Clone>(events: &[DatasetEvent<P>]) -> Vec<SourceItem<P>> {
    events.iter().cloned().map(Ok).collect()
}

pub fn records<P: Clone>(products: Vec<Arc<DataProduct<P>>>) -> Vec<Record<P>> {
    products
        .into_iter()
        .map(|p| (p.cell.clone(), p.label.to_string(), (*p.value).clone()))
        .collect()
}

pub fn options(width: usize, jitter_seed: Option<u64>) -> RunOptions {
    RunOptions {
        jitter: jitter_seed.map(|seed| Jitter { seed, max_micros: 200 }),
        ..RunOptions::with_width(width)
    }
}

/// Runs the engine and returns persisted products in canonical order.
pub fn execute<P>(
    graph: &PipelineGraph<P>,
    events: &[DatasetEvent<P>],
    options: &RunOptions,
) -> Result<(Persisted<P>, ExecutionReport), ExecError>
where
    P: Clone + Send + Sync + 'static,
{
    let mut sink = VecSink::new();
    let report = run(graph, source(events), options, &mut sink)?;
    Ok((sink.into_sorted(), report))
}

pub fn execute_records<P>(graph: &PipelineGraph<P>, events: &[DatasetEvent<P>], width: usize) -> Vec<Record<P>>
where
    P: Clone + Send + Sync + 'static,
{
    records(execute(graph, events, &RunOptions::with_width(width)).unwrap().0)
}

/// Result of the sequential reference evaluation.
pub struct Reference<P> {
    pub persisted: Vec<Record<P>>,
    pub counts: BTreeMap<String, u64>,
}

fn topological<P>(graph: &PipelineGraph<P>) -> Vec<usize> {
    let names: HashMap<&str, usize> = graph.nodes().iter().enumerate().map(|(i, n)| (n.name(), i)).collect();
    let mut indegree = vec![0usize; names.len()];
    let mut next: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    let pairs: BTreeSet<(usize, usize)> = graph
        .edges()
        .iter()
        .filter_map(|e| Some((*names.get(e.producer.as_str())?, *names.get(e.consumer.as_str())?)))
        .collect();
    for (a, b) in pairs {
        indegree[b] += 1;
        next[a].push(b);
    }
    let mut queue: VecDeque<usize> = (0..names.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::new();
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &j in &next[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    order
}

/// Evaluates the whole job one node at a time, in dependency order, with
/// folds applied in cell order. Assumes a well-formed dataset.
pub fn reference<P: Clone>(graph: &PipelineGraph<P>, events: &[DatasetEvent<P>]) -> Reference<P> {
    let h = graph.hierarchy();
    let mut cells: BTreeSet<CellId> = BTreeSet::new();
    let mut store: HashMap<(CellId, String), (P, bool)> = HashMap::new();
    for ev in events {
        match ev {
            DatasetEvent::Begin(c) => {
                cells.insert(c.clone());
            }
            DatasetEvent::Product(p) => {
                let persist = graph.source(p.label.as_str()).is_none_or(|s| s.persist);
                store.insert((p.cell.clone(), p.label.to_string()), ((*p.value).clone(), persist));
            }
            DatasetEvent::End(_) => {}
        }
    }

    for n in topological(graph) {
        let node = &graph.nodes()[n];
        let driving = graph.driving_level(n).clone();
        let at_level = |cells: &BTreeSet<CellId>, level: &str| -> Vec<CellId> {
            cells.iter().filter(|c| c.level().as_str() == level).cloned().collect()
        };
        let inputs = |store: &HashMap<(CellId, String), (P, bool)>, c: &CellId| -> Option<Vec<P>> {
            node.inputs()
                .iter()
                .map(|i| {
                    let x = c.ancestor(i.level.as_str())?;
                    store.get(&(x, i.label.to_string())).map(|(v, _)| v.clone())
                })
                .collect()
        };
        match node.operator() {
            Operator::Transform(f) => {
                for c in at_level(&cells, driving.as_str()) {
                    let Some(xs) = inputs(&store, &c) else { continue };
                    let refs: Vec<&P> = xs.iter().collect();
                    for (out, v) in node.outputs().iter().zip(f(&refs).unwrap()) {
                        store.insert((c.clone(), out.label.to_string()), (v, !out.temporary));
                    }
                }
            }
            Operator::Filter(f) => {
                for c in at_level(&cells, driving.as_str()) {
                    let Some(xs) = inputs(&store, &c) else { continue };
                    let refs: Vec<&P> = xs.iter().collect();
                    if f(&refs).unwrap() {
                        for (out, v) in node.outputs().iter().zip(xs.iter()) {
                            store.insert((c.clone(), out.label.to_string()), (v.clone(), !out.temporary));
                        }
                    }
                }
            }
            Operator::Monitor(f) => {
                for c in at_level(&cells, driving.as_str()) {
                    if let Some(xs) = inputs(&store, &c) {
                        let refs: Vec<&P> = xs.iter().collect();
                        f(&refs).unwrap();
                    }
                }
            }
            Operator::Fold { op, init } => {
                let fold_level = node.fold_level().unwrap();
                let out = &node.outputs()[0];
                for f_cell in at_level(&cells, fold_level.as_str()) {
                    let mut acc = init.clone();
                    for c in at_level(&cells, driving.as_str()) {
                        if !c.is_descendant_of(&f_cell) {
                            continue;
                        }
                        if let Some(xs) = inputs(&store, &c) {
                            let refs: Vec<&P> = xs.iter().collect();
                            acc = op(acc, &refs).unwrap();
                        }
                    }
                    store.insert((f_cell, out.label.to_string()), (acc, !out.temporary));
                }
            }
            Operator::Unfold(f) => {
                let child_level = node.unfold_child_level().unwrap();
                for c in at_level(&cells, driving.as_str()) {
                    let Some(xs) = inputs(&store, &c) else { continue };
                    let mut state = xs[0].clone();
                    let mut i = 0;
                    while let Some((vals, next)) = f(state).unwrap() {
                        let child = h.make_cell(&c, child_level.as_str(), i).unwrap().into_id();
                        for (out, v) in node.outputs().iter().zip(vals) {
                            store.insert((child.clone(), out.label.to_string()), (v, !out.temporary));
                        }
                        cells.insert(child);
                        state = next;
                        i += 1;
                    }
                }
            }
        }
    }

    let mut persisted: Vec<Record<P>> = store
        .into_iter()
        .filter(|(_, (_, keep))| *keep)
        .map(|((c, l), (v, _))| (c, l, v))
        .collect();
    persisted.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let mut counts: BTreeMap<String, u64> = h.levels().map(|l| (l.to_string(), 0)).collect();
    for c in &cells {
        *counts.get_mut(c.level().as_str()).unwrap() += 1;
    }
    Reference { persisted, counts }
}
