use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use super::{CellId, HierarchySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LifecycleKind {
    Begin,
    End,
}

/// Opening or closing marker of one cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellLifecycleEvent {
    pub kind: LifecycleKind,
    pub cell: CellId,
}

impl CellLifecycleEvent {
    pub fn begin(cell: CellId) -> Self {
        CellLifecycleEvent {
            kind: LifecycleKind::Begin,
            cell,
        }
    }

    pub fn end(cell: CellId) -> Self {
        CellLifecycleEvent {
            kind: LifecycleKind::End,
            cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unbalanced lifecycle at {cell}: {detail}")]
pub struct UnbalancedLifecycle {
    pub cell: String,
    pub detail: &'static str,
}

/// Incrementally checks lifecycle markers and counts cells per level.
#[derive(Debug, Clone)]
pub struct SummaryCollector {
    hierarchy: HierarchySpec,
    open: HashMap<CellId, usize>,
    seen: HashSet<CellId>,
    counts: Vec<u64>,
}

impl SummaryCollector {
    pub fn new(hierarchy: HierarchySpec) -> Self {
        let counts = vec![0; hierarchy.len()];
        SummaryCollector {
            hierarchy,
            open: HashMap::new(),
            seen: HashSet::new(),
            counts,
        }
    }

    pub fn record(&mut self, event: &CellLifecycleEvent) -> Result<(), UnbalancedLifecycle> {
        match event.kind {
            LifecycleKind::Begin => self.begin(&event.cell),
            LifecycleKind::End => self.end(&event.cell),
        }
    }

    pub fn begin(&mut self, cell: &CellId) -> Result<(), UnbalancedLifecycle> {
        let err = |detail| {
            Err(UnbalancedLifecycle {
                cell: cell.to_string(),
                detail,
            })
        };
        let Some(level) = self.hierarchy.level_index(cell.level().as_str()) else {
            return err("cell level is not part of the hierarchy");
        };
        if !self.seen.insert(cell.clone()) {
            return err("cell begun more than once");
        }
        if let Some(parent) = cell.parent() {
            match self.open.get_mut(&parent) {
                Some(n) => *n += 1,
                None => return err("begin before the parent's begin"),
            }
        }
        self.open.insert(cell.clone(), 0);
        self.counts[level] += 1;
        Ok(())
    }

    pub fn end(&mut self, cell: &CellId) -> Result<(), UnbalancedLifecycle> {
        let err = |detail| {
            Err(UnbalancedLifecycle {
                cell: cell.to_string(),
                detail,
            })
        };
        match self.open.get(cell) {
            None => return err("end without a matching begin"),
            Some(&n) if n > 0 => return err("end before all children ended"),
            Some(_) => {}
        }
        self.open.remove(cell);
        if let Some(parent) = cell.parent() {
            if let Some(n) = self.open.get_mut(&parent) {
                *n -= 1;
            }
        }
        Ok(())
    }

    pub fn open_cells(&self) -> usize {
        self.open.len()
    }

    pub fn finish(self) -> Result<HierarchySummary, UnbalancedLifecycle> {
        if let Some(cell) = self.open.keys().min() {
            return Err(UnbalancedLifecycle {
                cell: cell.to_string(),
                detail: "begin without a matching end",
            });
        }
        Ok(HierarchySummary {
            hierarchy: self.hierarchy,
            counts: self.counts,
        })
    }
}

/// Per-level cell counts, arranged by the parent relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchySummary {
    hierarchy: HierarchySpec,
    counts: Vec<u64>,
}

impl HierarchySummary {
    pub fn count(&self, level: &str) -> Option<u64> {
        self.hierarchy.level_index(level).map(|i| self.counts[i])
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    /// One line per level, two spaces of indentation per depth, children in
    /// declaration order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_level(0, 0, &mut out);
        out
    }

    fn render_level(&self, idx: usize, depth: usize, out: &mut String) {
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str(self.hierarchy.level_name(idx).as_str());
        out.push_str(": ");
        out.push_str(&self.counts[idx].to_string());
        out.push('\n');
        for &c in self.hierarchy.children_indices(idx) {
            self.render_level(c, depth + 1, out);
        }
    }
}

impl fmt::Display for HierarchySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Counts the cells of a complete lifecycle event sequence.
pub fn summarize<'a, I>(hierarchy: &HierarchySpec, events: I) -> Result<HierarchySummary, UnbalancedLifecycle>
where
    I: IntoIterator<Item = &'a CellLifecycleEvent>,
{
    let mut collector = SummaryCollector::new(hierarchy.clone());
    for e in events {
        collector.record(e)?;
    }
    collector.finish()
}
