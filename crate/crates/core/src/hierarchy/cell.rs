use std::fmt;
use std::sync::Arc;

use super::LevelName;

/// One step of a cell path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathEntry {
    pub level: LevelName,
    pub index: u64,
}

/// Full path of a domain instance, starting at `("job", 0)`.
///
/// Paths are shared, so cloning is cheap. Ordering is lexicographic over
/// the path entries, which yields the canonical output order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId(Arc<[PathEntry]>);

impl CellId {
    pub(crate) fn root(job: LevelName) -> Self {
        CellId(Arc::from(vec![PathEntry { level: job, index: 0 }]))
    }

    pub(crate) fn child(&self, level: LevelName, index: u64) -> Self {
        let mut path = self.0.to_vec();
        path.push(PathEntry { level, index });
        CellId(Arc::from(path))
    }

    pub fn path(&self) -> &[PathEntry] {
        &self.0
    }

    pub fn level(&self) -> &LevelName {
        &self.0[self.0.len() - 1].level
    }

    pub fn index(&self) -> u64 {
        self.0[self.0.len() - 1].index
    }

    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_root(&self) -> bool {
        self.0.len() == 1
    }

    pub fn parent(&self) -> Option<CellId> {
        if self.is_root() {
            None
        } else {
            Some(CellId(Arc::from(&self.0[..self.0.len() - 1])))
        }
    }

    /// The prefix of this path ending at `level`, if any.
    pub fn ancestor(&self, level: &str) -> Option<CellId> {
        let pos = self.0.iter().position(|e| e.level.as_str() == level)?;
        if pos + 1 == self.0.len() {
            Some(self.clone())
        } else {
            Some(CellId(Arc::from(&self.0[..=pos])))
        }
    }

    pub fn is_descendant_of(&self, other: &CellId) -> bool {
        self.0.len() > other.0.len() && self.0[..other.0.len()] == other.0[..]
    }

    /// The path without the job root, `/`-joined (`run:1/subrun:2`).
    /// Empty for the job cell.
    pub fn relative_path(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.0[1..].iter().enumerate() {
            if i > 0 {
                out.push('/');
            }
            out.push_str(e.level.as_str());
            out.push(':');
            out.push_str(&e.index.to_string());
        }
        out
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{}:{}", e.level, e.index)?;
        }
        Ok(())
    }
}

impl fmt::Debug for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CellId({self})")
    }
}

/// Returns the unique prefix of `cell` ending at `level`, or `None`.
pub fn ancestor(cell: &CellId, level: &str) -> Option<CellId> {
    cell.ancestor(level)
}

/// A domain instance: its id, level and parent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataCell {
    id: CellId,
}

impl DataCell {
    pub fn new(id: CellId) -> Self {
        DataCell { id }
    }

    pub fn id(&self) -> &CellId {
        &self.id
    }

    pub fn into_id(self) -> CellId {
        self.id
    }

    pub fn level(&self) -> &LevelName {
        self.id.level()
    }

    pub fn parent(&self) -> Option<CellId> {
        self.id.parent()
    }
}
