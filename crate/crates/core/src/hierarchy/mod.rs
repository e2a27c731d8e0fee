//! Data hierarchies: domain levels, their containment relations, and the
//! concrete domain instances (cells) that data products belong to.
//!
//! A hierarchy is a forest of levels rooted at the implicit `job` level.
//! Two levels may share a parent without being related to each other, so
//! orthogonal domains (for example runs and trigger primitives that both
//! live directly under the job) are expressed naturally.

mod cell;
mod summary;

pub use cell::{ancestor, CellId, DataCell, PathEntry};
pub use summary::{
    summarize, CellLifecycleEvent, HierarchySummary, LifecycleKind, SummaryCollector, UnbalancedLifecycle,
};

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the implicit root level.
pub const JOB_LEVEL: &str = "job";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("level `{0}` is declared more than once")]
    DuplicateLevel(String),
    #[error("level `{level}` names unknown parent `{parent}`")]
    UnknownParent { level: String, parent: String },
    #[error("parent relation contains a cycle through `{0}`")]
    CycleDetected(String),
    #[error("`{0}` is not a valid level name")]
    InvalidLevelName(String),
    #[error("unknown level `{0}`")]
    UnknownLevel(String),
    #[error("level `{level}` has parent `{expected}`, not `{found}`")]
    LevelMismatch {
        level: String,
        expected: String,
        found: String,
    },
    #[error("cannot create a cell at the root level")]
    RootCell,
}

/// A case-sensitive, non-empty level token such as `run` or `event`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LevelName(Arc<str>);

impl LevelName {
    pub fn new(name: &str) -> Result<Self, HierarchyError> {
        if is_token(name) {
            Ok(LevelName(Arc::from(name)))
        } else {
            Err(HierarchyError::InvalidLevelName(name.to_string()))
        }
    }

    pub fn job() -> Self {
        LevelName(Arc::from(JOB_LEVEL))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_job(&self) -> bool {
        &*self.0 == JOB_LEVEL
    }
}

/// Tokens may not contain the characters used by the cell-path syntax.
pub(crate) fn is_token(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || c == '/' || c == ':' || c.is_control())
}

impl TryFrom<String> for LevelName {
    type Error = HierarchyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        LevelName::new(&s)
    }
}

impl TryFrom<&str> for LevelName {
    type Error = HierarchyError;
    fn try_from(s: &str) -> Result<Self, Self::Error> {
        LevelName::new(s)
    }
}

impl From<LevelName> for String {
    fn from(l: LevelName) -> String {
        l.0.to_string()
    }
}

impl std::borrow::Borrow<str> for LevelName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LevelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for LevelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

/// One `{level, parent}` record, the serialized form of a hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelDecl {
    pub level: String,
    pub parent: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Level {
    name: LevelName,
    parent: Option<usize>,
    children: Vec<usize>,
    depth: usize,
}

/// A validated forest of levels rooted at `job`.
///
/// Level 0 is always `job`; the remaining levels keep their declaration
/// order, which is also the order children are listed in summaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LevelDecl>", into = "Vec<LevelDecl>")]
pub struct HierarchySpec {
    levels: Vec<Level>,
    index: HashMap<LevelName, usize>,
}

impl HierarchySpec {
    /// Builds a hierarchy from `(level, parent)` pairs.
    ///
    /// `job` is implicit and may not be declared. Parents may refer to levels
    /// declared later in the list; cycles among declared levels are rejected.
    pub fn define<S: AsRef<str>>(decls: &[(S, S)]) -> Result<Self, HierarchyError> {
        let mut names = vec![LevelName::job()];
        let mut index = HashMap::new();
        index.insert(LevelName::job(), 0usize);
        for (name, _) in decls {
            let name = LevelName::new(name.as_ref())?;
            if index.contains_key(&name) {
                return Err(HierarchyError::DuplicateLevel(name.to_string()));
            }
            index.insert(name.clone(), names.len());
            names.push(name);
        }

        let mut parents = vec![None; names.len()];
        for (i, (name, parent)) in decls.iter().enumerate() {
            let p = index
                .get(parent.as_ref())
                .copied()
                .ok_or_else(|| HierarchyError::UnknownParent {
                    level: name.as_ref().to_string(),
                    parent: parent.as_ref().to_string(),
                })?;
            parents[i + 1] = Some(p);
        }

        // Every level must reach the root by following parents.
        let mut depth = vec![None; names.len()];
        depth[0] = Some(0usize);
        #[allow(clippy::needless_range_loop)]
        for start in 1..names.len() {
            let mut chain = Vec::new();
            let mut cur = start;
            while depth[cur].is_none() {
                if chain.contains(&cur) {
                    return Err(HierarchyError::CycleDetected(names[start].to_string()));
                }
                chain.push(cur);
                cur = parents[cur].expect("only the root lacks a parent");
            }
            let mut d = depth[cur].unwrap();
            for &l in chain.iter().rev() {
                d += 1;
                depth[l] = Some(d);
            }
        }

        let mut levels: Vec<Level> = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| Level {
                name,
                parent: parents[i],
                children: Vec::new(),
                depth: depth[i].unwrap(),
            })
            .collect();
        for i in 1..levels.len() {
            let p = levels[i].parent.unwrap();
            levels[p].children.push(i);
        }
        Ok(HierarchySpec { levels, index })
    }

    /// A hierarchy holding only the `job` level.
    pub fn job_only() -> Self {
        Self::define::<&str>(&[]).expect("empty declaration is valid")
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn level_name(&self, idx: usize) -> &LevelName {
        &self.levels[idx].name
    }

    /// Looks up the canonical (shared) name for `name`.
    pub fn level(&self, name: &str) -> Result<&LevelName, HierarchyError> {
        self.level_index(name)
            .map(|i| &self.levels[i].name)
            .ok_or_else(|| HierarchyError::UnknownLevel(name.to_string()))
    }

    pub fn parent_of(&self, name: &str) -> Option<&LevelName> {
        let i = self.level_index(name)?;
        self.levels[i].parent.map(|p| &self.levels[p].name)
    }

    pub(crate) fn children_indices(&self, idx: usize) -> &[usize] {
        &self.levels[idx].children
    }

    pub fn depth(&self, name: &str) -> Option<usize> {
        self.level_index(name).map(|i| self.levels[i].depth)
    }

    /// Level names in canonical order (`job` first, then declaration order).
    pub fn levels(&self) -> impl Iterator<Item = &LevelName> {
        self.levels.iter().map(|l| &l.name)
    }

    /// True when `ancestor` lies on the parent chain of `level` (or equals it).
    pub fn is_ancestor_or_self(&self, ancestor: &str, level: &str) -> bool {
        let (Some(a), Some(mut cur)) = (self.level_index(ancestor), self.level_index(level)) else {
            return false;
        };
        loop {
            if cur == a {
                return true;
            }
            match self.levels[cur].parent {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    pub fn is_proper_ancestor(&self, ancestor: &str, level: &str) -> bool {
        ancestor != level && self.is_ancestor_or_self(ancestor, level)
    }

    /// The root cell `[("job", 0)]`.
    pub fn job_cell(&self) -> CellId {
        CellId::root(self.levels[0].name.clone())
    }

    /// Creates the child of `parent` at `level` with the given index.
    pub fn make_cell(&self, parent: &CellId, level: &str, index: u64) -> Result<DataCell, HierarchyError> {
        let idx = self
            .level_index(level)
            .ok_or_else(|| HierarchyError::UnknownLevel(level.to_string()))?;
        let Some(p) = self.levels[idx].parent else {
            return Err(HierarchyError::RootCell);
        };
        let expected = &self.levels[p].name;
        if expected != parent.level() {
            return Err(HierarchyError::LevelMismatch {
                level: level.to_string(),
                expected: expected.to_string(),
                found: parent.level().to_string(),
            });
        }
        let id = parent.child(self.levels[idx].name.clone(), index);
        Ok(DataCell::new(id))
    }

    /// Checks that a path honors the parent relation and starts at the root.
    pub fn validate_cell(&self, cell: &CellId) -> Result<(), HierarchyError> {
        let path = cell.path();
        if path[0].level != self.levels[0].name || path[0].index != 0 {
            return Err(HierarchyError::LevelMismatch {
                level: path[0].level.to_string(),
                expected: JOB_LEVEL.to_string(),
                found: path[0].level.to_string(),
            });
        }
        for w in path.windows(2) {
            let parent = self.parent_of(w[1].level.as_str());
            match parent {
                Some(p) if *p == w[0].level => {}
                Some(p) => {
                    return Err(HierarchyError::LevelMismatch {
                        level: w[1].level.to_string(),
                        expected: p.to_string(),
                        found: w[0].level.to_string(),
                    })
                }
                None if self.contains(w[1].level.as_str()) => return Err(HierarchyError::RootCell),
                None => return Err(HierarchyError::UnknownLevel(w[1].level.to_string())),
            }
        }
        Ok(())
    }

    /// Parses a `/`-joined relative cell path (`run:1/subrun:2`) under the
    /// job root and validates it against this hierarchy. The empty string
    /// denotes the job cell.
    pub fn parse_cell(&self, path: &str) -> Result<CellId, HierarchyError> {
        let mut cell = self.job_cell();
        if path.is_empty() {
            return Ok(cell);
        }
        for seg in path.split('/') {
            let (level, index) = seg
                .split_once(':')
                .and_then(|(l, i)| i.parse::<u64>().ok().map(|i| (l, i)))
                .ok_or_else(|| HierarchyError::InvalidLevelName(seg.to_string()))?;
            cell = self.make_cell(&cell, level, index)?.into_id();
        }
        Ok(cell)
    }

    pub fn decls(&self) -> Vec<LevelDecl> {
        self.levels[1..]
            .iter()
            .map(|l| LevelDecl {
                level: l.name.to_string(),
                parent: self.levels[l.parent.unwrap()].name.to_string(),
            })
            .collect()
    }
}

impl TryFrom<Vec<LevelDecl>> for HierarchySpec {
    type Error = HierarchyError;
    fn try_from(decls: Vec<LevelDecl>) -> Result<Self, Self::Error> {
        let pairs: Vec<(&str, &str)> = decls.iter().map(|d| (d.level.as_str(), d.parent.as_str())).collect();
        HierarchySpec::define(&pairs)
    }
}

impl From<HierarchySpec> for Vec<LevelDecl> {
    fn from(h: HierarchySpec) -> Self {
        h.decls()
    }
}

/// Builds a hierarchy from `(level, parent)` pairs; see [`HierarchySpec::define`].
pub fn define_hierarchy<S: AsRef<str>>(levels: &[(S, S)]) -> Result<HierarchySpec, HierarchyError> {
    HierarchySpec::define(levels)
}
