use std::sync::Arc;

use crate::hierarchy::CellId;
use crate::pipeline::NodeSpec;
use crate::store::{DataProduct, ProductStore};

/// Result of aligning a node's inputs at one driving cell.
#[derive(Debug)]
pub enum ZipOutcome<P> {
    /// Every input resolved, in declaration order.
    Ready(Vec<Arc<DataProduct<P>>>),
    /// Indices of the inputs not yet available.
    Pending(Vec<usize>),
}

/// Resolves each input of `node` at `cell`: inputs on the driving level are
/// looked up directly, shallower ones through the ancestor on their level.
pub fn zip_join<P>(node: &NodeSpec<P>, cell: &CellId, store: &ProductStore<P>) -> ZipOutcome<P> {
    let mut found = Vec::with_capacity(node.inputs().len());
    let mut missing = Vec::new();
    for (i, input) in node.inputs().iter().enumerate() {
        match store.resolve(input.label.as_str(), input.level.as_str(), cell) {
            Some(p) => found.push(p),
            None => missing.push(i),
        }
    }
    if missing.is_empty() {
        ZipOutcome::Ready(found)
    } else {
        ZipOutcome::Pending(missing)
    }
}
