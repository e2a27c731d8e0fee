//! Per-pattern operator application. These functions are what worker
//! threads run; they never touch shared engine state.

use std::sync::Arc;

use crate::hierarchy::{CellId, DataCell, HierarchySpec};
use crate::pipeline::{NodeSpec, Operator, OperatorError};
use crate::store::DataProduct;

use super::ExecError;

/// A complete set of resolved inputs for one application of a node.
#[derive(Debug, Clone)]
pub struct Invocation<P> {
    pub node: usize,
    pub cell: CellId,
    pub inputs: Vec<Arc<DataProduct<P>>>,
    /// Dispatch order, unique per run.
    pub sequence: u64,
}

impl<P> Invocation<P> {
    pub fn values(&self) -> Vec<&P> {
        self.inputs.iter().map(|p| &*p.value).collect()
    }
}

fn failure<P>(node: &NodeSpec<P>, cell: &CellId, err: OperatorError) -> ExecError {
    ExecError::OperatorFailure {
        node: node.name().to_string(),
        cell: cell.to_string(),
        message: err.0,
    }
}

fn wrong_kind<P>(node: &NodeSpec<P>, expected: &str) -> ExecError {
    ExecError::Internal(format!("node `{}` is a {}, not a {expected}", node.name(), node.kind()))
}

fn outputs_at<P>(node: &NodeSpec<P>, cell: &CellId, values: Vec<P>) -> Result<Vec<DataProduct<P>>, ExecError> {
    if values.len() != node.outputs().len() {
        return Err(failure(
            node,
            cell,
            OperatorError(format!(
                "operator returned {} values for {} declared outputs",
                values.len(),
                node.outputs().len()
            )),
        ));
    }
    Ok(node
        .outputs()
        .iter()
        .zip(values)
        .map(|(out, value)| {
            DataProduct::new(out.label.clone(), cell.clone(), out.type_tag.clone(), value)
                .with_provenance(node.name())
                .with_temporary(out.temporary)
        })
        .collect())
}

/// `f ∗ (a)ₙ = (b)ₙ`: one output set per invocation, at the driving cell.
pub fn apply_transform<P>(node: &NodeSpec<P>, inv: &Invocation<P>) -> Result<Vec<DataProduct<P>>, ExecError> {
    let Operator::Transform(f) = node.operator() else {
        return Err(wrong_kind(node, "transform"));
    };
    let values = f(&inv.values()).map_err(|e| failure(node, &inv.cell, e))?;
    outputs_at(node, &inv.cell, values)
}

/// `f ◁ (a)ₙ = (a)ₘ`: accepted inputs are re-emitted under the pass labels
/// with the very same payloads; rejected invocations emit nothing.
pub fn apply_filter<P>(node: &NodeSpec<P>, inv: &Invocation<P>) -> Result<Option<Vec<DataProduct<P>>>, ExecError> {
    let Operator::Filter(f) = node.operator() else {
        return Err(wrong_kind(node, "filter"));
    };
    if !f(&inv.values()).map_err(|e| failure(node, &inv.cell, e))? {
        return Ok(None);
    }
    Ok(Some(
        node.outputs()
            .iter()
            .zip(&inv.inputs)
            .map(|(out, input)| DataProduct {
                label: out.label.clone(),
                cell: inv.cell.clone(),
                type_tag: out.type_tag.clone(),
                value: Arc::clone(&input.value),
                provenance: Arc::from(node.name()),
                temporary: out.temporary,
            })
            .collect(),
    ))
}

/// `f ⊲ (a)ₙ = ()`.
pub fn apply_monitor<P>(node: &NodeSpec<P>, inv: &Invocation<P>) -> Result<(), ExecError> {
    let Operator::Monitor(f) = node.operator() else {
        return Err(wrong_kind(node, "monitor"));
    };
    f(&inv.values()).map_err(|e| failure(node, &inv.cell, e))
}

/// One fold step, `acc ← f(acc, inputs)`.
pub fn fold_step<P>(node: &NodeSpec<P>, acc: P, inv: &Invocation<P>) -> Result<P, ExecError> {
    let Operator::Fold { op, .. } = node.operator() else {
        return Err(wrong_kind(node, "fold"));
    };
    op(acc, &inv.values()).map_err(|e| failure(node, &inv.cell, e))
}

/// Accumulator of one fold node for one fold-level cell.
///
/// The accumulator is moved out while a step is in flight, so at most one
/// update can be outstanding. Contributions are counted as `expected` when
/// a contributing cell begins and as `seen` or `skipped` once it settles.
#[derive(Debug)]
pub struct FoldState<P> {
    node: usize,
    cell: CellId,
    acc: Option<P>,
    expected: usize,
    seen: usize,
    skipped: usize,
    finalized: bool,
}

impl<P> FoldState<P> {
    pub fn new(node: usize, cell: CellId, init: P) -> Self {
        FoldState {
            node,
            cell,
            acc: Some(init),
            expected: 0,
            seen: 0,
            skipped: 0,
            finalized: false,
        }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn cell(&self) -> &CellId {
        &self.cell
    }

    pub fn accumulator(&self) -> Option<&P> {
        self.acc.as_ref()
    }

    pub fn expect_contribution(&mut self) {
        self.expected += 1;
    }

    pub fn skip_contribution(&mut self) {
        self.skipped += 1;
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// All expected contributions have been accumulated or skipped and no
    /// step is in flight.
    pub fn is_settled(&self) -> bool {
        self.acc.is_some() && self.seen + self.skipped == self.expected
    }

    /// Moves the accumulator out for an in-flight step.
    pub fn take(&mut self) -> Result<P, ExecError> {
        if self.finalized {
            return Err(self.poisoned());
        }
        self.acc
            .take()
            .ok_or_else(|| ExecError::Internal(format!("fold state {} already has a step in flight", self.cell)))
    }

    /// Returns the accumulator after a completed step.
    pub fn restore(&mut self, acc: P) -> Result<(), ExecError> {
        if self.finalized || self.acc.is_some() {
            return Err(self.poisoned());
        }
        self.acc = Some(acc);
        self.seen += 1;
        Ok(())
    }

    /// Synchronous take/step/restore.
    pub fn accumulate(&mut self, node: &NodeSpec<P>, element: &Invocation<P>) -> Result<(), ExecError> {
        let acc = self.take()?;
        let next = fold_step(node, acc, element)?;
        self.restore(next)
    }

    /// Emits the single result product for the fold-level cell.
    pub fn finalize(&mut self, node: &NodeSpec<P>) -> Result<DataProduct<P>, ExecError> {
        if self.finalized {
            return Err(ExecError::DoubleFinalize {
                node: node.name().to_string(),
                cell: self.cell.to_string(),
            });
        }
        let acc = self.take()?;
        self.finalized = true;
        let out = &node.outputs()[0];
        Ok(
            DataProduct::new(out.label.clone(), self.cell.clone(), out.type_tag.clone(), acc)
                .with_provenance(node.name())
                .with_temporary(out.temporary),
        )
    }

    fn poisoned(&self) -> ExecError {
        ExecError::Internal(format!("fold state {} updated after finalization", self.cell))
    }
}

/// Child cells created by one unfold invocation, each with its products.
pub type UnfoldChildren<P> = Vec<(DataCell, Vec<DataProduct<P>>)>;

/// Iterates the unfold operator from the input product, creating child
/// cells with indices `0, 1, 2, …` until the operator yields `None`.
pub fn apply_unfold<P: Clone>(
    node: &NodeSpec<P>,
    hierarchy: &HierarchySpec,
    inv: &Invocation<P>,
    max_children: usize,
) -> Result<UnfoldChildren<P>, ExecError> {
    let Operator::Unfold(f) = node.operator() else {
        return Err(wrong_kind(node, "unfold"));
    };
    let child_level = node
        .unfold_child_level()
        .ok_or_else(|| ExecError::Internal(format!("unfold `{}` has no child level", node.name())))?;
    let mut state = (*inv.inputs[0].value).clone();
    let mut children = Vec::new();
    while let Some((values, next)) = f(state).map_err(|e| failure(node, &inv.cell, e))? {
        if children.len() >= max_children {
            return Err(ExecError::RunawayUnfold {
                node: node.name().to_string(),
                cell: inv.cell.to_string(),
                limit: max_children,
            });
        }
        let child = hierarchy
            .make_cell(&inv.cell, child_level.as_str(), children.len() as u64)
            .map_err(|e| ExecError::Internal(e.to_string()))?;
        let products = outputs_at(node, child.id(), values)?;
        children.push((child, products));
        state = next;
    }
    Ok(children)
}
