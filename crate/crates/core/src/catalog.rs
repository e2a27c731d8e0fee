//! Named operators for file-driven pipelines.
//!
//! Each entry has a fixed node kind, an arity and a parameter schema.
//! Arithmetic is written once over [`Scalar`] and instantiated for `i64`
//! and `f64`; mixed int/float operands are computed in `f64`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{CheckedAdd, CheckedMul, Num};
use thiserror::Error;

use crate::pipeline::{
    ConfigValue, FoldFn, FromConfig, MonitorFn, NodeKind, OperatorError, OperatorRef, PredicateFn, TransformFn,
    UnfoldFn,
};
use crate::store::TypeTag;
use crate::value::Value;

/// Numeric payload element the catalog computes with.
pub trait Scalar: Num + Copy + PartialOrd {
    fn add_checked(self, rhs: Self) -> Option<Self>;
    fn mul_checked(self, rhs: Self) -> Option<Self>;
    fn into_value(self) -> Value;
}

impl Scalar for i64 {
    fn add_checked(self, rhs: Self) -> Option<Self> {
        CheckedAdd::checked_add(&self, &rhs)
    }

    fn mul_checked(self, rhs: Self) -> Option<Self> {
        CheckedMul::checked_mul(&self, &rhs)
    }

    fn into_value(self) -> Value {
        Value::Int(self)
    }
}

impl Scalar for f64 {
    fn add_checked(self, rhs: Self) -> Option<Self> {
        Some(self + rhs).filter(|x| x.is_finite())
    }

    fn mul_checked(self, rhs: Self) -> Option<Self> {
        Some(self * rhs).filter(|x| x.is_finite())
    }

    fn into_value(self) -> Value {
        Value::Float(self)
    }
}

/// Sum of all elements, starting from zero.
pub fn sum_all<S: Scalar>(xs: &[S]) -> Option<S> {
    xs.iter().try_fold(S::zero(), |acc, &x| acc.add_checked(x))
}

#[derive(Debug, Clone, Copy)]
enum Arith {
    Add,
    Mul,
}

fn combine<S: Scalar>(op: Arith, a: S, b: S) -> Option<S> {
    match op {
        Arith::Add => a.add_checked(b),
        Arith::Mul => a.mul_checked(b),
    }
}

fn arith(op: Arith, a: &Value, b: &Value) -> Result<Value, OperatorError> {
    let overflow = || OperatorError::new(format!("arithmetic overflow combining {a} and {b}"));
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => combine(op, *x, *y).map(Scalar::into_value).ok_or_else(overflow),
        (Value::List(xs), y) if !matches!(y, Value::List(_)) => xs
            .iter()
            .map(|x| arith(op, x, y))
            .collect::<Result<_, _>>()
            .map(Value::List),
        _ => match (a.as_float(), b.as_float()) {
            (Some(x), Some(y)) => combine(op, x, y).map(Scalar::into_value).ok_or_else(overflow),
            _ => Err(OperatorError::new(format!("cannot combine {a} and {b} arithmetically"))),
        },
    }
}

/// A scalar, or the sum of a list's elements.
fn total(v: &Value) -> Result<Value, OperatorError> {
    match v {
        Value::List(xs) => xs
            .iter()
            .try_fold(Value::Int(0), |acc, x| arith(Arith::Add, &acc, &total(x)?)),
        Value::Int(_) | Value::Float(_) => Ok(v.clone()),
        Value::Str(_) => Err(OperatorError::new(format!("cannot sum {v}"))),
    }
}

fn number(v: &Value) -> Result<f64, OperatorError> {
    v.as_float()
        .ok_or_else(|| OperatorError::new(format!("expected a number, found {v}")))
}

fn conform(value: Value, tag: &TypeTag) -> Result<Value, OperatorError> {
    value
        .coerce(tag.as_str())
        .map_err(|e| OperatorError::new(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{name}` is a {actual}, not a {requested}")]
    KindMismatch {
        name: String,
        actual: NodeKind,
        requested: NodeKind,
    },
    #[error("operator `{name}`: {detail}")]
    Arity { name: String, detail: String },
    #[error("operator `{name}` has no parameter `{param}`")]
    UnknownParam { name: String, param: String },
    #[error("operator `{name}` requires parameter `{param}`")]
    MissingParam { name: String, param: String },
    #[error("operator `{name}`: parameter `{param}` must be a {expected}, found {found}")]
    BadParam {
        name: String,
        param: String,
        expected: &'static str,
        found: String,
    },
}

struct Entry {
    name: &'static str,
    kind: NodeKind,
    /// Exact number of inputs, or `None` for any positive number.
    arity: Option<usize>,
    params: &'static [&'static str],
}

const ENTRIES: &[Entry] = &[
    Entry {
        name: "add_const",
        kind: NodeKind::Transform,
        arity: Some(1),
        params: &["value"],
    },
    Entry {
        name: "scale",
        kind: NodeKind::Transform,
        arity: Some(1),
        params: &["factor"],
    },
    Entry {
        name: "add",
        kind: NodeKind::Transform,
        arity: None,
        params: &[],
    },
    Entry {
        name: "threshold",
        kind: NodeKind::Filter,
        arity: None,
        params: &["min"],
    },
    Entry {
        name: "parity",
        kind: NodeKind::Filter,
        arity: None,
        params: &["even"],
    },
    Entry {
        name: "record_count",
        kind: NodeKind::Monitor,
        arity: None,
        params: &[],
    },
    Entry {
        name: "sum",
        kind: NodeKind::Fold,
        arity: Some(1),
        params: &[],
    },
    Entry {
        name: "count",
        kind: NodeKind::Fold,
        arity: None,
        params: &[],
    },
    Entry {
        name: "weighted_sum_pair",
        kind: NodeKind::Fold,
        arity: Some(2),
        params: &[],
    },
    Entry {
        name: "range_countdown",
        kind: NodeKind::Unfold,
        arity: Some(1),
        params: &[],
    },
    Entry {
        name: "list_splitter",
        kind: NodeKind::Unfold,
        arity: Some(1),
        params: &[],
    },
];

/// Names of all catalog operators with their node kinds.
pub fn entries() -> impl Iterator<Item = (&'static str, NodeKind)> {
    ENTRIES.iter().map(|e| (e.name, e.kind))
}

pub fn kind_of(name: &str) -> Option<NodeKind> {
    ENTRIES.iter().find(|e| e.name == name).map(|e| e.kind)
}

/// Checks kind, arity and parameter names; returns the parameters.
fn check(r: &OperatorRef, kind: NodeKind, arity: usize) -> Result<&BTreeMap<String, ConfigValue>, CatalogError> {
    let entry = ENTRIES
        .iter()
        .find(|e| e.name == r.name)
        .ok_or_else(|| CatalogError::UnknownOperator(r.name.clone()))?;
    if entry.kind != kind {
        return Err(CatalogError::KindMismatch {
            name: r.name.clone(),
            actual: entry.kind,
            requested: kind,
        });
    }
    let arity_ok = match entry.arity {
        Some(n) => n == arity,
        None => arity > 0,
    };
    if !arity_ok {
        return Err(CatalogError::Arity {
            name: r.name.clone(),
            detail: format!("takes {} inputs, got {arity}", entry.arity.unwrap_or(1)),
        });
    }
    if let Some(p) = r.params.keys().find(|p| !entry.params.contains(&p.as_str())) {
        return Err(CatalogError::UnknownParam {
            name: r.name.clone(),
            param: p.clone(),
        });
    }
    Ok(&r.params)
}

fn param<T: FromConfig>(r: &OperatorRef, key: &str, default: Option<T>) -> Result<T, CatalogError> {
    match r.params.get(key) {
        None => default.ok_or_else(|| CatalogError::MissingParam {
            name: r.name.clone(),
            param: key.to_string(),
        }),
        Some(v) => T::from_config(v).ok_or_else(|| CatalogError::BadParam {
            name: r.name.clone(),
            param: key.to_string(),
            expected: T::EXPECTED,
            found: v.to_string(),
        }),
    }
}

/// Numeric parameter kept as int when given as int.
fn numeric_param(r: &OperatorRef, key: &str) -> Result<Value, CatalogError> {
    match param::<ConfigValue>(r, key, None)? {
        ConfigValue::Int(i) => Ok(Value::Int(i)),
        ConfigValue::Float(x) => Ok(Value::Float(x)),
        other => Err(CatalogError::BadParam {
            name: r.name.clone(),
            param: key.to_string(),
            expected: "number",
            found: other.to_string(),
        }),
    }
}

/// Binds a transform; results are converted to the declared output types.
pub fn transform(r: &OperatorRef, arity: usize, outputs: &[TypeTag]) -> Result<Arc<TransformFn<Value>>, CatalogError> {
    check(r, NodeKind::Transform, arity)?;
    if outputs.len() != 1 {
        return Err(CatalogError::Arity {
            name: r.name.clone(),
            detail: format!("produces 1 output, {} declared", outputs.len()),
        });
    }
    let tag = outputs[0].clone();
    if r.name == "add" {
        return Ok(Arc::new(move |xs: &[&Value]| {
            let total = xs[1..]
                .iter()
                .try_fold(xs[0].clone(), |acc, x| arith(Arith::Add, &acc, x))?;
            Ok(vec![conform(total, &tag)?])
        }));
    }
    let (op, operand) = match r.name.as_str() {
        "add_const" => (Arith::Add, numeric_param(r, "value")?),
        "scale" => (Arith::Mul, numeric_param(r, "factor")?),
        other => return Err(CatalogError::UnknownOperator(other.to_string())),
    };
    Ok(Arc::new(move |xs: &[&Value]| {
        Ok(vec![conform(arith(op, xs[0], &operand)?, &tag)?])
    }))
}

/// Binds a filter predicate, evaluated on the first input.
pub fn predicate(r: &OperatorRef, arity: usize) -> Result<Arc<PredicateFn<Value>>, CatalogError> {
    check(r, NodeKind::Filter, arity)?;
    match r.name.as_str() {
        "threshold" => {
            let min = param::<f64>(r, "min", None)?;
            Ok(Arc::new(move |xs: &[&Value]| Ok(number(xs[0])? >= min)))
        }
        "parity" => {
            let even = param(r, "even", Some(true))?;
            Ok(Arc::new(move |xs: &[&Value]| {
                let i = xs[0]
                    .as_int()
                    .ok_or_else(|| OperatorError::new(format!("parity needs an integer, found {}", xs[0])))?;
                Ok((i % 2 == 0) == even)
            }))
        }
        other => Err(CatalogError::UnknownOperator(other.to_string())),
    }
}

/// Binds a monitor. `record_count` tallies its invocations.
pub fn monitor(r: &OperatorRef, arity: usize, node: &str) -> Result<Arc<MonitorFn<Value>>, CatalogError> {
    check(r, NodeKind::Monitor, arity)?;
    let seen = AtomicU64::new(0);
    let node = node.to_string();
    Ok(Arc::new(move |xs: &[&Value]| {
        let n = seen.fetch_add(1, Ordering::Relaxed) + 1;
        log::debug!("{node}: record {n} with {} inputs", xs.len());
        Ok(())
    }))
}

/// Binds a fold; the accumulator is kept in the result type.
pub fn fold(r: &OperatorRef, arity: usize, result: &TypeTag) -> Result<Arc<FoldFn<Value>>, CatalogError> {
    check(r, NodeKind::Fold, arity)?;
    let tag = result.clone();
    let f: Arc<FoldFn<Value>> = match r.name.as_str() {
        "sum" => Arc::new(move |acc, xs: &[&Value]| conform(arith(Arith::Add, &acc, &total(xs[0])?)?, &tag)),
        "count" => Arc::new(move |acc, _: &[&Value]| conform(arith(Arith::Add, &acc, &Value::Int(1))?, &tag)),
        "weighted_sum_pair" => Arc::new(move |acc, xs: &[&Value]| {
            let w = arith(Arith::Mul, xs[0], xs[1])?;
            conform(arith(Arith::Add, &acc, &w)?, &tag)
        }),
        other => return Err(CatalogError::UnknownOperator(other.to_string())),
    };
    Ok(f)
}

/// Binds an unfold producing one value per child.
pub fn unfold(r: &OperatorRef, outputs: &[TypeTag]) -> Result<Arc<UnfoldFn<Value>>, CatalogError> {
    check(r, NodeKind::Unfold, 1)?;
    if outputs.len() != 1 {
        return Err(CatalogError::Arity {
            name: r.name.clone(),
            detail: format!("produces 1 child output, {} declared", outputs.len()),
        });
    }
    let tag = outputs[0].clone();
    let f: Arc<UnfoldFn<Value>> = match r.name.as_str() {
        "range_countdown" => Arc::new(move |state| {
            let n = state
                .as_int()
                .ok_or_else(|| OperatorError::new(format!("range_countdown needs an integer, found {state}")))?;
            if n <= 0 {
                return Ok(None);
            }
            Ok(Some((vec![conform(Value::Int(n), &tag)?], Value::Int(n - 1))))
        }),
        "list_splitter" => Arc::new(move |state| {
            let Value::List(mut xs) = state else {
                return Err(OperatorError::new(format!("list_splitter needs a list, found {state}")));
            };
            if xs.is_empty() {
                return Ok(None);
            }
            let first = xs.remove(0);
            Ok(Some((vec![conform(first, &tag)?], Value::List(xs))))
        }),
        other => return Err(CatalogError::UnknownOperator(other.to_string())),
    };
    Ok(f)
}
