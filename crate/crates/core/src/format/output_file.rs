use std::io::{self, BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::store::DataProduct;
use crate::value::Value;

/// One persisted product as written to the output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    /// Cell path relative to the job; empty for the job cell itself.
    pub cell: String,
    pub label: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub value: serde_json::Value,
}

impl OutputRecord {
    pub fn from_product(p: &DataProduct<Value>) -> Self {
        OutputRecord {
            cell: p.cell.relative_path(),
            label: p.label.to_string(),
            type_tag: p.type_tag.to_string(),
            value: p.value.to_json(),
        }
    }
}

/// Writes one JSON record per line. `products` should already be in
/// canonical order (see [`crate::VecSink::into_sorted`]).
pub fn write_output<W: Write>(mut out: W, products: &[Arc<DataProduct<Value>>]) -> io::Result<()> {
    for p in products {
        serde_json::to_writer(&mut out, &OutputRecord::from_product(p))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_output<R: BufRead>(input: R) -> io::Result<Vec<OutputRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::other))
        .collect()
}
