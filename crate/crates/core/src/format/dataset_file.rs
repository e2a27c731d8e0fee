//! JSON Lines dataset reader.
//!
//! ```text
//! {"begin": "run:1"}
//! {"product": "run:1", "label": "K", "type": "int", "value": 10}
//! {"end": "run:1"}
//! ```
//!
//! Cell paths are relative to the job, which is begun before the first
//! record and ended after the last one unless the file does so itself
//! with the empty path.

use std::collections::VecDeque;
use std::io::{BufRead, Lines};

use serde::Deserialize;

use crate::executor::{DatasetEvent, MalformedSource, SourceItem};
use crate::hierarchy::{CellId, HierarchySpec};
use crate::store::{DataProduct, ProductLabel, TypeTag};
use crate::value::Value;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    begin: Option<String>,
    end: Option<String>,
    product: Option<String>,
    label: Option<String>,
    #[serde(rename = "type")]
    type_tag: Option<String>,
    value: Option<serde_json::Value>,
}

/// Streams dataset events from JSON Lines input.
pub struct DatasetReader<R> {
    lines: Lines<R>,
    hierarchy: HierarchySpec,
    line: usize,
    started: bool,
    job_ended: bool,
    done: bool,
    queued: VecDeque<SourceItem<Value>>,
}

pub fn read_dataset<R: BufRead>(input: R, hierarchy: &HierarchySpec) -> DatasetReader<R> {
    DatasetReader {
        lines: input.lines(),
        hierarchy: hierarchy.clone(),
        line: 0,
        started: false,
        job_ended: false,
        done: false,
        queued: VecDeque::new(),
    }
}

impl<R: BufRead> DatasetReader<R> {
    fn fail(&self, detail: impl Into<String>) -> MalformedSource {
        MalformedSource::at_line(self.line, detail)
    }

    fn cell(&self, path: &str) -> Result<CellId, MalformedSource> {
        self.hierarchy
            .parse_cell(path)
            .map_err(|e| self.fail(format!("bad cell path {path:?}: {e}")))
    }

    fn parse(&self, text: &str) -> Result<DatasetEvent<Value>, MalformedSource> {
        let r: Record = serde_json::from_str(text).map_err(|e| self.fail(e.to_string()))?;
        let extras = r.label.is_some() || r.type_tag.is_some() || r.value.is_some();
        match (r.begin, r.product, r.end) {
            (Some(path), None, None) if !extras => Ok(DatasetEvent::Begin(self.cell(&path)?)),
            (None, None, Some(path)) if !extras => Ok(DatasetEvent::End(self.cell(&path)?)),
            (None, Some(path), None) => {
                let (Some(label), Some(tag), Some(json)) = (r.label, r.type_tag, r.value) else {
                    return Err(self.fail("product records need `label`, `type` and `value`"));
                };
                let label = ProductLabel::new(&label).map_err(|e| self.fail(e.to_string()))?;
                let tag = TypeTag::new(&tag).map_err(|e| self.fail(e.to_string()))?;
                let value = Value::from_json(&json)
                    .ok_or_else(|| self.fail(format!("unsupported value {json}")))?
                    .coerce(tag.as_str())
                    .map_err(|e| self.fail(e.to_string()))?;
                Ok(DatasetEvent::Product(DataProduct::new(
                    label,
                    self.cell(&path)?,
                    tag,
                    value,
                )))
            }
            _ => Err(self.fail("expected exactly one of `begin`, `product` or `end`")),
        }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = SourceItem<Value>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(item) = self.queued.pop_front() {
            return Some(item);
        }
        if self.done {
            return None;
        }
        loop {
            let Some(line) = self.lines.next() else {
                self.done = true;
                if !self.started {
                    self.started = true;
                    self.queued
                        .push_back(Ok(DatasetEvent::Begin(self.hierarchy.job_cell())));
                }
                if !self.job_ended {
                    self.queued.push_back(Ok(DatasetEvent::End(self.hierarchy.job_cell())));
                }
                return self.queued.pop_front();
            };
            self.line += 1;
            let text = match line {
                Ok(t) => t,
                Err(e) => {
                    self.done = true;
                    return Some(Err(self.fail(e.to_string())));
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            let event = match self.parse(&text) {
                Ok(ev) => ev,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            if let DatasetEvent::End(c) = &event {
                self.job_ended |= c.is_root();
            }
            if !self.started {
                self.started = true;
                if !matches!(&event, DatasetEvent::Begin(c) if c.is_root()) {
                    self.queued.push_back(Ok(event));
                    return Some(Ok(DatasetEvent::Begin(self.hierarchy.job_cell())));
                }
            }
            return Some(Ok(event));
        }
    }
}
