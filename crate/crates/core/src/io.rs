//! CSV ingestion, run provenance and result emission.
//!
//! Input files have one row per unit:
//!
//! ```text
//! pair_id,unit,z,d,y,x_1,...,x_k[,subgroup]
//! ```
//!
//! with exactly two rows per `pair_id` (`unit` 1 and 2).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_dataset, MatchedPair, PairedDataset, ValidationOptions};

const REQUIRED: [&str; 5] = ["pair_id", "unit", "z", "d", "y"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Keep only pairs with this subgroup label.
    pub subgroup: Option<String>,
    pub validation: ValidationOptions,
}

struct Row {
    line: u64,
    unit: u8,
    z: u8,
    d: f64,
    y: f64,
    x: Vec<f64>,
    subgroup: Option<String>,
}

fn parse_num(field: &str, column: &str, line: u64) -> Result<f64> {
    let t = field.trim();
    if t.is_empty() {
        return Err(Error::Input(format!("line {line}: empty value in column '{column}'")));
    }
    t.parse::<f64>().map_err(|_| Error::Input(format!("line {line}: column '{column}': cannot parse '{t}' as a number")))
}

fn parse_flag(field: &str, column: &str, line: u64, allowed: &[u8]) -> Result<u8> {
    let t = field.trim();
    match t.parse::<u8>() {
        Ok(v) if allowed.contains(&v) => Ok(v),
        _ => Err(Error::Input(format!("line {line}: column '{column}': expected one of {allowed:?}, got '{t}'"))),
    }
}

/// Reads and validates a dataset from a CSV file.
pub fn ingest(path: impl AsRef<Path>) -> Result<PairedDataset> {
    ingest_with(path, &IngestOptions::default())
}

pub fn ingest_with(path: impl AsRef<Path>, options: &IngestOptions) -> Result<PairedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    ingest_reader(file, options)
}

/// Reads and validates a dataset from any CSV source.
pub fn ingest_reader(reader: impl Read, options: &IngestOptions) -> Result<PairedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Input(format!("header: {e}")))?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or_else(|| Error::Input(format!("missing required column '{name}'")))?;
    }
    let mut x_cols: Vec<(usize, usize, String)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix("x_") {
            let j: usize = rest.parse().map_err(|_| Error::Input(format!("covariate column '{h}' must be named x_<number>")))?;
            x_cols.push((j, i, h.to_string()));
        }
    }
    x_cols.sort();
    if x_cols.iter().enumerate().any(|(e, (j, _, _))| *j != e + 1) {
        return Err(Error::Input("covariate columns must be x_1, x_2, ..., x_k without gaps".into()));
    }
    let sub_col = position("subgroup");

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Input(format!("{e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("");
        let id = get(idx[0]).to_string();
        if id.is_empty() {
            return Err(Error::Input(format!("line {line}: empty pair_id")));
        }
        let row = Row {
            line,
            unit: parse_flag(get(idx[1]), "unit", line, &[1, 2])?,
            z: parse_flag(get(idx[2]), "z", line, &[0, 1])?,
            d: parse_num(get(idx[3]), "d", line)?,
            y: parse_num(get(idx[4]), "y", line)?,
            x: x_cols.iter().map(|(_, i, name)| parse_num(get(*i), name, line)).collect::<Result<_>>()?,
            subgroup: sub_col.map(|i| get(i).to_string()).filter(|s| !s.is_empty()),
        };
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(row);
    }

    let mut pairs = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).expect("grouped");
        if rows.len() != 2 {
            let lines: Vec<String> = rows.iter().map(|r| r.line.to_string()).collect();
            return Err(Error::Input(format!("pair '{id}' has {} rows (lines {}); expected 2", rows.len(), lines.join(", "))));
        }
        rows.sort_by_key(|r| r.unit);
        if rows[0].unit == rows[1].unit {
            return Err(Error::Input(format!("pair '{id}' (lines {}, {}): units must be 1 and 2", rows[0].line, rows[1].line)));
        }
        if rows[0].subgroup != rows[1].subgroup {
            return Err(Error::Input(format!("pair '{id}' (lines {}, {}): units disagree on subgroup", rows[0].line, rows[1].line)));
        }
        let [a, b] = [&rows[0], &rows[1]];
        let mut pair = MatchedPair::new(id.clone(), [a.z, b.z], [a.d, b.d], [a.y, b.y], [a.x.clone(), b.x.clone()]);
        pair.subgroup = a.subgroup.clone();
        pairs.push(pair);
    }
    if let Some(label) = &options.subgroup {
        if sub_col.is_none() {
            return Err(Error::Input(format!("subgroup filter '{label}' given but the file has no subgroup column")));
        }
        pairs.retain(|p| p.subgroup.as_deref() == Some(label.as_str()));
        if pairs.is_empty() {
            return Err(Error::Input(format!("no pairs in subgroup '{label}'")));
        }
    }
    let names = x_cols.into_iter().map(|(_, _, name)| name).collect();
    validate_dataset(pairs, names, options.validation)
}

/// Flat description of a run, embedded in every emitted document.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl RunConfig {
    pub fn new(command: impl Into<String>) -> Self {
        RunConfig { command: command.into(), params: BTreeMap::new() }
    }

    /// Records a parameter; unrepresentable values are stored as null.
    pub fn set(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    #[serde(flatten)]
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(config: RunConfig) -> Self {
        Provenance { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), config }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("serialization failed: {e}")))
    }
}

/// A result together with the settings that produced it. Non-finite numbers
/// are written as `null`.
#[derive(Debug, Clone, Serialize)]
pub struct ResultDocument<T> {
    pub result: T,
    pub provenance: Provenance,
}

impl<T: Serialize> ResultDocument<T> {
    pub fn new(result: T, config: RunConfig) -> Self {
        ResultDocument { result, provenance: Provenance::new(config) }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("serialization failed: {e}")))
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        let text = self.to_json()?;
        writeln!(out, "{text}").map_err(|e| Error::Input(format!("write failed: {e}")))
    }
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Input(format!("csv write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv write failed: {e}")))
}
