//! CSV datasets with `#` metadata headers, and the JSON run manifest.
//!
//! Floats are written in their shortest round-trip form, so reading a
//! dataset back reproduces the in-memory values bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

/// Manifest schema identifier; bump on incompatible layout changes.
pub const MANIFEST_SCHEMA: &str = "superradiant-run-manifest/1";
pub const SOFTWARE: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

impl From<Option<f64>> for Value {
    fn from(x: Option<f64>) -> Self {
        Value::Num(x.unwrap_or(f64::NAN))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => f.write_str(&format_f64(*x)),
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{}", u8::from(*b)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// A dataset: named columns, rows of values and metadata header lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            metadata: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table `{}`", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    /// Writes `# key = value` lines followed by the CSV body.
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "# dataset = {}", self.name)?;
        writeln!(out, "# software = {SOFTWARE}")?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A dataset read back from disk; cells are kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl LoadedTable {
    pub fn column_index(&self, name: &str) -> Result<usize, HarnessError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| HarnessError::Schema(format!("no column `{name}`")))
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>, HarnessError> {
        let k = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[k].parse::<f64>()
                    .map_err(|_| HarnessError::Schema(format!("column `{name}`: `{}` is not a number", r[k])))
            })
            .collect()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_table(path: &Path) -> Result<LoadedTable, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let metadata = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(LoadedTable {
        metadata,
        columns,
        rows,
    })
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub columns: Vec<String>,
}

/// A parameter point that could not be computed; the run continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub point: String,
    pub stage: String,
    pub error: String,
}

/// Run manifest (`manifest.json`).
///
/// ```text
/// schema     "superradiant-run-manifest/1"
/// software   package name and version
/// command    subcommand name
/// seed       RNG seed
/// config     effective key = value pairs (defaults filled in)
/// params     derived parameters of the base point, V = 1 units
/// inputs     [{path, sha256, bytes}]
/// outputs    [{path, sha256, bytes, rows, columns}]
/// failures   [{point, stage, error}]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub software: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub failures: Vec<PointFailure>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes each table into `dir` and returns the manifest entries.
pub fn write_tables(dir: &Path, tables: &[Table]) -> Result<Vec<FileEntry>, HarnessError> {
    let mut entries = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(t.file_name());
        t.write(&path)?;
        entries.push(FileEntry {
            path: t.file_name(),
            sha256: sha256_file(&path)?,
            bytes: std::fs::metadata(&path)?.len(),
            rows: Some(t.rows.len()),
            columns: t.columns.clone(),
        });
    }
    Ok(entries)
}
