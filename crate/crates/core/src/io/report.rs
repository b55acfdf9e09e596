//! Result reports: named tables plus run metadata, written either as a CSV
//! bundle (one file per table and a JSON manifest) or a single JSON file.
//!
//! Floats are rounded to 12 significant digits on output so repeated runs
//! produce byte-identical files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Null,
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Value::Float(v)
        } else {
            Value::Null
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Null, Into::into)
    }
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Shortest text that reads back as the rounded value, e.g. `20.0`, `0.03`.
pub fn format_float(x: f64) -> String {
    format!("{:?}", round_sig(x))
}

impl Value {
    fn rounded(&self) -> Value {
        match self {
            Value::Float(f) => Value::Float(round_sig(*f)),
            other => other.clone(),
        }
    }

    fn to_csv_field(&self) -> String {
        match self {
            Value::Int(i) => i.to_string(),
            Value::Float(f) => format_float(*f),
            Value::Text(s) => s.clone(),
            Value::Null => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of one column, in row order.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows.iter().map(|r| r[idx].as_f64()).collect()
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(&self.columns).map_err(csv_io)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(Value::to_csv_field)).map_err(csv_io)?;
        }
        writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    /// SHA-256 of the case file bytes.
    pub case_hash: String,
    /// Solver tolerances and other numeric settings, by name.
    pub settings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub metadata: RunMetadata,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn rounded(&self) -> Report {
        Report {
            metadata: RunMetadata {
                settings: self.metadata.settings.iter().map(|(k, v)| (k.clone(), round_sig(*v))).collect(),
                ..self.metadata.clone()
            },
            tables: self
                .tables
                .iter()
                .map(|t| Table {
                    rows: t.rows.iter().map(|r| r.iter().map(Value::rounded).collect()).collect(),
                    ..t.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    CsvBundle,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" | "csv-bundle" => Ok(ReportFormat::CsvBundle),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    name: &'a str,
    file: String,
    columns: &'a [String],
    rows: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    metadata: &'a RunMetadata,
    tables: Vec<ManifestEntry<'a>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const JSON_REPORT_FILE: &str = "report.json";

/// Serializes a report into `(file name, bytes)` pairs.
pub fn write_report(report: &Report, format: ReportFormat) -> Result<Vec<(String, Vec<u8>)>> {
    let rounded = report.rounded();
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(&rounded).map_err(|e| Error::Io(e.into()))?;
            bytes.push(b'\n');
            Ok(vec![(JSON_REPORT_FILE.to_string(), bytes)])
        }
        ReportFormat::CsvBundle => {
            let mut files = Vec::with_capacity(rounded.tables.len() + 1);
            for table in &rounded.tables {
                files.push((format!("{}.csv", table.name), table.to_csv()?));
            }
            let manifest = Manifest {
                metadata: &rounded.metadata,
                tables: rounded
                    .tables
                    .iter()
                    .map(|t| ManifestEntry {
                        name: &t.name,
                        file: format!("{}.csv", t.name),
                        columns: &t.columns,
                        rows: t.rows.len(),
                    })
                    .collect(),
            };
            let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
            bytes.push(b'\n');
            files.push((MANIFEST_FILE.to_string(), bytes));
            Ok(files)
        }
    }
}

/// Lowercase hex SHA-256, used to identify the case a report came from.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_report_json(source: &[u8]) -> Result<Report> {
    serde_json::from_slice(source).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))
}
