//! Comparison reports, written as JSON plus a CSV copy with identical
//! number formatting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fp8_ptq::runtime::write_atomic;
use fp8_ptq::Metrics;
use serde::{Serialize, Serializer};

use crate::CliError;

pub const CSV_HEADER: [&str; 8] = ["mode", "format", "granularity", "mse", "sqnr_db", "cosine", "max_abs_err", "accuracy"];

/// A report number: a finite value or one of the explicit markers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Num {
    Value(f64),
    Inf,
    Undefined,
}

impl Num {
    pub fn from_option(v: Option<f64>) -> Self {
        match v {
            Some(x) if x.is_finite() => Num::Value(x),
            Some(x) if x == f64::INFINITY => Num::Inf,
            _ => Num::Undefined,
        }
    }

    /// Shortest round-trip decimal for values, as in the JSON form.
    pub fn text(&self) -> String {
        match self {
            Num::Value(v) => serde_json::to_string(v).expect("finite f64 serializes"),
            Num::Inf => "inf".into(),
            Num::Undefined => "undefined".into(),
        }
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Num::Value(v) => s.serialize_f64(*v),
            Num::Inf => s.serialize_str("inf"),
            Num::Undefined => s.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub mode: String,
    pub format: String,
    pub granularity: String,
    pub mse: Num,
    pub sqnr_db: Num,
    pub cosine: Num,
    pub max_abs_err: Num,
    pub accuracy: Num,
}

impl Row {
    pub fn new(mode: &str, format: &str, granularity: &str, m: &Metrics, accuracy: Option<f64>) -> Self {
        Self {
            mode: mode.into(),
            format: format.into(),
            granularity: granularity.into(),
            mse: Num::from_option(Some(m.mse)),
            sqnr_db: Num::from_option(m.sqnr_db),
            cosine: Num::from_option(m.cosine),
            max_abs_err: Num::from_option(Some(m.max_abs_err)),
            accuracy: Num::from_option(accuracy),
        }
    }

    fn csv_record(&self) -> [String; 8] {
        [
            self.mode.clone(),
            self.format.clone(),
            self.granularity.clone(),
            self.mse.text(),
            self.sqnr_db.text(),
            self.cosine.text(),
            self.max_abs_err.text(),
            self.accuracy.text(),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: BTreeMap<String, String>,
    pub config: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "fp8ptq".into(),
            version: fp8_ptq::VERSION.into(),
            command: command.into(),
            seeds: BTreeMap::new(),
            config: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub runs: Vec<Row>,
    pub provenance: Provenance,
}

impl Report {
    pub fn to_json(&self) -> Result<Vec<u8>, CliError> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.runs {
            w.write_record(row.csv_record())?;
        }
        w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))
    }

    /// Writes `path` (JSON) and the same path with a `.csv` extension.
    pub fn write(&self, path: &Path) -> Result<PathBuf, CliError> {
        let csv_path = path.with_extension("csv");
        if csv_path == path {
            return Err(CliError::Usage("report path must not end in .csv; the CSV copy is written next to it".into()));
        }
        write_atomic(path, &self.to_json()?)?;
        write_atomic(&csv_path, &self.to_csv()?)?;
        Ok(csv_path)
    }
}
