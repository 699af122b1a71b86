use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProbeKind;
use crate::dataset::{FeatureMode, LayerId};

#[derive(Debug, Error)]
pub enum ResultsIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad probe type {0:?}")]
    BadProbeType(String),
    #[error("bad dropout value {0:?}")]
    BadDropout(String),
}

/// `<kind>-<mode>[-L<layer>]`, e.g. `Linear-Joint-L15` or `MLP-Embedding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ProbeType {
    pub kind: ProbeKind,
    pub mode: FeatureMode,
    pub layer: Option<LayerId>,
}

impl ProbeType {
    pub fn new(kind: ProbeKind, mode: FeatureMode, layer: Option<LayerId>) -> Self {
        ProbeType { kind, mode, layer }
    }
}

impl fmt::Display for ProbeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.label(), self.mode.label())?;
        if let Some(l) = self.layer {
            write!(f, "-L{l}")?;
        }
        Ok(())
    }
}

impl FromStr for ProbeType {
    type Err = ResultsIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ResultsIoError::BadProbeType(s.to_string());
        let mut parts = s.trim().split('-');
        let kind = parts.next().and_then(ProbeKind::from_label).ok_or_else(bad)?;
        let mode = parts.next().and_then(FeatureMode::from_label).ok_or_else(bad)?;
        let layer = match parts.next() {
            None => None,
            Some(l) => Some(l.strip_prefix('L').and_then(|v| v.parse().ok()).ok_or_else(bad)?),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(ProbeType { kind, mode, layer })
    }
}

impl From<ProbeType> for String {
    fn from(p: ProbeType) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ProbeType {
    type Error = ResultsIoError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// One row of the probe results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub train_r2: f64,
    /// Bootstrap standard error of the train R².
    pub train_std: f64,
    pub test_r2: f64,
    /// Bootstrap standard error of the test R².
    pub test_std: f64,
    pub lr: f64,
    pub lambda: f64,
    /// Absent for linear probes.
    pub dropout: Option<f64>,
    pub probe_type: ProbeType,
}

impl ProbeResult {
    pub fn layer(&self) -> Option<LayerId> {
        self.probe_type.layer
    }
}

pub const RESULTS_CSV_HEADER: [&str; 10] = [
    "dataset",
    "K",
    "train_r2",
    "train_std",
    "test_r2",
    "test_std",
    "lr",
    "lambda",
    "dropout",
    "probe_type",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ResultsIoError + '_ {
    move |source| ResultsIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_dropout(s: &str) -> Result<Option<f64>, ResultsIoError> {
    let t = s.trim();
    if t.is_empty() || t == "—" || t == "-" {
        return Ok(None);
    }
    t.parse().map(Some).map_err(|_| ResultsIoError::BadDropout(s.to_string()))
}

pub fn write_results_csv<W: Write>(out: W, results: &[ProbeResult]) -> Result<(), ResultsIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.dataset.clone(),
            r.k.to_string(),
            r.train_r2.to_string(),
            r.train_std.to_string(),
            r.test_r2.to_string(),
            r.test_std.to_string(),
            r.lr.to_string(),
            r.lambda.to_string(),
            r.dropout.map(|d| d.to_string()).unwrap_or_default(),
            r.probe_type.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parse a results table. The dataset column may be left blank on
/// continuation rows, in which case the previous value carries over.
pub fn read_results_csv<R: std::io::Read>(input: R) -> Result<Vec<ProbeResult>, ResultsIoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let idx: Vec<Option<usize>> = RESULTS_CSV_HEADER.iter().map(|h| col(h)).collect();
    let mut out = Vec::new();
    let mut last_dataset = String::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| idx[i].and_then(|c| rec.get(c)).unwrap_or("");
        let num = |i: usize| -> Result<f64, ResultsIoError> {
            field(i).parse::<f64>().map_err(|_| {
                ResultsIoError::Csv(csv::Error::from(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("column {} is not a number: {:?}", RESULTS_CSV_HEADER[i], field(i)),
                )))
            })
        };
        let dataset = match field(0) {
            "" => last_dataset.clone(),
            d => d.to_string(),
        };
        last_dataset = dataset.clone();
        out.push(ProbeResult {
            dataset,
            k: num(1)? as usize,
            train_r2: num(2)?,
            train_std: num(3)?,
            test_r2: num(4)?,
            test_std: num(5)?,
            lr: num(6)?,
            lambda: num(7)?,
            dropout: parse_dropout(field(8))?,
            probe_type: field(9).parse()?,
        });
    }
    Ok(out)
}

pub fn write_results_json(path: &Path, results: &[ProbeResult]) -> Result<(), ResultsIoError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, results)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_results_json(path: &Path) -> Result<Vec<ProbeResult>, ResultsIoError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
