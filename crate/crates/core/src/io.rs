//! File formats: JSON model documents, CSV time series, FCS reports.
//!
//! Indices in files are 1-based.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcs::FcsReport;
use crate::model::{MarModel, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub i: usize,
    pub j: usize,
    pub r: usize,
    pub value: f64,
}

/// `"identity"` or a dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseCovSpec {
    Named(String),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub n_nodes: usize,
    pub order: usize,
    pub noise_cov: NoiseCovSpec,
    pub coefficients: Vec<CoefficientEntry>,
}

impl ModelDocument {
    pub fn from_model(model: &MarModel) -> Self {
        let n = model.n_nodes();
        let sigma = model.noise_cov();
        let noise_cov = if *sigma == DMatrix::identity(n, n) {
            NoiseCovSpec::Named("identity".into())
        } else {
            NoiseCovSpec::Dense(
                (0..n)
                    .map(|i| (0..n).map(|j| sigma[(i, j)]).collect())
                    .collect(),
            )
        };
        let coefficients = model
            .triples()
            .into_iter()
            .map(|(i, j, r, value)| CoefficientEntry {
                i: i + 1,
                j: j + 1,
                r,
                value,
            })
            .collect();
        Self {
            n_nodes: n,
            order: model.order(),
            noise_cov,
            coefficients,
        }
    }

    pub fn to_model(&self) -> Result<MarModel> {
        let n = self.n_nodes;
        if n == 0 || self.order == 0 {
            return Err(Error::InvalidModel(
                "n_nodes and order must be positive".into(),
            ));
        }
        let sigma = match &self.noise_cov {
            NoiseCovSpec::Named(s) if s == "identity" => DMatrix::identity(n, n),
            NoiseCovSpec::Named(s) => {
                return Err(Error::Parse(format!(
                    "noise_cov must be \"identity\" or a matrix, got \"{s}\""
                )))
            }
            NoiseCovSpec::Dense(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("noise_cov must be {n}x{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        };
        let mut triples = Vec::with_capacity(self.coefficients.len());
        for c in &self.coefficients {
            if c.i == 0 || c.j == 0 || c.i > n || c.j > n || c.r == 0 || c.r > self.order {
                return Err(Error::Dimension(format!(
                    "coefficient (i={}, j={}, r={}) outside 1..={n} x 1..={n} x 1..={}",
                    c.i, c.j, c.r, self.order
                )));
            }
            triples.push((c.i - 1, c.j - 1, c.r, c.value));
        }
        MarModel::from_triples(n, self.order, &triples, sigma)
    }
}

pub fn model_to_json(model: &MarModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelDocument::from_model(model))? + "\n")
}

pub fn model_from_json(text: &str) -> Result<MarModel> {
    serde_json::from_str::<ModelDocument>(text)?.to_model()
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub fn read_model(path: &Path) -> Result<MarModel> {
    model_from_json(&fs::read_to_string(path).map_err(|e| with_path(path, e))?)
}

/// CSV with header `t,x1,...,xN`; values use the shortest representation
/// that parses back to the same `f64`.
pub fn series_to_csv(series: &TimeSeries) -> String {
    let mut out = String::from("t");
    for k in 1..=series.n_nodes() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for t in 0..series.n_samples() {
        out.push_str(&t.to_string());
        for k in 0..series.n_nodes() {
            out.push(',');
            out.push_str(&format!("{:?}", series.get(t, k)));
        }
        out.push('\n');
    }
    out
}

pub fn series_from_csv(reader: impl Read) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let n = headers.len().saturating_sub(1);
    if n == 0 || &headers[0] != "t" || (1..=n).any(|k| headers[k] != format!("x{k}")) {
        return Err(Error::Parse(format!(
            "expected header t,x1,...,xN, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for k in 1..=n {
            let v: f64 = rec[k]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad number `{}`", line + 2, &rec[k])))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::TooShort("time series file has no samples".into()));
    }
    TimeSeries::new(DMatrix::from_row_slice(rows, n, &values))
}

pub fn read_series(path: &Path) -> Result<TimeSeries> {
    series_from_csv(fs::File::open(path).map_err(|e| with_path(path, e))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScoreEntry {
    pub from: usize,
    pub to: usize,
    pub psi: f64,
    pub psi_sc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcsDocument {
    pub normalized: bool,
    pub psi_max: f64,
    pub psi_sc_max: f64,
    pub recoverable_sg: bool,
    pub recoverable_scsg: bool,
    pub edges: Vec<EdgeScoreEntry>,
}

impl From<&FcsReport> for FcsDocument {
    fn from(r: &FcsReport) -> Self {
        Self {
            normalized: r.normalized,
            psi_max: r.psi_max,
            psi_sc_max: r.psi_sc_max,
            recoverable_sg: r.recoverable(crate::Variant::Sg),
            recoverable_scsg: r.recoverable(crate::Variant::Scsg),
            edges: r
                .edges
                .iter()
                .map(|e| EdgeScoreEntry {
                    from: e.j + 1,
                    to: e.i + 1,
                    psi: e.psi,
                    psi_sc: e.psi_sc,
                })
                .collect(),
        }
    }
}

/// Two-decimal table: one row per candidate edge, written `j -> i`.
pub fn fcs_table_csv(report: &FcsReport) -> String {
    let mut out = String::from("edge,psi,psi_sc\n");
    for e in &report.edges {
        out.push_str(&format!(
            "{} -> {},{:.2},{:.2}\n",
            e.j + 1,
            e.i + 1,
            e.psi,
            e.psi_sc
        ));
    }
    out.push_str(&format!(
        "max,{:.2},{:.2}\n",
        report.psi_max, report.psi_sc_max
    ));
    out
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
