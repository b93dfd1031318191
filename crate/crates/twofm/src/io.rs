//! File formats: CSV matrices, JSON parameter and result documents, and the
//! run manifest written next to every command's outputs.
//!
//! CSV numbers are written with the shortest representation that round-trips
//! a 64-bit float, so re-reading reproduces the values bit for bit. JSON
//! documents carry a top-level `schema_version`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{FitResult, InnerIterations, StopReason};
use crate::model::{DataMatrix, Dims, FactorScores, ModelParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Reads a numeric matrix from CSV. `header` skips the first line. Parse
/// problems report the offending row and column (1-based, header included).
pub fn read_csv_matrix(path: &Path, header: bool) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 && header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row_no = idx + 1;
        let mut row = Vec::new();
        for (col_idx, field) in line.split(',').enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Csv {
                row: row_no,
                col: col_idx + 1,
                msg: format!("cannot parse {:?} as a number", field.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::Csv {
                    row: row_no,
                    col: col_idx + 1,
                    msg: "non-finite value".into(),
                });
            }
            row.push(value);
        }
        if width == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Csv {
                row: row_no,
                col: row.len(),
                msg: format!("expected {width} fields, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv { row: 1, col: 1, msg: "no data rows".into() });
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// Writes a matrix as headerless CSV with round-trip float formatting.
pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            // `{}` on f64 emits the shortest string that parses back exactly.
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a CSV with a header line followed by rows of formatted values.
pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// JSON form of the model parameters:
/// `{p, q, r, c, L, Lambda, psiF, psiE, sigma2}` with matrices as row-major
/// nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsJson {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub c: usize,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    #[serde(rename = "psiF")]
    pub psi_f: Vec<f64>,
    #[serde(rename = "psiE")]
    pub psi_e: Vec<f64>,
    pub sigma2: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::InvalidInput(format!("{what} must be non-empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!("{what} rows have inconsistent lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<&ModelParams> for ParamsJson {
    fn from(p: &ModelParams) -> Self {
        Self {
            p: p.dims.p,
            q: p.dims.q,
            r: p.dims.r,
            c: p.dims.c,
            l: matrix_rows(&p.row_loadings),
            lambda: matrix_rows(&p.col_loadings),
            psi_f: p.psi_f.iter().copied().collect(),
            psi_e: p.psi_e.iter().copied().collect(),
            sigma2: p.sigma2,
        }
    }
}

impl ParamsJson {
    pub fn try_into_params(&self) -> Result<ModelParams> {
        let dims = Dims::new(self.p, self.q, self.r, self.c)?;
        ModelParams::new(
            dims,
            rows_to_matrix(&self.l, "L")?,
            rows_to_matrix(&self.lambda, "Lambda")?,
            DVector::from_row_slice(&self.psi_f),
            DVector::from_row_slice(&self.psi_e),
            self.sigma2,
        )
    }
}

pub fn write_params_json(path: &Path, params: &ModelParams) -> Result<()> {
    let doc = ParamsJson::from(params);
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_params_json(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)?;
    let doc: ParamsJson = serde_json::from_str(&text)?;
    doc.try_into_params()
}

/// Serialized fit output: estimate, trace, diagnostics and scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub theta: ParamsJson,
    pub loglik_trace: Vec<f64>,
    pub inner_iters: Vec<InnerIterations>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub gradient_norm: f64,
    pub max_ic1_residual: f64,
    pub warnings: Vec<String>,
    pub floor_activations: usize,
    pub restart_finals: Vec<f64>,
    /// posterior row-factor scores, `p x r`, row-major
    pub scores_f: Vec<Vec<f64>>,
    /// posterior column-factor scores, `q x c`, row-major
    pub scores_e: Vec<Vec<f64>>,
}

impl From<&FitResult> for FitDocument {
    fn from(fit: &FitResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            theta: ParamsJson::from(&fit.theta_hat),
            loglik_trace: fit.loglik_trace.clone(),
            inner_iters: fit.inner_iters.clone(),
            converged: fit.converged,
            stop_reason: fit.stop_reason,
            gradient_norm: fit.gradient_norm,
            max_ic1_residual: fit.max_ic1_residual,
            warnings: fit.warnings.clone(),
            floor_activations: fit.floor_activations,
            restart_finals: fit.restart_finals.clone(),
            scores_f: matrix_rows(&fit.scores.row_factors),
            scores_e: matrix_rows(&fit.scores.col_factors),
        }
    }
}

impl FitDocument {
    pub fn theta_hat(&self) -> Result<ModelParams> {
        self.theta.try_into_params()
    }

    pub fn scores(&self) -> Result<FactorScores> {
        let params = self.theta_hat()?;
        FactorScores::new(
            &params.dims,
            rows_to_matrix(&self.scores_f, "scores_f")?,
            rows_to_matrix(&self.scores_e, "scores_e")?,
        )
    }
}

pub fn write_fit_json(path: &Path, fit: &FitResult) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&FitDocument::from(fit))?)?;
    Ok(())
}

pub fn read_fit_json(path: &Path) -> Result<FitDocument> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Simulated-bundle sidecar: the generating parameters, factors and noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleDocument {
    pub schema_version: u32,
    pub seed: u64,
    pub params: ParamsJson,
    pub f: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl BundleDocument {
    pub fn new(params: &ModelParams, bundle: &crate::sampler::SampleBundle) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: bundle.seed,
            params: ParamsJson::from(params),
            f: matrix_rows(&bundle.scores.row_factors),
            e: matrix_rows(&bundle.scores.col_factors),
            noise: matrix_rows(&bundle.noise),
        }
    }
}

/// Describes one command run well enough to reproduce it: the argv, the
/// configuration echo, seeds, software version, timestamps and input
/// digests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub input_digests: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let now = chrono::Utc::now().to_rfc3339();
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now.clone(),
            finished_at: now,
            input_digests: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.input_digests.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish_and_write(mut self, dir: &Path) -> Result<()> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        fs::create_dir_all(dir)?;
        let mut file = fs::File::create(dir.join("manifest.json"))?;
        file.write_all(serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(())
    }
}

/// Loads a data matrix from CSV, optionally skipping a header line and
/// centering the columns.
pub fn load_data_matrix(path: &Path, header: bool, center: bool) -> Result<DataMatrix> {
    let raw = read_csv_matrix(path, header)?;
    let dm = DataMatrix::new(raw)?;
    Ok(if center { dm.center_columns() } else { dm })
}
