//! Core types of the two-way factor model.
//!
//! The model for a single `p x q` data matrix `X` is
//!
//! ```text
//! X = F L' + Lambda E' + eps
//! ```
//!
//! with row factors `F` (`p x r`, rows i.i.d. `N(0, Psi_F)`), column factors
//! `E` (`q x c`, rows i.i.d. `N(0, Psi_E)`), independent Gaussian noise
//! `eps_ij ~ N(0, sigma^2)`, and loading matrices `L` (`q x r`) and `Lambda`
//! (`p x c`). The parameters are identified under two conditions:
//!
//! * scaled orthogonality of the loadings, `L'L = q sigma^2 I_r` and
//!   `Lambda'Lambda = p sigma^2 I_c`;
//! * column signs fixed by a canonical rule (largest-absolute entry positive).
//!
//! The variance parameters must be strictly ordered within each block and the
//! row-factor variances must stay away from the column-factor variances; the
//! loading estimates fluctuate wildly when a row and a column variance come
//! close to each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the scaled-orthogonality residual for exactly constructed
/// parameters (samplers, canonical transforms).
pub const TOL_IC_EXACT: f64 = 1e-8;
/// Tolerance on the scaled-orthogonality residual for estimated parameters.
pub const TOL_IC_ESTIMATE: f64 = 1e-6;
/// Relative separation below which a row-factor variance and a column-factor
/// variance are considered indistinguishable.
pub const MC5_SEP_TOL: f64 = 1e-6;

/// Problem dimensions: data matrix is `p x q`, with `r` row factors and `c`
/// column factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub c: usize,
}

impl Dims {
    /// Checked constructor. Requires `p, q >= 2`, `r, c >= 1` and
    /// `min(p, q) > max(r, c)`, which uniqueness of the low-rank-plus-diagonal
    /// decomposition needs.
    pub fn new(p: usize, q: usize, r: usize, c: usize) -> Result<Self> {
        if p < 2 || q < 2 {
            return Err(Error::InvalidDims(format!("p and q must be >= 2, got p={p}, q={q}")));
        }
        if r < 1 || c < 1 {
            return Err(Error::InvalidDims(format!("r and c must be >= 1, got r={r}, c={c}")));
        }
        if p.min(q) <= r.max(c) {
            return Err(Error::InvalidDims(format!(
                "min(p, q) = {} must exceed max(r, c) = {}",
                p.min(q),
                r.max(c)
            )));
        }
        Ok(Self { p, q, r, c })
    }

    pub fn pq(&self) -> usize {
        self.p * self.q
    }
}

/// Full parameter set `theta = (L, Lambda, Psi_F, Psi_E, sigma^2)`.
///
/// `row_loadings` is the `q x r` matrix `L` acting on the row factors,
/// `col_loadings` is the `p x c` matrix `Lambda` acting on the column factors.
/// `psi_f` and `psi_e` hold the diagonals of `Psi_F` and `Psi_E`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub psi_f: DVector<f64>,
    pub psi_e: DVector<f64>,
    pub sigma2: f64,
}

/// Named model condition checked by [`ModelParams::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `L'L / (q sigma^2) = I_r`
    Ic1RowLoadings,
    /// `Lambda'Lambda / (p sigma^2) = I_c`
    Ic1ColLoadings,
    /// `sigma^2_F1 > ... > sigma^2_Fr > 0`
    Mc5RowOrdering,
    /// `sigma^2_E1 > ... > sigma^2_Ec > 0`
    Mc5ColOrdering,
    /// `sigma^2_Fk != sigma^2_Em` for every pair
    Mc5Separation,
    /// noise variance strictly positive
    NoisePositive,
    /// canonical column signs (largest-absolute entry positive)
    SignCanonical,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Ic1RowLoadings => "IC1 (row loadings)",
            Condition::Ic1ColLoadings => "IC1 (column loadings)",
            Condition::Mc5RowOrdering => "MC5 ordering (row factors)",
            Condition::Mc5ColOrdering => "MC5 ordering (column factors)",
            Condition::Mc5Separation => "MC5 separation",
            Condition::NoisePositive => "noise variance positivity",
            Condition::SignCanonical => "IC2 sign canonicalization",
        }
    }
}

/// A violated condition together with its residual magnitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub residual: f64,
    pub detail: String,
}

/// Outcome of [`ModelParams::validate`]: empty iff all conditions hold.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }

    fn push(&mut self, condition: Condition, residual: f64, detail: String) {
        self.violations.push(Violation { condition, residual, detail });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "all model conditions hold");
        }
        for v in &self.violations {
            writeln!(f, "{}: residual {:.3e} ({})", v.condition.name(), v.residual, v.detail)?;
        }
        Ok(())
    }
}

impl ModelParams {
    /// Structural constructor: checks shapes and finiteness, not the model
    /// conditions. Use [`ModelParams::validate`] for those.
    pub fn new(
        dims: Dims,
        row_loadings: DMatrix<f64>,
        col_loadings: DMatrix<f64>,
        psi_f: DVector<f64>,
        psi_e: DVector<f64>,
        sigma2: f64,
    ) -> Result<Self> {
        if row_loadings.nrows() != dims.q || row_loadings.ncols() != dims.r {
            return Err(Error::DimensionMismatch(format!(
                "L must be {}x{}, got {}x{}",
                dims.q,
                dims.r,
                row_loadings.nrows(),
                row_loadings.ncols()
            )));
        }
        if col_loadings.nrows() != dims.p || col_loadings.ncols() != dims.c {
            return Err(Error::DimensionMismatch(format!(
                "Lambda must be {}x{}, got {}x{}",
                dims.p,
                dims.c,
                col_loadings.nrows(),
                col_loadings.ncols()
            )));
        }
        if psi_f.len() != dims.r || psi_e.len() != dims.c {
            return Err(Error::DimensionMismatch(format!(
                "Psi_F and Psi_E must have lengths {} and {}, got {} and {}",
                dims.r,
                dims.c,
                psi_f.len(),
                psi_e.len()
            )));
        }
        let finite = row_loadings.iter().chain(col_loadings.iter()).all(|v| v.is_finite())
            && psi_f.iter().chain(psi_e.iter()).all(|v| v.is_finite())
            && sigma2.is_finite();
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { dims, row_loadings, col_loadings, psi_f, psi_e, sigma2 })
    }

    /// Checks every model condition at the given scaled-orthogonality
    /// tolerance and reports each violated condition with its residual.
    pub fn validate(&self, tol_ic: f64) -> ValidationReport {
        let mut report = ValidationReport::default();
        let d = &self.dims;

        if self.sigma2 <= 0.0 {
            report.push(
                Condition::NoisePositive,
                -self.sigma2,
                format!("sigma^2 = {} must be > 0", self.sigma2),
            );
            // IC1 residuals are meaningless without a positive sigma^2.
            return report;
        }

        let res_l = ic1_residual(&self.row_loadings, d.q as f64 * self.sigma2);
        if res_l > tol_ic {
            report.push(
                Condition::Ic1RowLoadings,
                res_l,
                format!("max-abs residual of L'L/(q sigma^2) - I is {res_l:.3e}"),
            );
        }
        let res_lam = ic1_residual(&self.col_loadings, d.p as f64 * self.sigma2);
        if res_lam > tol_ic {
            report.push(
                Condition::Ic1ColLoadings,
                res_lam,
                format!("max-abs residual of Lambda'Lambda/(p sigma^2) - I is {res_lam:.3e}"),
            );
        }

        check_ordering(&self.psi_f, Condition::Mc5RowOrdering, "sigma^2_F", &mut report);
        check_ordering(&self.psi_e, Condition::Mc5ColOrdering, "sigma^2_E", &mut report);

        for (k, &sf) in self.psi_f.iter().enumerate() {
            for (m, &se) in self.psi_e.iter().enumerate() {
                let gap = (sf - se).abs();
                let scale = sf.abs().max(se.abs()).max(f64::MIN_POSITIVE);
                if gap <= MC5_SEP_TOL * scale {
                    report.push(
                        Condition::Mc5Separation,
                        gap,
                        format!(
                            "sigma^2_F{} = {sf} and sigma^2_E{} = {se} are separated by only {gap:.3e}",
                            k + 1,
                            m + 1
                        ),
                    );
                }
            }
        }

        for (name, m, cond) in [
            ("L", &self.row_loadings, Condition::SignCanonical),
            ("Lambda", &self.col_loadings, Condition::SignCanonical),
        ] {
            for j in 0..m.ncols() {
                let col = m.column(j);
                if let Some((_, v)) = max_abs_entry(&col.iter().copied().collect::<Vec<_>>()) {
                    if v < 0.0 {
                        report.push(
                            cond,
                            v.abs(),
                            format!("column {} of {name} has a negative dominant entry", j + 1),
                        );
                    }
                }
            }
        }

        report
    }

    /// Returns the same parameters with canonical column signs on both
    /// loading matrices.
    pub fn canonicalized(&self) -> Result<ModelParams> {
        Ok(ModelParams {
            dims: self.dims,
            row_loadings: canonicalize_signs(&self.row_loadings)?,
            col_loadings: canonicalize_signs(&self.col_loadings)?,
            psi_f: self.psi_f.clone(),
            psi_e: self.psi_e.clone(),
            sigma2: self.sigma2,
        })
    }
}

fn ic1_residual(loadings: &DMatrix<f64>, scale: f64) -> f64 {
    let gram = loadings.transpose() * loadings / scale;
    let k = gram.nrows();
    let mut res = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            res = res.max((gram[(i, j)] - target).abs());
        }
    }
    res
}

fn check_ordering(psi: &DVector<f64>, cond: Condition, label: &str, report: &mut ValidationReport) {
    let mut worst = 0.0f64;
    let mut bad = false;
    for k in 0..psi.len() {
        if psi[k] <= 0.0 {
            bad = true;
            worst = worst.max(-psi[k]);
        }
        if k + 1 < psi.len() && psi[k] <= psi[k + 1] {
            bad = true;
            worst = worst.max(psi[k + 1] - psi[k]);
        }
    }
    if bad {
        report.push(
            cond,
            worst,
            format!("{label} entries must be strictly decreasing and positive: {:?}", psi.as_slice()),
        );
    }
}

/// Index and value of the entry with the largest absolute value; ties go to
/// the first such entry. `None` for an all-zero column.
fn max_abs_entry(col: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in col.iter().enumerate() {
        match best {
            None if v != 0.0 => best = Some((i, v)),
            Some((_, b)) if v.abs() > b.abs() => best = Some((i, v)),
            _ => {}
        }
    }
    best
}

/// Multiplies each column by +/-1 so that its largest-absolute entry is
/// positive (first such entry on ties). Idempotent; preserves column norms.
pub fn canonicalize_signs(loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = loadings.clone();
    for j in 0..out.ncols() {
        let col: Vec<f64> = out.column(j).iter().copied().collect();
        let (_, v) = max_abs_entry(&col)
            .ok_or_else(|| Error::DegenerateLoading(format!("column {} is identically zero", j + 1)))?;
        if v < 0.0 {
            for i in 0..out.nrows() {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Sign alignment of an estimate against a reference, plus the columns left
/// untouched because the correlation was exactly zero.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub params: ModelParams,
    pub tied_row_columns: Vec<usize>,
    pub tied_col_columns: Vec<usize>,
}

/// Flips the sign of each estimated loading column to maximize its
/// correlation with the corresponding true column. Variance parameters are
/// untouched. Columns orthogonal to the truth keep their canonical sign and
/// are reported as ties.
pub fn align_for_comparison(estimate: &ModelParams, truth: &ModelParams) -> Result<Alignment> {
    if estimate.dims != truth.dims {
        return Err(Error::DimensionMismatch(format!(
            "estimate dims {:?} != truth dims {:?}",
            estimate.dims, truth.dims
        )));
    }
    let mut params = estimate.clone();
    let tied_row_columns = align_columns(&mut params.row_loadings, &truth.row_loadings);
    let tied_col_columns = align_columns(&mut params.col_loadings, &truth.col_loadings);
    Ok(Alignment { params, tied_row_columns, tied_col_columns })
}

fn align_columns(estimate: &mut DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<usize> {
    let mut ties = Vec::new();
    for j in 0..estimate.ncols() {
        let dot = estimate.column(j).dot(&truth.column(j));
        if dot < 0.0 {
            for i in 0..estimate.nrows() {
                estimate[(i, j)] = -estimate[(i, j)];
            }
        } else if dot == 0.0 {
            ties.push(j);
        }
    }
    ties
}

/// Per-column and average coefficient of determination of the estimated
/// loadings regressed on the true loadings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadingAccuracy {
    pub per_column: Vec<f64>,
    pub average: f64,
}

/// R^2 of the simple linear regression (with intercept) of each estimated
/// column on the corresponding true column, averaged over columns.
///
/// Inputs are expected to be sign-aligned first; the value is invariant under
/// a simultaneous sign flip of both columns.
pub fn loading_accuracy_r2(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<LoadingAccuracy> {
    if estimate.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let n = truth.nrows() as f64;
    let mut per_column = Vec::with_capacity(truth.ncols());
    for j in 0..truth.ncols() {
        let x = truth.column(j);
        let y = estimate.column(j);
        let mx = x.sum() / n;
        let my = y.sum() / n;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        let mut sxy = 0.0;
        for i in 0..truth.nrows() {
            let dx = x[i] - mx;
            let dy = y[i] - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        if sxx == 0.0 {
            return Err(Error::ConstantColumn(j + 1));
        }
        // A constant estimate has no linear relationship with the truth.
        let r2 = if syy == 0.0 { 0.0 } else { sxy * sxy / (sxx * syy) };
        per_column.push(r2);
    }
    let average = per_column.iter().sum::<f64>() / per_column.len() as f64;
    Ok(LoadingAccuracy { per_column, average })
}

/// Property-test oracle for parameter identifiability: builds both dense
/// covariance matrices (capped at `pq <= 4096`) and checks that equality of
/// the covariances implies equality of the parameters up to column signs.
///
/// Returns `true` when no counterexample is exhibited by this pair: either
/// the covariances differ, or they agree and so do the sign-canonicalized
/// parameters.
pub fn identifiability_check(theta_a: &ModelParams, theta_b: &ModelParams) -> Result<bool> {
    if theta_a.dims != theta_b.dims {
        return Err(Error::DimensionMismatch("identifiability check needs equal dims".into()));
    }
    let sig_a = crate::spectral::dense_sigma(theta_a)?;
    let sig_b = crate::spectral::dense_sigma(theta_b)?;
    let scale = sig_a.amax().max(sig_b.amax()).max(1.0);
    let sigma_equal = (&sig_a - &sig_b).amax() <= 1e-10 * scale;
    if !sigma_equal {
        return Ok(true);
    }
    let a = theta_a.canonicalized()?;
    let b = theta_b.canonicalized()?;
    let tol = 1e-8;
    let equal = (&a.row_loadings - &b.row_loadings).amax() <= tol
        && (&a.col_loadings - &b.col_loadings).amax() <= tol
        && (&a.psi_f - &b.psi_f).amax() <= tol
        && (&a.psi_e - &b.psi_e).amax() <= tol
        && (a.sigma2 - b.sigma2).abs() <= tol;
    Ok(equal)
}

/// The observed `p x q` data matrix, with a flag recording whether its
/// columns have been mean-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    centered: bool,
}

impl DataMatrix {
    /// Wraps raw values; every entry must be finite.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 1 || values.ncols() < 1 {
            return Err(Error::InvalidDims("data matrix must be non-empty".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("data matrix".into()));
        }
        Ok(Self { values, centered: false })
    }

    /// Wraps values already known to be column-centered; checks that each
    /// column mean is zero relative to the column's largest entry.
    pub fn new_centered(values: DMatrix<f64>) -> Result<Self> {
        let dm = Self::new(values)?;
        for j in 0..dm.values.ncols() {
            let col = dm.values.column(j);
            let mean = col.sum() / dm.values.nrows() as f64;
            let scale = col.amax();
            if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidInput(format!(
                    "column {} claimed centered but has mean {mean:.3e}",
                    j + 1
                )));
            }
        }
        Ok(Self { values: dm.values, centered: true })
    }

    /// Subtracts the mean of each column.
    pub fn center_columns(&self) -> DataMatrix {
        let mut values = self.values.clone();
        let n = values.nrows() as f64;
        for j in 0..values.ncols() {
            let mean = values.column(j).sum() / n;
            for i in 0..values.nrows() {
                values[(i, j)] -= mean;
            }
        }
        DataMatrix { values, centered: true }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// The transposed data matrix (rows and columns swap roles).
    pub fn transposed(&self) -> DataMatrix {
        DataMatrix { values: self.values.transpose(), centered: false }
    }
}

/// Point estimates of the latent factors: `F` is `p x r`, `E` is `q x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores {
    pub row_factors: DMatrix<f64>,
    pub col_factors: DMatrix<f64>,
}

impl FactorScores {
    pub fn new(dims: &Dims, row_factors: DMatrix<f64>, col_factors: DMatrix<f64>) -> Result<Self> {
        if row_factors.nrows() != dims.p || row_factors.ncols() != dims.r {
            return Err(Error::DimensionMismatch(format!(
                "F must be {}x{}, got {}x{}",
                dims.p,
                dims.r,
                row_factors.nrows(),
                row_factors.ncols()
            )));
        }
        if col_factors.nrows() != dims.q || col_factors.ncols() != dims.c {
            return Err(Error::DimensionMismatch(format!(
                "E must be {}x{}, got {}x{}",
                dims.q,
                dims.c,
                col_factors.nrows(),
                col_factors.ncols()
            )));
        }
        Ok(Self { row_factors, col_factors })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Exact r=c=1 construction used across the unit tests: single loading
    /// entry carries the whole norm, so IC1 holds by construction.
    pub(crate) fn axis_params(q: usize, p: usize, psi_f: f64, psi_e: f64, sigma2: f64) -> ModelParams {
        let dims = Dims::new(p, q, 1, 1).unwrap();
        let mut l = DMatrix::zeros(q, 1);
        l[(0, 0)] = (q as f64 * sigma2).sqrt();
        let mut lam = DMatrix::zeros(p, 1);
        lam[(0, 0)] = (p as f64 * sigma2).sqrt();
        ModelParams::new(dims, l, lam, DVector::from_vec(vec![psi_f]), DVector::from_vec(vec![psi_e]), sigma2)
            .unwrap()
    }

    #[test]
    fn validate_accepts_exact_construction() {
        // L = (2,0,0,0)', q=4, sigma^2=1 gives L'L = 4 = q sigma^2 exactly.
        let params = axis_params(4, 4, 2.0, 1.0, 1.0);
        assert_eq!(params.row_loadings[(0, 0)], 2.0);
        let report = params.validate(1e-8);
        assert!(report.is_empty(), "unexpected violations: {report}");
    }

    #[test]
    fn validate_flags_separation_on_equal_variances() {
        let params = axis_params(4, 4, 1.0, 1.0, 1.0);
        let report = params.validate(1e-8);
        assert!(report.contains(Condition::Mc5Separation));
        assert!(!report.contains(Condition::Ic1RowLoadings));
    }

    #[test]
    fn validate_flags_reversed_ordering() {
        let dims = Dims::new(6, 6, 2, 1).unwrap();
        let sigma2 = 1.0;
        // Two orthogonal axis columns scaled to sqrt(q sigma^2).
        let mut l = DMatrix::zeros(6, 2);
        l[(0, 0)] = (6.0f64).sqrt();
        l[(1, 1)] = (6.0f64).sqrt();
        let mut lam = DMatrix::zeros(6, 1);
        lam[(0, 0)] = (6.0f64).sqrt();
        let params = ModelParams::new(
            dims,
            l,
            lam,
            DVector::from_vec(vec![4.0, 8.0]),
            DVector::from_vec(vec![1.0]),
            sigma2,
        )
        .unwrap();
        let report = params.validate(1e-8);
        assert!(report.contains(Condition::Mc5RowOrdering));
    }

    #[test]
    fn validate_reports_dimension_mismatch_as_error() {
        let dims = Dims::new(4, 4, 1, 1).unwrap();
        let l = DMatrix::zeros(3, 1); // wrong row count
        let lam = DMatrix::zeros(4, 1);
        let err = ModelParams::new(dims, l, lam, DVector::from_vec(vec![2.0]), DVector::from_vec(vec![1.0]), 1.0);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn canonicalize_flips_on_negative_dominant_entry() {
        let m = DMatrix::from_column_slice(2, 1, &[-3.0, 1.0]);
        let out = canonicalize_signs(&m).unwrap();
        assert_eq!(out.as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let m = DMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
        let once = canonicalize_signs(&m).unwrap();
        assert_eq!(once.as_slice(), m.as_slice());
        let twice = canonicalize_signs(&once).unwrap();
        assert_eq!(once.as_slice(), twice.as_slice());
    }

    #[test]
    fn canonicalize_acts_per_column() {
        let m = DMatrix::from_column_slice(2, 2, &[-1.0, -2.0, 5.0, 0.0]);
        let out = canonicalize_signs(&m).unwrap();
        assert_eq!(out.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        assert_eq!(out.column(1).iter().copied().collect::<Vec<_>>(), vec![5.0, 0.0]);
    }

    #[test]
    fn canonicalize_errors_on_zero_column() {
        let m = DMatrix::zeros(3, 1);
        assert!(matches!(canonicalize_signs(&m), Err(Error::DegenerateLoading(_))));
    }

    #[test]
    fn canonicalize_ties_pick_first_max_abs() {
        // Entries -2 and 2 tie in absolute value; the first is -2, so flip.
        let m = DMatrix::from_column_slice(2, 1, &[-2.0, 2.0]);
        let out = canonicalize_signs(&m).unwrap();
        assert_eq!(out.as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn align_flips_negated_column_and_is_identity_on_self() {
        let truth = axis_params(4, 4, 2.0, 1.0, 1.0);
        let mut negated = truth.clone();
        negated.row_loadings = -&truth.row_loadings;
        let aligned = align_for_comparison(&negated, &truth).unwrap();
        assert_relative_eq!(aligned.params.row_loadings, truth.row_loadings, epsilon = 0.0);
        assert!(aligned.tied_row_columns.is_empty());

        let same = align_for_comparison(&truth, &truth).unwrap();
        assert_eq!(same.params, truth);
    }

    #[test]
    fn align_flags_orthogonal_column_as_tie() {
        let truth = axis_params(4, 4, 2.0, 1.0, 1.0);
        let mut est = truth.clone();
        // Orthogonal to (2,0,0,0)'.
        est.row_loadings = DMatrix::from_column_slice(4, 1, &[0.0, 2.0, 0.0, 0.0]);
        let aligned = align_for_comparison(&est, &truth).unwrap();
        assert_eq!(aligned.tied_row_columns, vec![0]);
        assert_eq!(aligned.params.row_loadings, est.row_loadings);
    }

    #[test]
    fn r2_perfect_fit_is_one() {
        let truth = DMatrix::from_column_slice(4, 1, &[0.3, -0.2, 0.9, 0.1]);
        let acc = loading_accuracy_r2(&truth, &truth).unwrap();
        assert_relative_eq!(acc.average, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn r2_orthogonal_equal_energy_perturbation_is_half() {
        // y = x + z with z mean-zero, z'x = 0 and |z| = |x|: the hand oracle
        // gives cov(x,y)^2/(var x var y) = |x|^4 / (|x|^2 * 2|x|^2) = 1/2.
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let z = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        assert_eq!(x.column(0).dot(&z.column(0)), 0.0);
        let y = &x + &z;
        let acc = loading_accuracy_r2(&y, &x).unwrap();
        assert_relative_eq!(acc.average, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn r2_errors_on_constant_true_column() {
        let truth = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let est = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(loading_accuracy_r2(&est, &truth), Err(Error::ConstantColumn(1))));
    }

    #[test]
    fn r2_invariant_under_simultaneous_sign_flip() {
        let truth = DMatrix::from_column_slice(4, 1, &[0.3, -0.2, 0.9, 0.1]);
        let est = DMatrix::from_column_slice(4, 1, &[0.25, -0.15, 0.8, 0.2]);
        let a = loading_accuracy_r2(&est, &truth).unwrap();
        let b = loading_accuracy_r2(&(-&est), &(-&truth)).unwrap();
        assert_relative_eq!(a.average, b.average, epsilon = 1e-14);
    }

    #[test]
    fn centered_matrix_invariant_checked() {
        let m = DMatrix::from_column_slice(2, 2, &[1.0, -1.0, 2.0, -2.0]);
        assert!(DataMatrix::new_centered(m).is_ok());
        let bad = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 2.0, -2.0]);
        assert!(DataMatrix::new_centered(bad).is_err());
        let raw = DMatrix::from_column_slice(2, 2, &[1.0, 3.0, 2.0, -4.0]);
        let centered = DataMatrix::new(raw).unwrap().center_columns();
        assert!(centered.centered());
        for j in 0..2 {
            assert_relative_eq!(centered.values().column(j).sum(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn data_matrix_rejects_non_finite() {
        let m = DMatrix::from_column_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(DataMatrix::new(m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dims_requires_min_exceeding_max_factor_count() {
        assert!(Dims::new(3, 3, 3, 1).is_err());
        assert!(Dims::new(3, 3, 2, 2).is_ok());
        assert!(Dims::new(0, 3, 1, 1).is_err());
    }
}
