//! Maximum likelihood estimation by block alternating maximization.
//!
//! One outer iteration updates, in order:
//!
//! 1. the row-factor loadings `L`, by maximizing the likelihood's
//!    quadratic-form expression in `L` under the orthogonality constraint
//!    (top eigenvector for one factor, iterative polar updates otherwise);
//! 2. the column-factor loadings `Lambda`, symmetrically;
//! 3. the variance block `(Psi_F, Psi_E, sigma^2)` by an EM inner loop with
//!    the loadings fixed;
//! 4. a likelihood-preserving rotation that rediagonalizes the factor
//!    covariances, restores the scaled-orthogonality constraint and the
//!    variance ordering.
//!
//! Every step maximizes (or leaves unchanged) the same objective, so the
//! log-likelihood trace is non-decreasing; the loop stops when one sweep
//! improves it by less than `err0`.

mod em;
mod quadmax;

pub use em::{em_update_variances, posterior_scores, rotate_identify, state_log_likelihood, EmOutcome, EmState};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataMatrix, Dims, FactorScores, ModelParams, TOL_IC_ESTIMATE};
use crate::spectral::{log_likelihood, SpectralCoefficients};

/// Loading initialization strategy.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Warm start from the leading singular triplets of the data.
    #[default]
    Svd,
    /// Start from the given parameters.
    Provided(Box<ModelParams>),
    /// SVD-based variances with randomly oriented loadings.
    Random(u64),
}

/// Convergence and initialization controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// absolute log-likelihood improvement below which a loop stops
    pub err0: f64,
    /// margin subtracted from the smallest eigenvalue when shifting the
    /// quadratic-form matrices to positive semidefiniteness
    pub eps0: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    #[serde(with = "init_serde")]
    pub init: Init,
    /// lower clamp for variance updates
    pub variance_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            err0: 0.01,
            eps0: 0.005,
            max_outer: 500,
            max_inner: 200,
            init: Init::Svd,
            variance_floor: 1e-10,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<()> {
        if self.err0 <= 0.0 || self.eps0 <= 0.0 {
            return Err(Error::InvalidInput("err0 and eps0 must be positive".into()));
        }
        if self.max_outer < 1 || self.max_inner < 1 {
            return Err(Error::InvalidInput("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

mod init_serde {
    //! `Init` in configuration files: `"svd"`, `{"random": seed}`, or
    //! `{"provided": <params json>}`.
    use super::Init;
    use crate::io::ParamsJson;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    enum Repr {
        Svd,
        Random(u64),
        Provided(ParamsJson),
    }

    pub fn serialize<S: Serializer>(init: &Init, ser: S) -> Result<S::Ok, S::Error> {
        let repr = match init {
            Init::Svd => Repr::Svd,
            Init::Random(seed) => Repr::Random(*seed),
            Init::Provided(p) => Repr::Provided(ParamsJson::from(p.as_ref())),
        };
        repr.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Init, D::Error> {
        Ok(match Repr::deserialize(de)? {
            Repr::Svd => Init::Svd,
            Repr::Random(seed) => Init::Random(seed),
            Repr::Provided(p) => Init::Provided(Box::new(p.try_into_params().map_err(D::Error::custom)?)),
        })
    }
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxOuter,
}

/// Inner-loop effort spent in one outer iteration.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct InnerIterations {
    pub row_update: usize,
    pub col_update: usize,
    pub em: usize,
}

/// Everything the fit produced: the estimate, the diagnostics, and the
/// extracted factor scores.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ModelParams,
    /// log-likelihood after initialization and after each outer iteration;
    /// non-decreasing up to floating-point roundoff
    pub loglik_trace: Vec<f64>,
    pub inner_iters: Vec<InnerIterations>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// posterior-mean factor scores at the estimate
    pub scores: FactorScores,
    /// max-abs finite-difference gradient at the estimate over the
    /// constraint-respecting directions
    pub gradient_norm: f64,
    /// worst scaled-orthogonality residual observed across the outer
    /// iterations (each measured after the identifying rotation)
    pub max_ic1_residual: f64,
    pub warnings: Vec<String>,
    pub floor_activations: usize,
    /// final log-likelihood of every restart (single entry when no restarts)
    pub restart_finals: Vec<f64>,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Maximum likelihood fit of the model to a single data matrix.
pub fn fit(x: &DataMatrix, dims: Dims, config: &FitConfig) -> Result<FitResult> {
    config.check()?;
    if x.nrows() != dims.p || x.ncols() != dims.q {
        return Err(Error::DimensionMismatch(format!(
            "data is {}x{} but dims say {}x{}",
            x.nrows(),
            x.ncols(),
            dims.p,
            dims.q
        )));
    }

    let mut params = init_params(x, dims, config)?;
    let mut warnings = Vec::new();
    let mut floor_activations = 0usize;
    let mut trace = vec![log_likelihood(&params, x)?];
    let mut inner_iters = Vec::new();
    let mut stop_reason = StopReason::MaxOuter;
    let mut max_ic1_residual = 0.0f64;

    for _outer in 0..config.max_outer {
        let mut counts = InnerIterations::default();

        let (l_new, row_iters) = update_row_loadings(&params, x, config)?;
        params.row_loadings = l_new;
        counts.row_update = row_iters;

        let (lam_new, col_iters) = update_col_loadings(&params, x, config)?;
        params.col_loadings = lam_new;
        counts.col_update = col_iters;

        let em_out = em_update_variances(
            &EmState::from_params(&params),
            x,
            config.err0,
            config.max_inner,
            config.variance_floor,
        )?;
        counts.em = em_out.iterations;
        floor_activations += em_out.floor_activations;
        if em_out.hit_cap {
            warnings.push("EM inner loop hit its iteration cap".into());
        }

        let (rotated, rot_warnings) = rotate_identify(&em_out.state, dims)?;
        warnings.extend(rot_warnings);
        params = rotated;
        max_ic1_residual = max_ic1_residual.max(ic1_residual_of(&params));

        let ll = log_likelihood(&params, x)?;
        if !ll.is_finite() {
            return Err(Error::NonFinite("log-likelihood during fitting".into()));
        }
        let delta = ll - trace.last().unwrap();
        trace.push(ll);
        inner_iters.push(counts);
        if delta.abs() < config.err0 {
            stop_reason = StopReason::Tolerance;
            break;
        }
    }

    let converged = stop_reason == StopReason::Tolerance;
    if !converged {
        warnings.push(format!("outer loop exhausted its cap of {} iterations", config.max_outer));
    }

    // Near-degenerate variance separation inflates the asymptotic loading
    // variance; surface it but keep the estimate.
    let mut min_rel_gap = f64::INFINITY;
    for &f in params.psi_f.iter() {
        for &e in params.psi_e.iter() {
            min_rel_gap = min_rel_gap.min((f - e).abs() / f.abs().max(f64::MIN_POSITIVE));
        }
    }
    if min_rel_gap < 0.05 {
        warnings.push(format!(
            "row- and column-factor variance estimates are within {:.1}% of each other; \
             loading estimates may fluctuate heavily",
            min_rel_gap * 100.0
        ));
    }

    let report = params.validate(TOL_IC_ESTIMATE);
    for v in &report.violations {
        warnings.push(format!("estimate violates {}: residual {:.3e}", v.condition.name(), v.residual));
    }

    let scores = posterior_scores(&params, x)?;
    let gradient_norm = estimating_equation_residual(&params, x, 1e-5)?;

    Ok(FitResult {
        theta_hat: params,
        loglik_trace: trace,
        inner_iters,
        converged,
        stop_reason,
        scores,
        gradient_norm,
        max_ic1_residual,
        warnings,
        floor_activations,
        restart_finals: Vec::new(),
    })
}

/// Worst-entry residual of both scaled-orthogonality constraints.
fn ic1_residual_of(params: &ModelParams) -> f64 {
    let d = params.dims;
    let mut worst = 0.0f64;
    for (loadings, scale) in [
        (&params.row_loadings, d.q as f64 * params.sigma2),
        (&params.col_loadings, d.p as f64 * params.sigma2),
    ] {
        let gram = loadings.transpose() * loadings / scale;
        let k = gram.nrows();
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
    }
    worst
}

/// Runs the fit once from the configured initialization plus `restarts`
/// additional randomly initialized runs, returning the best-likelihood
/// result. The final log-likelihood of every run is recorded in
/// `restart_finals`.
pub fn fit_with_restarts(x: &DataMatrix, dims: Dims, config: &FitConfig, restarts: usize) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut finals = Vec::with_capacity(restarts + 1);
    for k in 0..=restarts {
        let mut cfg = config.clone();
        if k > 0 {
            let base = match config.init {
                Init::Random(seed) => seed,
                _ => 0x5eed,
            };
            cfg.init = Init::Random(base.wrapping_add(k as u64));
        }
        let run = fit(x, dims, &cfg)?;
        finals.push(run.final_loglik());
        if best.as_ref().map_or(true, |b| run.final_loglik() > b.final_loglik()) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one run");
    best.restart_finals = finals;
    Ok(best)
}

/// Leading singular triplets of `X / sqrt(max(p, q))` by power iteration on
/// the implicit normal operator with deflation. Deterministic in `X`.
struct TopSingular {
    /// squared singular values, decreasing
    values: Vec<f64>,
    /// right singular vectors, `q x k`
    right: DMatrix<f64>,
    /// left singular vectors, `p x k`
    left: DMatrix<f64>,
    /// squared Frobenius norm of the scaled matrix
    total_energy: f64,
}

fn top_singular_triplets(x: &DMatrix<f64>, k: usize) -> Result<TopSingular> {
    let scale = (x.nrows().max(x.ncols()) as f64).sqrt();
    let xs = x / scale;
    let (p, q) = xs.shape();
    let k = k.min(p.min(q));
    let mut right = DMatrix::zeros(q, k);
    let mut left = DMatrix::zeros(p, k);
    let mut values = Vec::with_capacity(k);
    let mut rng = ChaCha8Rng::seed_from_u64(0x51d_0e5);
    for m in 0..k {
        let warm = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Normal-operator product with deflation of the found directions.
        let deflated_apply = |v: &DVector<f64>| -> DVector<f64> {
            let mut v = v.clone();
            for j in 0..m {
                let proj = right.column(j).dot(&v);
                v.axpy(-proj, &right.column(j).into_owned(), 1.0);
            }
            let mut w = xs.transpose() * (&xs * &v);
            for j in 0..m {
                let proj = right.column(j).dot(&w);
                w.axpy(-proj, &right.column(j).into_owned(), 1.0);
            }
            w
        };
        let (s2, v, _) = quadmax::top_eigenvector(deflated_apply, q, &warm, 300);
        let u_raw = &xs * &v;
        let norm = u_raw.norm();
        values.push(s2.max(0.0));
        right.set_column(m, &v);
        if norm > 0.0 {
            left.set_column(m, &(u_raw / norm));
        }
    }
    Ok(TopSingular { values, right, left, total_energy: xs.norm_squared() })
}

/// SVD warm start.
///
/// Each leading singular triplet of the data is one factor spike, but a
/// single observation does not label a spike as row- or column-factor: the
/// right singular vector of a row-factor spike is a loading direction while
/// for a column-factor spike it is the realized factor. The label matters:
/// starting a block on the wrong side of a spike puts the alternating
/// updates into a swapped stationary point whose likelihood ties the correct
/// one exactly when `p = q`, so the sample likelihood cannot arbitrate.
///
/// The warm start labels each spike by sign coherence: the loading side of a
/// spike is a fixed direction (predominantly one-signed for the nonnegative
/// loading patterns typical of measured indicators), while the factor side
/// is a zero-mean random vector whose normalized sum is near zero. Spikes
/// whose right (column-space) side is the more coherent one seed `L`; the
/// rest seed `Lambda` through their left sides. Random restarts remain the
/// escape hatch for data without any sign-coherent structure.
///
/// The noise variance comes from the trailing spectrum and each assigned
/// spike's variance from `s^2 / (min(p, q) sigma^2)` on the
/// `X / sqrt(max(p, q))` scale, nudged by +10% per index into strict
/// ordering and block separation.
pub fn init_params(x: &DataMatrix, dims: Dims, config: &FitConfig) -> Result<ModelParams> {
    match &config.init {
        Init::Provided(p) => {
            if p.dims != dims {
                return Err(Error::DimensionMismatch("provided initialization has wrong dims".into()));
            }
            let report = p.validate(TOL_IC_ESTIMATE);
            if !report.is_empty() {
                log::warn!("provided initialization violates model conditions: {report}");
            }
            return Ok(p.as_ref().clone());
        }
        Init::Svd | Init::Random(_) => {}
    }

    let (p, q, r, c) = (dims.p, dims.q, dims.r, dims.c);
    let top = top_singular_triplets(x.values(), r + c)?;
    let s1 = top.values.first().copied().unwrap_or(0.0);
    if top.values.len() < r + c || top.values[r + c - 1] <= 1e-12 * s1.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateData(format!(
            "rank of X appears below r + c = {}; try smaller factor counts",
            r + c
        )));
    }

    let trailing = p.min(q).saturating_sub(r + c);
    let leading_energy: f64 = top.values.iter().sum();
    let mut sigma2 = if trailing > 0 {
        ((top.total_energy - leading_energy) / trailing as f64).max(config.variance_floor)
    } else {
        // No trailing spectrum to average; fall back to a fraction of the
        // smallest retained direction.
        (top.values[r + c - 1] * 0.5).max(config.variance_floor)
    };
    if !sigma2.is_finite() || sigma2 <= 0.0 {
        sigma2 = config.variance_floor;
    }

    if let Init::Random(seed) = &config.init {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let raw_l = DMatrix::from_fn(q, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let raw_lam = DMatrix::from_fn(p, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spikes: Vec<f64> = top.values.iter().take(r).chain(top.values.iter().skip(1).take(c)).copied().collect();
        return assemble_init(
            dims,
            sigma2,
            &spikes[..r],
            &spikes[r..],
            raw_l.qr().q().columns(0, r).into_owned(),
            raw_lam.qr().q().columns(0, c).into_owned(),
        );
    }

    // Label spikes: positive affinity says the q-side looks like a loading
    // direction (row-factor spike), negative says the p-side does. Affinities
    // below the noise dead-zone carry no signal (secondary loading
    // directions are orthogonalized against the coherent leading one and so
    // look neutral); for those the larger spike goes to the row block.
    let ones_q = DVector::from_element(q, 1.0);
    let ones_p = DVector::from_element(p, 1.0);
    let affinity = |k: usize| -> f64 {
        let a = top.right.column(k).dot(&ones_q).powi(2) / q as f64;
        let b = top.left.column(k).dot(&ones_p).powi(2) / p as f64;
        let d = a - b;
        if d.abs() < 0.02 {
            0.0
        } else {
            d
        }
    };
    let mut order: Vec<usize> = (0..r + c).collect();
    let score = |k: usize| affinity(k) + 1e-6 * top.values[k] / s1.max(f64::MIN_POSITIVE);
    order.sort_by(|&a, &b| score(b).partial_cmp(&score(a)).unwrap());
    let mut f_set = order[..r].to_vec();
    let mut e_set = order[r..].to_vec();
    f_set.sort_unstable();
    e_set.sort_unstable();

    let mut l_dirs = DMatrix::zeros(q, r);
    let mut s2_f = Vec::with_capacity(r);
    for (dst, &idx) in f_set.iter().enumerate() {
        l_dirs.set_column(dst, &top.right.column(idx));
        s2_f.push(top.values[idx]);
    }
    let mut lam_dirs = DMatrix::zeros(p, c);
    let mut s2_e = Vec::with_capacity(c);
    for (dst, &idx) in e_set.iter().enumerate() {
        lam_dirs.set_column(dst, &top.left.column(idx));
        s2_e.push(top.values[idx]);
    }
    assemble_init(dims, sigma2, &s2_f, &s2_e, l_dirs, lam_dirs)
}

fn assemble_init(
    dims: Dims,
    sigma2: f64,
    spikes_f: &[f64],
    spikes_e: &[f64],
    l_dirs: DMatrix<f64>,
    lam_dirs: DMatrix<f64>,
) -> Result<ModelParams> {
    let (p, q, r, c) = (dims.p, dims.q, dims.r, dims.c);
    // A factor spike of either kind carries squared singular value
    // min(p, q) sigma^2 psi on the scaled data, so invert that relation.
    let denom = (p.min(q) as f64) * sigma2;
    let mut psi_f: Vec<f64> = spikes_f.iter().map(|s2| (s2 / denom).max(sigma2 * 1e-3)).collect();
    let mut psi_e: Vec<f64> = spikes_e.iter().map(|s2| (s2 / denom).max(sigma2 * 1e-3)).collect();
    psi_f.sort_by(|a, b| b.partial_cmp(a).unwrap());
    psi_e.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // +10% per index keeps the ordering strict even out of a flat spectrum,
    // and a further nudge separates the two blocks.
    for (j, v) in psi_f.iter_mut().enumerate() {
        *v *= 1.1f64.powi((r - 1 - j) as i32);
    }
    for (i, v) in psi_e.iter_mut().enumerate() {
        *v *= 1.05 * 1.1f64.powi((c - 1 - i) as i32);
    }
    let mut guard = 0;
    while psi_f
        .iter()
        .any(|&f| psi_e.iter().any(|&e| (f - e).abs() <= 1e-3 * f.max(e)))
        && guard < 64
    {
        for v in psi_e.iter_mut() {
            *v *= 1.07;
        }
        guard += 1;
    }
    psi_e.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let l = crate::model::canonicalize_signs(&(l_dirs * (q as f64 * sigma2).sqrt()))?;
    let lam = crate::model::canonicalize_signs(&(lam_dirs * (p as f64 * sigma2).sqrt()))?;
    ModelParams::new(dims, l, lam, DVector::from_vec(psi_f), DVector::from_vec(psi_e), sigma2)
}

/// Rank-one corrections shared by the two loading updates: the quadratic-form
/// matrix for loading column `j` is
/// `W_j = psi_Fj X' [d2_j I - sum_i psi_Ei d4_ij Lambda_i Lambda_i'] X`, all
/// of which act through `X'X` and the projected columns `X' Lambda_i`.
struct RowUpdateOperator<'a> {
    x: &'a DMatrix<f64>,
    coeffs: SpectralCoefficients,
    psi_f: &'a DVector<f64>,
    psi_e: &'a DVector<f64>,
    /// `X' Lambda`, `q x c`
    xt_lam: DMatrix<f64>,
}

impl<'a> RowUpdateOperator<'a> {
    fn apply(&self, j: usize, v: &DVector<f64>) -> DVector<f64> {
        let mut w = self.x.transpose() * (self.x * v) * self.coeffs.d2[j];
        for i in 0..self.psi_e.len() {
            let ui = self.xt_lam.column(i);
            let coef = self.psi_e[i] * self.coeffs.d4[(i, j)] * ui.dot(v);
            w.axpy(-coef, &ui.into_owned(), 1.0);
        }
        w * self.psi_f[j]
    }

    fn dense(&self, j: usize, gram: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = gram * self.coeffs.d2[j];
        for i in 0..self.psi_e.len() {
            let ui = self.xt_lam.column(i).into_owned();
            let coef = self.psi_e[i] * self.coeffs.d4[(i, j)];
            w -= coef * &ui * ui.transpose();
        }
        w * self.psi_f[j]
    }
}

/// Step-2 update of the row-factor loadings at the current parameters.
/// Returns the new `L` on the identification scale (`L'L = q sigma^2 I_r`)
/// together with the inner iteration count.
pub fn update_row_loadings(params: &ModelParams, x: &DataMatrix, config: &FitConfig) -> Result<(DMatrix<f64>, usize)> {
    let d = params.dims;
    let coeffs = SpectralCoefficients::from_params(params)?;
    let op = RowUpdateOperator {
        x: x.values(),
        coeffs,
        psi_f: &params.psi_f,
        psi_e: &params.psi_e,
        xt_lam: x.values().transpose() * &params.col_loadings,
    };
    let target_norm = (d.q as f64 * params.sigma2).sqrt();

    if d.r == 1 {
        let warm = params.row_loadings.column(0) / params.row_loadings.column(0).norm();
        let (_, v, iters) = quadmax::top_eigenvector(|u| op.apply(0, u), d.q, &warm.into_owned(), 1000);
        return Ok((DMatrix::from_columns(&[(v * target_norm).column(0)]), iters));
    }

    let gram = x.values().transpose() * x.values();
    let ws: Vec<DMatrix<f64>> = (0..d.r).map(|j| op.dense(j, &gram)).collect();
    let start = &params.row_loadings / params.row_loadings.column(0).norm();
    let out = quadmax::maximize_sum_quadratic_forms(&ws, &start, config.err0, config.eps0, config.max_inner)?;
    Ok((out.solution * target_norm, out.iterations))
}

/// Step-3 update of the column-factor loadings; the exact mirror of
/// [`update_row_loadings`] under transposition of the data and the swap of
/// the two factor blocks.
pub fn update_col_loadings(params: &ModelParams, x: &DataMatrix, config: &FitConfig) -> Result<(DMatrix<f64>, usize)> {
    let swapped = transpose_params(params)?;
    let xt = x.transposed();
    let (lam, iters) = update_row_loadings(&swapped, &xt, config)?;
    Ok((lam, iters))
}

/// The model is symmetric under transposing the data and exchanging the two
/// factor blocks; this maps parameters accordingly.
fn transpose_params(params: &ModelParams) -> Result<ModelParams> {
    ModelParams::new(
        Dims::new(params.dims.q, params.dims.p, params.dims.c, params.dims.r)?,
        params.col_loadings.clone(),
        params.row_loadings.clone(),
        params.psi_e.clone(),
        params.psi_f.clone(),
        params.sigma2,
    )
}

/// Max-abs central finite-difference derivative of the log-likelihood at
/// `theta_hat` over the variance coordinates and over constraint-tangent
/// loading directions; a stationarity diagnostic for the fit.
///
/// The loading norms are tied to `sigma^2` by the identification condition,
/// so the `sigma^2` derivative rescales the loadings along with it, and the
/// loading directions are projected onto the tangent space of the scaled
/// orthogonality constraint.
pub fn estimating_equation_residual(theta_hat: &ModelParams, x: &DataMatrix, step: f64) -> Result<f64> {
    let d = theta_hat.dims;
    let mut max_abs: f64 = 0.0;

    let eval = |params: &ModelParams| -> Result<f64> { log_likelihood(params, x) };

    // Variance coordinates, with the sigma^2 coordinate dragging the loading
    // norms to keep the constraint.
    let n_var = d.r + d.c + 1;
    for k in 0..n_var {
        let base = if k < d.r {
            theta_hat.psi_f[k]
        } else if k < d.r + d.c {
            theta_hat.psi_e[k - d.r]
        } else {
            theta_hat.sigma2
        };
        let h = step * base.abs().max(1e-3);
        let value_at = |delta: f64| -> Result<f64> {
            let mut p = theta_hat.clone();
            if k < d.r {
                p.psi_f[k] = base + delta;
            } else if k < d.r + d.c {
                p.psi_e[k - d.r] = base + delta;
            } else {
                let s2 = base + delta;
                let rescale = (s2 / theta_hat.sigma2).sqrt();
                p.sigma2 = s2;
                p.row_loadings *= rescale;
                p.col_loadings *= rescale;
            }
            eval(&p)
        };
        let g = (value_at(h)? - value_at(-h)?) / (2.0 * h);
        max_abs = max_abs.max(g.abs());
    }

    // Tangent directions of the loading constraints, a few per block.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d1e_47);
    for block in 0..2 {
        let (loadings, scale2) = if block == 0 {
            (&theta_hat.row_loadings, d.q as f64 * theta_hat.sigma2)
        } else {
            (&theta_hat.col_loadings, d.p as f64 * theta_hat.sigma2)
        };
        let (n, k) = loadings.shape();
        let n_dirs = 3.min(n * k);
        for _ in 0..n_dirs {
            let raw = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            // delta = D - L (L'D + D'L) / (2 scale) has L'delta skew.
            let sym = (loadings.transpose() * &raw + raw.transpose() * loadings) / (2.0 * scale2);
            let mut delta = raw - loadings * sym;
            let norm = delta.norm();
            if norm == 0.0 {
                continue;
            }
            delta /= norm;
            let h = step * loadings.norm();
            let value_at = |t: f64| -> Result<f64> {
                let mut p = theta_hat.clone();
                if block == 0 {
                    p.row_loadings = loadings + &delta * t;
                } else {
                    p.col_loadings = loadings + &delta * t;
                }
                eval(&p)
            };
            let g = (value_at(h)? - value_at(-h)?) / (2.0 * h);
            max_abs = max_abs.max(g.abs());
        }
    }

    Ok(max_abs)
}
