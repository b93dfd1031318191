//! EM updates for the variance block `(Psi_F, Psi_E, sigma^2)` with the
//! loadings held fixed, plus the identification-restoring rotation and the
//! posterior factor scores.
//!
//! With the loadings fixed, `(vec F, vec E)` and `vec X` are jointly
//! Gaussian, and the conditional moments needed by the E-step reduce to
//! `r x r` / `c x c` computations once `X L` and `X' Lambda` are available:
//! conditioning the latent block on the data only involves the operator
//! `I (x) S_F - K (x) I` with a rank-`c` (resp. rank-`r`) `K`, whose inverse
//! is available eigenvalue by eigenvalue. Nothing of size `pq` is formed.
//!
//! The M-step maximizes the expected complete-data log-likelihood in closed
//! form; it produces full (generally non-diagonal) factor covariance blocks.
//! [`rotate_identify`] then rediagonalizes them and rescales the loadings,
//! leaving the observation covariance, and hence the likelihood, unchanged.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{canonicalize_signs, DataMatrix, Dims, FactorScores, ModelParams};
use crate::spectral::{log_likelihood_from_parts, QuadraticForms, SpectralCoefficients};

/// Parameter state with fixed loadings and free variance blocks. The factor
/// covariances may be full symmetric positive-definite matrices; the loading
/// columns must be orthogonal with a common squared norm (any positive
/// scale).
#[derive(Debug, Clone)]
pub struct EmState {
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub psi_f: DMatrix<f64>,
    pub psi_e: DMatrix<f64>,
    pub sigma2: f64,
}

impl EmState {
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            row_loadings: params.row_loadings.clone(),
            col_loadings: params.col_loadings.clone(),
            psi_f: DMatrix::from_diagonal(&params.psi_f),
            psi_e: DMatrix::from_diagonal(&params.psi_e),
            sigma2: params.sigma2,
        }
    }

    fn dims(&self, x: &DataMatrix) -> Result<Dims> {
        let p = x.nrows();
        let q = x.ncols();
        if self.row_loadings.nrows() != q || self.col_loadings.nrows() != p {
            return Err(Error::DimensionMismatch(format!(
                "loadings ({}x{}, {}x{}) do not match data ({p}x{q})",
                self.row_loadings.nrows(),
                self.row_loadings.ncols(),
                self.col_loadings.nrows(),
                self.col_loadings.ncols()
            )));
        }
        Dims::new(p, q, self.row_loadings.ncols(), self.col_loadings.ncols())
    }
}

/// Data projections reused across EM iterations: `P = X L`, `R = X' Lambda`,
/// `T = L' X' Lambda`, the small Grams, and the column norms of the loadings.
pub(crate) struct EmProjections {
    pub p_mat: DMatrix<f64>,
    pub r_mat: DMatrix<f64>,
    pub t_mat: DMatrix<f64>,
    pub ptp: DMatrix<f64>,
    pub rtr: DMatrix<f64>,
    pub norm_x2: f64,
    /// common squared column norm of L
    pub alpha: f64,
    /// common squared column norm of Lambda
    pub beta: f64,
}

impl EmProjections {
    pub fn compute(x: &DataMatrix, l: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<Self> {
        let xm = x.values();
        let p_mat = xm * l;
        let r_mat = xm.transpose() * lambda;
        let t_mat = p_mat.transpose() * lambda;
        let ptp = p_mat.transpose() * &p_mat;
        let rtr = r_mat.transpose() * &r_mat;
        let alpha = mean_column_norm2(l)?;
        let beta = mean_column_norm2(lambda)?;
        Ok(Self { p_mat, r_mat, t_mat, ptp, rtr, norm_x2: xm.norm_squared(), alpha, beta })
    }
}

fn mean_column_norm2(m: &DMatrix<f64>) -> Result<f64> {
    let k = m.ncols();
    let gram = m.transpose() * m;
    let alpha = gram.trace() / k as f64;
    if alpha <= 0.0 {
        return Err(Error::DegenerateLoading("loading columns must be nonzero".into()));
    }
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { alpha } else { 0.0 };
            if (gram[(i, j)] - target).abs() > 1e-6 * alpha {
                return Err(Error::InvalidInput(
                    "loading columns must be orthogonal with a common norm for the EM step".into(),
                ));
            }
        }
    }
    Ok(alpha)
}

/// Conditional moments of the latent factors given the data.
#[derive(Debug, Clone)]
pub(crate) struct LatentPosterior {
    /// `E[F | X]`, `p x r`
    pub mean_f: DMatrix<f64>,
    /// `E[E | X]`, `q x c`
    pub mean_e: DMatrix<f64>,
    /// `sum_i Cov(F_i. | X)`, `r x r`
    pub cov_f_total: DMatrix<f64>,
    /// `sum_j Cov(E_j. | X)`, `c x c`
    pub cov_e_total: DMatrix<f64>,
    /// `E || X - F L' - Lambda E' ||^2_F`
    pub expected_rss: f64,
}

fn sym_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|ch| ch.solve(&DMatrix::identity(m.nrows(), m.nrows())))
        .ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

/// E-step: posterior moments of `(F, E)` given `X` under the state's latent
/// Gaussian model. Cost is `O((p + q) r c)` beyond the cached projections.
pub(crate) fn latent_posterior(state: &EmState, proj: &EmProjections, dims: &Dims) -> Result<LatentPosterior> {
    let (p, q) = (dims.p as f64, dims.q as f64);
    let (r, c) = (dims.r, dims.c);
    let s2 = state.sigma2;
    if s2 <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma^2 = {s2} must be positive")));
    }
    let alpha = proj.alpha;
    let beta = proj.beta;

    let psi_f_inv = sym_inverse(&state.psi_f, "Psi_F must be positive definite")?;
    let psi_e_inv = sym_inverse(&state.psi_e, "Psi_E must be positive definite")?;
    let s_f = &psi_f_inv + DMatrix::from_diagonal_element(r, r, alpha / s2);
    let s_e = &psi_e_inv + DMatrix::from_diagonal_element(c, c, beta / s2);
    let s_f_inv = sym_inverse(&s_f, "S_F")?;
    let s_e_inv = sym_inverse(&s_e, "S_E")?;

    let eig_f = nalgebra::SymmetricEigen::new(s_f.clone());
    let eig_e = nalgebra::SymmetricEigen::new(s_e.clone());

    // Coupled mean equations reduce to a small Sylvester system for
    // Z = L' M_E; solve it entrywise in the joint eigenbasis of S_F and S_E.
    let coupling = alpha * beta / (s2 * s2);
    let rhs = (&s_f_inv * &psi_f_inv * &proj.t_mat) / s2;
    let rhs_t = eig_f.eigenvectors.transpose() * rhs * &eig_e.eigenvectors;
    let mut z_t = DMatrix::zeros(r, c);
    for a in 0..r {
        for b in 0..c {
            let denom = eig_e.eigenvalues[b] - coupling / eig_f.eigenvalues[a];
            if denom <= 0.0 {
                return Err(Error::NotPositiveDefinite(
                    "latent posterior system lost positive definiteness".into(),
                ));
            }
            z_t[(a, b)] = rhs_t[(a, b)] / denom;
        }
    }
    let z = &eig_f.eigenvectors * z_t * eig_e.eigenvectors.transpose();

    let mean_e = ((&proj.r_mat / s2) - (&state.row_loadings * &s_f_inv * (&proj.t_mat - beta * &z)) / (s2 * s2))
        * &s_e_inv;
    let mean_f = ((&proj.p_mat - &state.col_loadings * z.transpose()) / s2) * &s_f_inv;

    // Accumulated posterior covariances: each rank-one direction of the
    // cross-coupling operator shifts the resolvent; the orthogonal complement
    // contributes the unshifted inverse.
    let mut cov_f_total = s_f_inv.clone() * (p - c as f64);
    for k in 0..c {
        let lam = coupling / eig_e.eigenvalues[k];
        let shifted = &s_f - DMatrix::from_diagonal_element(r, r, lam);
        cov_f_total += sym_inverse(&shifted, "S_F - lambda I")?;
    }
    let mut cov_e_total = s_e_inv.clone() * (q - r as f64);
    for a in 0..r {
        let kap = coupling / eig_f.eigenvalues[a];
        let shifted = &s_e - DMatrix::from_diagonal_element(c, c, kap);
        cov_e_total += sym_inverse(&shifted, "S_E - kappa I")?;
    }

    // E||X - F L' - Lambda E'||^2 expands into projections plus a trace
    // correction: tr(H'H V) = sigma^2 ((pr + qc) - tr(Psi_F^{-1} G_F)
    // - tr(Psi_E^{-1} G_E)).
    let n_f = mean_f.transpose() * &state.col_loadings; // r x c
    let rss = proj.norm_x2
        + alpha * mean_f.norm_squared()
        + beta * mean_e.norm_squared()
        - 2.0 * frob_inner(&proj.p_mat, &mean_f)
        - 2.0 * frob_inner(&proj.r_mat, &mean_e)
        + 2.0 * frob_inner(&n_f, &z);
    let trace_corr = (dims.p * r + dims.q * c) as f64
        - (&psi_f_inv * &cov_f_total).trace()
        - (&psi_e_inv * &cov_e_total).trace();
    let expected_rss = rss + s2 * trace_corr;

    Ok(LatentPosterior { mean_f, mean_e, cov_f_total, cov_e_total, expected_rss })
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Result of the EM inner loop.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub state: EmState,
    pub iterations: usize,
    pub floor_activations: usize,
    pub hit_cap: bool,
    /// observed log-likelihood at the final state
    pub loglik: f64,
}

/// Observed log-likelihood of an [`EmState`], evaluated by rotating to the
/// identified parameterization (which leaves the observation covariance
/// unchanged) and applying the closed-form expression.
pub fn state_log_likelihood(state: &EmState, x: &DataMatrix) -> Result<f64> {
    let proj = EmProjections::compute(x, &state.row_loadings, &state.col_loadings)?;
    let dims = state.dims(x)?;
    state_loglik_from_projections(state, &proj, &dims)
}

fn state_loglik_from_projections(state: &EmState, proj: &EmProjections, dims: &Dims) -> Result<f64> {
    let rot_f = sorted_eigen(&state.psi_f)?;
    let rot_e = sorted_eigen(&state.psi_e)?;
    let s2 = state.sigma2;
    let scale_f = (dims.q as f64) * s2 / proj.alpha; // s_L^2
    let scale_e = (dims.p as f64) * s2 / proj.beta;

    // Canonical variances: dividing the eigenvalues by the loading rescale
    // keeps L Psi_F L' fixed.
    let psi_f = DVector::from_fn(dims.r, |j, _| rot_f.values[j] * proj.alpha / ((dims.q as f64) * s2));
    let psi_e = DVector::from_fn(dims.c, |i, _| rot_e.values[i] * proj.beta / ((dims.p as f64) * s2));

    let coeffs = SpectralCoefficients::new(&psi_f, &psi_e, s2, dims.p, dims.q)?;

    // Quadratic forms at the rotated, rescaled loadings, assembled from the
    // cached small matrices.
    let ptp_rot = rot_f.vectors.transpose() * &proj.ptp * &rot_f.vectors;
    let rtr_rot = rot_e.vectors.transpose() * &proj.rtr * &rot_e.vectors;
    let q2 = DVector::from_fn(dims.r, |j, _| scale_f * ptp_rot[(j, j)]);
    let q3 = DVector::from_fn(dims.c, |i, _| scale_e * rtr_rot[(i, i)]);
    let cross = rot_e.vectors.transpose() * proj.t_mat.transpose() * &rot_f.vectors; // c x r
    let scale_cross = scale_f * scale_e;
    let q4 = DMatrix::from_fn(dims.c, dims.r, |i, j| scale_cross * cross[(i, j)] * cross[(i, j)]);
    let qf = QuadraticForms { q1: proj.norm_x2, q2, q3, q4 };
    Ok(log_likelihood_from_parts(&coeffs, &qf, &psi_f, &psi_e))
}

struct SortedEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
fn sorted_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    let k = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = DVector::from_fn(k, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SortedEigen { values, vectors })
}

/// One full EM pass on the variance block: E-step then closed-form M-step.
/// Returns the updated state and the number of floor clamps applied.
pub(crate) fn em_step(state: &EmState, proj: &EmProjections, dims: &Dims, floor: f64) -> Result<(EmState, usize)> {
    let post = latent_posterior(state, proj, dims)?;
    let mut floors = 0;

    let mut psi_f = (post.mean_f.transpose() * &post.mean_f + &post.cov_f_total) / dims.p as f64;
    psi_f = (&psi_f + psi_f.transpose()) * 0.5;
    floors += clamp_spd_floor(&mut psi_f, floor)?;

    let mut psi_e = (post.mean_e.transpose() * &post.mean_e + &post.cov_e_total) / dims.q as f64;
    psi_e = (&psi_e + psi_e.transpose()) * 0.5;
    floors += clamp_spd_floor(&mut psi_e, floor)?;

    let mut sigma2 = post.expected_rss / dims.pq() as f64;
    if sigma2 < floor {
        sigma2 = floor;
        floors += 1;
    }

    Ok((
        EmState {
            row_loadings: state.row_loadings.clone(),
            col_loadings: state.col_loadings.clone(),
            psi_f,
            psi_e,
            sigma2,
        },
        floors,
    ))
}

/// Clamps the eigenvalues of a symmetric matrix from below; returns how many
/// were raised.
fn clamp_spd_floor(m: &mut DMatrix<f64>, floor: f64) -> Result<usize> {
    let eig = sorted_eigen(m)?;
    if eig.values.min() >= floor {
        return Ok(0);
    }
    let mut clamped = 0;
    let values = DVector::from_fn(eig.values.len(), |i, _| {
        if eig.values[i] < floor {
            clamped += 1;
            floor
        } else {
            eig.values[i]
        }
    });
    *m = &eig.vectors * DMatrix::from_diagonal(&values) * eig.vectors.transpose();
    Ok(clamped)
}

/// EM inner loop for `(Psi_F, Psi_E, sigma^2)` with the loadings fixed.
/// Iterates until the observed log-likelihood improves by less than `err0`
/// or `max_inner` passes have run. The likelihood never decreases across
/// iterations.
pub fn em_update_variances(
    state: &EmState,
    x: &DataMatrix,
    err0: f64,
    max_inner: usize,
    floor: f64,
) -> Result<EmOutcome> {
    let dims = state.dims(x)?;
    let proj = EmProjections::compute(x, &state.row_loadings, &state.col_loadings)?;

    let mut current = state.clone();
    let mut h_prev = state_loglik_from_projections(&current, &proj, &dims)?;
    let mut floor_activations = 0;
    let mut iterations = 0;
    let mut hit_cap = true;
    for it in 0..max_inner {
        iterations = it + 1;
        let (next, floors) = em_step(&current, &proj, &dims, floor)?;
        floor_activations += floors;
        current = next;
        let h = state_loglik_from_projections(&current, &proj, &dims)?;
        let delta = h - h_prev;
        h_prev = h;
        if delta.abs() < err0 {
            hit_cap = false;
            break;
        }
    }
    Ok(EmOutcome { state: current, iterations, floor_activations, hit_cap, loglik: h_prev })
}

/// Rotation to the identified parameterization: rediagonalizes the factor
/// covariance blocks, rescales the loadings so that `L'L = q sigma^2 I_r`
/// and `Lambda'Lambda = p sigma^2 I_c`, orders the variances decreasingly
/// and fixes the column signs. The observation covariance is unchanged, so
/// the likelihood is too.
///
/// Returns the canonical parameters and any warnings (ambiguous rotation from
/// repeated eigenvalues).
pub fn rotate_identify(state: &EmState, x_dims: Dims) -> Result<(ModelParams, Vec<String>)> {
    let mut warnings = Vec::new();
    let s2 = state.sigma2;
    if s2 <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma^2 = {s2} must be positive")));
    }
    let alpha = mean_column_norm2(&state.row_loadings)?;
    let beta = mean_column_norm2(&state.col_loadings)?;

    let rot_f = sorted_eigen(&state.psi_f)?;
    let rot_e = sorted_eigen(&state.psi_e)?;
    for (label, values) in [("Psi_F", &rot_f.values), ("Psi_E", &rot_e.values)] {
        let scale = values.amax().max(f64::MIN_POSITIVE);
        for w in values.as_slice().windows(2) {
            if (w[0] - w[1]).abs() <= 1e-10 * scale {
                warnings.push(format!(
                    "{label} has (near-)repeated eigenvalues {} and {}; the identifying rotation is ambiguous",
                    w[0], w[1]
                ));
            }
        }
    }

    // New loadings: rotate into the eigenbasis, then rescale the common
    // column norm from alpha to q sigma^2 (resp. beta to p sigma^2).
    let scale_f = ((x_dims.q as f64) * s2 / alpha).sqrt();
    let scale_e = ((x_dims.p as f64) * s2 / beta).sqrt();
    let l_new = (&state.row_loadings * &rot_f.vectors) * scale_f;
    let lam_new = (&state.col_loadings * &rot_e.vectors) * scale_e;
    // Matching variance rescale keeps L Psi_F L' identical.
    let psi_f = DVector::from_fn(x_dims.r, |j, _| rot_f.values[j] * alpha / ((x_dims.q as f64) * s2));
    let psi_e = DVector::from_fn(x_dims.c, |i, _| rot_e.values[i] * beta / ((x_dims.p as f64) * s2));

    let params = ModelParams::new(
        x_dims,
        canonicalize_signs(&l_new)?,
        canonicalize_signs(&lam_new)?,
        psi_f,
        psi_e,
        s2,
    )?;
    Ok((params, warnings))
}

/// Posterior means `E[F | X]` and `E[E | X]` at the given parameters: the
/// factor score extractor.
pub fn posterior_scores(params: &ModelParams, x: &DataMatrix) -> Result<FactorScores> {
    let state = EmState::from_params(params);
    let dims = state.dims(x)?;
    let proj = EmProjections::compute(x, &state.row_loadings, &state.col_loadings)?;
    let post = latent_posterior(&state, &proj, &dims)?;
    FactorScores::new(&dims, post.mean_f, post.mean_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample, sample_params, FactorDistribution};
    use approx::assert_relative_eq;
    use nalgebra::{Cholesky, DMatrix};

    /// Dense conditioning oracle: builds the joint covariance of
    /// (vec F, vec E, vec X) and conditions directly.
    fn dense_posterior(state: &EmState, x: &DataMatrix) -> LatentPosterior {
        let p = x.nrows();
        let q = x.ncols();
        let r = state.row_loadings.ncols();
        let c = state.col_loadings.ncols();

        // vec F stacks rows of F; vec E stacks columns of E; vec X stacks
        // rows of X.
        let h_f = DMatrix::identity(p, p).kronecker(&state.row_loadings); // pq x pr
        let h_e = state.col_loadings.kronecker(&DMatrix::identity(q, q)); // pq x qc
        let h = {
            let mut h = DMatrix::zeros(p * q, p * r + q * c);
            h.view_mut((0, 0), (p * q, p * r)).copy_from(&h_f);
            h.view_mut((0, p * r), (p * q, q * c)).copy_from(&h_e);
            h
        };
        let psi_z = {
            let mut m = DMatrix::zeros(p * r + q * c, p * r + q * c);
            m.view_mut((0, 0), (p * r, p * r))
                .copy_from(&DMatrix::identity(p, p).kronecker(&state.psi_f));
            m.view_mut((p * r, p * r), (q * c, q * c))
                .copy_from(&state.psi_e.kronecker(&DMatrix::identity(q, q)));
            m
        };
        let cov_x = &h * &psi_z * h.transpose() + DMatrix::identity(p * q, p * q) * state.sigma2;
        let xv = crate::spectral::vec_rows(x.values());
        let chol = Cholesky::new(cov_x).unwrap();
        let solved_x = chol.solve(&xv);
        let cross = &psi_z * h.transpose(); // z-x cross covariance
        let mean_z = &cross * solved_x;
        let cov_z = &psi_z - &cross * chol.solve(&cross.transpose());

        let mean_f = DMatrix::from_fn(p, r, |i, j| mean_z[i * r + j]);
        let mean_e = DMatrix::from_fn(q, c, |j, k| mean_z[p * r + k * q + j]);

        let mut cov_f_total = DMatrix::zeros(r, r);
        for i in 0..p {
            for a in 0..r {
                for b in 0..r {
                    cov_f_total[(a, b)] += cov_z[(i * r + a, i * r + b)];
                }
            }
        }
        let mut cov_e_total = DMatrix::zeros(c, c);
        for j in 0..q {
            for a in 0..c {
                for b in 0..c {
                    cov_e_total[(a, b)] += cov_z[(p * r + a * q + j, p * r + b * q + j)];
                }
            }
        }

        // E||x - Hz||^2 = ||x - H mu||^2 + tr(H'H cov_z)
        let resid = &xv - &h * &mean_z;
        let hth = h.transpose() * &h;
        let expected_rss = resid.norm_squared() + (&hth * &cov_z).trace();

        LatentPosterior { mean_f, mean_e, cov_f_total, cov_e_total, expected_rss }
    }

    fn test_state(seed: u64, p: usize, q: usize, r: usize, c: usize) -> (EmState, DataMatrix) {
        let dims = Dims::new(p, q, r, c).unwrap();
        let psi_f: Vec<f64> = (0..r).map(|k| 8.0 - k as f64 * 2.5).collect();
        let psi_e: Vec<f64> = (0..c).map(|k| 3.3 - k as f64 * 1.2).collect();
        let params = sample_params(dims, &psi_f, &psi_e, 0.4, seed).unwrap();
        let bundle = sample(&params, FactorDistribution::Gaussian, seed + 1).unwrap();
        // Perturb the variance blocks into full SPD matrices so the test
        // exercises the non-diagonal path.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed + 2);
        let mut psi_f_m = DMatrix::from_diagonal(&params.psi_f);
        let mut psi_e_m = DMatrix::from_diagonal(&params.psi_e);
        use rand::Rng;
        for m in [&mut psi_f_m, &mut psi_e_m] {
            let k = m.nrows();
            for a in 0..k {
                for b in 0..a {
                    let v = 0.15 * (rng.random::<f64>() - 0.5);
                    m[(a, b)] += v;
                    m[(b, a)] += v;
                }
            }
        }
        (
            EmState {
                row_loadings: params.row_loadings.clone(),
                col_loadings: params.col_loadings.clone(),
                psi_f: psi_f_m,
                psi_e: psi_e_m,
                sigma2: params.sigma2,
            },
            bundle.x,
        )
    }

    #[test]
    fn structured_posterior_matches_dense_conditioning() {
        for (seed, p, q, r, c) in [(1u64, 6usize, 5usize, 2usize, 2usize), (2, 5, 7, 1, 3), (3, 8, 6, 3, 1)] {
            let (state, x) = test_state(seed, p, q, r, c);
            let dims = Dims::new(p, q, r, c).unwrap();
            let proj = EmProjections::compute(&x, &state.row_loadings, &state.col_loadings).unwrap();
            let got = latent_posterior(&state, &proj, &dims).unwrap();
            let want = dense_posterior(&state, &x);
            assert_relative_eq!(got.mean_f, want.mean_f, epsilon = 1e-9, max_relative = 1e-8);
            assert_relative_eq!(got.mean_e, want.mean_e, epsilon = 1e-9, max_relative = 1e-8);
            assert_relative_eq!(got.cov_f_total, want.cov_f_total, epsilon = 1e-9, max_relative = 1e-8);
            assert_relative_eq!(got.cov_e_total, want.cov_e_total, epsilon = 1e-9, max_relative = 1e-8);
            assert_relative_eq!(got.expected_rss, want.expected_rss, max_relative = 1e-8);
        }
    }

    #[test]
    fn em_state_likelihood_matches_canonical_evaluation() {
        // For a state already in canonical form the rotated evaluation must
        // agree with the direct one.
        let dims = Dims::new(7, 6, 2, 1).unwrap();
        let params = sample_params(dims, &[6.0, 3.0], &[1.5], 0.5, 4).unwrap();
        let bundle = sample(&params, FactorDistribution::Gaussian, 5).unwrap();
        let state = EmState::from_params(&params);
        let via_state = state_log_likelihood(&state, &bundle.x).unwrap();
        let direct = crate::spectral::log_likelihood(&params, &bundle.x).unwrap();
        assert_relative_eq!(via_state, direct, max_relative = 1e-10);
    }

    #[test]
    fn em_iterations_never_decrease_the_likelihood() {
        for seed in 0..20u64 {
            let (mut state, x) = test_state(seed, 9, 8, 2, 2);
            // Perturb the variances away from anything stationary.
            state.sigma2 *= 1.0 + 0.5 * (seed as f64 % 3.0 - 1.0) * 0.3 + 0.2;
            state.psi_f *= 1.4;
            state.psi_e *= 0.6;
            let dims = Dims::new(9, 8, 2, 2).unwrap();
            let proj = EmProjections::compute(&x, &state.row_loadings, &state.col_loadings).unwrap();
            let mut h_prev = state_loglik_from_projections(&state, &proj, &dims).unwrap();
            for _ in 0..10 {
                let (next, _) = em_step(&state, &proj, &dims, 1e-10).unwrap();
                state = next;
                let h = state_loglik_from_projections(&state, &proj, &dims).unwrap();
                assert!(
                    h >= h_prev - 1e-8 * h_prev.abs().max(1.0),
                    "seed {seed}: EM decreased the likelihood: {h_prev} -> {h}"
                );
                h_prev = h;
            }
        }
    }

    #[test]
    fn em_fixed_point_at_convergence() {
        let (state, x) = test_state(31, 10, 9, 2, 1);
        // Drive EM to a stationary point in parameter space, then one more
        // step must not move.
        let dims = Dims::new(10, 9, 2, 1).unwrap();
        let proj = EmProjections::compute(&x, &state.row_loadings, &state.col_loadings).unwrap();
        let mut current = state;
        for _ in 0..50_000 {
            let (next, _) = em_step(&current, &proj, &dims, 1e-10).unwrap();
            let moved = (&next.psi_f - &current.psi_f).amax()
                .max((&next.psi_e - &current.psi_e).amax())
                .max((next.sigma2 - current.sigma2).abs());
            current = next;
            if moved < 1e-12 {
                break;
            }
        }
        let (next, _) = em_step(&current, &proj, &dims, 1e-10).unwrap();
        let d_psi_f = (&next.psi_f - &current.psi_f).amax();
        let d_psi_e = (&next.psi_e - &current.psi_e).amax();
        let d_s2 = (next.sigma2 - current.sigma2).abs();
        assert!(d_psi_f < 1e-8 && d_psi_e < 1e-8 && d_s2 < 1e-8, "not a fixed point: {d_psi_f} {d_psi_e} {d_s2}");
    }

    #[test]
    fn rotation_preserves_the_observation_covariance() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(77);
        use rand::Rng;
        for seed in 0..20u64 {
            let (state, _x) = test_state(seed + 40, 6, 5, 2, 2);
            let dims = Dims::new(6, 5, 2, 2).unwrap();
            let (params, _) = rotate_identify(&state, dims).unwrap();
            // Dense covariance before and after must match.
            let a_before = &state.row_loadings * &state.psi_f * state.row_loadings.transpose();
            let b_before = &state.col_loadings * &state.psi_e * state.col_loadings.transpose();
            let a_after = &params.row_loadings * DMatrix::from_diagonal(&params.psi_f) * params.row_loadings.transpose();
            let b_after = &params.col_loadings * DMatrix::from_diagonal(&params.psi_e) * params.col_loadings.transpose();
            assert_relative_eq!(a_before, a_after, epsilon = 1e-10, max_relative = 1e-9);
            assert_relative_eq!(b_before, b_after, epsilon = 1e-10, max_relative = 1e-9);
            assert_eq!(params.sigma2, state.sigma2);
            // IC1 holds at the output.
            let report = params.validate(1e-8);
            assert!(
                !report.contains(crate::model::Condition::Ic1RowLoadings)
                    && !report.contains(crate::model::Condition::Ic1ColLoadings),
                "{report}"
            );
            let _ = rng.random::<f64>();
        }
    }

    #[test]
    fn rotation_is_identity_on_already_canonical_states() {
        let dims = Dims::new(7, 6, 2, 1).unwrap();
        let params = sample_params(dims, &[6.0, 3.0], &[1.5], 0.5, 8).unwrap();
        let state = EmState::from_params(&params);
        let (rotated, warnings) = rotate_identify(&state, dims).unwrap();
        assert!(warnings.is_empty());
        assert_relative_eq!(rotated.row_loadings, params.row_loadings, epsilon = 1e-10);
        assert_relative_eq!(rotated.psi_f, params.psi_f, epsilon = 1e-12);
    }

    #[test]
    fn rotation_sorts_increasing_diagonal_by_permutation() {
        let dims = Dims::new(8, 7, 2, 1).unwrap();
        let params = sample_params(dims, &[6.0, 3.0], &[1.5], 0.5, 9).unwrap();
        let mut state = EmState::from_params(&params);
        // Swap the diagonal into increasing order.
        state.psi_f = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 6.0]));
        let (rotated, _) = rotate_identify(&state, dims).unwrap();
        assert_relative_eq!(rotated.psi_f[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(rotated.psi_f[1], 3.0, epsilon = 1e-12);
        // The rotated loadings are the swapped columns up to sign.
        let c0 = rotated.row_loadings.column(0).into_owned();
        let want = canonicalize_signs(&DMatrix::from_columns(&[state.row_loadings.column(1)])).unwrap();
        assert_relative_eq!(c0, want.column(0).into_owned(), epsilon = 1e-10);
    }

    #[test]
    fn rotation_warns_on_repeated_eigenvalues() {
        let dims = Dims::new(8, 7, 2, 1).unwrap();
        let params = sample_params(dims, &[6.0, 3.0], &[1.5], 0.5, 10).unwrap();
        let mut state = EmState::from_params(&params);
        state.psi_f = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0]));
        let (_, warnings) = rotate_identify(&state, dims).unwrap();
        assert!(!warnings.is_empty());
    }

    #[test]
    fn scores_shrink_toward_the_latent_factors() {
        // On well-separated data the posterior means correlate strongly with
        // the factors that generated the sample.
        let dims = Dims::new(60, 50, 1, 1).unwrap();
        let params = sample_params(dims, &[8.0], &[1.0], 0.01, 11).unwrap();
        let bundle = sample(&params, FactorDistribution::Gaussian, 12).unwrap();
        let scores = posterior_scores(&params, &bundle.x).unwrap();
        let f_true = &bundle.scores.row_factors;
        let corr = {
            let a = scores.row_factors.column(0);
            let b = f_true.column(0);
            a.dot(&b) / (a.norm() * b.norm())
        };
        assert!(corr > 0.99, "posterior row scores poorly correlated: {corr}");
    }
}
