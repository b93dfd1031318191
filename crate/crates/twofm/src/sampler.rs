//! Synthetic data generation: random valid parameter sets and samples
//! `(X, F, E, eps)` drawn from the model under Gaussian or centered
//! chi-square factors.
//!
//! Everything is a pure function of its seed; per-replicate streams in the
//! Monte Carlo harness are derived as `base_seed + replicate_index`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{canonicalize_signs, DataMatrix, Dims, FactorScores, ModelParams};

/// Distribution of the latent factor entries. The chi-square variant is
/// centered and scaled to unit variance before being multiplied by the
/// target standard deviation, so either choice reproduces the requested
/// factor covariance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorDistribution {
    #[default]
    Gaussian,
    CenteredChiSquare {
        #[serde(default = "default_df")]
        df: u32,
    },
}

fn default_df() -> u32 {
    1
}

/// One simulated replicate: the observation, the latent factors and noise
/// that generated it, and the seed used.
///
/// `x = scores.row_factors * L' + Lambda * scores.col_factors' + noise`
/// holds exactly (machine precision) by construction.
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub x: DataMatrix,
    pub scores: FactorScores,
    pub noise: DMatrix<f64>,
    pub seed: u64,
}

/// Draws a valid parameter set: loading entries i.i.d. `U[0, 1]`, columns
/// orthonormalized and scaled so that `L'L = q sigma^2 I_r` and
/// `Lambda'Lambda = p sigma^2 I_c`, signs canonical. For a single factor no
/// orthogonalization is needed and the column direction is exactly the
/// normalized uniform draw.
///
/// The requested variances must satisfy the ordering and separation
/// conditions; violations are an error here (unlike [`ModelParams::validate`],
/// which merely reports them) because a sampler cannot meaningfully produce
/// an unidentified truth.
pub fn sample_params(dims: Dims, psi_f: &[f64], psi_e: &[f64], sigma2: f64, seed: u64) -> Result<ModelParams> {
    if psi_f.len() != dims.r || psi_e.len() != dims.c {
        return Err(Error::DimensionMismatch(format!(
            "expected {} row-factor and {} column-factor variances, got {} and {}",
            dims.r,
            dims.c,
            psi_f.len(),
            psi_e.len()
        )));
    }
    check_variance_conditions(psi_f, psi_e, sigma2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = scaled_orthogonal_uniform(&mut rng, dims.q, dims.r, (dims.q as f64 * sigma2).sqrt())?;
    let lam = scaled_orthogonal_uniform(&mut rng, dims.p, dims.c, (dims.p as f64 * sigma2).sqrt())?;
    let params = ModelParams::new(
        dims,
        canonicalize_signs(&l)?,
        canonicalize_signs(&lam)?,
        DVector::from_row_slice(psi_f),
        DVector::from_row_slice(psi_e),
        sigma2,
    )?;
    // The construction must hit the scaled-orthogonality condition
    // essentially exactly; the variance conditions were checked above (a
    // near-1 separation ratio is permitted here, unlike exact equality).
    debug_assert!(
        {
            let report = params.validate(1e-10);
            !report.contains(crate::model::Condition::Ic1RowLoadings)
                && !report.contains(crate::model::Condition::Ic1ColLoadings)
                && !report.contains(crate::model::Condition::SignCanonical)
        },
        "{}",
        params.validate(1e-10)
    );
    Ok(params)
}

fn check_variance_conditions(psi_f: &[f64], psi_e: &[f64], sigma2: f64) -> Result<()> {
    if sigma2 <= 0.0 {
        return Err(Error::VarianceConditions(format!("sigma^2 = {sigma2} must be positive")));
    }
    for block in [psi_f, psi_e] {
        for w in block.windows(2) {
            if w[0] <= w[1] {
                return Err(Error::VarianceConditions(format!(
                    "factor variances must be strictly decreasing, got {} <= {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = block.last() {
            if last <= 0.0 {
                return Err(Error::VarianceConditions(format!("factor variance {last} must be positive")));
            }
        }
    }
    for &f in psi_f {
        for &e in psi_e {
            if f == e {
                return Err(Error::VarianceConditions(format!(
                    "row-factor variance {f} equals column-factor variance {e}"
                )));
            }
        }
    }
    Ok(())
}

/// Uniform draws, modified Gram-Schmidt with one reorthogonalization pass,
/// columns scaled to `col_norm`.
fn scaled_orthogonal_uniform(rng: &mut ChaCha8Rng, n: usize, k: usize, col_norm: f64) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>());
    for j in 0..k {
        // Two orthogonalization passes keep the residual near machine epsilon.
        for _pass in 0..2 {
            for prev in 0..j {
                let proj = m.column(j).dot(&m.column(prev));
                let prev_col = m.column(prev).into_owned();
                let mut col = m.column_mut(j);
                col.axpy(-proj, &prev_col, 1.0);
            }
        }
        let norm = m.column(j).norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateLoading(format!(
                "uniform draw produced a near-dependent column {}",
                j + 1
            )));
        }
        m.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(m * col_norm)
}

/// Draws one replicate from the model: factor rows i.i.d. with the requested
/// covariance, noise i.i.d. `N(0, sigma^2)`, reproducible from the seed.
pub fn sample(params: &ModelParams, dist: FactorDistribution, seed: u64) -> Result<SampleBundle> {
    let report = params.validate(crate::model::TOL_IC_ESTIMATE);
    if !report.is_empty() {
        log::warn!("sampling from parameters with violated conditions: {report}");
    }
    let d = &params.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let f = draw_factor_matrix(&mut rng, d.p, &params.psi_f, dist);
    let e = draw_factor_matrix(&mut rng, d.q, &params.psi_e, dist);
    let noise_sd = params.sigma2.sqrt();
    let noise = DMatrix::from_fn(d.p, d.q, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));

    let x = &f * params.row_loadings.transpose() + &params.col_loadings * e.transpose() + &noise;
    Ok(SampleBundle {
        x: DataMatrix::new(x)?,
        scores: FactorScores::new(d, f, e)?,
        noise,
        seed,
    })
}

/// `n x k` matrix with rows i.i.d. from `dist` with diagonal covariance
/// `diag(psi)`. Entries are filled row-major so the stream layout is part of
/// the reproducibility contract.
fn draw_factor_matrix(rng: &mut ChaCha8Rng, n: usize, psi: &DVector<f64>, dist: FactorDistribution) -> DMatrix<f64> {
    let k = psi.len();
    let sds: Vec<f64> = psi.iter().map(|v| v.sqrt()).collect();
    let mut m = DMatrix::zeros(n, k);
    match dist {
        FactorDistribution::Gaussian => {
            for i in 0..n {
                for j in 0..k {
                    m[(i, j)] = sds[j] * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        FactorDistribution::CenteredChiSquare { df } => {
            let df = df.max(1) as f64;
            let chi = ChiSquared::new(df).expect("df >= 1");
            let scale = 1.0 / (2.0 * df).sqrt();
            for i in 0..n {
                for j in 0..k {
                    let base = (rng.sample::<f64, _>(chi) - df) * scale;
                    m[(i, j)] = sds[j] * base;
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sampled_params_pass_validation() {
        for seed in 0..5u64 {
            let dims = Dims::new(9, 7, 2, 3).unwrap();
            let params = sample_params(dims, &[8.0, 5.0], &[6.0, 4.0, 2.0], 0.5, seed).unwrap();
            let report = params.validate(1e-10);
            assert!(report.is_empty(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn sample_params_is_deterministic() {
        let dims = Dims::new(6, 6, 1, 1).unwrap();
        let a = sample_params(dims, &[8.0], &[1.0], 0.01, 42).unwrap();
        let b = sample_params(dims, &[8.0], &[1.0], 0.01, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_factor_direction_is_the_normalized_uniform_draw() {
        let dims = Dims::new(5, 6, 1, 1).unwrap();
        let sigma2 = 0.25;
        let seed = 17;
        let params = sample_params(dims, &[4.0], &[1.0], sigma2, seed).unwrap();
        // Replay the draw: the first q uniforms form the raw L column.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..dims.q).map(|_| rng.random::<f64>()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = (dims.q as f64 * sigma2).sqrt();
        for (i, &v) in raw.iter().enumerate() {
            assert_relative_eq!(params.row_loadings[(i, 0)], v / norm * target, epsilon = 1e-12);
            assert!(params.row_loadings[(i, 0)] > 0.0);
        }
    }

    #[test]
    fn rejects_mc5_violations() {
        let dims = Dims::new(5, 5, 1, 1).unwrap();
        assert!(matches!(
            sample_params(dims, &[1.0], &[1.0], 0.01, 0),
            Err(Error::VarianceConditions(_))
        ));
        let dims2 = Dims::new(8, 8, 2, 1).unwrap();
        assert!(matches!(
            sample_params(dims2, &[4.0, 8.0], &[1.0], 0.01, 0),
            Err(Error::VarianceConditions(_))
        ));
    }

    #[test]
    fn reconstruction_identity_holds_exactly() {
        let dims = Dims::new(8, 7, 2, 1).unwrap();
        let params = sample_params(dims, &[8.0, 4.0], &[1.0], 0.3, 3).unwrap();
        let bundle = sample(&params, FactorDistribution::Gaussian, 11).unwrap();
        let rebuilt = &bundle.scores.row_factors * params.row_loadings.transpose()
            + &params.col_loadings * bundle.scores.col_factors.transpose()
            + &bundle.noise;
        assert_eq!(rebuilt, *bundle.x.values());
    }

    #[test]
    fn sample_is_deterministic_in_seed() {
        let dims = Dims::new(6, 6, 1, 1).unwrap();
        let params = sample_params(dims, &[8.0], &[1.0], 0.01, 5).unwrap();
        let a = sample(&params, FactorDistribution::Gaussian, 9).unwrap();
        let b = sample(&params, FactorDistribution::Gaussian, 9).unwrap();
        assert_eq!(a.x.values(), b.x.values());
        assert_eq!(a.noise, b.noise);
    }

    #[test]
    fn near_degenerate_factors_collapse_to_low_rank() {
        // With tiny noise and column-factor variance, X ~= F L', so the top
        // right singular direction of X lines up with L.
        let dims = Dims::new(100, 50, 1, 1).unwrap();
        let params = sample_params(dims, &[50.0], &[1e-9], 1e-9, 7).unwrap();
        let bundle = sample(&params, FactorDistribution::Gaussian, 1).unwrap();
        let svd = bundle.x.values().clone().svd(false, true);
        let v_t = svd.v_t.unwrap();
        let top: Vec<f64> = v_t.row(0).iter().copied().collect();
        let l = params.row_loadings.column(0);
        let cos = top.iter().zip(l.iter()).map(|(a, b)| a * b).sum::<f64>().abs() / l.norm();
        assert!(cos > 0.999, "top right singular vector misaligned with L: cos = {cos}");
    }

    #[test]
    fn empirical_covariance_matches_dense_sigma() {
        let dims = Dims::new(4, 4, 1, 1).unwrap();
        let params = sample_params(dims, &[3.0], &[1.0], 0.5, 0).unwrap();
        let sigma = crate::spectral::dense_sigma(&params).unwrap();
        let pq = dims.pq();
        let reps = 2000;
        let mut acc = DMatrix::<f64>::zeros(pq, pq);
        for rep in 0..reps {
            let bundle = sample(&params, FactorDistribution::Gaussian, 1000 + rep as u64).unwrap();
            let v = crate::spectral::vec_rows(bundle.x.values());
            acc += &v * v.transpose();
        }
        acc /= reps as f64;
        let rel = (&acc - &sigma).norm() / sigma.norm();
        assert!(rel < 0.10, "empirical covariance off by {rel:.3}");
    }

    #[test]
    fn centered_chi_square_moments() {
        let dims = Dims::new(10_000, 50, 1, 1).unwrap();
        let params = sample_params(dims, &[4.0], &[1.0], 0.01, 2).unwrap();
        let bundle = sample(&params, FactorDistribution::CenteredChiSquare { df: 1 }, 3).unwrap();
        let f = &bundle.scores.row_factors;
        let n = f.nrows() as f64;
        let mean = f.column(0).sum() / n;
        let var = f.column(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_relative_eq!(var, 4.0, max_relative = 0.05);
        let sd = var.sqrt();
        let skew = f.column(0).iter().map(|v| ((v - mean) / sd).powi(3)).sum::<f64>() / n;
        // Skewness of a chi-square with df = 1 is sqrt(8).
        assert_relative_eq!(skew, 8.0f64.sqrt(), max_relative = 0.15);
    }
}
