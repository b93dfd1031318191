//! Closed-form asymptotic variances of the maximum likelihood estimates, the
//! loading-variance curve in the variance ratio, the bias-corrected noise
//! variance, and plug-in confidence intervals.
//!
//! As `p, q -> infinity` with `p/q -> y`, the estimation errors satisfy
//!
//! * `sqrt(p) (L_mj_hat - L_mj) -> N(0, Sigma_L[j])`,
//! * `sqrt(q) (Lambda_ki_hat - Lambda_ki) -> N(0, Sigma_Lambda[i])`,
//! * `sqrt(p) (psiF_j_hat - psiF_j) -> N(0, 2 psiF_j^2)`,
//! * `sqrt(q) (psiE_i_hat - psiE_i) -> N(0, 2 psiE_i^2)`,
//! * `sqrt(pq) (corrected sigma2_hat - sigma2) -> N(0, 2 sigma^4)`,
//!
//! where each loading variance trades off the factor's own variance against
//! its distance to every variance in the other block:
//!
//! ```text
//! Sigma_L[j] = sigma^2 / psiF_j
//!            + sum_i sigma^2 psiE_i (y psiE_i + psiF_j) / (psiF_j - psiE_i)^2
//! ```
//!
//! The `(psiF_j - psiE_i)^{-2}` blow-up is the model's characteristic
//! behavior: a row-factor variance close to a column-factor variance makes
//! the loadings nearly unidentifiable in finite samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Dims, ModelParams};

/// Relative distance of a variance ratio from 1 below which plug-in loading
/// variances are flagged unreliable.
pub const DELTA_UNRELIABLE: f64 = 0.05;

/// Asymptotic variances evaluated at a parameter point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticVariances {
    /// diagonal of `Sigma_L`, length r
    pub sigma_l: Vec<f64>,
    /// diagonal of `Sigma_Lambda`, length c
    pub sigma_lambda: Vec<f64>,
    /// `2 psiF_j^2`
    pub var_psi_f: Vec<f64>,
    /// `2 psiE_i^2`
    pub var_psi_e: Vec<f64>,
    /// `2 sigma^4`
    pub var_sigma2: f64,
    /// aspect ratio `p/q` used
    pub y: f64,
}

/// Evaluates the closed-form asymptotic variances at `params` with aspect
/// ratio `y`. Errors when some row- and column-factor variances coincide
/// (the loading variances diverge there).
pub fn asymptotic_variances(params: &ModelParams, y: f64) -> Result<AsymptoticVariances> {
    if y <= 0.0 || !y.is_finite() {
        return Err(Error::InvalidInput(format!("aspect ratio y = {y} must be positive")));
    }
    let s2 = params.sigma2;
    let psi_f = &params.psi_f;
    let psi_e = &params.psi_e;
    for &f in psi_f.iter() {
        for &e in psi_e.iter() {
            if f == e {
                return Err(Error::VarianceConditions(format!(
                    "psiF = psiE = {f}: asymptotic loading variance diverges"
                )));
            }
        }
    }

    let sigma_l = psi_f
        .iter()
        .map(|&fj| {
            s2 / fj
                + psi_e
                    .iter()
                    .map(|&ei| s2 * ei * (y * ei + fj) / ((fj - ei) * (fj - ei)))
                    .sum::<f64>()
        })
        .collect();
    let sigma_lambda = psi_e
        .iter()
        .map(|&ei| {
            s2 / ei
                + psi_f
                    .iter()
                    .map(|&fj| s2 * fj * (fj + y * ei) / (y * (ei - fj) * (ei - fj)))
                    .sum::<f64>()
        })
        .collect();

    Ok(AsymptoticVariances {
        sigma_l,
        sigma_lambda,
        var_psi_f: psi_f.iter().map(|&v| 2.0 * v * v).collect(),
        var_psi_e: psi_e.iter().map(|&v| 2.0 * v * v).collect(),
        var_sigma2: 2.0 * s2 * s2,
        y,
    })
}

/// One point of the loading-variance curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    /// asymptotic per-entry loading variance `G(sigma_F^2, delta)`;
    /// meaningless when `rejected`
    pub g: f64,
    /// `delta = 1` is a pole and is rejected
    pub rejected: bool,
}

/// Loading variance as a function of the variance ratio
/// `delta = psiF / psiE` in the single-factor model:
///
/// `G = sigma^2 [ 1/psiF + (y + delta) / (delta - 1)^2 ]`
///
/// evaluated on a grid. This is the exact single-factor specialization of
/// the general loading variance (substitute `psiE = psiF / delta`); as
/// `delta -> infinity` it approaches the classical single-block factor-model
/// value `sigma^2 / psiF`, and it diverges on both sides of `delta = 1`.
pub fn variance_curve(sigma2: f64, psi_f: f64, y: f64, deltas: &[f64]) -> Vec<CurvePoint> {
    deltas
        .iter()
        .map(|&delta| {
            if delta == 1.0 || delta < 0.0 {
                return CurvePoint { delta, g: f64::NAN, rejected: true };
            }
            let dm1 = delta - 1.0;
            let g = sigma2 * (1.0 / psi_f + (y + delta) / (dm1 * dm1));
            CurvePoint { delta, g, rejected: false }
        })
        .collect()
}

/// Finite-sample corrected noise variance
/// `(1 + c/p + r/q) * sigma2_hat`, whose `sqrt(pq)`-scaled error is
/// asymptotically `N(0, 2 sigma^4)`.
pub fn corrected_sigma2(sigma2_hat: f64, dims: &Dims) -> f64 {
    (1.0 + dims.c as f64 / dims.p as f64 + dims.r as f64 / dims.q as f64) * sigma2_hat
}

/// Per-entry confidence intervals for both loading matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadingIntervals {
    pub level: f64,
    /// half-width of the interval for every entry of `L`, per column
    pub row_half_width: Vec<f64>,
    /// half-width for every entry of `Lambda`, per column
    pub col_half_width: Vec<f64>,
    /// columns of `L` whose plug-in variance is unreliable (some variance
    /// ratio within 5% of 1)
    pub unreliable_row_columns: Vec<usize>,
    pub unreliable_col_columns: Vec<usize>,
    pub variances: AsymptoticVariances,
}

impl LoadingIntervals {
    /// Interval for entry `(m, j)` of `L`.
    pub fn row_interval(&self, params: &ModelParams, m: usize, j: usize) -> (f64, f64) {
        let v = params.row_loadings[(m, j)];
        (v - self.row_half_width[j], v + self.row_half_width[j])
    }

    /// Interval for entry `(k, i)` of `Lambda`.
    pub fn col_interval(&self, params: &ModelParams, k: usize, i: usize) -> (f64, f64) {
        let v = params.col_loadings[(k, i)];
        (v - self.col_half_width[i], v + self.col_half_width[i])
    }
}

/// Plug-in confidence intervals at level `level`: entry `(m, j)` of `L` gets
/// `L_mj +- z sqrt(Sigma_L[j] / p)`, and mirror with `sqrt(q)` for `Lambda`.
/// Columns whose variance ratio to the other block sits within 5% of 1 are
/// flagged unreliable.
pub fn loading_ci(theta_hat: &ModelParams, level: f64) -> Result<LoadingIntervals> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!("level = {level} must be in (0, 1)")));
    }
    let dims = theta_hat.dims;
    let y = dims.p as f64 / dims.q as f64;
    let variances = asymptotic_variances(theta_hat, y)?;
    let z = normal_quantile(0.5 + level / 2.0);

    let row_half_width: Vec<f64> =
        variances.sigma_l.iter().map(|&v| z * (v / dims.p as f64).sqrt()).collect();
    let col_half_width: Vec<f64> =
        variances.sigma_lambda.iter().map(|&v| z * (v / dims.q as f64).sqrt()).collect();

    let mut unreliable_row_columns = Vec::new();
    for (j, &fj) in theta_hat.psi_f.iter().enumerate() {
        if theta_hat.psi_e.iter().any(|&ei| (fj / ei - 1.0).abs() < DELTA_UNRELIABLE) {
            unreliable_row_columns.push(j);
        }
    }
    let mut unreliable_col_columns = Vec::new();
    for (i, &ei) in theta_hat.psi_e.iter().enumerate() {
        if theta_hat.psi_f.iter().any(|&fj| (fj / ei - 1.0).abs() < DELTA_UNRELIABLE) {
            unreliable_col_columns.push(i);
        }
    }

    Ok(LoadingIntervals {
        level,
        row_half_width,
        col_half_width,
        unreliable_row_columns,
        unreliable_col_columns,
        variances,
    })
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::sample_params;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(psi_f: f64, psi_e: f64, sigma2: f64) -> ModelParams {
        let dims = Dims::new(8, 8, 1, 1).unwrap();
        sample_params(dims, &[psi_f], &[psi_e], sigma2, 1).unwrap()
    }

    #[test]
    fn scalar_variance_hand_value() {
        // sigma2 = 1, psiF = 1, y = 1, delta = 2 (psiE = 1/2):
        // G = 1 * [1 + (1 + 2) / 1] = 4.
        let params = scalar_params(1.0, 0.5, 1.0);
        let v = asymptotic_variances(&params, 1.0).unwrap();
        assert_relative_eq!(v.sigma_l[0], 4.0, epsilon = 1e-12);
        let curve = variance_curve(1.0, 1.0, 1.0, &[2.0]);
        assert_relative_eq!(curve[0].g, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn large_ratio_limit_reaches_the_classical_value() {
        // delta -> infinity at unit parameters: G -> sigma^2 / psiF = 1.
        let curve = variance_curve(1.0, 1.0, 1.0, &[1e8]);
        assert_relative_eq!(curve[0].g, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn noise_variance_asymptotics() {
        let params = scalar_params(1.0, 0.5, 0.01);
        let v = asymptotic_variances(&params, 1.0).unwrap();
        assert_relative_eq!(v.var_sigma2, 2e-4, epsilon = 1e-18);
    }

    #[test]
    fn curve_at_zero_and_monotone_decrease_beyond_one() {
        let c0 = variance_curve(1.0, 1.0, 1.0, &[0.0]);
        assert_relative_eq!(c0[0].g, 2.0, epsilon = 1e-12);

        let grid: Vec<f64> = (0..200).map(|k| 1.5 + 0.25 * k as f64).collect();
        let curve = variance_curve(1.0, 1.0, 1.0, &grid);
        for w in curve.windows(2) {
            assert!(w[1].g < w[0].g, "curve not decreasing at delta = {}", w[1].delta);
            assert!(w[1].g > 1.0);
        }
    }

    #[test]
    fn curve_diverges_at_the_pole_and_rejects_it() {
        let c = variance_curve(1.0, 1.0, 1.0, &[1.0 - 1e-4, 1.0, 1.0 + 1e-4]);
        assert!(c[0].g > 1e6);
        assert!(c[1].rejected);
        assert!(c[2].g > 1e6);
    }

    #[test]
    fn corrected_sigma2_arithmetic() {
        let dims = Dims::new(100, 100, 1, 1).unwrap();
        assert_relative_eq!(corrected_sigma2(0.0099, &dims), 0.0099 * 1.02, epsilon = 1e-15);
        let big = Dims::new(1_000_000, 1_000_000, 1, 1).unwrap();
        assert_relative_eq!(corrected_sigma2(1.0, &big), 1.0, max_relative = 1e-5);
        let mixed = Dims::new(300, 200, 2, 3).unwrap();
        assert_relative_eq!(corrected_sigma2(1.0, &mixed), 1.0 + 3.0 / 300.0 + 2.0 / 200.0, epsilon = 1e-15);
    }

    #[test]
    fn ci_half_width_arithmetic() {
        // Sigma_L / p = 4 / 400 -> half-width 1.96 * 0.1 = 0.196.
        let z = normal_quantile(0.975);
        assert_relative_eq!(z, 1.959964, max_relative = 1e-5);
        assert_relative_eq!(z * (4.0f64 / 400.0).sqrt(), 0.196, max_relative = 1e-3);
    }

    #[test]
    fn ci_flags_unreliable_columns() {
        let params = scalar_params(1.04, 1.0, 0.01);
        let ci = loading_ci(&params, 0.95).unwrap();
        assert_eq!(ci.unreliable_row_columns, vec![0]);
        assert_eq!(ci.unreliable_col_columns, vec![0]);

        let ok = scalar_params(8.0, 1.0, 0.01);
        let ci2 = loading_ci(&ok, 0.95).unwrap();
        assert!(ci2.unreliable_row_columns.is_empty());
    }

    #[test]
    fn swap_symmetry_exchanges_the_two_blocks() {
        let dims = Dims::new(10, 9, 2, 3).unwrap();
        let params = sample_params(dims, &[9.0, 7.0], &[5.0, 3.0, 1.5], 0.3, 2).unwrap();
        let v = asymptotic_variances(&params, 1.7).unwrap();

        let swapped_dims = Dims::new(9, 10, 3, 2).unwrap();
        let swapped = sample_params(swapped_dims, &[5.0, 3.0, 1.5], &[9.0, 7.0], 0.3, 2).unwrap();
        let vs = asymptotic_variances(&swapped, 1.0 / 1.7).unwrap();

        for j in 0..2 {
            // Sigma_Lambda of the swapped problem carries a 1/y' = y factor.
            assert_relative_eq!(v.sigma_l[j], vs.sigma_lambda[j] , max_relative = 1e-12);
        }
        for i in 0..3 {
            assert_relative_eq!(v.sigma_lambda[i], vs.sigma_l[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn scalar_specialization_matches_the_general_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let psi_f = 0.3 + rng.random::<f64>() * 5.0;
            let delta = 0.1 + rng.random::<f64>() * 6.0;
            if (delta - 1.0).abs() < 1e-3 {
                continue;
            }
            let psi_e = psi_f / delta;
            let s2 = 0.05 + rng.random::<f64>();
            let y = 0.25 + rng.random::<f64>() * 4.0;
            let params = scalar_params(psi_f, psi_e, s2);
            let v = asymptotic_variances(&params, y).unwrap();
            let g = variance_curve(s2, psi_f, y, &[delta])[0].g;
            assert_relative_eq!(v.sigma_l[0], g, max_relative = 1e-12);
        }
    }

    #[test]
    fn variance_blows_up_along_a_shrinking_gap() {
        let mut prev = 0.0;
        for k in 1..=6 {
            let gap = 10f64.powi(-k);
            let params = scalar_params(1.0 + gap, 1.0, 0.01);
            let v = asymptotic_variances(&params, 1.0).unwrap();
            assert!(v.sigma_l[0] > prev, "no growth at gap {gap}");
            prev = v.sigma_l[0];
        }
        assert!(prev > 1e8);
        // Exact coincidence is a hard error.
        let equal = scalar_params(2.0, 1.0, 0.01);
        let mut broken = equal;
        broken.psi_e[0] = broken.psi_f[0];
        assert!(asymptotic_variances(&broken, 1.0).is_err());
    }
}
