//! Asymptotic variances, the loading-variance curve in the variance ratio,
//! and plug-in confidence intervals for a fitted model.
//!
//! ```text
//! cargo run --release --example asymptotic_inference
//! ```

use twofm::asymptotics::{corrected_sigma2, loading_ci, asymptotic_variances, variance_curve};
use twofm::estimator::{fit, FitConfig};
use twofm::model::Dims;
use twofm::sampler::{sample, sample_params, FactorDistribution};

fn main() -> twofm::Result<()> {
    // The per-entry loading variance as a function of delta = psiF / psiE:
    // it collapses to the classical single-block value for well-separated
    // variances and blows up near delta = 1.
    println!("G(delta) at unit parameters:");
    for pt in variance_curve(1.0, 1.0, 1.0, &[0.0, 0.5, 0.9, 1.1, 2.0, 7.0, 50.0]) {
        if pt.rejected {
            println!("  delta = {:>5}: rejected (pole)", pt.delta);
        } else {
            println!("  delta = {:>5}: G = {:.4}", pt.delta, pt.g);
        }
    }

    // Fit one synthetic data set and attach confidence intervals.
    let dims = Dims::new(300, 300, 1, 1)?;
    let truth = sample_params(dims, &[8.0], &[1.0], 0.01, 11)?;
    let bundle = sample(&truth, FactorDistribution::Gaussian, 12)?;
    let result = fit(&bundle.x, dims, &FitConfig::default())?;
    let theta = &result.theta_hat;

    let y = dims.p as f64 / dims.q as f64;
    let asym = asymptotic_variances(theta, y)?;
    println!(
        "\nplug-in asymptotic variances: Sigma_L = {:.5}, Sigma_Lambda = {:.5}, var(sigma2) = {:.2e}",
        asym.sigma_l[0], asym.sigma_lambda[0], asym.var_sigma2
    );
    println!(
        "corrected noise variance: {:.6} (raw {:.6}, truth {:.6})",
        corrected_sigma2(theta.sigma2, &dims),
        theta.sigma2,
        truth.sigma2
    );

    let ci = loading_ci(theta, 0.95)?;
    let covered = (0..dims.q)
        .filter(|&m| {
            let (lo, hi) = ci.row_interval(theta, m, 0);
            // Sign-align the truth to the estimate for the comparison.
            let t = truth.row_loadings[(m, 0)]
                * theta.row_loadings.column(0).dot(&truth.row_loadings.column(0)).signum();
            t >= lo && t <= hi
        })
        .count();
    println!(
        "95% intervals for L: half-width {:.4}; {covered} of {} entries cover the truth",
        ci.row_half_width[0],
        dims.q
    );
    Ok(())
}
