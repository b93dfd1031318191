//! End to end: draw a synthetic data matrix, fit it by maximum likelihood,
//! and compare the estimate against the generating parameters.
//!
//! ```text
//! cargo run --release --example simulate_and_fit
//! ```

use twofm::estimator::{fit, FitConfig};
use twofm::model::{align_for_comparison, loading_accuracy_r2, Dims};
use twofm::sampler::{sample, sample_params, FactorDistribution};
use twofm::spectral::log_likelihood;

fn main() -> twofm::Result<()> {
    let dims = Dims::new(200, 150, 1, 1)?;
    let truth = sample_params(dims, &[8.0], &[1.0], 0.01, 7)?;
    let bundle = sample(&truth, FactorDistribution::Gaussian, 8)?;

    let result = fit(&bundle.x, dims, &FitConfig::default())?;
    println!(
        "converged: {} after {} outer iterations",
        result.converged,
        result.loglik_trace.len() - 1
    );
    println!(
        "log-likelihood: fit {:.3} vs truth {:.3}",
        result.final_loglik(),
        log_likelihood(&truth, &bundle.x)?
    );

    let aligned = align_for_comparison(&result.theta_hat, &truth)?;
    let r2_l = loading_accuracy_r2(&aligned.params.row_loadings, &truth.row_loadings)?;
    let r2_lambda = loading_accuracy_r2(&aligned.params.col_loadings, &truth.col_loadings)?;
    println!("loading recovery: R^2(L) = {:.4}, R^2(Lambda) = {:.4}", r2_l.average, r2_lambda.average);
    println!(
        "variances: psiF {:.3} (true {:.3}), psiE {:.3} (true {:.3}), sigma2 {:.5} (true {:.5})",
        result.theta_hat.psi_f[0],
        truth.psi_f[0],
        result.theta_hat.psi_e[0],
        truth.psi_e[0],
        result.theta_hat.sigma2,
        truth.sigma2
    );

    // The posterior factor scores track the realized factors closely here.
    let f_corr = {
        let a = result.scores.row_factors.column(0);
        let b = bundle.scores.row_factors.column(0);
        (a.dot(&b) / (a.norm() * b.norm())).abs()
    };
    println!("posterior row scores vs realized factors: |corr| = {f_corr:.4}");
    Ok(())
}
