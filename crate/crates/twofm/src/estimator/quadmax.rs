//! Maximization of `sum_j L_j' W_j L_j` over matrices with orthonormal
//! columns.
//!
//! For a single column the maximizer is the top eigenvector, found here by
//! warm-started power iteration on a matrix-free operator. For several
//! columns with heterogeneous `W_j` the solution satisfies the fixed-point
//! relation `(W_1 L_1 ... W_k L_k) = L A` for a symmetric `A`, which the
//! iterative polar update below exploits: assemble the column-wise products,
//! take the orthogonal polar factor via SVD, repeat. Each sweep is
//! non-decreasing in the objective provided every `W_j` is positive
//! semidefinite, which the caller arranges by an eigenvalue shift.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Outcome of an inner maximization: orthonormal-column solution, objective
/// value, and sweep count.
pub(crate) struct QuadMaxOutcome {
    pub solution: DMatrix<f64>,
    pub iterations: usize,
}

/// Top eigenpair of a symmetric PSD operator given only matrix-vector
/// products. Deterministic: starts from `warm` and from one fixed
/// pseudo-random vector, keeping the better Rayleigh quotient, so the result
/// never falls below the warm start's objective.
pub(crate) fn top_eigenvector<F>(apply: F, dim: usize, warm: &DVector<f64>, max_iter: usize) -> (f64, DVector<f64>, usize)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut best: Option<(f64, DVector<f64>, usize)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7031_e1e7 ^ dim as u64);
    let fallback = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    for start in [warm.clone(), fallback] {
        let norm = start.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = start / norm;
        let mut rq_prev = f64::NEG_INFINITY;
        let mut iters = 0;
        for it in 0..max_iter {
            iters = it + 1;
            let w = apply(&v);
            let rq = v.dot(&w);
            let wn = w.norm();
            if wn == 0.0 {
                break;
            }
            v = w / wn;
            let converged = (rq - rq_prev).abs() <= 1e-13 * rq.abs().max(1e-300);
            rq_prev = rq;
            if converged {
                break;
            }
        }
        let rq = v.dot(&apply(&v));
        if best.as_ref().map_or(true, |(b, _, _)| rq > *b) {
            best = Some((rq, v, iters));
        }
    }
    best.expect("at least one start vector is nonzero")
}

/// Polar-update maximization of `sum_j l_j' ws[j] l_j` subject to
/// `L'L = I_k`, starting from an orthonormal `start`. The matrices are
/// shifted by `min_j lambda_min(ws[j]) - shift_margin` so every summand is
/// positive semidefinite; the shift changes the objective by a constant and
/// not the maximizer. Stops when the objective improves by less than `tol`.
pub(crate) fn maximize_sum_quadratic_forms(
    ws: &[DMatrix<f64>],
    start: &DMatrix<f64>,
    tol: f64,
    shift_margin: f64,
    max_iter: usize,
) -> Result<QuadMaxOutcome> {
    let k = ws.len();
    let n = start.nrows();
    if start.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "start has {} columns but {} forms were given",
            start.ncols(),
            k
        )));
    }
    for w in ws {
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::DimensionMismatch("every W_j must be n x n".into()));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("quadratic-form matrix".into()));
        }
    }

    let mut min_eig = f64::INFINITY;
    for w in ws {
        let eig = nalgebra::SymmetricEigen::new(w.clone());
        min_eig = min_eig.min(eig.eigenvalues.min());
    }
    let lambda = min_eig - shift_margin;
    let shifted: Vec<DMatrix<f64>> = ws
        .iter()
        .map(|w| {
            let mut a = w.clone();
            for i in 0..n {
                a[(i, i)] -= lambda;
            }
            a
        })
        .collect();

    let objective = |l: &DMatrix<f64>| -> f64 {
        (0..k).map(|j| l.column(j).dot(&(&shifted[j] * l.column(j)))).sum()
    };

    let mut l = start.clone();
    let mut f_prev = objective(&l);
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut assembled = DMatrix::zeros(n, k);
        for (j, a) in shifted.iter().enumerate() {
            assembled.set_column(j, &(a * l.column(j)));
        }
        let svd = assembled.svd(true, true);
        let u = svd.u.as_ref().ok_or_else(|| Error::DecompositionFailed("SVD did not produce U".into()))?;
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::DecompositionFailed("SVD did not produce V'".into()))?;
        l = u * v_t;
        let f = objective(&l);
        debug_assert!(f >= f_prev - 1e-8 * f_prev.abs().max(1.0), "polar sweep decreased objective");
        if (f - f_prev).abs() < tol {
            break;
        }
        f_prev = f;
    }
    Ok(QuadMaxOutcome { solution: l, iterations })
}
