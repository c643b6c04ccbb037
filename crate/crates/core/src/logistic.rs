//! Maximum-likelihood logistic regression by Newton–Raphson (IRLS).
//!
//! Responses may be fractional in `[0,1]`; the Bernoulli log-likelihood is
//! then a quasi-likelihood with the same score equations.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::{expit, Scalar};

/// Coefficients beyond this magnitude are numerically saturated logits and
/// indicate complete separation.
pub const SEPARATION_BOUND: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("design has {rows} rows but {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("design has {rows} rows but {responses} responses")]
    LengthMismatch { rows: usize, responses: usize },
    #[error("all responses equal {0}; the model is not identified")]
    ConstantResponse(f64),
    #[error("complete separation: |coefficient| reached {max_abs:.3} (> {SEPARATION_BOUND})")]
    Separation { max_abs: f64 },
    #[error("information matrix is singular (design is not of full column rank)")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions<T> {
    /// Convergence threshold on the max-norm of the mean score `Xᵀ(y − p)/n`.
    /// Scaling by `n` keeps it above the rounding floor of the summed score.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-10), max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel<T> {
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: T,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn linear_predictor(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.coefficients.len());
        x.iter().zip(&self.coefficients).map(|(&a, &b)| a * b).sum()
    }

    pub fn predict(&self, x: &[T]) -> T {
        expit(self.linear_predictor(x))
    }
}

pub fn log_likelihood<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T]) -> T {
    (0..x.nrows())
        .map(|i| {
            let eta: T = x.row(i).iter().zip(beta).map(|(&a, &b)| a * b).sum();
            // y·η − log(1 + e^η), written to avoid overflow.
            let log1p_exp = if eta > T::zero() { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            y[i] * eta - log1p_exp
        })
        .sum()
}

/// Score vector `Xᵀ(y − expit(Xβ))`.
pub fn score<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T]) -> Vec<T> {
    let mut g = vec![T::zero(); x.ncols()];
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let p = expit(row.iter().zip(beta).map(|(&a, &b)| a * b).sum());
        let r = yi - p;
        for (gj, &xj) in g.iter_mut().zip(row) {
            *gj = *gj + xj * r;
        }
    }
    g
}

/// Log-likelihood, score and Fisher information in one pass over the rows,
/// sharing one exponential per row.
fn evaluate<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T]) -> (T, Vec<T>, Matrix<T>) {
    let p = x.ncols();
    let one = T::one();
    let mut ll = T::zero();
    let mut g = vec![T::zero(); p];
    let mut info = Matrix::zeros(p, p);
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let eta: T = row.iter().zip(beta).map(|(&a, &b)| a * b).sum();
        let e = (-eta.abs()).exp();
        let pr = if eta >= T::zero() { one / (one + e) } else { e / (one + e) };
        ll = ll + yi * eta - (eta.max(T::zero()) + e.ln_1p());
        let r = yi - pr;
        for (gj, &xj) in g.iter_mut().zip(row) {
            *gj = *gj + xj * r;
        }
        info.add_outer(row, row, pr * (one - pr));
    }
    (ll, g, info)
}

/// Fisher information `Xᵀ diag(p(1−p)) X`.
pub fn information<T: Scalar>(x: &Matrix<T>, beta: &[T]) -> Matrix<T> {
    let p = x.ncols();
    let mut info = Matrix::zeros(p, p);
    for i in 0..x.nrows() {
        let row = x.row(i);
        let pr = expit(row.iter().zip(beta).map(|(&a, &b)| a * b).sum());
        info.add_outer(row, row, pr * (T::one() - pr));
    }
    info
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Fits `Pr(y=1|x) = expit(xᵀβ)`.
///
/// Converged means `max |score| / n ≤ tol`. Hitting `max_iter` returns the last
/// iterate with `converged = false` (and a logged warning); a coefficient
/// beyond [`SEPARATION_BOUND`] at termination is reported as separation.
pub fn fit_logistic<T: Scalar>(x: &Matrix<T>, y: &[T], opts: &FitOptions<T>) -> Result<LogisticModel<T>, FitError> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(FitError::LengthMismatch { rows: n, responses: y.len() });
    }
    if n < p || n == 0 {
        return Err(FitError::TooFewRows { rows: n, cols: p });
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(FitError::ConstantResponse(y[0].as_f64()));
    }

    let bound = T::lit(SEPARATION_BOUND);
    let ybar = y.iter().copied().sum::<T>() / T::from_count(n);
    let mut beta = vec![T::zero(); p];
    // Starting at the marginal logit makes intercept-only fits converge in one step.
    beta[0] = (ybar / (T::one() - ybar)).ln();
    let (mut ll, mut grad, mut info) = evaluate(x, y, &beta);
    let mut iterations = 0;
    let mut converged = false;

    let nn = T::from_count(n);
    loop {
        if max_abs(&grad) / nn <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let Some(lu) = info.lu() else {
            let m = max_abs(&beta);
            return Err(if m > bound { FitError::Separation { max_abs: m.as_f64() } } else { FitError::Singular });
        };
        let step = lu.solve(&grad);

        // Step halving keeps the (concave) log-likelihood monotone.
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            let (cand_ll, cand_grad, cand_info) = evaluate(x, y, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - T::lit(1e-12) * ll.abs().max(T::one()) {
                (beta, ll, grad, info) = (cand, cand_ll, cand_grad, cand_info);
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        if !accepted {
            break;
        }
        if max_abs(&beta) > bound * T::lit(2.0) {
            break;
        }
    }

    let m = max_abs(&beta);
    if m > bound {
        return Err(FitError::Separation { max_abs: m.as_f64() });
    }
    if info.lu().is_none() {
        return Err(FitError::Singular);
    }
    if !converged {
        log::warn!("logistic fit stopped after {iterations} iterations with mean-score max-norm {}", max_abs(&grad) / nn);
    }
    Ok(LogisticModel { coefficients: beta, converged, iterations, log_likelihood: ll })
}
