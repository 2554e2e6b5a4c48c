//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Maximum Taylor terms before the exponential series is declared divergent.
const EXP_MAX_TERMS: usize = 64;

/// Matrix exponential by scaling-and-squaring with a Taylor series.
///
/// The input is scaled by `2^-s` until its infinity norm is at most 0.5,
/// the series is summed until the term norm falls below `1e-16` relative to
/// the partial sum, and the result is squared `s` times.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expm requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParams("expm: non-finite entries".into()));
    }

    let norm = inf_norm(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut tail = f64::INFINITY;
    for k in 1..=EXP_MAX_TERMS {
        term = (&term * &scaled) / k as f64;
        sum += &term;
        tail = inf_norm(&term);
        if tail <= 1e-16 * inf_norm(&sum).max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ExpNoConvergence {
            terms: EXP_MAX_TERMS,
            tail,
        });
    }

    let mut result = sum;
    for _ in 0..s {
        result = &result * &result;
    }
    Ok(result)
}

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Symmetrize in place: `(A + A^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let t = a.transpose();
    *a += t;
    *a *= 0.5;
}

/// Cholesky factorization of a symmetric positive-definite matrix, with a
/// descriptive error naming `what` on failure.
pub fn cholesky_spd(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Log-determinant of the matrix behind a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Condition estimate of a symmetric matrix as the ratio of extreme
/// absolute eigenvalues. Returns infinity for a singular matrix.
pub fn sym_condition(a: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(a);
    let max = ev.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let min = ev.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
