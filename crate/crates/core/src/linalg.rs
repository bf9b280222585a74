//! Small dense helpers over nalgebra shared by the fitters.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorisation of a symmetric matrix, retrying with a ridge of
/// `ridge_scale · (trace / n)` on the diagonal when the plain factorisation
/// fails. Returns the factor and whether the ridge was needed.
pub fn cholesky_with_ridge(
    a: &DMatrix<f64>,
    ridge_scale: f64,
) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, false));
    }
    let n = a.nrows().max(1) as f64;
    let mut scale = (a.trace().abs() / n).max(1.0) * ridge_scale;
    for _ in 0..12 {
        let mut b = a.clone();
        for i in 0..a.nrows() {
            b[(i, i)] += scale;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok((c, true));
        }
        scale *= 100.0;
    }
    Err(Error::Numerical("matrix is not positive definite even after ridging".into()))
}

/// Solves `a x = rhs` for symmetric positive (semi)definite `a`, ridging when
/// needed and warning under `context`.
pub fn spd_solve(a: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let (chol, ridged) = cholesky_with_ridge(a, 1e-10)?;
    if ridged {
        warn!("{context}: system not positive definite, ridge added");
    }
    Ok(chol.solve(rhs))
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse_logdet(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok((inv, logdet))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x), accurate for large |x|.
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// ln Γ(n + 1) for small non-negative integers; used for binomial and
/// multinomial normalising constants.
pub fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}
