//! Thin helpers over `faer` shared by the solvers.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};

use crate::error::{Error, Result};

/// `a * b` computed sequentially.
pub fn mul(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a.as_ref(),
        b.as_ref(),
        1.0,
        Par::Seq,
    );
    out
}

/// `a * bᵀ` computed sequentially.
pub fn mul_transpose(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.nrows());
    matmul(
        out.as_mut(),
        Accum::Replace,
        a.as_ref(),
        b.as_ref().transpose(),
        1.0,
        Par::Seq,
    );
    out
}

pub fn mat_vec(a: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), v.len());
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * v[j]).sum())
        .collect()
}

pub fn quad_form(a: &Mat<f64>, v: &[f64]) -> f64 {
    dot(v, &mat_vec(a, v))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Replaces `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky.
pub fn spd_solve(a: &Mat<f64>, b: &[f64], context: &'static str) -> Result<Vec<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension {
            context,
            expected: a.nrows(),
            actual: b.len(),
        });
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| Error::Singular { context })?;
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    let out: Vec<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { context });
    }
    Ok(out)
}

/// Solves a general square system by partial-pivot LU.
pub fn lu_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&rhs);
    let out: Vec<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("singular linear system".into()));
    }
    Ok(out)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    let mut ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Eigen-decomposition `a = U diag(s) Uᵀ` of a symmetric matrix.
pub fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let values: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

pub fn min_eigenvalue(a: &Mat<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.first().copied().unwrap_or(0.0))
}

pub fn max_asymmetry(a: &Mat<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
