//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(I - scale * m) x = rhs` by LU factorization.
pub(crate) fn solve_resolvent(
    m: &DMatrix<f64>,
    scale: f64,
    rhs: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    resolvent(m, scale).lu().solve(rhs).ok_or(Error::Singular(what))
}

/// Matrix right-hand side variant of [`solve_resolvent`].
pub(crate) fn solve_resolvent_matrix(
    m: &DMatrix<f64>,
    scale: f64,
    rhs: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    resolvent(m, scale).lu().solve(rhs).ok_or(Error::Singular(what))
}

fn resolvent(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::identity(n, n) - m * scale
}

/// Sup norm of a vector.
pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Pairwise (cascade) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let (left, right) = xs.split_at(xs.len() / 2);
        pairwise_sum(left) + pairwise_sum(right)
    }
}

/// Integer matrix power by repeated squaring; `m^0` is the identity.
pub fn matrix_power(m: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = m.clone();
    let mut e = t;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}
