//! Full-rank test for the differential `DH(X)`.
//!
//! In coordinates `(dc, w, dlambda)` with `Omega = skew_hat(w)` the vectorized
//! differential is the `n^2 x (l + n(n-1)/2 + (n-m))` matrix
//!
//! ```text
//! [ A_hat,  (Q x Q)(I x Lbar - Lbar x I) P_hat,  (QP x QP) G ]
//! ```
//!
//! Columns are generated one at a time as `vec(A_i)`,
//! `vec(Q (Lbar E - E Lbar) Q^T)` with `E = skew_hat(e_k)`, and
//! `vec(-q_j q_j^T)` for the free eigenvalue columns of `Q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::manifold::{order_from_skew_dim, skew_dim, skew_index, ManifoldPoint};
use crate::model::ProblemData;
use crate::{Error, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_N: usize = 64;

/// Stacks the strict upper triangle of `w` column by column.
pub fn vec_hat(w: &DMatrix<f64>) -> DVector<f64> {
    let n = w.nrows();
    let mut out = DVector::zeros(skew_dim(n));
    for j in 1..n {
        for i in 0..j {
            out[skew_index(i, j)] = w[(i, j)];
        }
    }
    out
}

/// Skew-symmetric matrix whose strict upper triangle is `w`.
pub fn skew_hat(w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = order_from_skew_dim(w.len()).ok_or_else(|| {
        Error::InvalidProblem(format!("length {} is not a triangular number", w.len()))
    })?;
    let mut out = DMatrix::zeros(n, n);
    for j in 1..n {
        for i in 0..j {
            let v = w[skew_index(i, j)];
            out[(i, j)] = v;
            out[(j, i)] = -v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurjectivityReport {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub matrix_rows: usize,
    pub matrix_cols: usize,
    pub numeric_rank: usize,
    pub largest_singular_value: f64,
    pub smallest_singular_value: f64,
    pub rank_tol: f64,
    pub surjective: bool,
}

fn vec_col(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Assembles the vectorized differential column by column.
pub fn surjectivity_matrix(p: &ProblemData, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
    p.check_point(x)?;
    let n = p.n();
    let m = p.m();
    let l = p.l();
    let lam_bar = p.lam_bar(x);
    let cols = l + skew_dim(n) + (n - m);
    let mut out = DMatrix::zeros(n * n, cols);
    for (k, a) in p.parameter_basis().iter().enumerate() {
        out.set_column(k, &vec_col(a));
    }
    let qt = x.q.transpose();
    for j in 1..n {
        for i in 0..j {
            // Lbar E - E Lbar for E = e_i e_j^T - e_j e_i^T
            let mut k = DMatrix::zeros(n, n);
            let g = lam_bar[i] - lam_bar[j];
            k[(i, j)] = g;
            k[(j, i)] = g;
            let col = &x.q * k * &qt;
            out.set_column(l + skew_index(i, j), &vec_col(&col));
        }
    }
    for j in 0..n - m {
        let q = x.q.column(m + j);
        let col = -(q * q.transpose());
        out.set_column(l + skew_dim(n) + j, &vec_col(&col));
    }
    Ok(out)
}

/// Numeric rank of `mat`: singular values at least `rank_tol * sigma_max`.
pub fn numeric_rank(mat: &DMatrix<f64>, rank_tol: f64) -> (usize, f64, f64) {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return (0, 0.0, 0.0);
    }
    let sv = mat.singular_values();
    let max = sv.max();
    let min = sv.min();
    let rank = if max == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s >= rank_tol * max).count()
    };
    (rank, max, min)
}

pub fn surjectivity_check(p: &ProblemData, x: &ManifoldPoint, rank_tol: f64) -> Result<SurjectivityReport> {
    surjectivity_check_with_guard(p, x, rank_tol, DEFAULT_MAX_N)
}

pub fn surjectivity_check_with_guard(
    p: &ProblemData,
    x: &ManifoldPoint,
    rank_tol: f64,
    max_n: usize,
) -> Result<SurjectivityReport> {
    if p.n() > max_n {
        return Err(Error::SizeGuard { n: p.n(), max_n });
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidConfig(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let mat = surjectivity_matrix(p, x)?;
    let (rank, largest, smallest) = numeric_rank(&mat, rank_tol);
    let cols = mat.ncols();
    Ok(SurjectivityReport {
        n: p.n(),
        l: p.l(),
        m: p.m(),
        matrix_rows: mat.nrows(),
        matrix_cols: cols,
        numeric_rank: rank,
        largest_singular_value: largest,
        smallest_singular_value: if cols > mat.nrows() { 0.0 } else { smallest },
        rank_tol,
        surjective: cols <= mat.nrows() && rank == cols,
    })
}
