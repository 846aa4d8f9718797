//! Geometry of the product manifold `R^l x O(n) x D(n-m)`.
//!
//! A tangent vector at `(c, Q, Lambda)` is `(dc, Q Omega, dLambda)` with
//! `Omega` skew-symmetric. [`TangentVector`] stores `Omega` itself through its
//! strict upper triangle, so skewness holds by construction and the metric
//! does not depend on `Q`:
//!
//! ```text
//! g(u, v) = dc_u . dc_v + tr(Omega_u^T Omega_v) + dlambda_u . dlambda_v
//! ```
//!
//! The retraction is `(c + t dc, qf(Q + t Q Omega), lambda + t dlambda)` where
//! `qf` is the orthogonal QR factor normalized to a positive-diagonal `R`.

use nalgebra::{DMatrix, DVector};

use crate::cg::CgVector;
use crate::{Error, Result};

/// Number of strictly upper triangular entries of an `n x n` matrix.
pub fn skew_dim(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of entry `(i, j)`, `i < j`, in the stacked strict upper triangle.
///
/// Columns are stacked left to right, so `(0,1), (0,2), (1,2), (0,3), ...`.
#[inline]
pub fn skew_index(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

/// Inverse of [`skew_dim`]; `None` when `len` is not a triangular number.
pub fn order_from_skew_dim(len: usize) -> Option<usize> {
    let mut n = 1usize;
    loop {
        let d = skew_dim(n);
        if d == len {
            return Some(n);
        }
        if d > len {
            return None;
        }
        n += 1;
    }
}

/// A point `X = (c, Q, Lambda)`; `lambda` holds the diagonal of `Lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

/// Orthogonality tolerance accepted by [`ManifoldPoint::new`].
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

impl ManifoldPoint {
    /// Builds a point, checking that `q` is square and orthogonal.
    pub fn new(c: DVector<f64>, q: DMatrix<f64>, lambda: DVector<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::dims("Q columns", q.nrows(), q.ncols()));
        }
        if lambda.len() > q.nrows() {
            return Err(Error::dims("lambda length", q.nrows(), lambda.len()));
        }
        let point = ManifoldPoint { c, q, lambda };
        let drift = point.orthogonality_residual();
        if !(drift <= ORTHOGONALITY_TOL * (point.n().max(1) as f64)) {
            return Err(Error::InvalidProblem(format!(
                "Q is not orthogonal: ||Q^T Q - I||_F = {drift:e}"
            )));
        }
        Ok(point)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn l(&self) -> usize {
        self.c.len()
    }

    /// Number of free eigenvalues, `n - m`.
    pub fn n_free(&self) -> usize {
        self.lambda.len()
    }

    /// `||Q^T Q - I||_F`.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.n();
        (self.q.transpose() * &self.q - DMatrix::<f64>::identity(n, n)).norm()
    }

    /// Dimension of the tangent space, `l + n(n-1)/2 + (n-m)`.
    pub fn tangent_dim(&self) -> usize {
        self.l() + skew_dim(self.n()) + self.n_free()
    }

    pub fn zero_tangent(&self) -> TangentVector {
        TangentVector::zeros(self.l(), self.n(), self.n_free())
    }

    fn check_tangent(&self, u: &TangentVector) -> Result<()> {
        if u.dc.len() != self.l() {
            return Err(Error::dims("tangent dc", self.l(), u.dc.len()));
        }
        if u.n != self.n() {
            return Err(Error::dims("tangent omega order", self.n(), u.n));
        }
        if u.dlambda.len() != self.n_free() {
            return Err(Error::dims("tangent dlambda", self.n_free(), u.dlambda.len()));
        }
        Ok(())
    }
}

/// Tangent vector `(dc, Omega, dlambda)` in reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub dc: DVector<f64>,
    /// Strict upper triangle of `Omega`, ordered by [`skew_index`].
    omega_upper: DVector<f64>,
    pub dlambda: DVector<f64>,
    n: usize,
}

impl TangentVector {
    pub fn zeros(l: usize, n: usize, n_free: usize) -> Self {
        TangentVector {
            dc: DVector::zeros(l),
            omega_upper: DVector::zeros(skew_dim(n)),
            dlambda: DVector::zeros(n_free),
            n,
        }
    }

    /// Builds from the stacked strict upper triangle of `Omega`.
    pub fn from_parts(
        dc: DVector<f64>,
        n: usize,
        omega_upper: DVector<f64>,
        dlambda: DVector<f64>,
    ) -> Result<Self> {
        if omega_upper.len() != skew_dim(n) {
            return Err(Error::dims("omega coordinates", skew_dim(n), omega_upper.len()));
        }
        Ok(TangentVector {
            dc,
            omega_upper,
            dlambda,
            n,
        })
    }

    /// Builds from a full `Omega`; only the strict upper triangle is read.
    pub fn from_skew(dc: DVector<f64>, omega: &DMatrix<f64>, dlambda: DVector<f64>) -> Result<Self> {
        let n = omega.nrows();
        if omega.ncols() != n {
            return Err(Error::dims("omega columns", n, omega.ncols()));
        }
        let mut upper = DVector::zeros(skew_dim(n));
        for j in 1..n {
            for i in 0..j {
                upper[skew_index(i, j)] = omega[(i, j)];
            }
        }
        Ok(TangentVector {
            dc,
            omega_upper: upper,
            dlambda,
            n,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn omega_upper(&self) -> &DVector<f64> {
        &self.omega_upper
    }

    pub fn omega_upper_mut(&mut self) -> &mut DVector<f64> {
        &mut self.omega_upper
    }

    /// `Omega_ij` for any `i, j`.
    #[inline]
    pub fn omega_entry(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Less => self.omega_upper[skew_index(i, j)],
            Greater => -self.omega_upper[skew_index(j, i)],
            Equal => 0.0,
        }
    }

    /// Materializes the full skew-symmetric `Omega`.
    pub fn omega(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for j in 1..n {
            for i in 0..j {
                let w = self.omega_upper[skew_index(i, j)];
                m[(i, j)] = w;
                m[(j, i)] = -w;
            }
        }
        m
    }

    /// Total number of reduced coordinates.
    pub fn dim(&self) -> usize {
        self.dc.len() + self.omega_upper.len() + self.dlambda.len()
    }

    /// Flattens to `[dc; omega_upper; dlambda]`.
    pub fn to_coords(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        let (l, s) = (self.dc.len(), self.omega_upper.len());
        v.rows_mut(0, l).copy_from(&self.dc);
        v.rows_mut(l, s).copy_from(&self.omega_upper);
        v.rows_mut(l + s, self.dlambda.len()).copy_from(&self.dlambda);
        v
    }

    /// Inverse of [`TangentVector::to_coords`].
    pub fn from_coords(l: usize, n: usize, n_free: usize, v: &DVector<f64>) -> Result<Self> {
        let s = skew_dim(n);
        if v.len() != l + s + n_free {
            return Err(Error::dims("tangent coordinates", l + s + n_free, v.len()));
        }
        Ok(TangentVector {
            dc: v.rows(0, l).into_owned(),
            omega_upper: v.rows(l, s).into_owned(),
            dlambda: v.rows(l + s, n_free).into_owned(),
            n,
        })
    }

    /// The `k`-th canonical basis vector in the ordering of [`Self::to_coords`].
    ///
    /// Note this is orthogonal but not orthonormal for the metric: an
    /// `Omega` coordinate has squared norm 2.
    pub fn basis(l: usize, n: usize, n_free: usize, k: usize) -> Self {
        let mut v = DVector::zeros(l + skew_dim(n) + n_free);
        v[k] = 1.0;
        Self::from_coords(l, n, n_free, &v).expect("sized above")
    }

    /// Metric pairing without dimension checks.
    #[inline]
    pub fn dot(&self, other: &TangentVector) -> f64 {
        self.dc.dot(&other.dc)
            + 2.0 * self.omega_upper.dot(&other.omega_upper)
            + self.dlambda.dot(&other.dlambda)
    }

    pub fn is_zero(&self) -> bool {
        self.dc.iter().all(|&v| v == 0.0)
            && self.omega_upper.iter().all(|&v| v == 0.0)
            && self.dlambda.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, alpha: f64) -> TangentVector {
        let mut out = self.clone();
        out.scale_mut(alpha);
        out
    }

    /// `self + alpha * x`.
    pub fn plus_scaled(&self, alpha: f64, x: &TangentVector) -> TangentVector {
        let mut out = self.clone();
        out.axpy(alpha, x);
        out
    }
}

impl CgVector for TangentVector {
    fn zeros_like(&self) -> Self {
        TangentVector::zeros(self.dc.len(), self.n, self.dlambda.len())
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        self.dc.axpy(alpha, &x.dc, 1.0);
        self.omega_upper.axpy(alpha, &x.omega_upper, 1.0);
        self.dlambda.axpy(alpha, &x.dlambda, 1.0);
    }

    fn scale_mut(&mut self, alpha: f64) {
        self.dc *= alpha;
        self.omega_upper *= alpha;
        self.dlambda *= alpha;
    }

    fn is_finite(&self) -> bool {
        self.dc.iter().all(|v| v.is_finite())
            && self.omega_upper.iter().all(|v| v.is_finite())
            && self.dlambda.iter().all(|v| v.is_finite())
    }
}

/// Riemannian metric `g_x(u, v)`.
pub fn inner(x: &ManifoldPoint, u: &TangentVector, v: &TangentVector) -> Result<f64> {
    x.check_tangent(u)?;
    x.check_tangent(v)?;
    Ok(u.dot(v))
}

/// Induced norm `sqrt(g_x(u, u))`.
pub fn norm(x: &ManifoldPoint, u: &TangentVector) -> Result<f64> {
    Ok(inner(x, u, u)?.max(0.0).sqrt())
}

/// Orthogonal QR factor with the triangular factor's diagonal made positive.
pub fn qf(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for j in 0..n.min(a.ncols()) {
        let rjj = r[(j, j)];
        if !rjj.is_finite() || rjj.abs() <= f64::EPSILON * scale * 1e-3 {
            return Err(Error::RetractionFailure);
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// QR retraction `R_x(t u)`.
pub fn retract(x: &ManifoldPoint, u: &TangentVector, t: f64) -> Result<ManifoldPoint> {
    x.check_tangent(u)?;
    let c = &x.c + &u.dc * t;
    let lambda = &x.lambda + &u.dlambda * t;
    if t == 0.0 || u.omega_upper.iter().all(|&w| w == 0.0) {
        return Ok(ManifoldPoint {
            c,
            q: x.q.clone(),
            lambda,
        });
    }
    // Q + t Q Omega = Q (I + t Omega)
    let n = x.n();
    let mut step = u.omega() * t;
    for i in 0..n {
        step[(i, i)] += 1.0;
    }
    let q = qf(&(&x.q * step))?;
    Ok(ManifoldPoint { c, q, lambda })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    pub fn random_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
    }

    pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
        qf(&random_matrix(rng, n, n)).unwrap()
    }

    pub fn random_point<R: Rng>(rng: &mut R, l: usize, n: usize, n_free: usize) -> ManifoldPoint {
        ManifoldPoint::new(
            random_vector(rng, l),
            random_orthogonal(rng, n),
            random_vector(rng, n_free),
        )
        .unwrap()
    }

    pub fn random_tangent<R: Rng>(rng: &mut R, l: usize, n: usize, n_free: usize) -> TangentVector {
        TangentVector::from_parts(
            random_vector(rng, l),
            n,
            random_vector(rng, skew_dim(n)),
            random_vector(rng, n_free),
        )
        .unwrap()
    }
}
