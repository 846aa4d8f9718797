//! Conjugate gradients for self-adjoint positive semidefinite operators on an
//! abstract inner-product space.
//!
//! The space is described by [`CgVector`] (vector arithmetic) plus an inner
//! product closure, so the same routine runs on tangent vectors and on plain
//! `DVector`s in tests.

use nalgebra::DVector;

use crate::{Error, Result};

/// Minimal vector-space interface needed by CG.
pub trait CgVector: Clone {
    fn zeros_like(&self) -> Self;
    /// `self += alpha * x`
    fn axpy(&mut self, alpha: f64, x: &Self);
    fn scale_mut(&mut self, alpha: f64);
    fn is_finite(&self) -> bool;
}

impl CgVector for DVector<f64> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        nalgebra::Matrix::axpy(self, alpha, x, 1.0);
    }

    fn scale_mut(&mut self, alpha: f64) {
        *self *= alpha;
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iters: usize,
    /// Stop once the (preconditioned) residual norm drops below
    /// `rel_tol` times its initial value.
    pub rel_tol: f64,
    pub abort_on_nonpositive_curvature: bool,
}

impl CgConfig {
    pub fn new(max_iters: usize, rel_tol: f64) -> Result<Self> {
        let cfg = CgConfig {
            max_iters,
            rel_tol,
            abort_on_nonpositive_curvature: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("CG max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "CG rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStatus {
    Converged,
    MaxIters,
    NonpositiveCurvature,
}

#[derive(Debug, Clone)]
pub struct CgOutcome<V> {
    pub solution: V,
    pub iterations: usize,
    /// Final (preconditioned) residual norm.
    pub residual_norm: f64,
    pub status: CgStatus,
    /// Residual norm before the first iteration and after each one.
    pub residual_history: Vec<f64>,
}

/// Solves `Op x = rhs` starting from `x = 0`.
///
/// With a preconditioner `M^{-1}` the residual is measured in the
/// `sqrt(<r, M^{-1} r>)` norm. If the operator produces non-finite values the
/// solve fails with [`Error::NumericFailure`].
pub fn solve<V, A, I>(
    apply_op: A,
    apply_prec: Option<&mut dyn FnMut(&V) -> V>,
    rhs: &V,
    inner: I,
    cfg: &CgConfig,
) -> Result<CgOutcome<V>>
where
    V: CgVector,
    A: FnMut(&V) -> V,
    I: Fn(&V, &V) -> f64,
{
    run(apply_op, apply_prec, rhs, inner, cfg, None)
}

/// Like [`solve`], but once the residual test passes the iterate is also
/// handed to `accept`; iteration continues until `accept` returns true, the
/// residual falls to rounding level, or `max_iters` is reached.
pub fn solve_monitored<V, A, I>(
    apply_op: A,
    apply_prec: Option<&mut dyn FnMut(&V) -> V>,
    rhs: &V,
    inner: I,
    cfg: &CgConfig,
    accept: &mut dyn FnMut(&V) -> bool,
) -> Result<CgOutcome<V>>
where
    V: CgVector,
    A: FnMut(&V) -> V,
    I: Fn(&V, &V) -> f64,
{
    run(apply_op, apply_prec, rhs, inner, cfg, Some(accept))
}

fn run<V, A, I>(
    mut apply_op: A,
    mut apply_prec: Option<&mut dyn FnMut(&V) -> V>,
    rhs: &V,
    inner: I,
    cfg: &CgConfig,
    mut accept: Option<&mut dyn FnMut(&V) -> bool>,
) -> Result<CgOutcome<V>>
where
    V: CgVector,
    A: FnMut(&V) -> V,
    I: Fn(&V, &V) -> f64,
{
    cfg.validate()?;
    let mut x = rhs.zeros_like();
    let mut r = rhs.clone();
    let mut z = match apply_prec.as_mut() {
        Some(p) => p(&r),
        None => r.clone(),
    };
    let mut rz = inner(&r, &z);
    if !rz.is_finite() {
        return Err(Error::NumericFailure("non-finite right-hand side".into()));
    }
    let res0 = rz.max(0.0).sqrt();
    let mut history = vec![res0];
    if res0 == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual_norm: 0.0,
            status: CgStatus::Converged,
            residual_history: history,
        });
    }
    let target = cfg.rel_tol * res0;
    let floor = f64::EPSILON * res0;
    let mut d = z.clone();
    let mut res = res0;

    for k in 0..cfg.max_iters {
        let q = apply_op(&d);
        if !q.is_finite() {
            return Err(Error::NumericFailure(format!(
                "operator produced non-finite values at CG iteration {k}"
            )));
        }
        let curvature = inner(&d, &q);
        if curvature <= 0.0 && (cfg.abort_on_nonpositive_curvature || curvature == 0.0) {
            return Ok(CgOutcome {
                solution: x,
                iterations: k,
                residual_norm: res,
                status: CgStatus::NonpositiveCurvature,
                residual_history: history,
            });
        }
        let alpha = rz / curvature;
        x.axpy(alpha, &d);
        r.axpy(-alpha, &q);
        z = match apply_prec.as_mut() {
            Some(p) => p(&r),
            None => r.clone(),
        };
        let rz_next = inner(&r, &z);
        if !rz_next.is_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite residual at CG iteration {k}"
            )));
        }
        res = rz_next.max(0.0).sqrt();
        history.push(res);
        let done = res <= target
            && (res <= floor || accept.as_mut().is_none_or(|f| f(&x)));
        if done {
            return Ok(CgOutcome {
                solution: x,
                iterations: k + 1,
                residual_norm: res,
                status: CgStatus::Converged,
                residual_history: history,
            });
        }
        let beta = rz_next / rz;
        rz = rz_next;
        d.scale_mut(beta);
        d.axpy(1.0, &z);
    }

    Ok(CgOutcome {
        solution: x,
        iterations: cfg.max_iters,
        residual_norm: res,
        status: CgStatus::MaxIters,
        residual_history: history,
    })
}
