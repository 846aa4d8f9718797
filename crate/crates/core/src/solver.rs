//! Riemannian inexact Gauss-Newton driver.
//!
//! Each outer iteration at `X_k`:
//!
//! 1. Solve `DH^* DH [dX] = -grad h` approximately with CG (or the
//!    preconditioned system `DH^* M^{-1} DH [dX] = -DH^* M^{-1} [H]`), and
//!    accept the candidate only if
//!    `||DH^* DH [dX] + grad h|| <= eta_k ||grad h||` and
//!    `<grad h, dX> <= -eta_k <dX, dX>` with `eta_k = min(eta_max, ||grad h||)`.
//!    Otherwise use `dX = -grad h`.
//! 2. Backtrack `t = beta^l` until the Armijo condition
//!    `h(R(t dX)) - h(X_k) <= sigma t <grad h, dX>` holds.
//!
//! Iteration stops once `||grad h|| < zeta`.

use serde::{Deserialize, Serialize};

use crate::cg::{self, CgConfig, CgStatus, CgVector};
use crate::manifold::{retract, ManifoldPoint, TangentVector};
use crate::model::{cost, Linearization, ProblemData};
use crate::preconditioner::{PrecondState, DEFAULT_T_HAT};
use crate::{Error, Result};

/// Maximum backtracking exponent tried by the line search.
pub const MAX_BACKTRACKS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    /// Inner iteration cap; `None` means `n^3`.
    pub max_iters: Option<usize>,
    /// Inner relative tolerance; `None` means the forcing term `eta_k`.
    pub rel_tol: Option<f64>,
    pub abort_on_nonpositive_curvature: bool,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            max_iters: None,
            rel_tol: None,
            abort_on_nonpositive_curvature: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Backtracking factor, in (0, 1).
    pub beta: f64,
    /// Armijo slope fraction, in (0, 1/2).
    pub sigma: f64,
    /// Cap on the forcing term, in (0, 1).
    pub eta_max: f64,
    /// Stop when `||grad h|| < grad_tol`.
    pub grad_tol: f64,
    pub max_outer: usize,
    pub cg: CgSettings,
    pub use_preconditioner: bool,
    pub t_hat: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            beta: 0.5,
            sigma: 1e-4,
            eta_max: 0.01,
            grad_tol: 1e-8,
            max_outer: 100_000,
            cg: CgSettings::default(),
            use_preconditioner: true,
            t_hat: DEFAULT_T_HAT,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return bad(format!("sigma must lie in (0, 1/2), got {}", self.sigma));
        }
        if !(self.eta_max > 0.0 && self.eta_max < 1.0) {
            return bad(format!("eta_max must lie in (0, 1), got {}", self.eta_max));
        }
        if !(self.grad_tol >= 0.0 && self.grad_tol.is_finite()) {
            return bad(format!("grad_tol must be finite and >= 0, got {}", self.grad_tol));
        }
        if self.use_preconditioner && !(self.t_hat > 0.0 && self.t_hat.is_finite()) {
            return bad(format!("t_hat must be positive, got {}", self.t_hat));
        }
        if self.cg.max_iters == Some(0) {
            return bad("CG max_iters must be >= 1".into());
        }
        if let Some(tol) = self.cg.rel_tol {
            if !(tol > 0.0 && tol < 1.0) {
                return bad(format!("CG rel_tol must lie in (0, 1), got {tol}"));
            }
        }
        Ok(())
    }

    fn cg_max_iters(&self, n: usize) -> usize {
        self.cg.max_iters.unwrap_or_else(|| n.saturating_pow(3)).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxOuter,
    LineSearchFailure,
}

/// State at one iterate together with the step that produced it. The entry
/// for the starting point has zero inner iterations and no step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub res_norm: f64,
    pub cg_iters: usize,
    pub step_exponent: u32,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub iterations: usize,
    /// Number of cost evaluations, including the one at the start.
    pub function_evals: usize,
    pub total_cg_iters: usize,
    pub trace: Vec<TraceEntry>,
    #[serde(with = "crate::cli::point_serde")]
    pub final_point: ManifoldPoint,
}

impl SolverReport {
    pub fn final_entry(&self) -> &TraceEntry {
        self.trace.last().expect("trace always holds the starting point")
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.final_entry().grad_norm
    }

    pub fn final_residual_norm(&self) -> f64 {
        self.final_entry().res_norm
    }

    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// Result of the direction computation.
#[derive(Debug, Clone)]
pub struct Direction {
    pub direction: TangentVector,
    pub inner_iters: usize,
    pub fallback: bool,
    pub cg_status: Option<CgStatus>,
}

/// Forcing term `eta_k = min(eta_max, ||grad h||)`.
pub fn forcing_term(eta_max: f64, grad_norm: f64) -> f64 {
    eta_max.min(grad_norm)
}

/// Checks both inexactness conditions on the unpreconditioned normal equation.
pub fn acceptable_direction(lin: &Linearization, dx: &TangentVector, eta: f64) -> bool {
    if dx.is_zero() || !dx.is_finite() {
        return false;
    }
    let grad = lin.gradient();
    let gnorm = grad.dot(grad).sqrt();
    let mut res = lin.gn_apply(dx);
    res.axpy(1.0, grad);
    let tol1 = res.dot(&res).sqrt() <= eta * gnorm;
    let tol2 = grad.dot(dx) <= -eta * dx.dot(dx);
    tol1 && tol2
}

/// Gauss-Newton direction with the steepest-descent fallback.
pub fn compute_direction(
    lin: &Linearization,
    prec: Option<&PrecondState>,
    cfg: &SolverConfig,
) -> Result<Direction> {
    let grad = lin.gradient();
    let gnorm = grad.dot(grad).sqrt();
    let eta = forcing_term(cfg.eta_max, gnorm);
    let fallback = || Direction {
        direction: grad.scaled(-1.0),
        inner_iters: 0,
        fallback: true,
        cg_status: None,
    };
    let rel_tol = cfg.cg.rel_tol.unwrap_or(eta);
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Ok(fallback());
    }
    let cg_cfg = CgConfig {
        max_iters: cfg.cg_max_iters(lin.n),
        rel_tol,
        abort_on_nonpositive_curvature: cfg.cg.abort_on_nonpositive_curvature,
    };
    let dot = |a: &TangentVector, b: &TangentVector| a.dot(b);
    let mut accept = |dx: &TangentVector| acceptable_direction(lin, dx, eta);
    let outcome = match prec {
        None => cg::solve_monitored(
            |u| lin.gn_apply(u),
            None,
            &grad.scaled(-1.0),
            dot,
            &cg_cfg,
            &mut accept,
        )?,
        Some(pc) => {
            let rhs = lin
                .adjoint_rotated(&pc.apply_inverse_rotated(&lin.rotated_residual))
                .scaled(-1.0);
            cg::solve_monitored(
                |u| lin.adjoint_rotated(&pc.apply_inverse_rotated(&lin.diff_rotated(u))),
                None,
                &rhs,
                dot,
                &cg_cfg,
                &mut accept,
            )?
        }
    };
    if acceptable_direction(lin, &outcome.solution, eta) {
        Ok(Direction {
            direction: outcome.solution,
            inner_iters: outcome.iterations,
            fallback: false,
            cg_status: Some(outcome.status),
        })
    } else {
        Ok(Direction {
            inner_iters: outcome.iterations,
            cg_status: Some(outcome.status),
            ..fallback()
        })
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub step_exponent: u32,
    pub next: ManifoldPoint,
    pub next_cost: f64,
    /// Cost evaluations spent, one per trial step.
    pub evaluations: usize,
}

/// Armijo backtracking along `direction` from `x`.
pub fn line_search(
    p: &ProblemData,
    x: &ManifoldPoint,
    current_cost: f64,
    direction: &TangentVector,
    grad: &TangentVector,
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome> {
    let slope = grad.dot(direction);
    if !(slope < 0.0) {
        return Err(Error::NumericFailure(format!(
            "line search needs a descent direction, slope = {slope:e}"
        )));
    }
    let mut evaluations = 0;
    let mut t = 1.0;
    for l in 0..=MAX_BACKTRACKS {
        match retract(x, direction, t) {
            Ok(y) => {
                let h = cost(p, &y)?;
                evaluations += 1;
                if h - current_cost <= cfg.sigma * t * slope {
                    return Ok(LineSearchOutcome {
                        step_exponent: l,
                        next: y,
                        next_cost: h,
                        evaluations,
                    });
                }
            }
            Err(Error::RetractionFailure) => {}
            Err(e) => return Err(e),
        }
        t *= cfg.beta;
    }
    Err(Error::LineSearchFailure(MAX_BACKTRACKS))
}

/// Runs the method from `x0`.
pub fn solve(p: &ProblemData, x0: &ManifoldPoint, cfg: &SolverConfig) -> Result<SolverReport> {
    cfg.validate()?;
    p.check_point(x0)?;
    let mut x = x0.clone();
    let mut trace = Vec::new();
    let mut function_evals = 1;
    let mut total_cg_iters = 0;
    let mut last_step = (0usize, 0u32, false);
    let mut k = 0;

    let status = loop {
        let lin = Linearization::new(p, &x)?;
        let grad_norm = lin.gradient().dot(lin.gradient()).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NumericFailure(format!(
                "gradient is not finite at iteration {k}"
            )));
        }
        trace.push(TraceEntry {
            iter: k,
            cost: lin.cost(),
            grad_norm,
            res_norm: lin.residual_norm(),
            cg_iters: last_step.0,
            step_exponent: last_step.1,
            fallback: last_step.2,
        });
        if grad_norm < cfg.grad_tol {
            break SolverStatus::Converged;
        }
        if k >= cfg.max_outer {
            break SolverStatus::MaxOuter;
        }

        let prec = if cfg.use_preconditioner {
            Some(PrecondState::from_linearization(p, &x, &lin, cfg.t_hat)?)
        } else {
            None
        };
        let dir = compute_direction(&lin, prec.as_ref(), cfg)?;
        total_cg_iters += dir.inner_iters;
        let step = match line_search(p, &x, lin.cost(), &dir.direction, lin.gradient(), cfg) {
            Ok(step) => step,
            Err(Error::LineSearchFailure(_)) => {
                function_evals += MAX_BACKTRACKS as usize + 1;
                break SolverStatus::LineSearchFailure;
            }
            Err(e) => return Err(e),
        };
        function_evals += step.evaluations;
        last_step = (dir.inner_iters, step.step_exponent, dir.fallback);
        x = step.next;
        k += 1;
    };

    Ok(SolverReport {
        status,
        iterations: k,
        function_evals,
        total_cg_iters,
        trace,
        final_point: x,
    })
}
