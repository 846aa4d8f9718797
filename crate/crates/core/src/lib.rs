//! Least-squares inverse eigenvalue problems solved by a preconditioned
//! Riemannian inexact Gauss-Newton method.
//!
//! Given symmetric `A_0, ..., A_l` and prescribed eigenvalues
//! `lambda*_1 <= ... <= lambda*_m`, find `c` so that
//! `A(c) = A_0 + sum_i c_i A_i` has those eigenvalues in the least-squares
//! sense. The search runs on the product manifold `R^l x O(n) x D(n-m)` over
//! the residual `H(c, Q, Lambda) = A(c) - Q blkdiag(Lambda*, Lambda) Q^T`.
//!
//! Module map:
//!
//! - [`manifold`]: points, tangent vectors, metric and QR retraction.
//! - [`model`]: residual map, its differential and adjoint, gradient.
//! - [`cg`]: conjugate gradients over an abstract inner-product space.
//! - [`preconditioner`]: the centered preconditioner and its
//!   Sherman-Morrison-Woodbury inverse.
//! - [`solver`]: the outer Gauss-Newton driver with Armijo backtracking.
//! - [`diagnostics`]: full-rank test for the differential.
//! - [`problems`]: instance generators and the starting-point recipe.
//! - [`cli`]: experiment runner, JSON/CSV formats and the command line.

pub mod cg;
pub mod cli;
pub mod diagnostics;
mod error;
pub mod manifold;
pub mod model;
pub mod preconditioner;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use manifold::{ManifoldPoint, TangentVector};
pub use model::{AmbientSym, ProblemData};
pub use solver::{SolverConfig, SolverReport, SolverStatus};
