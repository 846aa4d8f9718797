//! C ABI for the lsiep solver.
//!
//! Instances and reports are opaque handles created by `lsiep_*` functions and
//! released with the matching `_free`. Every fallible call returns an
//! [`LsiepError`]; on failure a description is available from
//! [`lsiep_last_error_message`] on the same thread. Matrices cross the
//! boundary row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lsiep::problems::{initial_point, GeneratedInstance, InstanceSpec};
use lsiep::solver::{self, CgSettings};
use lsiep::{Error, ProblemData, SolverConfig, SolverReport, SolverStatus};
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsiepError {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numeric = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Outcome of a completed solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsiepSolveStatus {
    Converged = 0,
    MaxOuter = 1,
    LineSearchFailure = 2,
}

/// Solver settings. Obtain defaults from [`lsiep_solver_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LsiepSolverConfig {
    pub beta: f64,
    pub sigma: f64,
    pub eta_max: f64,
    pub grad_tol: f64,
    pub max_outer: usize,
    pub use_preconditioner: bool,
    pub t_hat: f64,
    /// Inner CG cap; 0 selects `n^3`.
    pub cg_max_iters: usize,
    /// Inner CG relative tolerance; 0 selects the forcing term.
    pub cg_rel_tol: f64,
}

/// Opaque problem instance with its starting point.
pub struct LsiepInstance {
    inner: GeneratedInstance,
}

/// Opaque solver report.
pub struct LsiepReport {
    inner: SolverReport,
    err_c: Option<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn code_for(e: &Error) -> LsiepError {
    match e {
        Error::DimensionMismatch { .. } => LsiepError::DimensionMismatch,
        Error::InvalidProblem(_) | Error::InvalidConfig(_) | Error::SizeGuard { .. } => {
            LsiepError::InvalidArgument
        }
        Error::RetractionFailure | Error::NumericFailure(_) | Error::LineSearchFailure(_) => {
            LsiepError::Numeric
        }
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => LsiepError::Io,
    }
}

struct Failure(LsiepError, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_for(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LsiepError::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LsiepError {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => LsiepError::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic inside lsiep".into());
            LsiepError::Panic
        }
    }
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    // SAFETY: checked non-null; the caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees `p` is null or a live handle.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and the caller guarantees `len` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            LsiepError::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    // SAFETY: non-null, caller guarantees `len >= src.len()` writable doubles.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `lsiep_*` call on the same thread.
#[no_mangle]
pub extern "C" fn lsiep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn lsiep_solver_config_default() -> LsiepSolverConfig {
    let d = SolverConfig::default();
    LsiepSolverConfig {
        beta: d.beta,
        sigma: d.sigma,
        eta_max: d.eta_max,
        grad_tol: d.grad_tol,
        max_outer: d.max_outer,
        use_preconditioner: d.use_preconditioner,
        t_hat: d.t_hat,
        cg_max_iters: 0,
        cg_rel_tol: 0.0,
    }
}

fn to_config(c: &LsiepSolverConfig) -> SolverConfig {
    SolverConfig {
        beta: c.beta,
        sigma: c.sigma,
        eta_max: c.eta_max,
        grad_tol: c.grad_tol,
        max_outer: c.max_outer,
        use_preconditioner: c.use_preconditioner,
        t_hat: c.t_hat,
        cg: CgSettings {
            max_iters: (c.cg_max_iters > 0).then_some(c.cg_max_iters),
            rel_tol: (c.cg_rel_tol > 0.0).then_some(c.cg_rel_tol),
            ..CgSettings::default()
        },
    }
}

fn from_spec(spec: InstanceSpec, out: *mut *mut LsiepInstance) -> Result<(), Failure> {
    spec.validate()?;
    let inner = spec.generate()?;
    write_out(out, LsiepInstance { inner })
}

/// The 5x5 tridiagonal test problem with its published start.
#[no_mangle]
pub extern "C" fn lsiep_instance_example1(out: *mut *mut LsiepInstance) -> LsiepError {
    guard(|| from_spec(InstanceSpec::example1(), out))
}

/// Discretized inverse Sturm-Liouville problem of order `n` with `l` parameters.
#[no_mangle]
pub extern "C" fn lsiep_instance_sturm_liouville(
    n: usize,
    l: usize,
    out: *mut *mut LsiepInstance,
) -> LsiepError {
    guard(|| from_spec(InstanceSpec::sturm_liouville(n, l), out))
}

/// Seeded random instance.
#[no_mangle]
pub extern "C" fn lsiep_instance_random(
    n: usize,
    l: usize,
    m: usize,
    seed: u64,
    out: *mut *mut LsiepInstance,
) -> LsiepError {
    guard(|| from_spec(InstanceSpec::random(n, l, m, seed), out))
}

/// Instance from raw data. `basis` holds `l + 1` row-major `n x n` symmetric
/// matrices `A_0, ..., A_l`; `targets` holds `m` nondecreasing eigenvalues.
/// The start is built from `A(c0)`; `c0` may be null for `c0 = 0`.
///
/// # Safety
///
/// Pointers must reference at least the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn lsiep_instance_from_data(
    n: usize,
    l: usize,
    m: usize,
    basis: *const f64,
    targets: *const f64,
    c0: *const f64,
    out: *mut *mut LsiepInstance,
) -> LsiepError {
    guard(|| {
        if n == 0 {
            return Err(Failure(LsiepError::InvalidArgument, "n must be positive".into()));
        }
        let per = n.checked_mul(n).ok_or_else(|| {
            Failure(LsiepError::InvalidArgument, "n is too large".into())
        })?;
        let total = per.checked_mul(l + 1).ok_or_else(|| {
            Failure(LsiepError::InvalidArgument, "basis is too large".into())
        })?;
        // SAFETY: forwarded caller contract.
        let data = unsafe { slice(basis, total, "basis")? };
        let t = unsafe { slice(targets, m, "targets")? };
        let mats = data
            .chunks_exact(per)
            .map(|chunk| DMatrix::from_row_slice(n, n, chunk))
            .collect();
        let problem = ProblemData::new(mats, DVector::from_column_slice(t))?;
        let c0 = if c0.is_null() {
            DVector::zeros(l)
        } else {
            DVector::from_column_slice(unsafe { slice(c0, l, "c0")? })
        };
        let x0 = initial_point(&problem, &c0)?;
        write_out(
            out,
            LsiepInstance {
                inner: GeneratedInstance {
                    problem,
                    c_true: None,
                    c0,
                    x0,
                },
            },
        )
    })
}

/// Loads an instance JSON file as written by `lsiep generate`.
///
/// # Safety
///
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lsiep_instance_from_json(
    path: *const c_char,
    out: *mut *mut LsiepInstance,
) -> LsiepError {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        // SAFETY: non-null, NUL-terminated per contract.
        let s = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Failure(LsiepError::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = lsiep::cli::read_instance(Path::new(s))?;
        write_out(out, LsiepInstance { inner })
    })
}

/// Writes the instance dimensions; any output pointer may be null.
///
/// # Safety
///
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsiep_instance_dims(
    inst: *const LsiepInstance,
    n: *mut usize,
    l: *mut usize,
    m: *mut usize,
) -> LsiepError {
    guard(|| {
        let p = &unsafe { borrow(inst, "instance")? }.inner.problem;
        for (dst, v) in [(n, p.n()), (l, p.l()), (m, p.m())] {
            if !dst.is_null() {
                // SAFETY: non-null writable slot per contract.
                unsafe { *dst = v };
            }
        }
        Ok(())
    })
}

/// # Safety
///
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsiep_instance_free(inst: *mut LsiepInstance) {
    if !inst.is_null() {
        // SAFETY: created by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(inst) });
    }
}

/// Runs the solver. `config` may be null for defaults. A run that stops
/// without converging still returns `Ok`; inspect
/// [`lsiep_report_status`].
///
/// # Safety
///
/// `inst` must be a live handle and `config` null or valid.
#[no_mangle]
pub unsafe extern "C" fn lsiep_solve(
    inst: *const LsiepInstance,
    config: *const LsiepSolverConfig,
    out: *mut *mut LsiepReport,
) -> LsiepError {
    guard(|| {
        let inst = &unsafe { borrow(inst, "instance")? }.inner;
        let cfg = match unsafe { config.as_ref() } {
            Some(c) => to_config(c),
            None => SolverConfig::default(),
        };
        let report = solver::solve(&inst.problem, &inst.x0, &cfg)?;
        let err_c = inst.relative_error(&report.final_point.c);
        write_out(out, LsiepReport { inner: report, err_c })
    })
}

/// # Safety
///
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_free(report: *mut LsiepReport) {
    if !report.is_null() {
        // SAFETY: created by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(report) });
    }
}

unsafe fn report<'a>(r: *const LsiepReport) -> Result<&'a LsiepReport, Failure> {
    unsafe { borrow(r, "report") }
}

/// # Safety
///
/// `r` must be a live handle; `status` writable.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_status(
    r: *const LsiepReport,
    status: *mut LsiepSolveStatus,
) -> LsiepError {
    guard(|| {
        let s = match unsafe { report(r)? }.inner.status {
            SolverStatus::Converged => LsiepSolveStatus::Converged,
            SolverStatus::MaxOuter => LsiepSolveStatus::MaxOuter,
            SolverStatus::LineSearchFailure => LsiepSolveStatus::LineSearchFailure,
        };
        if status.is_null() {
            return Err(null("status"));
        }
        unsafe { *status = s };
        Ok(())
    })
}

/// Counters of the run; any output pointer may be null.
///
/// # Safety
///
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_counts(
    r: *const LsiepReport,
    iterations: *mut usize,
    function_evals: *mut usize,
    total_cg_iters: *mut usize,
) -> LsiepError {
    guard(|| {
        let rep = &unsafe { report(r)? }.inner;
        for (dst, v) in [
            (iterations, rep.iterations),
            (function_evals, rep.function_evals),
            (total_cg_iters, rep.total_cg_iters),
        ] {
            if !dst.is_null() {
                unsafe { *dst = v };
            }
        }
        Ok(())
    })
}

/// Final `||H||_F` and `||grad h||`; any output pointer may be null.
///
/// # Safety
///
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_norms(
    r: *const LsiepReport,
    residual_norm: *mut f64,
    grad_norm: *mut f64,
) -> LsiepError {
    guard(|| {
        let rep = &unsafe { report(r)? }.inner;
        for (dst, v) in [
            (residual_norm, rep.final_residual_norm()),
            (grad_norm, rep.final_grad_norm()),
        ] {
            if !dst.is_null() {
                unsafe { *dst = v };
            }
        }
        Ok(())
    })
}

/// Relative parameter error against the known truth. Fails with
/// `InvalidArgument` when the instance has no ground truth.
///
/// # Safety
///
/// `r` must be a live handle; `err_c` writable.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_err_c(r: *const LsiepReport, err_c: *mut f64) -> LsiepError {
    guard(|| {
        let v = unsafe { report(r)? }.err_c.ok_or_else(|| {
            Failure(LsiepError::InvalidArgument, "instance has no ground truth".into())
        })?;
        if err_c.is_null() {
            return Err(null("err_c"));
        }
        unsafe { *err_c = v };
        Ok(())
    })
}

/// Copies the final parameters `c` (length `l`) into `buf`.
///
/// # Safety
///
/// `r` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_c(r: *const LsiepReport, buf: *mut f64, len: usize) -> LsiepError {
    guard(|| copy_out(unsafe { report(r)? }.inner.final_point.c.as_slice(), buf, len))
}

/// Copies the final free eigenvalues (length `n - m`) into `buf`.
///
/// # Safety
///
/// `r` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_lambda(
    r: *const LsiepReport,
    buf: *mut f64,
    len: usize,
) -> LsiepError {
    guard(|| copy_out(unsafe { report(r)? }.inner.final_point.lambda.as_slice(), buf, len))
}

/// Copies the final `Q` (row-major, `n * n` values) into `buf`.
///
/// # Safety
///
/// `r` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_q(r: *const LsiepReport, buf: *mut f64, len: usize) -> LsiepError {
    guard(|| {
        let q = &unsafe { report(r)? }.inner.final_point.q;
        copy_out(q.transpose().as_slice(), buf, len)
    })
}

/// The report as JSON, or null on failure. Release with [`lsiep_string_free`].
///
/// # Safety
///
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsiep_report_to_json(r: *const LsiepReport) -> *mut c_char {
    let mut out = ptr::null_mut();
    let code = guard(|| {
        let text = serde_json::to_string(&unsafe { report(r)? }.inner)
            .map_err(|e| Failure(LsiepError::Io, e.to_string()))?;
        out = CString::new(text)
            .map_err(|e| Failure(LsiepError::Io, e.to_string()))?
            .into_raw();
        Ok(())
    });
    if code == LsiepError::Ok {
        out
    } else {
        ptr::null_mut()
    }
}

/// # Safety
///
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsiep_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}
