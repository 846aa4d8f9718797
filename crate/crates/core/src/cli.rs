//! Experiment runner and command-line front end.
//!
//! File formats:
//!
//! - Problem JSON: `{"n", "l", "m", "target_eigs": [...], "basis": [[...], ...]}`
//!   with each basis matrix flattened row-major. Instance files add optional
//!   `"c0"`, `"c_true"` and an `"x0"` block `{"n", "c", "q", "lambda"}`.
//! - Trace CSV: `iter,cost,grad_norm,res_norm,cg_iters,l_k,fallback`.
//! - Run summary JSON: [`RunSummary`].

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, SurjectivityReport};
use crate::manifold::ManifoldPoint;
use crate::model::ProblemData;
use crate::problems::{initial_point, GeneratedInstance, InstanceKind, InstanceSpec};
use crate::solver::{self, SolverConfig, SolverReport, SolverStatus};
use crate::{Error, Result};

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(n: usize, data: &[f64], what: &'static str) -> Result<DMatrix<f64>> {
    if data.len() != n * n {
        return Err(Error::dims(what, n * n, data.len()));
    }
    Ok(DMatrix::from_row_slice(n, n, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemJson {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub target_eigs: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl ProblemJson {
    pub fn from_problem(p: &ProblemData) -> Self {
        ProblemJson {
            n: p.n(),
            l: p.l(),
            m: p.m(),
            target_eigs: p.target_eigs().as_slice().to_vec(),
            basis: p.basis().iter().map(to_row_major).collect(),
        }
    }

    pub fn to_problem(&self) -> Result<ProblemData> {
        if self.basis.len() != self.l + 1 {
            return Err(Error::dims("basis matrix count (l + 1)", self.l + 1, self.basis.len()));
        }
        if self.target_eigs.len() != self.m {
            return Err(Error::dims("target_eigs length (m)", self.m, self.target_eigs.len()));
        }
        let basis = self
            .basis
            .iter()
            .map(|b| from_row_major(self.n, b, "basis matrix entries"))
            .collect::<Result<Vec<_>>>()?;
        ProblemData::new(basis, DVector::from_vec(self.target_eigs.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointJson {
    pub n: usize,
    pub c: Vec<f64>,
    /// Row-major `Q`.
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl PointJson {
    pub fn from_point(x: &ManifoldPoint) -> Self {
        PointJson {
            n: x.n(),
            c: x.c.as_slice().to_vec(),
            q: to_row_major(&x.q),
            lambda: x.lambda.as_slice().to_vec(),
        }
    }

    pub fn to_point(&self) -> Result<ManifoldPoint> {
        ManifoldPoint::new(
            DVector::from_vec(self.c.clone()),
            from_row_major(self.n, &self.q, "Q entries")?,
            DVector::from_vec(self.lambda.clone()),
        )
    }
}

/// Serde adapter storing a [`ManifoldPoint`] as a [`PointJson`].
pub mod point_serde {
    use super::PointJson;
    use crate::manifold::ManifoldPoint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &ManifoldPoint, s: S) -> Result<S::Ok, S::Error> {
        PointJson::from_point(x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ManifoldPoint, D::Error> {
        PointJson::deserialize(d)?
            .to_point()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJson {
    #[serde(flatten)]
    pub problem: ProblemJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PointJson>,
}

impl InstanceJson {
    pub fn from_instance(inst: &GeneratedInstance) -> Self {
        InstanceJson {
            problem: ProblemJson::from_problem(&inst.problem),
            c0: Some(inst.c0.as_slice().to_vec()),
            c_true: inst.c_true.as_ref().map(|c| c.as_slice().to_vec()),
            x0: Some(PointJson::from_point(&inst.x0)),
        }
    }

    /// Rebuilds the instance. Without an `x0` block the start comes from the
    /// eigendecomposition of `A(c0)`, with `c0 = 0` when absent.
    pub fn to_instance(&self) -> Result<GeneratedInstance> {
        let problem = self.problem.to_problem()?;
        let c0 = match &self.c0 {
            Some(c) => DVector::from_vec(c.clone()),
            None => DVector::zeros(problem.l()),
        };
        let x0 = match &self.x0 {
            Some(x) => x.to_point()?,
            None => initial_point(&problem, &c0)?,
        };
        problem.check_point(&x0)?;
        let c_true = self.c_true.as_ref().map(|c| DVector::from_vec(c.clone()));
        if let Some(c) = &c_true {
            if c.len() != problem.l() {
                return Err(Error::dims("c_true length", problem.l(), c.len()));
            }
        }
        Ok(GeneratedInstance {
            problem,
            c_true,
            c0,
            x0,
        })
    }
}

pub fn read_instance(path: &Path) -> Result<GeneratedInstance> {
    let reader = BufReader::new(File::open(path)?);
    let json: InstanceJson = serde_json::from_reader(reader)?;
    json.to_instance()
}

pub fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    iter: usize,
    cost: f64,
    grad_norm: f64,
    res_norm: f64,
    cg_iters: usize,
    l_k: u32,
    fallback: bool,
}

/// Writes the convergence trace as CSV.
pub fn write_trace<W: Write>(report: &SolverReport, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in &report.trace {
        wtr.serialize(TraceRow {
            iter: e.iter,
            cost: e.cost,
            grad_norm: e.grad_norm,
            res_norm: e.res_norm,
            cg_iters: e.cg_iters,
            l_k: e.step_exponent,
            fallback: e.fallback,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_trace_file(report: &SolverReport, path: &Path) -> Result<()> {
    write_trace(report, BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    pub solver: SolverConfig,
    pub repeats: usize,
    pub summary_path: Option<PathBuf>,
    /// Trace CSV path; with several repeats each run gets a `_runK` suffix.
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub status: Option<SolverStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seconds: f64,
    pub iterations: usize,
    pub function_evals: usize,
    pub total_cg_iters: usize,
    pub residual_norm: f64,
    pub grad_norm: f64,
    pub err_c: Option<f64>,
}

/// Averages over the successful runs of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub instance: InstanceSpec,
    pub use_preconditioner: bool,
    pub grad_tol: f64,
    pub repeats: usize,
    pub successful_runs: usize,
    pub converged_runs: usize,
    /// Mean wall-clock seconds.
    pub ct: f64,
    /// Mean outer iterations.
    pub it: f64,
    /// Mean cost evaluations.
    pub nf: f64,
    /// Mean total inner CG iterations.
    pub ncg_total: f64,
    /// Mean of inner CG iterations per outer iteration.
    pub ncg_per_outer: f64,
    /// Mean final `||H||_F`.
    pub res: f64,
    /// Mean final `||grad h||`.
    pub grad: f64,
    /// Mean relative parameter error, when the truth is known.
    pub err_c: Option<f64>,
    pub runs: Vec<RunRecord>,
}

fn trace_path_for(base: &Path, run: usize, repeats: usize) -> PathBuf {
    if repeats == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_run{run}.{ext}"))
}

/// Solves one generated instance and times it.
pub fn solve_instance(
    inst: &GeneratedInstance,
    cfg: &SolverConfig,
) -> Result<(SolverReport, f64)> {
    let start = Instant::now();
    let report = solver::solve(&inst.problem, &inst.x0, cfg)?;
    Ok((report, start.elapsed().as_secs_f64()))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Runs `repeats` solves and averages the table statistics. Random instances
/// use seeds `seed, seed + 1, ...`; the other families repeat one instance.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    cfg.instance.validate()?;
    cfg.solver.validate()?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut shared: Option<GeneratedInstance> = None;
    for k in 0..cfg.repeats {
        let mut spec = cfg.instance;
        if spec.kind == InstanceKind::Random {
            spec.seed = cfg.instance.seed.wrapping_add(k as u64);
        }
        let inst = match (&shared, spec.kind) {
            (Some(inst), kind) if kind != InstanceKind::Random => inst.clone(),
            _ => {
                let inst = spec.generate()?;
                if spec.kind != InstanceKind::Random {
                    shared = Some(inst.clone());
                }
                inst
            }
        };
        let record = match solve_instance(&inst, &cfg.solver) {
            Ok((report, seconds)) => {
                if let Some(base) = &cfg.trace_path {
                    write_trace_file(&report, &trace_path_for(base, k, cfg.repeats))?;
                }
                RunRecord {
                    seed: spec.seed,
                    status: Some(report.status),
                    error: None,
                    seconds,
                    iterations: report.iterations,
                    function_evals: report.function_evals,
                    total_cg_iters: report.total_cg_iters,
                    residual_norm: report.final_residual_norm(),
                    grad_norm: report.final_grad_norm(),
                    err_c: inst.relative_error(&report.final_point.c),
                }
            }
            Err(e @ (Error::InvalidConfig(_) | Error::InvalidProblem(_))) => return Err(e),
            Err(e) => RunRecord {
                seed: spec.seed,
                status: None,
                error: Some(e.to_string()),
                seconds: 0.0,
                iterations: 0,
                function_evals: 0,
                total_cg_iters: 0,
                residual_norm: f64::NAN,
                grad_norm: f64::NAN,
                err_c: None,
            },
        };
        runs.push(record);
    }
    let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.status.is_some()).collect();
    if ok.is_empty() {
        let msg = runs
            .iter()
            .filter_map(|r| r.error.clone())
            .next()
            .unwrap_or_default();
        return Err(Error::NumericFailure(format!("every run failed: {msg}")));
    }
    let err_c = if ok.iter().all(|r| r.err_c.is_some()) {
        Some(mean(ok.iter().filter_map(|r| r.err_c)))
    } else {
        None
    };
    let summary = RunSummary {
        instance: cfg.instance,
        use_preconditioner: cfg.solver.use_preconditioner,
        grad_tol: cfg.solver.grad_tol,
        repeats: cfg.repeats,
        successful_runs: ok.len(),
        converged_runs: ok
            .iter()
            .filter(|r| r.status == Some(SolverStatus::Converged))
            .count(),
        ct: mean(ok.iter().map(|r| r.seconds)),
        it: mean(ok.iter().map(|r| r.iterations as f64)),
        nf: mean(ok.iter().map(|r| r.function_evals as f64)),
        ncg_total: mean(ok.iter().map(|r| r.total_cg_iters as f64)),
        ncg_per_outer: mean(ok.iter().map(|r| {
            if r.iterations == 0 {
                0.0
            } else {
                r.total_cg_iters as f64 / r.iterations as f64
            }
        })),
        res: mean(ok.iter().map(|r| r.residual_norm)),
        grad: mean(ok.iter().map(|r| r.grad_norm)),
        err_c,
        runs,
    };
    if let Some(path) = &cfg.summary_path {
        write_json(&summary, Some(path))?;
    }
    Ok(summary)
}

#[derive(Debug, Parser)]
#[command(name = "lsiep", version, about = "Riemannian inexact Gauss-Newton solver for least-squares inverse eigenvalue problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write the solver report.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Report JSON destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence trace CSV destination.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Repeat solves and write averaged table statistics.
    Sweep {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Summary JSON destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trace CSV path; repeats get a `_runK` suffix.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Full-rank test of the differential at the solution (or the start).
    Surjectivity {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = diagnostics::DEFAULT_RANK_TOL)]
        rank_tol: f64,
        /// Largest n for which the dense matrix is assembled.
        #[arg(long, default_value_t = diagnostics::DEFAULT_MAX_N)]
        max_n: usize,
        /// Evaluate at the starting point instead of solving first.
        #[arg(long)]
        at_start: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated instance (problem data plus starting point) as JSON.
    Generate {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct InstanceArgs {
    #[arg(long, value_enum, default_value_t = InstanceKind::Example1)]
    pub instance: InstanceKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Decimal places kept when chopping the random start.
    #[arg(long)]
    pub chop: Option<u32>,
    /// Read the instance from a JSON file instead of generating it.
    #[arg(long)]
    pub problem: Option<PathBuf>,
}

impl InstanceArgs {
    pub fn spec(&self) -> Result<InstanceSpec> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| Error::InvalidConfig(format!("--{name} is required for this instance")))
        };
        let mut spec = match self.instance {
            InstanceKind::Example1 => {
                let mut s = InstanceSpec::example1();
                s.n = self.n.unwrap_or(5);
                s.l = self.l.unwrap_or(5);
                s.m = self.m.unwrap_or(5);
                s
            }
            InstanceKind::SturmLiouville => {
                let n = need(self.n, "n")?;
                let mut s = InstanceSpec::sturm_liouville(n, need(self.l, "l")?);
                s.m = self.m.unwrap_or(n);
                s
            }
            InstanceKind::Random => InstanceSpec::random(
                need(self.n, "n")?,
                need(self.l, "l")?,
                need(self.m, "m")?,
                self.seed,
            ),
        };
        spec.chop_decimals = self.chop;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(&self) -> Result<GeneratedInstance> {
        match &self.problem {
            Some(path) => read_instance(path),
            None => self.spec()?.generate(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Gradient-norm stopping tolerance (default 1e-7 for example1, else 1e-8).
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Solve the unpreconditioned normal equation.
    #[arg(long)]
    pub no_precond: bool,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_max: f64,
    #[arg(long, default_value_t = crate::preconditioner::DEFAULT_T_HAT)]
    pub t_hat: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_outer: usize,
    /// Inner CG iteration cap (default n^3).
    #[arg(long)]
    pub cg_max_iters: Option<usize>,
}

impl SolverArgs {
    pub fn config(&self, kind: InstanceKind) -> SolverConfig {
        let default_zeta = if kind == InstanceKind::Example1 { 1e-7 } else { 1e-8 };
        let mut cfg = SolverConfig {
            beta: self.beta,
            sigma: self.sigma,
            eta_max: self.eta_max,
            grad_tol: self.zeta.unwrap_or(default_zeta),
            max_outer: self.max_outer,
            use_preconditioner: !self.no_precond,
            t_hat: self.t_hat,
            ..SolverConfig::default()
        };
        cfg.cg.max_iters = self.cg_max_iters;
        cfg
    }
}

/// Exit status for an error: 2 for configuration or input problems, 1 for
/// solver failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidProblem(_)
        | Error::DimensionMismatch { .. }
        | Error::SizeGuard { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::RetractionFailure | Error::NumericFailure(_) | Error::LineSearchFailure(_) => 1,
    }
}

fn status_code(status: SolverStatus) -> i32 {
    if status == SolverStatus::Converged {
        0
    } else {
        1
    }
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve {
            instance,
            solver,
            out,
            trace,
        } => {
            let cfg = solver.config(instance.instance);
            cfg.validate()?;
            let inst = instance.load()?;
            let (report, seconds) = solve_instance(&inst, &cfg)?;
            if let Some(path) = &trace {
                write_trace_file(&report, path)?;
            }
            eprintln!(
                "status={:?} it={} nf={} ncg={} res={:.6e} grad={:.3e} time={:.3}s{}",
                report.status,
                report.iterations,
                report.function_evals,
                report.total_cg_iters,
                report.final_residual_norm(),
                report.final_grad_norm(),
                seconds,
                inst.relative_error(&report.final_point.c)
                    .map(|e| format!(" err_c={e:.3e}"))
                    .unwrap_or_default(),
            );
            write_json(&report, out.as_deref())?;
            Ok(status_code(report.status))
        }
        Command::Sweep {
            instance,
            solver,
            repeats,
            out,
            trace,
        } => {
            if instance.problem.is_some() {
                return Err(Error::InvalidConfig("sweep generates its own instances; drop --problem".into()));
            }
            let cfg = RunConfig {
                instance: instance.spec()?,
                solver: solver.config(instance.instance),
                repeats,
                summary_path: out.clone(),
                trace_path: trace,
            };
            let summary = run(&cfg)?;
            if out.is_none() {
                write_json(&summary, None)?;
            }
            Ok(if summary.converged_runs == summary.repeats { 0 } else { 1 })
        }
        Command::Surjectivity {
            instance,
            solver,
            rank_tol,
            max_n,
            at_start,
            out,
        } => {
            let inst = instance.load()?;
            let point = if at_start {
                inst.x0.clone()
            } else {
                let cfg = solver.config(instance.instance);
                solver::solve(&inst.problem, &inst.x0, &cfg)?.final_point
            };
            let report: SurjectivityReport =
                diagnostics::surjectivity_check_with_guard(&inst.problem, &point, rank_tol, max_n)?;
            write_json(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Generate { instance, out } => {
            let inst = instance.load()?;
            write_json(&InstanceJson::from_instance(&inst), out.as_deref())?;
            Ok(0)
        }
    }
}
