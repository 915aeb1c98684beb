//! Subcommands. Each writes its files into the output directory and returns
//! whether its checks passed; errors are configuration or solver failures.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use proxsweep_core::certify::{self, CertificationReport, CertifyOptions};
use proxsweep_core::experiments::{self, OrderStudy, Oracle, StudyConfig, StudyResult};
use proxsweep_core::explicit::{self, GateReport, RateBound, Scheme, SweepProblem, ViReport};
use proxsweep_core::implicit::{self, ImplicitProblem, IterationReport, PicardOptions};
use proxsweep_core::library::{self, FamilySpec};
use proxsweep_core::paths::{PLPath, TimeGrid};
use proxsweep_core::{ConstantsBundle, Error as CoreError, LevelSetConstraint};
use serde::Serialize;

use crate::config::{Benchmark, ProblemSource, RunConfig, StudyKind};
use crate::formats;

/// Scaled margins below this count as violations.
pub const CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn emit(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    formats::write_atomic(&p, bytes)?;
    files.push(p);
    Ok(())
}

/// Converts a gate violation into a message with a concrete grid size.
fn explain(e: CoreError, steps: usize) -> anyhow::Error {
    match e {
        CoreError::SweepGateViolated { refinement, .. } => {
            anyhow!("{e}; rerun with --grid-n {} or finer", steps * refinement.max(2))
        }
        other => anyhow!(other),
    }
}

fn zero_w(cons: &LevelSetConstraint, grid: &TimeGrid) -> PLPath {
    PLPath::constant(grid.clone(), &vec![0.0; cons.param_dim()])
}

/// `p` on the union of its grid and a uniform grid with `n` steps.
fn densify(p: &PLPath, n: usize) -> Result<PLPath> {
    let uniform = TimeGrid::uniform(p.grid().t_end(), n)?;
    Ok(p.resample(&p.grid().union(&uniform)?))
}

fn benchmark_steps(cfg: &RunConfig, b: &Benchmark) -> usize {
    cfg.grid_n.unwrap_or_else(|| b.default_steps())
}

fn custom_sweep(family: &FamilySpec, u: &PLPath, w: &Option<PLPath>, x0: &[f64], n: Option<usize>) -> Result<SweepProblem> {
    let cons = family.build().context("building constraint family")?;
    let w = w.clone().unwrap_or_else(|| zero_w(&cons, u.grid()));
    let (u, w) = match n {
        Some(n) => (densify(u, n)?, densify(&w, n)?),
        None => (u.clone(), w),
    };
    Ok(SweepProblem::new(cons, u, w, x0.to_vec())?)
}

/// The explicit problem described by the configuration, with its step count.
pub fn sweep_problem(cfg: &RunConfig) -> Result<SweepProblem> {
    match &cfg.problem {
        ProblemSource::Benchmark(b) => {
            let n = benchmark_steps(cfg, b);
            Ok(match b {
                Benchmark::PlayRamp => library::play_ramp(n)?,
                Benchmark::DraggingBall => library::dragging_ball(n)?,
                Benchmark::StarDrag => library::star_drag(n)?,
                Benchmark::ImplicitPlay { .. } => bail!("implicit_play needs `solve-implicit` or an implicit study"),
            })
        }
        ProblemSource::Custom { family, u, w, x0 } => custom_sweep(family, u, w, x0, cfg.grid_n),
    }
}

pub fn implicit_problem(cfg: &RunConfig) -> Result<ImplicitProblem> {
    let eps = cfg.picard.epsilon;
    match &cfg.problem {
        ProblemSource::Benchmark(Benchmark::ImplicitPlay { delta }) => {
            Ok(library::implicit_play(cfg.grid_n.unwrap_or(1000), *delta, eps)?)
        }
        ProblemSource::Benchmark(_) => bail!("only the implicit_play benchmark has a state-dependent parameter"),
        ProblemSource::Custom { family, u, x0, w, .. } => {
            if w.is_some() {
                bail!("w is determined by state_map in an implicit problem; remove w");
            }
            let spec = cfg.state_map.as_ref().ok_or_else(|| anyhow!("state_map: required for an implicit problem"))?;
            let cons = family.build().context("building constraint family")?;
            let gmap = library::make_state_map(spec, &cons)?;
            let u = match cfg.grid_n {
                Some(n) => densify(u, n)?,
                None => u.clone(),
            };
            Ok(ImplicitProblem::new(cons, u, x0.clone(), gmap, eps)?)
        }
    }
}

fn problem_name(cfg: &RunConfig) -> String {
    match &cfg.problem {
        ProblemSource::Benchmark(b) => match b {
            Benchmark::PlayRamp => "play_ramp".into(),
            Benchmark::DraggingBall => "dragging_ball".into(),
            Benchmark::StarDrag => "star_drag".into(),
            Benchmark::ImplicitPlay { .. } => "implicit_play".into(),
        },
        ProblemSource::Custom { family, .. } => family.name(),
    }
}

#[derive(Serialize)]
struct CertifyBody<'a> {
    problem: String,
    passed: bool,
    report: &'a CertificationReport,
}

pub fn certify(cfg: &RunConfig) -> Result<Outcome> {
    let cons = match &cfg.problem {
        ProblemSource::Custom { family, .. } => family.build().context("building constraint family")?,
        ProblemSource::Benchmark(Benchmark::ImplicitPlay { .. }) => library::make_scalar_play(1.0)?,
        ProblemSource::Benchmark(_) => sweep_problem(cfg)?.cons,
    };
    let c = &cfg.certify;
    let opts = CertifyOptions {
        seed: cfg.seed,
        n_boundary: c.n_boundary,
        n_pairs: c.n_pairs,
        n_param: c.n_param,
        box_scale: c.box_scale,
        mu2_slope: cons.constants().mu2_slope,
        ..CertifyOptions::default()
    };
    let samples = c.w_samples.clone().unwrap_or_else(|| vec![vec![0.0; cons.param_dim()]]);
    if let Some(bad) = samples.iter().find(|s| s.len() != cons.param_dim()) {
        bail!("certify.w_samples: expected length {}, found {}", cons.param_dim(), bad.len());
    }
    let report = certify::certify(&cons, &samples, &opts)?;
    let passed = report.passed();
    let mut files = Vec::new();
    let body = CertifyBody { problem: problem_name(cfg), passed, report: &report };
    emit(&cfg.output_dir, "report.json", &formats::report_json("certify", &body)?, &mut files)?;
    let k = &report.certified;
    let failed: Vec<&str> = report.clauses.iter().filter(|c| !c.passed).map(|c| c.clause.as_str()).collect();
    let summary = format!(
        "certify {}: c={:.6} lambda={:.3e} L={:.6} K0={:.6} K1={:.6} C0={:.6} C1={:.6} r={:.6}; {} fresh-sample violations; {}",
        body.problem,
        k.c,
        k.lambda,
        k.l,
        k.k0,
        k.k1,
        k.c0,
        k.c1,
        k.r,
        report.verification.violations(),
        if passed { "all clauses hold".to_string() } else { format!("failed: {}", failed.join(", ")) }
    );
    Ok(Outcome { passed, summary, files })
}

#[derive(Serialize)]
struct SolveBody<'a> {
    problem: String,
    scheme: Scheme,
    steps: usize,
    t_end: f64,
    constants: &'a ConstantsBundle,
    gate: GateReport,
    rate_bound: RateBound,
    vi: ViReport,
    max_level: f64,
    passed: bool,
}

fn sweep_checks(rate: &RateBound, vi: &ViReport, level: f64, cons: &LevelSetConstraint) -> bool {
    rate.worst_scaled >= -CHECK_TOL && vi.worst_scaled >= -CHECK_TOL && level <= 1.0 + cons.options().level_tol
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let prob = sweep_problem(cfg)?;
    let steps = prob.u.grid().steps();
    let scheme = cfg.solver.scheme;
    let traj = explicit::solve(&prob, scheme, &cfg.solver_options()).map_err(|e| explain(e, steps))?;
    let rate = explicit::rate_bound_check(&traj, &prob);
    let vi = explicit::vi_residual(&traj);
    let level = explicit::max_level(&traj, &prob);
    let passed = sweep_checks(&rate, &vi, level, &prob.cons);
    let body = SolveBody {
        problem: problem_name(cfg),
        scheme,
        steps,
        t_end: prob.u.grid().t_end(),
        constants: prob.cons.constants(),
        gate: traj.gate,
        rate_bound: rate,
        vi,
        max_level: level,
        passed,
    };
    let mut files = Vec::new();
    emit(&cfg.output_dir, "trajectory.csv", &formats::trajectory_csv(&prob, &traj)?, &mut files)?;
    emit(&cfg.output_dir, "report.json", &formats::report_json("solve", &body)?, &mut files)?;
    let summary = format!(
        "solve {} ({scheme:?}, {steps} steps): gate margin {:.3e}, rate-bound margin {:.3e}, VI residual {:.3e}, max level {:.12}; {}",
        body.problem,
        traj.gate.margin(),
        rate.worst_scaled,
        vi.worst_scaled,
        level,
        if passed { "checks pass" } else { "checks FAILED" }
    );
    Ok(Outcome { passed, summary, files })
}

#[derive(Serialize)]
struct ImplicitBody<'a> {
    problem: String,
    steps: usize,
    iteration: &'a IterationReport,
    rate_bound: RateBound,
    vi: ViReport,
    max_level: f64,
    passed: bool,
}

pub fn solve_implicit(cfg: &RunConfig) -> Result<Outcome> {
    let prob = implicit_problem(cfg)?;
    let steps = prob.u.grid().steps();
    let popts = PicardOptions { tol: cfg.picard.tol, max_iter: cfg.picard.max_iter, scheme: cfg.solver.scheme };
    let sol = implicit::solve_picard(&prob, &popts, &cfg.solver_options()).map_err(|e| explain(e, steps))?;
    let sweep = SweepProblem::new(prob.cons.clone(), prob.u.clone(), sol.w.clone(), prob.x0.clone())?;
    let rate = explicit::rate_bound_check(&sol.trajectory, &sweep);
    let vi = explicit::vi_residual(&sol.trajectory);
    let level = explicit::max_level(&sol.trajectory, &sweep);
    let envelope_ok = sol.report.envelope_margins.iter().all(|m| *m >= -CHECK_TOL);
    let passed = sol.report.converged && envelope_ok && sweep_checks(&rate, &vi, level, &sweep.cons);
    let body = ImplicitBody { problem: problem_name(cfg), steps, iteration: &sol.report, rate_bound: rate, vi, max_level: level, passed };
    let mut files = Vec::new();
    emit(&cfg.output_dir, "trajectory.csv", &formats::trajectory_csv(&sweep, &sol.trajectory)?, &mut files)?;
    emit(&cfg.output_dir, "w.csv", &formats::path_csv(&sol.w)?, &mut files)?;
    emit(&cfg.output_dir, "report.json", &formats::report_json("solve-implicit", &body)?, &mut files)?;
    let r = &sol.report;
    let summary = format!(
        "solve-implicit {} ({steps} steps): delta {:.4}, {} iterations (budget {}), max ratio {}, fixed-point residual {:.3e}; {}",
        body.problem,
        r.delta,
        r.iterations,
        r.budget,
        r.max_ratio().map_or("n/a".into(), |v| format!("{v:.4}")),
        r.fixed_point_residual,
        if passed { "checks pass" } else { "checks FAILED" }
    );
    Ok(Outcome { passed, summary, files })
}

fn default_scales(kind: StudyKind) -> Vec<f64> {
    match kind {
        StudyKind::Continuity => vec![1e-1, 1e-2, 1e-3, 1e-4],
        _ => vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
    }
}

#[derive(Serialize)]
struct StudyBody<'a> {
    problem: String,
    study: &'a StudyResult,
}

#[derive(Serialize)]
struct OrderBody<'a> {
    problem: String,
    oracle: String,
    study: &'a OrderStudy,
}

/// Runs the study named by `kind`, or by `study.kind` in the configuration.
pub fn study(cfg: &RunConfig, kind: Option<StudyKind>) -> Result<Outcome> {
    let kind = kind.or(cfg.study.kind).ok_or_else(|| anyhow!("study kind: pass --kind or set study.kind"))?;
    if kind == StudyKind::Order {
        return order_study(cfg);
    }
    let mut scfg = StudyConfig::new(cfg.study.scales.clone().unwrap_or_else(|| default_scales(kind)), cfg.seed)?;
    scfg.scheme = cfg.solver.scheme;
    scfg.solver = cfg.solver_options();
    scfg.perturb_w = cfg.study.perturb_w;
    let res = match kind {
        StudyKind::Continuity => {
            let p = sweep_problem(cfg)?;
            let steps = p.u.grid().steps();
            p.gate(scfg.solver.gate_factor).check().map_err(|e| explain(e, steps))?;
            experiments::continuity_study(&p, &scfg)?
        }
        StudyKind::Lipschitz => {
            let p = sweep_problem(cfg)?;
            let steps = p.u.grid().steps();
            p.gate(scfg.solver.gate_factor).check().map_err(|e| explain(e, steps))?;
            experiments::lipschitz_study(&p, &scfg)?
        }
        StudyKind::Implicit => {
            let p = implicit_problem(cfg)?;
            let popts = PicardOptions { tol: cfg.picard.tol, max_iter: cfg.picard.max_iter, scheme: cfg.solver.scheme };
            experiments::implicit_lipschitz_study(&p, &scfg, &popts)?
        }
        StudyKind::Order => unreachable!(),
    };
    let body = StudyBody { problem: problem_name(cfg), study: &res };
    let mut files = Vec::new();
    emit(&cfg.output_dir, "study.csv", &formats::study_csv(&res)?, &mut files)?;
    emit(&cfg.output_dir, "report.json", &formats::report_json("study", &body)?, &mut files)?;
    let summary = format!(
        "study {} on {}: {} rows, ratio spread {}; {}; {}",
        res.kind,
        body.problem,
        res.rows.len(),
        res.ratio_spread().map_or("n/a".into(), |v| format!("{v:.4}")),
        res.detail,
        if res.passed { "passed" } else { "FAILED" }
    );
    Ok(Outcome { passed: res.passed, summary, files })
}

fn play_rho(cfg: &RunConfig) -> Option<f64> {
    match &cfg.problem {
        ProblemSource::Benchmark(Benchmark::PlayRamp) => Some(1.0),
        ProblemSource::Custom { family: FamilySpec::ScalarPlay { rho }, .. } => Some(*rho),
        _ => None,
    }
}

fn order_study(cfg: &RunConfig) -> Result<Outcome> {
    let grids = cfg.study.grids.clone();
    let finest = *grids.last().expect("validated");
    let build = |n: usize| -> proxsweep_core::Result<SweepProblem> {
        match &cfg.problem {
            ProblemSource::Benchmark(Benchmark::PlayRamp) => library::play_ramp(n),
            ProblemSource::Benchmark(Benchmark::DraggingBall) => library::dragging_ball(n),
            ProblemSource::Benchmark(Benchmark::StarDrag) => library::star_drag(n),
            ProblemSource::Benchmark(Benchmark::ImplicitPlay { .. }) => {
                Err(CoreError::InvalidParameter("order studies need an explicit problem".into()))
            }
            ProblemSource::Custom { family, u, w, x0 } => {
                custom_sweep(family, u, w, x0, Some(n)).map_err(|e| CoreError::InvalidParameter(format!("{e:#}")))
            }
        }
    };
    let exact = move |p: &SweepProblem| -> proxsweep_core::Result<PLPath> {
        library::play_oracle(&p.u, &p.w, play_rho(cfg).unwrap_or(1.0), p.x0[0]).map(|r| r.1)
    };
    let (oracle, oracle_name) = match play_rho(cfg) {
        Some(_) => (Oracle::Exact(&exact), "exact play".to_string()),
        None => {
            let n = cfg.study.reference_steps.unwrap_or(8 * finest);
            (Oracle::Reference(n), format!("reference run with {n} steps"))
        }
    };
    let res = experiments::convergence_order_study(&build, &oracle, &grids, cfg.solver.scheme, &cfg.solver_options())
        .map_err(|e| match e {
            CoreError::SweepGateViolated { refinement, .. } => {
                anyhow!("{e}; the coarsest entry of study.grids needs at least {} steps", grids[0] * refinement.max(2))
            }
            other => anyhow!(other),
        })?;
    let body = OrderBody { problem: problem_name(cfg), oracle: oracle_name, study: &res };
    let mut files = Vec::new();
    emit(&cfg.output_dir, "order.csv", &formats::order_csv(&res)?, &mut files)?;
    emit(&cfg.output_dir, "report.json", &formats::report_json("study", &body)?, &mut files)?;
    let orders: Vec<String> = res.sup_orders.iter().map(|o| o.map_or("n/a".into(), |v| format!("{v:.3}"))).collect();
    let summary = format!(
        "study order on {} against {}: sup errors {:?}, orders [{}]; {}",
        body.problem,
        body.oracle,
        res.sup_errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
        orders.join(", "),
        if res.passed { "passed" } else { "FAILED" }
    );
    Ok(Outcome { passed: res.passed, summary, files })
}
