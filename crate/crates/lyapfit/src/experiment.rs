//! End-to-end pipelines: data generation, discovery with post-hoc
//! verification, baselines, metrics and the reproduction bundles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use lyapfit_core::baselines::{miosr_like_fit, ssr_fit, BaselineMethod, BaselineResult, SsrTarget};
use lyapfit_core::bnb::{solve_with, BnbOptions, Clock, Event, SolveReport, Termination};
use lyapfit_core::dynamics::make_dataset;
use lyapfit_core::metrics::{coefficient_error, support_match, vector_field_error, GridErrors, SupportMatch};
use lyapfit_core::verify::{verify_grid, verify_interval, TermSum, VerificationReport, Verdict};
use lyapfit_core::{
    assemble, BasisLibrary, BuiltinSystem, Dataset, LyapunovFunction, MiqcpProblem, ProblemConfig, SparseModel,
    VectorField,
};

use crate::config::{ExperimentConfig, SystemSpec};
use crate::io;
use crate::svg::PhasePlot;
use crate::{Error, WallClock};

/// Coefficients below this magnitude count as zero in supports.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Run outcome, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Solved,
    Infeasible,
    LimitHit,
}

impl Outcome {
    pub fn from_termination(t: Termination) -> Self {
        match t {
            Termination::GapReached => Outcome::Solved,
            Termination::Infeasible => Outcome::Infeasible,
            Termination::NodeLimit | Termination::TimeLimit | Termination::Unresolved => Outcome::LimitHit,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Solved => 0,
            Outcome::Infeasible => 2,
            Outcome::LimitHit => 3,
        }
    }

    /// The worse of two outcomes, for bundles of runs.
    pub fn combine(self, other: Self) -> Self {
        self.max(other)
    }

    fn rank(&self) -> u8 {
        match self {
            Outcome::Solved => 0,
            Outcome::Infeasible => 1,
            Outcome::LimitHit => 2,
        }
    }

    fn max(self, other: Self) -> Self {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

/// Libraries and ground truth of an experiment.
pub struct Setup {
    pub lib_f: BasisLibrary,
    pub lib_v: BasisLibrary,
    pub truth: SparseModel,
    system: Option<BuiltinSystem>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, Error> {
        let lib_f = lyapfit_core::LibraryRecipe::from(cfg.libraries.dynamics).build();
        let lib_v = lyapfit_core::LibraryRecipe::from(cfg.libraries.lyapunov).build();
        let (truth, system) = match &cfg.system {
            SystemSpec::Pendulum => (BuiltinSystem::Pendulum.true_model(&lib_f)?, Some(BuiltinSystem::Pendulum)),
            SystemSpec::Oscillator => (BuiltinSystem::Oscillator.true_model(&lib_f)?, Some(BuiltinSystem::Oscillator)),
            SystemSpec::Custom { coefficients } => (io::read_coefficients(coefficients, &lib_f, None)?.0, None),
        };
        Ok(Self { lib_f, lib_v, truth, system })
    }

    /// The ground-truth right-hand side used for simulation.
    pub fn field(&self) -> &dyn VectorField {
        match &self.system {
            Some(s) => s,
            None => &self.truth,
        }
    }

    pub fn dataset(&self, cfg: &ExperimentConfig, sigma: f64) -> Result<Dataset, Error> {
        Ok(make_dataset(self.field(), &cfg.x0, cfg.dt, cfg.n_points, sigma, cfg.seed, cfg.append_equilibrium)?)
    }
}

/// Largest violation of the positivity, decrease and equilibrium
/// conditions at the data points, evaluated from the model and `V` directly.
pub fn condition_residual(
    data: &Dataset,
    model: &SparseModel,
    v: &LyapunovFunction,
    cfg: &ProblemConfig,
    alpha2: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..data.len() {
        let x = data.state(j);
        let value = v.value(x);
        let vdot = v.derivative(model, x);
        let r = if data.is_equilibrium(j) {
            (-value).max(value - cfg.delta).max(vdot.abs())
        } else {
            (cfg.alpha1 * cfg.norm.eval(x) - value).max(vdot + alpha2 * value)
        };
        worst = worst.max(r);
    }
    worst
}

/// One solve of the discovery loop.
#[derive(Debug, Clone)]
pub struct Round {
    pub termination: Termination,
    pub objective: Option<f64>,
    pub lower_bound: f64,
    pub nodes: usize,
    pub wall_time: f64,
    pub lyapunov_terms: Vec<String>,
    pub verification: Option<VerificationReport>,
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub rounds: Vec<Round>,
    /// Report of the solve that produced the returned model.
    pub report: Option<SolveReport>,
    pub termination: Termination,
    pub model: Option<SparseModel>,
    pub lyapunov: Option<LyapunovFunction>,
    pub alpha2: f64,
    /// Grid check of the returned pair.
    pub grid: Option<VerificationReport>,
    /// Interval check of the returned pair.
    pub interval: Option<VerificationReport>,
    /// Incumbents accepted over all rounds.
    pub incumbents: usize,
    /// Largest [`condition_residual`] over all accepted incumbents.
    pub max_incumbent_residual: f64,
}

impl Discovery {
    pub fn outcome(&self) -> Outcome {
        Outcome::from_termination(self.termination)
    }
}

fn lyapunov_terms(v: &LyapunovFunction) -> Vec<String> {
    v.coefficients()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > SUPPORT_TOL)
        .map(|(k, _)| v.library().get(k).display_name().to_string())
        .collect()
}

fn solve_logged(problem: &MiqcpProblem, data: &Dataset, opts: &BnbOptions, tag: &str, residual: &mut (usize, f64)) -> SolveReport {
    let clock = WallClock::start();
    let cfg = problem.config().clone();
    let mut observer = |e: &Event| match e {
        Event::Progress(p) => info!(
            "{tag}: nodes {} open {} lb {:.6e} ub {:.6e} gap {:.3e} {:.1}s",
            p.nodes, p.open, p.lower_bound, p.upper_bound, p.gap, p.elapsed
        ),
        Event::Incumbent { incumbent, source, nodes } => {
            info!("{tag}: incumbent {:.6e} from {:?} at node {nodes}", incumbent.objective, source);
            let model = problem.model(&incumbent.values);
            if let Some(v) = problem.lyapunov(&incumbent.values) {
                let r = condition_residual(data, &model, &v, &cfg, problem.alpha2_value(&incumbent.values));
                residual.1 = residual.1.max(r);
            }
            residual.0 += 1;
        }
        Event::Node(_) => {}
    };
    let report = solve_with(problem, opts, &clock as &dyn Clock, &mut observer);
    info!(
        "{tag}: {} after {} nodes, {:.1}s, lb {:.6e}, ub {:.6e}",
        report.termination.name(),
        report.nodes,
        report.wall_time,
        report.lower_bound,
        report.upper_bound()
    );
    report
}

/// Solves the learning problem, grid-verifies the Lyapunov candidate against
/// the learned model and, while it is falsified, excludes its support with an
/// integer cut and solves again, for at most `cfg.reproduce.max_rounds` solves.
pub fn discover(cfg: &ExperimentConfig, setup: &Setup, data: &Dataset, tag: &str) -> Result<Discovery, Error> {
    let pcfg = cfg.problem.to_core();
    let opts = cfg.solver.to_core();
    let mut problem = assemble(data, &setup.lib_f, &setup.lib_v, &pcfg)?;
    let zv: Vec<usize> = (0..problem.layout().k_v).map(|k| problem.layout().zv(k)).collect();
    let vbox = cfg.verify.state_box();
    let mut rounds = Vec::new();
    let mut residual = (0, 0.0);
    let mut best: Option<(SolveReport, SparseModel, LyapunovFunction, f64, VerificationReport)> = None;
    let mut termination = Termination::Infeasible;
    for round in 0..cfg.reproduce.max_rounds.max(1) {
        let report = solve_logged(&problem, data, &opts, &format!("{tag} round {}", round + 1), &mut residual);
        let Some(inc) = report.incumbent.clone() else {
            rounds.push(Round {
                termination: report.termination,
                objective: None,
                lower_bound: report.lower_bound,
                nodes: report.nodes,
                wall_time: report.wall_time,
                lyapunov_terms: vec![],
                verification: None,
            });
            if best.is_none() {
                termination = report.termination;
            }
            break;
        };
        let model = problem.model(&inc.values);
        let v = problem.lyapunov(&inc.values).expect("full problem has a Lyapunov part");
        let check = verify_grid(&model, &v, &vbox, cfg.verify.resolution, cfg.verify.exclusion_radius)?;
        info!("{tag} round {}: V = {:?}, grid verdict {}", round + 1, lyapunov_terms(&v), verdict_name(&check.verdict));
        rounds.push(Round {
            termination: report.termination,
            objective: Some(inc.objective),
            lower_bound: report.lower_bound,
            nodes: report.nodes,
            wall_time: report.wall_time,
            lyapunov_terms: lyapunov_terms(&v),
            verification: Some(check.clone()),
        });
        let falsified = check.is_falsified();
        let pattern: Vec<bool> = zv.iter().map(|&z| inc.values[z] > 0.5).collect();
        termination = report.termination;
        best = Some((report, model, v, problem.alpha2_value(&inc.values), check));
        if !falsified {
            break;
        }
        problem = problem.add_cut_on(&zv, &pattern)?;
    }
    let Some((report, model, v, alpha2, grid)) = best else {
        return Ok(Discovery {
            rounds,
            report: None,
            termination,
            model: None,
            lyapunov: None,
            alpha2: 0.0,
            grid: None,
            interval: None,
            incumbents: residual.0,
            max_incumbent_residual: residual.1,
        });
    };
    let interval = if cfg.verify.max_boxes > 0 {
        Some(verify_interval(&model, &v, &vbox, cfg.verify.exclusion_radius, cfg.verify.max_boxes)?)
    } else {
        None
    };
    Ok(Discovery {
        rounds,
        report: Some(report),
        termination,
        model: Some(model),
        lyapunov: Some(v),
        alpha2,
        grid: Some(grid),
        interval,
        incumbents: residual.0,
        max_incumbent_residual: residual.1,
    })
}

/// Accuracy of a learned model against the ground truth.
#[derive(Debug, Clone)]
pub struct ModelMetrics {
    pub grid: GridErrors,
    pub coefficient_error: f64,
    pub support: SupportMatch,
}

pub fn evaluate(cfg: &ExperimentConfig, setup: &Setup, model: &SparseModel) -> Result<ModelMetrics, Error> {
    let grid = vector_field_error(model, &setup.truth, &cfg.metrics.state_box(), cfg.metrics.resolution)?;
    Ok(ModelMetrics {
        grid,
        coefficient_error: coefficient_error(model.coefficients(), setup.truth.coefficients())?,
        support: support_match(model.coefficients(), setup.truth.coefficients(), SUPPORT_TOL)?,
    })
}

pub fn run_baseline(
    cfg: &ExperimentConfig,
    setup: &Setup,
    data: &Dataset,
    method: BaselineMethod,
) -> Result<BaselineResult, Error> {
    match method {
        BaselineMethod::Ssr => {
            let target = if cfg.reproduce.ssr_target.is_empty() {
                SsrTarget::LargestJump
            } else {
                SsrTarget::PerEquation(cfg.reproduce.ssr_target.clone())
            };
            Ok(ssr_fit(data, &setup.lib_f, &target)?)
        }
        BaselineMethod::MiosrLike => {
            let clock = WallClock::start();
            let r = miosr_like_fit(data, &setup.lib_f, &cfg.problem.to_core(), &cfg.solver.to_core(), &clock)?;
            if let Some(s) = &r.solve {
                info!("miosr_like: {} after {} nodes, {:.1}s", s.termination.name(), s.nodes, s.wall_time);
            }
            Ok(r)
        }
    }
}

fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Certified => "certified",
        Verdict::Falsified { .. } => "falsified",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn describe_verification(out: &mut String, label: &str, r: &VerificationReport) {
    let _ = writeln!(
        out,
        "{label}: {} (min V {:.6e}, max dV/dt {:.6e}, {} evaluations, exclusion radius {})",
        verdict_name(&r.verdict),
        r.v_min,
        r.vdot_max,
        r.evaluations,
        r.exclusion_radius
    );
    if let Verdict::Falsified { point, condition, value } = &r.verdict {
        let _ = writeln!(out, "  counterexample x = {point:?}: {condition:?} value {value:.6e}");
    }
}

fn format_model(model: &SparseModel) -> String {
    let lib = model.library();
    let mut s = String::new();
    for i in 0..lib.n_states() {
        let terms: Vec<String> = (0..lib.len())
            .filter(|&k| model.coefficient(i, k).abs() > SUPPORT_TOL)
            .map(|k| format!("{:+.6} {}", model.coefficient(i, k), lib.get(k).display_name()))
            .collect();
        let _ = writeln!(s, "  dx{}/dt = {}", i + 1, if terms.is_empty() { "0".into() } else { terms.join(" ") });
    }
    s
}

fn format_lyapunov(v: &LyapunovFunction) -> String {
    let lib = v.library();
    let terms: Vec<String> = (0..lib.len())
        .filter(|&k| v.coefficients()[k].abs() > SUPPORT_TOL)
        .map(|k| format!("{:+.6} {}", v.coefficients()[k], lib.get(k).display_name()))
        .collect();
    format!("  V = {}\n", if terms.is_empty() { "0".into() } else { terms.join(" ") })
}

/// `V` scaled so that the largest coefficient magnitude is one.
pub fn normalized(v: &LyapunovFunction) -> Vec<f64> {
    let m = v.coefficients().iter().fold(0.0f64, |a, c| a.max(c.abs()));
    v.coefficients().iter().map(|c| if m > 0.0 { c / m } else { 0.0 }).collect()
}

fn config_comment(cfg: &ExperimentConfig) -> String {
    format!("resolved configuration\n{}", cfg.to_toml())
}

/// Writes the artifacts of one discovery run into `dir`.
pub fn write_discovery(
    dir: &Path,
    cfg: &ExperimentConfig,
    setup: &Setup,
    data: &Dataset,
    d: &Discovery,
    metrics: Option<&ModelMetrics>,
) -> Result<String, Error> {
    let comment = config_comment(cfg);
    io::write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    io::write_dataset(&dir.join("dataset.csv"), data)?;
    let mut text = String::new();
    let _ = writeln!(text, "experiment: {}", cfg.name);
    let _ = writeln!(text, "records: {} (noise sigma {}, seed {})", data.len(), data.noise_sigma(), data.seed());
    let _ = writeln!(text, "status: {}", d.termination.name());
    for (i, r) in d.rounds.iter().enumerate() {
        let _ = writeln!(
            text,
            "round {}: {} objective {} lb {:.6e} nodes {} {:.1}s V terms {:?}{}",
            i + 1,
            r.termination.name(),
            r.objective.map_or("none".into(), |o| format!("{o:.6e}")),
            r.lower_bound,
            r.nodes,
            r.wall_time,
            r.lyapunov_terms,
            r.verification.as_ref().map_or(String::new(), |v| format!(", grid {}", verdict_name(&v.verdict)))
        );
    }
    if !matches!(d.outcome(), Outcome::Solved) && d.model.is_some() {
        let _ = writeln!(text, "PARTIAL RESULT: solver stopped with {}; the model below is the best found", d.termination.name());
    }
    let _ = writeln!(text, "incumbents accepted: {}, largest condition residual {:.3e}", d.incumbents, d.max_incumbent_residual);
    if let (Some(model), Some(v)) = (&d.model, &d.lyapunov) {
        if let Some(rep) = &d.report {
            let _ = writeln!(text, "objective {:.9e}, lower bound {:.9e}, gap {:.3e}", rep.upper_bound(), rep.lower_bound, rep.gap);
        }
        text.push_str("learned model:\n");
        text.push_str(&format_model(model));
        text.push_str(&format_lyapunov(v));
        let _ = writeln!(text, "  alpha2 = {:.6e}", d.alpha2);
        if let Ok(vdot) = TermSum::derivative_of(v, model) {
            let _ = writeln!(text, "  dV/dt has {} distinct terms", vdot.len());
        }
        if let Some(g) = &d.grid {
            describe_verification(&mut text, "grid verification", g);
        }
        if let Some(iv) = &d.interval {
            describe_verification(&mut text, "interval verification", iv);
        }
        io::write_coefficients(&dir.join("coefficients.csv"), model, Some(v), Some(&comment))?;
        let phase_points = cfg.metrics.state_box().grid(21);
        io::write_phase(&dir.join("phase.csv"), &phase_points, model, setup.field(), Some(v), Some(&comment))?;
        if let Some(m) = metrics {
            io::write_error_grid(&dir.join("error_grid.csv"), &m.grid, Some(&comment))?;
            let _ = writeln!(
                text,
                "vector field error: max {:.6e}, mean {:.6e} on {} points",
                m.grid.max,
                m.grid.mean,
                m.grid.errors.len()
            );
            let _ = writeln!(text, "coefficient error: {:.6e}", m.coefficient_error);
            let _ = writeln!(
                text,
                "support: {} true positive, {} false positive, {} false negative",
                m.support.true_positive, m.support.false_positive, m.support.false_negative
            );
            if data.n_states() == 2 {
                let svg = PhasePlot {
                    title: &format!("{}: l2 vector field error", cfg.name),
                    errors: &m.grid,
                    field: Some(model),
                    arrows_per_axis: 16,
                    trajectory: data.states(),
                }
                .render();
                io::write_text(&dir.join("phase_error.svg"), &svg)?;
            }
        }
    }
    io::write_text(&dir.join("report.txt"), &text)?;
    Ok(text)
}

/// Discovery with metrics and files. Without `data` the first noise level
/// of the configuration is simulated.
pub fn run_discover(
    cfg: &ExperimentConfig,
    data: Option<Dataset>,
    out_dir: &Path,
) -> Result<(Discovery, Option<ModelMetrics>), Error> {
    let setup = Setup::new(cfg)?;
    let data = match data {
        Some(d) => d,
        None => setup.dataset(cfg, cfg.sigma[0])?,
    };
    let d = discover(cfg, &setup, &data, &cfg.name)?;
    let metrics = d.model.as_ref().map(|m| evaluate(cfg, &setup, m)).transpose()?;
    write_discovery(out_dir, cfg, &setup, &data, &d, metrics.as_ref())?;
    Ok((d, metrics))
}

/// The pendulum pipeline.
pub struct PendulumReport {
    pub discovery: Discovery,
    pub metrics: Option<ModelMetrics>,
    pub setup: Setup,
    pub text: String,
}

pub fn reproduce_pendulum(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PendulumReport, Error> {
    let setup = Setup::new(cfg)?;
    let data = setup.dataset(cfg, cfg.sigma[0])?;
    let d = discover(cfg, &setup, &data, "pendulum")?;
    let metrics = d.model.as_ref().map(|m| evaluate(cfg, &setup, m)).transpose()?;
    let text = write_discovery(out_dir, cfg, &setup, &data, &d, metrics.as_ref())?;
    Ok(PendulumReport { discovery: d, metrics, setup, text })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVerdict {
    Infeasible,
    WrongStructure,
    Correct,
    /// Solver limit without a model.
    NoResult,
}

impl SweepVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVerdict::Infeasible => "infeasible",
            SweepVerdict::WrongStructure => "wrong_structure",
            SweepVerdict::Correct => "correct",
            SweepVerdict::NoResult => "no_result",
        }
    }
}

pub struct CvPoint {
    pub budget_v: usize,
    pub verdict: SweepVerdict,
    pub discovery: Discovery,
}

fn run_jobs<T: Send, F: Fn(usize) -> Result<T, Error> + Sync>(count: usize, jobs: usize, f: F) -> Result<Vec<T>, Error> {
    let mut out: Vec<Option<Result<T, Error>>> = (0..count).map(|_| None).collect();
    let jobs = jobs.max(1);
    for chunk_start in (0..count).step_by(jobs) {
        let end = (chunk_start + jobs).min(count);
        let results: Vec<Result<T, Error>> = std::thread::scope(|s| {
            let handles: Vec<_> = (chunk_start..end).map(|i| { let f = &f; s.spawn(move || f(i)) }).collect();
            handles.into_iter().map(|h| h.join().expect("job panicked")).collect()
        });
        for (i, r) in (chunk_start..end).zip(results) {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn reproduce_cv_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<CvPoint>, Error> {
    let setup = Setup::new(cfg)?;
    let data = setup.dataset(cfg, cfg.sigma[0])?;
    let sweep = &cfg.reproduce.budget_v_sweep;
    let points = run_jobs(sweep.len(), cfg.solver.jobs, |i| {
        let mut c = cfg.clone();
        c.problem.budget_v = sweep[i];
        let d = discover(&c, &setup, &data, &format!("C_V={}", sweep[i]))?;
        let verdict = match &d.model {
            None if d.termination == Termination::Infeasible => SweepVerdict::Infeasible,
            None => SweepVerdict::NoResult,
            Some(m) => {
                let s = support_match(m.coefficients(), setup.truth.coefficients(), SUPPORT_TOL)?;
                if s.exact() {
                    SweepVerdict::Correct
                } else {
                    SweepVerdict::WrongStructure
                }
            }
        };
        let metrics = d.model.as_ref().map(|m| evaluate(&c, &setup, m)).transpose()?;
        write_discovery(&out_dir.join(format!("cv_{}", sweep[i])), &c, &setup, &data, &d, metrics.as_ref())?;
        Ok(CvPoint { budget_v: sweep[i], verdict, discovery: d })
    })?;
    let mut text = String::from("C_V,verdict,status,objective,dynamics_terms\n");
    for p in &points {
        let terms = p.discovery.model.as_ref().map_or(0, |m| m.support(SUPPORT_TOL).len());
        let obj = p.discovery.report.as_ref().map_or("".into(), |r| r.upper_bound().to_string());
        let _ = writeln!(text, "{},{},{},{},{}", p.budget_v, p.verdict.name(), p.discovery.termination.name(), obj, terms);
    }
    let mut w = String::new();
    for line in config_comment(cfg).lines() {
        let _ = writeln!(w, "# {line}");
    }
    w.push_str(&text);
    io::write_text(&out_dir.join("cv_sweep.csv"), &w)?;
    Ok(points)
}

/// One method at one noise level.
pub struct MethodRun {
    pub method: &'static str,
    pub model: Option<SparseModel>,
    pub lyapunov: Option<LyapunovFunction>,
    pub status: String,
    pub metrics: Option<ModelMetrics>,
}

pub struct NoisePoint {
    pub sigma: f64,
    pub runs: Vec<MethodRun>,
}

impl NoisePoint {
    pub fn run(&self, method: &str) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

pub fn reproduce_noise_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<NoisePoint>, Error> {
    let setup = Setup::new(cfg)?;
    let comment = config_comment(cfg);
    let points = run_jobs(cfg.sigma.len(), cfg.solver.jobs, |i| {
        let sigma = cfg.sigma[i];
        let dir = out_dir.join(format!("sigma_{sigma}"));
        let data = setup.dataset(cfg, sigma)?;
        let mut runs = Vec::new();
        let d = discover(cfg, &setup, &data, &format!("full sigma={sigma}"))?;
        let metrics = d.model.as_ref().map(|m| evaluate(cfg, &setup, m)).transpose()?;
        write_discovery(&dir.join("full"), cfg, &setup, &data, &d, metrics.as_ref())?;
        runs.push(MethodRun {
            method: "full",
            model: d.model.clone(),
            lyapunov: d.lyapunov.clone(),
            status: d.termination.name().into(),
            metrics,
        });
        for method in [BaselineMethod::Ssr, BaselineMethod::MiosrLike] {
            let (model, status) = match run_baseline(cfg, &setup, &data, method) {
                Ok(r) => {
                    let status = r.solve.as_ref().map_or("ok".to_string(), |s| s.termination.name().to_string());
                    let status = if r.ridge_used { format!("{status} (ridge)") } else { status };
                    (Some(r.model), status)
                }
                Err(Error::Baseline(lyapfit_core::baselines::BaselineError::NoSolution(t))) => (None, t.name().to_string()),
                Err(e) => return Err(e.into()),
            };
            let metrics = model.as_ref().map(|m| evaluate(cfg, &setup, m)).transpose()?;
            if let Some(m) = &model {
                let mdir = dir.join(method.name());
                let note = format!("method: {} ({})\n{}", method.name(), method.note(), comment);
                io::write_coefficients(&mdir.join("coefficients.csv"), m, None, Some(&note))?;
                if let Some(me) = &metrics {
                    io::write_error_grid(&mdir.join("error_grid.csv"), &me.grid, Some(&note))?;
                    let svg = PhasePlot {
                        title: &format!("{} sigma={sigma}: l2 vector field error", method.name()),
                        errors: &me.grid,
                        field: Some(m),
                        arrows_per_axis: 16,
                        trajectory: data.states(),
                    }
                    .render();
                    io::write_text(&mdir.join("phase_error.svg"), &svg)?;
                }
            }
            runs.push(MethodRun { method: method.name(), model, lyapunov: None, status, metrics });
        }
        Ok(NoisePoint { sigma, runs })
    })?;
    let mut table = String::new();
    for line in comment.lines() {
        let _ = writeln!(table, "# {line}");
    }
    table.push_str("sigma,method,status,coefficient_error,mean_l2_error,max_l2_error,true_positive,false_positive,false_negative\n");
    for p in &points {
        for r in &p.runs {
            match &r.metrics {
                Some(m) => {
                    let _ = writeln!(
                        table,
                        "{},{},{},{},{},{},{},{},{}",
                        p.sigma,
                        r.method,
                        r.status,
                        m.coefficient_error,
                        m.grid.mean,
                        m.grid.max,
                        m.support.true_positive,
                        m.support.false_positive,
                        m.support.false_negative
                    );
                }
                None => {
                    let _ = writeln!(table, "{},{},{},,,,,,", p.sigma, r.method, r.status);
                }
            }
        }
    }
    io::write_text(&out_dir.join("coefficient_errors.csv"), &table)?;
    Ok(points)
}

pub fn default_out_dir(name: &str) -> PathBuf {
    PathBuf::from("out").join(name)
}
