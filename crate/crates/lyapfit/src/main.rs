use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use lyapfit::experiment::{self, Outcome, Setup, SweepVerdict};
use lyapfit::{io, lpformat, Error, ExperimentConfig};
use lyapfit_core::baselines::BaselineMethod;
use lyapfit_core::verify::{verify_grid, verify_interval, Verdict};
use lyapfit_core::assemble;

#[derive(Parser)]
#[command(name = "lyapfit", version, about = "Joint sparse dynamics and Lyapunov function learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, value_enum, default_value_t = Preset::Pendulum)]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Seconds; ignored in deterministic mode.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    /// Drop wall-clock limits so results depend only on the node limit.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    jobs: Option<usize>,
    /// Noise levels, overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Pendulum,
    Oscillator,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ssr,
    MiosrLike,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bundle {
    Pendulum,
    CvSweep,
    Oscillator,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured system and write a dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output CSV; a `.meta.toml` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn dynamics and a Lyapunov function.
    Discover {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV instead of simulating.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the learning problem in LP format.
        #[arg(long)]
        export_lp: Option<PathBuf>,
    },
    /// Check the Lyapunov conditions for a model and V from a coefficient table.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coefficients: PathBuf,
    },
    /// Fit a baseline model.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare a coefficient table with the ground truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coefficients: PathBuf,
    },
    /// Run a reproduction bundle.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        bundle: Bundle,
    },
}

fn resolve(common: &Common, default_preset: Option<Preset>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match default_preset.unwrap_or(common.preset) {
            Preset::Pendulum => ExperimentConfig::pendulum(),
            Preset::Oscillator => ExperimentConfig::oscillator(),
        },
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = common.gap_tol {
        cfg.solver.gap_tol = g;
    }
    if let Some(t) = common.time_limit {
        cfg.solver.time_limit = t;
    }
    if let Some(n) = common.node_limit {
        cfg.solver.node_limit = n;
    }
    if common.deterministic {
        cfg.solver.deterministic = true;
    }
    if let Some(j) = common.jobs {
        cfg.solver.jobs = j;
    }
    if let Some(s) = &common.sigma {
        cfg.sigma = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, suffix: &str) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| experiment::default_out_dir(&format!("{}{suffix}", cfg.name)))
}

/// Falsified is 2; an unfinished interval search is 3. A grid check
/// without counterexample counts as success.
fn verdict_code(v: &Verdict) -> Outcome {
    match v {
        Verdict::Certified => Outcome::Solved,
        Verdict::Falsified { .. } => Outcome::Infeasible,
        Verdict::Inconclusive => Outcome::LimitHit,
    }
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = resolve(&common, None)?;
            let setup = Setup::new(&cfg)?;
            let data = setup.dataset(&cfg, cfg.sigma[0])?;
            io::write_dataset(&out, &data)?;
            info!("wrote {} records to {}", data.len(), out.display());
            Ok(Outcome::Solved)
        }
        Command::Discover { common, data, export_lp } => {
            let cfg = resolve(&common, None)?;
            let data = data.as_deref().map(io::read_dataset).transpose()?;
            let dir = out_dir(&common, &cfg, "");
            if let Some(path) = &export_lp {
                let setup = Setup::new(&cfg)?;
                let d = match &data {
                    Some(d) => d.clone(),
                    None => setup.dataset(&cfg, cfg.sigma[0])?,
                };
                let p = assemble(&d, &setup.lib_f, &setup.lib_v, &cfg.problem.to_core())?;
                io::write_text(path, &lpformat::to_lp_string(&p))?;
            }
            let (d, _) = experiment::run_discover(&cfg, data, &dir)?;
            print!("{}", std::fs::read_to_string(dir.join("report.txt")).map_err(|e| Error::io(&dir, e))?);
            Ok(d.outcome())
        }
        Command::Verify { common, coefficients } => {
            let cfg = resolve(&common, None)?;
            let setup = Setup::new(&cfg)?;
            let (model, v) = io::read_coefficients(&coefficients, &setup.lib_f, Some(&setup.lib_v))?;
            let v = v.ok_or_else(|| Error::format(&coefficients, "no V column"))?;
            let vbox = cfg.verify.state_box();
            let grid = verify_grid(&model, &v, &vbox, cfg.verify.resolution, cfg.verify.exclusion_radius)?;
            println!("grid: {:?}", grid.verdict);
            let mut outcome = if grid.is_falsified() { Outcome::Infeasible } else { Outcome::Solved };
            if cfg.verify.max_boxes > 0 {
                let iv = verify_interval(&model, &v, &vbox, cfg.verify.exclusion_radius, cfg.verify.max_boxes)?;
                println!("interval: {:?} ({} boxes)", iv.verdict, iv.evaluations);
                outcome = outcome.combine(verdict_code(&iv.verdict));
            }
            Ok(outcome)
        }
        Command::Baseline { common, method, data } => {
            let cfg = resolve(&common, None)?;
            let setup = Setup::new(&cfg)?;
            let data = match data {
                Some(p) => io::read_dataset(&p)?,
                None => setup.dataset(&cfg, cfg.sigma[0])?,
            };
            let method = match method {
                Method::Ssr => BaselineMethod::Ssr,
                Method::MiosrLike => BaselineMethod::MiosrLike,
            };
            let r = experiment::run_baseline(&cfg, &setup, &data, method)?;
            let dir = out_dir(&common, &cfg, &format!("_{}", method.name()));
            let note = format!("method: {} ({})\n{}", method.name(), method.note(), cfg.to_toml());
            io::write_coefficients(&dir.join("coefficients.csv"), &r.model, None, Some(&note))?;
            let m = experiment::evaluate(&cfg, &setup, &r.model)?;
            io::write_error_grid(&dir.join("error_grid.csv"), &m.grid, Some(&note))?;
            println!(
                "{}: objective {:.6e}, coefficient error {:.6e}, mean l2 error {:.6e}",
                method.name(),
                r.objective,
                m.coefficient_error,
                m.grid.mean
            );
            Ok(r.solve.map_or(Outcome::Solved, |s| Outcome::from_termination(s.termination)))
        }
        Command::Metrics { common, coefficients } => {
            let cfg = resolve(&common, None)?;
            let setup = Setup::new(&cfg)?;
            let (model, _) = io::read_coefficients(&coefficients, &setup.lib_f, None)?;
            let m = experiment::evaluate(&cfg, &setup, &model)?;
            let dir = out_dir(&common, &cfg, "_metrics");
            io::write_error_grid(&dir.join("error_grid.csv"), &m.grid, Some(&cfg.to_toml()))?;
            println!("coefficient error {:.6e}", m.coefficient_error);
            println!("vector field error: max {:.6e}, mean {:.6e}", m.grid.max, m.grid.mean);
            println!(
                "support: {} true positive, {} false positive, {} false negative",
                m.support.true_positive, m.support.false_positive, m.support.false_negative
            );
            Ok(Outcome::Solved)
        }
        Command::Reproduce { common, bundle } => match bundle {
            Bundle::Pendulum => {
                let cfg = resolve(&common, Some(Preset::Pendulum))?;
                let r = experiment::reproduce_pendulum(&cfg, &out_dir(&common, &cfg, ""))?;
                print!("{}", r.text);
                Ok(r.discovery.outcome())
            }
            Bundle::CvSweep => {
                let cfg = resolve(&common, Some(Preset::Pendulum))?;
                let points = experiment::reproduce_cv_sweep(&cfg, &out_dir(&common, &cfg, "_cv_sweep"))?;
                let mut outcome = Outcome::Solved;
                for p in &points {
                    println!("C_V = {}: {}", p.budget_v, p.verdict.name());
                    if p.verdict == SweepVerdict::NoResult {
                        outcome = outcome.combine(Outcome::LimitHit);
                    }
                }
                Ok(outcome)
            }
            Bundle::Oscillator => {
                let cfg = resolve(&common, Some(Preset::Oscillator))?;
                let dir = out_dir(&common, &cfg, "_noise");
                let points = experiment::reproduce_noise_sweep(&cfg, &dir)?;
                let table = std::fs::read_to_string(dir.join("coefficient_errors.csv")).map_err(|e| Error::io(&dir, e))?;
                print!("{}", table.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
                let limited = points.iter().flat_map(|p| &p.runs).any(|r| r.status.contains("limit") || r.model.is_none());
                Ok(if limited { Outcome::LimitHit } else { Outcome::Solved })
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
