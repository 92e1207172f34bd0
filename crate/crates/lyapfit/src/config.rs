//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use lyapfit_core::bnb::BnbOptions;
use lyapfit_core::{Alpha2Mode, LibraryRecipe, NormKind, ProblemConfig, StateBox};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Pendulum,
    Oscillator,
    /// Ground truth read from a coefficient table in `coefficients.csv`
    /// layout, expressed in the dynamics library.
    Custom { coefficients: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub n_states: usize,
    pub poly_degree: u32,
    pub include_trig: bool,
}

impl From<RecipeConfig> for LibraryRecipe {
    fn from(r: RecipeConfig) -> Self {
        LibraryRecipe { n_states: r.n_states, poly_degree: r.poly_degree, include_trig: r.include_trig }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrariesConfig {
    pub dynamics: RecipeConfig,
    pub lyapunov: RecipeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Alpha2Config {
    Fixed { value: f64 },
    Variable { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormConfig {
    L2,
    L2Squared,
    L1,
    Linf,
}

impl From<NormConfig> for NormKind {
    fn from(n: NormConfig) -> Self {
        match n {
            NormConfig::L2 => NormKind::L2,
            NormConfig::L2Squared => NormKind::L2Squared,
            NormConfig::L1 => NormKind::L1,
            NormConfig::Linf => NormKind::LInf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub c_lb: f64,
    pub c_ub: f64,
    pub v_lb: f64,
    pub v_ub: f64,
    pub alpha1: f64,
    pub alpha2: Alpha2Config,
    pub delta: f64,
    pub budget_f: usize,
    pub budget_v: usize,
    pub omega1: f64,
    pub omega2: f64,
    pub norm: NormConfig,
}

impl ProblemSection {
    pub fn to_core(&self) -> ProblemConfig {
        ProblemConfig {
            c_lb: self.c_lb,
            c_ub: self.c_ub,
            v_lb: self.v_lb,
            v_ub: self.v_ub,
            alpha1: self.alpha1,
            alpha2: match self.alpha2 {
                Alpha2Config::Fixed { value } => Alpha2Mode::Fixed(value),
                Alpha2Config::Variable { lower, upper } => Alpha2Mode::Variable { lower, upper },
            },
            delta: self.delta,
            budget_f: self.budget_f,
            budget_v: self.budget_v,
            omega1: self.omega1,
            omega2: self.omega2,
            norm: self.norm.into(),
            lyapunov: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub gap_tol: f64,
    /// Seconds. Ignored in deterministic mode.
    pub time_limit: f64,
    pub node_limit: usize,
    pub feas_tol: f64,
    /// Progress line every this many nodes; 0 disables.
    pub log_every: usize,
    /// Drop wall-clock limits so that results depend only on the inputs.
    pub deterministic: bool,
    /// Sweep points run concurrently.
    pub jobs: usize,
}

impl SolverSection {
    pub fn to_core(&self) -> BnbOptions {
        BnbOptions {
            gap_tol: self.gap_tol,
            time_limit: if self.deterministic { f64::INFINITY } else { self.time_limit },
            node_limit: self.node_limit,
            feas_tol: self.feas_tol,
            log_every: self.log_every,
            ..BnbOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
}

impl GridSection {
    pub fn state_box(&self) -> StateBox {
        StateBox::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid points per axis for the sampled check.
    pub resolution: usize,
    pub exclusion_radius: f64,
    /// Box budget of the interval check; 0 skips it.
    pub max_boxes: usize,
}

impl VerifySection {
    pub fn state_box(&self) -> StateBox {
        StateBox::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceSection {
    /// Solve, verify and cut rounds of the pendulum pipeline.
    pub max_rounds: usize,
    pub budget_v_sweep: Vec<usize>,
    /// Terms kept per equation by SSR; empty picks the largest residual jump.
    pub ssr_target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemSpec,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub n_points: usize,
    pub sigma: Vec<f64>,
    pub seed: u64,
    pub append_equilibrium: bool,
    pub libraries: LibrariesConfig,
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub metrics: GridSection,
    pub verify: VerifySection,
    pub reproduce: ReproduceSection,
}

impl ExperimentConfig {
    pub fn pendulum() -> Self {
        let lib = RecipeConfig { n_states: 2, poly_degree: 2, include_trig: true };
        Self {
            name: "pendulum".into(),
            system: SystemSpec::Pendulum,
            x0: vec![-2.0, -1.5],
            dt: 0.05,
            n_points: 400,
            sigma: vec![0.0],
            seed: 0,
            append_equilibrium: true,
            libraries: LibrariesConfig { dynamics: lib, lyapunov: lib },
            problem: ProblemSection {
                c_lb: -1.0,
                c_ub: 1.0,
                v_lb: -1.0,
                v_ub: 1.0,
                alpha1: 0.2,
                alpha2: Alpha2Config::Variable { lower: 1e-5, upper: 10.0 },
                delta: 1e-6,
                budget_f: 5,
                budget_v: 5,
                omega1: 5e-3,
                omega2: 5e-3,
                norm: NormConfig::L2Squared,
            },
            solver: SolverSection {
                gap_tol: 1e-3,
                time_limit: 900.0,
                node_limit: 20_000,
                feas_tol: 1e-6,
                log_every: 50,
                deterministic: true,
                jobs: 1,
            },
            metrics: GridSection { lower: vec![-3.0; 2], upper: vec![3.0; 2], resolution: 50 },
            verify: VerifySection {
                lower: vec![-3.0; 2],
                upper: vec![3.0; 2],
                resolution: 101,
                exclusion_radius: 0.05,
                max_boxes: 200_000,
            },
            reproduce: ReproduceSection { max_rounds: 5, budget_v_sweep: vec![1, 2, 5], ssr_target: vec![] },
        }
    }

    pub fn oscillator() -> Self {
        let base = Self::pendulum();
        Self {
            name: "oscillator".into(),
            system: SystemSpec::Oscillator,
            x0: vec![2.0, 1.5],
            dt: 0.01,
            n_points: 600,
            sigma: vec![0.0, 0.03, 0.05, 0.1],
            seed: 7,
            libraries: LibrariesConfig {
                dynamics: RecipeConfig { n_states: 2, poly_degree: 3, include_trig: false },
                lyapunov: RecipeConfig { n_states: 2, poly_degree: 4, include_trig: false },
            },
            problem: ProblemSection {
                c_lb: -5.0,
                c_ub: 5.0,
                v_lb: -10.0,
                v_ub: 10.0,
                alpha1: 0.05,
                budget_f: 10,
                budget_v: 5,
                ..base.problem
            },
            solver: SolverSection { time_limit: 600.0, node_limit: 1500, ..base.solver },
            ..base
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative custom coefficient path is taken
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let SystemSpec::Custom { coefficients } = &mut cfg.system {
            if coefficients.is_relative() {
                if let Some(dir) = path.parent() {
                    *coefficients = dir.join(&*coefficients);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.libraries.dynamics.n_states;
        if self.libraries.lyapunov.n_states != n {
            return bad("dynamics and Lyapunov libraries disagree on n_states".into());
        }
        if self.x0.len() != n {
            return bad(format!("x0 has {} entries, expected {n}", self.x0.len()));
        }
        if matches!(self.system, SystemSpec::Pendulum | SystemSpec::Oscillator) && n != 2 {
            return bad("built-in systems have two states".into());
        }
        if let SystemSpec::Custom { coefficients } = &self.system {
            if !coefficients.exists() {
                return bad(format!("coefficient file {} does not exist", coefficients.display()));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if self.n_points == 0 {
            return bad("n_points must be at least 1".into());
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigma must be a nonempty list of finite values >= 0".into());
        }
        for (what, lo, hi) in [("metrics", &self.metrics.lower, &self.metrics.upper), ("verify", &self.verify.lower, &self.verify.upper)] {
            if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, u)| !(l < u)) {
                return bad(format!("{what} box must have {n} increasing intervals"));
            }
        }
        if self.metrics.resolution < 2 || self.verify.resolution < 2 {
            return bad("grid resolutions must be at least 2".into());
        }
        if !(self.verify.exclusion_radius >= 0.0) {
            return bad("exclusion_radius must be >= 0".into());
        }
        if self.solver.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if !(self.solver.gap_tol >= 0.0) || !(self.solver.feas_tol > 0.0) {
            return bad("gap_tol must be >= 0 and feas_tol > 0".into());
        }
        self.problem.to_core().validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for cfg in [ExperimentConfig::pendulum(), ExperimentConfig::oscillator()] {
            let text = cfg.to_toml();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ExperimentConfig::pendulum();
        cfg.sigma = vec![0.0, -0.1];
        assert!(ExperimentConfig::from_toml_str(&cfg.to_toml()).is_err());
        let mut cfg = ExperimentConfig::pendulum();
        cfg.problem.c_lb = 2.0;
        assert!(cfg.validate().is_err());
        let text = ExperimentConfig::pendulum().to_toml().replace("dt = 0.05", "dt = 0.05\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn custom_file_must_exist() {
        let mut cfg = ExperimentConfig::pendulum();
        cfg.system = SystemSpec::Custom { coefficients: "/nonexistent/f.csv".into() };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("does not exist")));
    }

    #[test]
    fn deterministic_mode_drops_time_limit() {
        let mut s = ExperimentConfig::pendulum().solver;
        assert_eq!(s.to_core().time_limit, f64::INFINITY);
        s.deterministic = false;
        assert_eq!(s.to_core().time_limit, 900.0);
    }
}
