//! Comparison methods: stepwise sparse regression by backward elimination,
//! and the mixed-integer fit without Lyapunov constraints.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisCache, BasisError, BasisLibrary};
use crate::bnb::{solve_with, BnbOptions, Clock, SolveReport, Termination};
use crate::dynamics::{Dataset, DynamicsError, SparseModel};
use crate::miqcp::{assemble, MiqcpError, ProblemConfig};

pub const RIDGE_PENALTY: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("target support must be at least 1 for every equation")]
    Target,
    #[error("expected {expected} targets, got {got}")]
    TargetCount { expected: usize, got: usize },
    #[error("dataset has {dataset} states, library {library}")]
    Dimension { dataset: usize, library: usize },
    #[error("least squares failed")]
    Solve,
    #[error("no feasible model found ({0:?})")]
    NoSolution(Termination),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Miqcp(#[from] MiqcpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Ssr,
    MiosrLike,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Ssr => "ssr",
            BaselineMethod::MiosrLike => "miosr_like",
        }
    }

    /// What the method optimizes, for output metadata.
    pub fn note(&self) -> &'static str {
        match self {
            BaselineMethod::Ssr => "backward elimination on ordinary least squares; drops the smallest |c| each step",
            BaselineMethod::MiosrLike => {
                "mixed-integer sparse regression with the same l1 fit and complexity penalty as the full method, \
                 no Lyapunov constraints (the original method uses an l2 fit)"
            }
        }
    }
}

/// How many terms SSR keeps per equation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SsrTarget {
    /// Explicit support size per equation.
    PerEquation(Vec<usize>),
    /// The support just before the largest residual increase on the path.
    LargestJump,
}

/// One point of an elimination path.
#[derive(Debug, Clone, PartialEq)]
pub struct SsrStep {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// Sum of squared residuals.
    pub residual: f64,
    pub ridge: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub model: SparseModel,
    /// SSR only: the elimination path of each equation, full support first.
    pub path: Vec<Vec<SsrStep>>,
    /// SSR: total squared residual of the chosen supports. MIOSR-like: the
    /// optimal objective.
    pub objective: f64,
    /// A least-squares subproblem fell back to ridge regression.
    pub ridge_used: bool,
    pub solve: Option<SolveReport>,
}

/// Least squares on `a`, with a ridge fallback when `a` is rank deficient.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool), BaselineError> {
    let k = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (a.nrows().max(k) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == k && smax > 0.0 {
        return svd.solve(b, 0.0).map(|x| (x, false)).map_err(|_| BaselineError::Solve);
    }
    let ata = a.transpose() * a + DMatrix::identity(k, k) * RIDGE_PENALTY;
    let atb = a.transpose() * b;
    let chol = ata.cholesky().ok_or(BaselineError::Solve)?;
    Ok((chol.solve(&atb), true))
}

fn ssr_path(theta: &DMatrix<f64>, y: &DVector<f64>, stop: usize) -> Result<Vec<SsrStep>, BaselineError> {
    let mut support: Vec<usize> = (0..theta.ncols()).collect();
    let mut path = Vec::new();
    loop {
        let a = theta.select_columns(support.iter());
        let (c, ridge) = least_squares(&a, y)?;
        let r = y - &a * &c;
        path.push(SsrStep { support: support.clone(), coefficients: c.iter().cloned().collect(), residual: r.norm_squared(), ridge });
        if support.len() <= stop {
            return Ok(path);
        }
        let drop = (0..support.len()).min_by(|&i, &j| c[i].abs().total_cmp(&c[j].abs())).unwrap();
        support.remove(drop);
    }
}

fn largest_jump(path: &[SsrStep]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for s in 0..path.len() - 1 {
        let jump = path[s + 1].residual - path[s].residual;
        if jump > best.1 {
            best = (s, jump);
        }
    }
    best.0
}

/// Stepwise sparse regression, one equation at a time, on every record of
/// `dataset`.
pub fn ssr_fit(dataset: &Dataset, lib: &BasisLibrary, target: &SsrTarget) -> Result<BaselineResult, BaselineError> {
    let n = dataset.n_states();
    if lib.n_states() != n {
        return Err(BaselineError::Dimension { dataset: n, library: lib.n_states() });
    }
    if let SsrTarget::PerEquation(t) = target {
        if t.len() != n {
            return Err(BaselineError::TargetCount { expected: n, got: t.len() });
        }
        if t.iter().any(|&s| s == 0) {
            return Err(BaselineError::Target);
        }
    }
    let k = lib.len();
    let m = dataset.len();
    let cache = BasisCache::new(lib, dataset.states().iter().map(|s| s.as_slice()))?;
    let theta = DMatrix::from_fn(m, k, |j, col| cache.value(j, col));
    let mut coefficients = vec![0.0; n * k];
    let mut paths = Vec::with_capacity(n);
    let mut objective = 0.0;
    let mut ridge_used = false;
    for i in 0..n {
        let y = DVector::from_fn(m, |j, _| dataset.derivative(j)[i]);
        let (stop, pick) = match target {
            SsrTarget::PerEquation(t) => (t[i].min(k), None),
            SsrTarget::LargestJump => (1, Some(())),
        };
        let path = ssr_path(&theta, &y, stop)?;
        let chosen = if pick.is_some() { largest_jump(&path) } else { path.len() - 1 };
        let step = &path[chosen];
        for (&col, &c) in step.support.iter().zip(&step.coefficients) {
            coefficients[i * k + col] = c;
        }
        objective += step.residual;
        ridge_used |= path.iter().any(|s| s.ridge);
        paths.push(path);
    }
    Ok(BaselineResult {
        method: BaselineMethod::Ssr,
        model: SparseModel::new(lib.clone(), coefficients)?,
        path: paths,
        objective,
        ridge_used,
        solve: None,
    })
}

/// The full learning problem with every Lyapunov variable and constraint
/// removed, solved to the gap in `opts`. It is a mixed-integer LP.
pub fn miosr_like_fit(
    dataset: &Dataset,
    lib: &BasisLibrary,
    config: &ProblemConfig,
    opts: &BnbOptions,
    clock: &dyn Clock,
) -> Result<BaselineResult, BaselineError> {
    let cfg = ProblemConfig { lyapunov: false, ..config.clone() };
    let problem = assemble(dataset, lib, lib, &cfg)?;
    let report = solve_with(&problem, opts, clock, &mut |_| {});
    let Some(inc) = report.incumbent.as_ref() else {
        return Err(BaselineError::NoSolution(report.termination));
    };
    Ok(BaselineResult {
        method: BaselineMethod::MiosrLike,
        model: problem.model(&inc.values),
        path: Vec::new(),
        objective: inc.objective,
        ridge_used: false,
        solve: Some(report),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_library;
    use crate::bnb::NoClock;
    use crate::dynamics::{make_dataset, BuiltinSystem};
    use proptest::prelude::*;

    fn pendulum_data(n: usize) -> Dataset {
        make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, n, 0.0, 0, true).unwrap()
    }

    #[test]
    fn ssr_recovers_pendulum_support() {
        let lib = build_library(2, 2, true);
        let r = ssr_fit(&pendulum_data(400), &lib, &SsrTarget::PerEquation(vec![1, 2])).unwrap();
        let truth = BuiltinSystem::Pendulum.true_model(&lib).unwrap();
        assert_eq!(r.model.support(1e-8), truth.support(1e-8));
        for (a, b) in r.model.coefficients().iter().zip(truth.coefficients()) {
            assert!((a - b).abs() < 1e-8);
        }
        let auto = ssr_fit(&pendulum_data(400), &lib, &SsrTarget::LargestJump).unwrap();
        assert_eq!(auto.model.support(1e-8), truth.support(1e-8));
    }

    #[test]
    fn full_target_is_plain_least_squares() {
        let lib = build_library(2, 1, false);
        let d = make_dataset(&BuiltinSystem::Oscillator, &[1.0, 0.5], 0.05, 80, 0.02, 4, false).unwrap();
        let r = ssr_fit(&d, &lib, &SsrTarget::PerEquation(vec![3, 3])).unwrap();
        assert_eq!(r.path[0].len(), 1);
        let theta = DMatrix::from_fn(d.len(), 3, |j, col| lib.get(col).eval(d.state(j)));
        for i in 0..2 {
            let y = DVector::from_fn(d.len(), |j, _| d.derivative(j)[i]);
            let normal = (theta.transpose() * &theta).lu().solve(&(theta.transpose() * &y)).unwrap();
            for col in 0..3 {
                assert!((r.model.coefficient(i, col) - normal[col]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_dynamics_give_zero_coefficients() {
        let states: Vec<Vec<f64>> = (0..30).map(|j| vec![j as f64 * 0.1 - 1.0, 0.5 - j as f64 * 0.03]).collect();
        let d = Dataset::from_records(vec![0.0; 30], states, vec![vec![0.0, 0.0]; 30], vec![], 0.0, 0).unwrap();
        let r = ssr_fit(&d, &build_library(2, 2, false), &SsrTarget::PerEquation(vec![3, 3])).unwrap();
        assert!(r.model.coefficients().iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn collinear_columns_use_ridge() {
        // x1 == x2 on every sample.
        let states: Vec<Vec<f64>> = (0..20).map(|j| vec![j as f64 * 0.1, j as f64 * 0.1]).collect();
        let ders: Vec<Vec<f64>> = states.iter().map(|x| vec![2.0 * x[0], 0.0]).collect();
        let d = Dataset::from_records(vec![0.0; 20], states, ders, vec![], 0.0, 0).unwrap();
        let r = ssr_fit(&d, &build_library(2, 1, false), &SsrTarget::PerEquation(vec![1, 1])).unwrap();
        assert!(r.ridge_used);
        assert!(r.path[0][0].ridge);
        assert!(r.path[0].last().unwrap().residual < 1e-12);
    }

    #[test]
    fn bad_targets() {
        let lib = build_library(2, 1, false);
        let d = pendulum_data(20);
        assert_eq!(ssr_fit(&d, &lib, &SsrTarget::PerEquation(vec![0, 1])), Err(BaselineError::Target));
        assert!(matches!(ssr_fit(&d, &lib, &SsrTarget::PerEquation(vec![1])), Err(BaselineError::TargetCount { .. })));
    }

    #[test]
    fn miosr_like_with_zero_budget_is_the_zero_model() {
        let lib = build_library(2, 1, false);
        let d = pendulum_data(40);
        let cfg = ProblemConfig { budget_f: 0, c_lb: -1.0, c_ub: 1.0, ..ProblemConfig::default() };
        let r = miosr_like_fit(&d, &lib, &cfg, &BnbOptions::default(), &NoClock).unwrap();
        assert!(r.model.coefficients().iter().all(|&c| c == 0.0));
        let mean_abs = d.derivatives().iter().flatten().map(|v| v.abs()).sum::<f64>() / (2 * d.len()) as f64;
        assert!((r.objective - mean_abs).abs() < 1e-9);
    }

    #[test]
    fn miosr_like_recovers_linear_system() {
        // x1' = -x1 + x2, x2' = -x2 with the linear library; noiseless.
        let states: Vec<Vec<f64>> = (0..25).map(|j| {
            let t = j as f64 * 0.25;
            vec![libm::cos(t) * 1.5, libm::sin(1.3 * t) - 0.2]
        }).collect();
        let ders: Vec<Vec<f64>> = states.iter().map(|x| vec![-x[0] + x[1], -x[1]]).collect();
        let d = Dataset::from_records(vec![0.0; 25], states, ders, vec![], 0.0, 0).unwrap();
        let lib = build_library(2, 1, false);
        let cfg = ProblemConfig { c_lb: -2.0, c_ub: 2.0, omega1: 1e-3, ..ProblemConfig::default() };
        let r = miosr_like_fit(&d, &lib, &cfg, &BnbOptions::default(), &NoClock).unwrap();
        let want = [0.0, -1.0, 1.0, 0.0, 0.0, -1.0];
        for (a, b) in r.model.coefficients().iter().zip(want) {
            assert!((a - b).abs() < 1e-7, "{:?}", r.model.coefficients());
        }
        assert!((r.objective - 3e-3).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residual_never_decreases_along_path(seed in 0u64..1000, sigma in 0.0f64..0.2) {
            let d = make_dataset(&BuiltinSystem::Oscillator, &[1.5, -1.0], 0.05, 60, sigma, seed, false).unwrap();
            let r = ssr_fit(&d, &build_library(2, 3, false), &SsrTarget::PerEquation(vec![1, 1])).unwrap();
            for path in &r.path {
                for w in path.windows(2) {
                    prop_assert!(w[1].residual >= w[0].residual * (1.0 - 1e-9) - 1e-12);
                }
            }
            let again = ssr_fit(&d, &build_library(2, 3, false), &SsrTarget::PerEquation(vec![1, 1])).unwrap();
            prop_assert_eq!(r, again);
        }
    }
}
