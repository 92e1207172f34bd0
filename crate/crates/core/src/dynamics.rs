//! Ground-truth systems, RK4 simulation and training-set generation.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::basis::{BasisError, BasisLibrary};
use crate::math::norm2;

/// States whose Euclidean norm grows past this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("trajectory diverged at step {step} (|x| = {norm:e})")]
    Divergence { step: usize, norm: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("need at least one step or point")]
    Empty,
    #[error("noise level must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("state has length {got}, system has {expected} states")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("coefficient matrix has {got} entries, expected {expected}")]
    CoefficientShape { expected: usize, got: usize },
    #[error("library lacks the term `{0}` needed by the true model")]
    MissingTerm(&'static str),
    #[error("records have inconsistent lengths")]
    RecordShape,
    #[error("equilibrium index {0} does not point at an exact zero record")]
    BadEquilibrium(usize),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// An autonomous vector field `x' = f(x)`.
pub trait VectorField {
    fn n_states(&self) -> usize;
    /// Writes `f(x)` into `out`; `x` and `out` have length `n_states()`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        self.eval_into(x, &mut out);
        out
    }
}

/// The two benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinSystem {
    /// `x1' = x2`, `x2' = -sin(x1) - x2`.
    Pendulum,
    /// `x1' = -x1 + x2 - 2 x1^3`, `x2' = -x2 - 3 x1 - 2 x2^3`.
    Oscillator,
}

impl BuiltinSystem {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinSystem::Pendulum => "pendulum",
            BuiltinSystem::Oscillator => "oscillator",
        }
    }

    /// True right-hand side as `(state, term, coefficient)` triples.
    pub fn terms(&self) -> &'static [(usize, &'static str, f64)] {
        match self {
            BuiltinSystem::Pendulum => &[(0, "x2", 1.0), (1, "x2", -1.0), (1, "sin(x1)", -1.0)],
            BuiltinSystem::Oscillator => &[
                (0, "x1", -1.0),
                (0, "x2", 1.0),
                (0, "x1^3", -2.0),
                (1, "x1", -3.0),
                (1, "x2", -1.0),
                (1, "x2^3", -2.0),
            ],
        }
    }

    /// The true model expressed in `library`.
    pub fn true_model(&self, library: &BasisLibrary) -> Result<SparseModel, DynamicsError> {
        let n = self.n_states();
        if library.n_states() != n {
            return Err(DynamicsError::Dimension { expected: n, got: library.n_states() });
        }
        let k = library.len();
        let mut coefficients = vec![0.0; n * k];
        for &(i, name, value) in self.terms() {
            let col = library.position_by_name(name).ok_or(DynamicsError::MissingTerm(name))?;
            coefficients[i * k + col] = value;
        }
        SparseModel::new(library.clone(), coefficients)
    }
}

impl VectorField for BuiltinSystem {
    fn n_states(&self) -> usize {
        2
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BuiltinSystem::Pendulum => {
                out[0] = x[1];
                out[1] = -libm::sin(x[0]) - x[1];
            }
            BuiltinSystem::Oscillator => {
                out[0] = -x[0] + x[1] - 2.0 * x[0] * x[0] * x[0];
                out[1] = -x[1] - 3.0 * x[0] - 2.0 * x[1] * x[1] * x[1];
            }
        }
    }
}

/// `f_i(x) = sum_k c_ik phi_k(x)` with a row-major `N_x x K` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    library: BasisLibrary,
    coefficients: Vec<f64>,
}

impl SparseModel {
    pub fn new(library: BasisLibrary, coefficients: Vec<f64>) -> Result<Self, DynamicsError> {
        let expected = library.n_states() * library.len();
        if coefficients.len() != expected {
            return Err(DynamicsError::CoefficientShape { expected, got: coefficients.len() });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFinite("coefficients"));
        }
        Ok(Self { library, coefficients })
    }

    pub fn zeros(library: BasisLibrary) -> Self {
        let n = library.n_states() * library.len();
        Self { library, coefficients: vec![0.0; n] }
    }

    pub fn library(&self) -> &BasisLibrary {
        &self.library
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficient(&self, state: usize, term: usize) -> f64 {
        self.coefficients[state * self.library.len() + term]
    }

    /// Row `i` of the coefficient matrix.
    pub fn equation(&self, state: usize) -> &[f64] {
        let k = self.library.len();
        &self.coefficients[state * k..(state + 1) * k]
    }

    /// `(state, term)` pairs with `|c| > tol`.
    pub fn support(&self, tol: f64) -> Vec<(usize, usize)> {
        let k = self.library.len();
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > tol)
            .map(|(idx, _)| (idx / k, idx % k))
            .collect()
    }
}

impl VectorField for SparseModel {
    fn n_states(&self) -> usize {
        self.library.n_states()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.library.len();
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for (col, f) in self.library.functions().iter().enumerate() {
            let phi = f.eval(x);
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.coefficients[i * k + col] * phi;
            }
        }
    }
}

/// `f(x) = Theta(x) c^T`, checking the input.
pub fn eval_model(model: &SparseModel, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    let n = model.n_states();
    if x.len() != n {
        return Err(DynamicsError::Dimension { expected: n, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("state"));
    }
    Ok(model.eval(x))
}

/// `V(x) = sum_k v_k phi_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovFunction {
    library: BasisLibrary,
    coefficients: Vec<f64>,
}

impl LyapunovFunction {
    pub fn new(library: BasisLibrary, coefficients: Vec<f64>) -> Result<Self, DynamicsError> {
        if coefficients.len() != library.len() {
            return Err(DynamicsError::CoefficientShape {
                expected: library.len(),
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::NonFinite("coefficients"));
        }
        Ok(Self { library, coefficients })
    }

    /// Pendulum energy `(1 - cos x1) + x2^2 / 2` in `library`.
    pub fn pendulum_energy(library: &BasisLibrary) -> Result<Self, DynamicsError> {
        Self::from_named(library, &[("1", 1.0), ("cos(x1)", -1.0), ("x2^2", 0.5)])
    }

    /// `x1^2 + x2^2` in `library`.
    pub fn sum_of_squares(library: &BasisLibrary) -> Result<Self, DynamicsError> {
        Self::from_named(library, &[("x1^2", 1.0), ("x2^2", 1.0)])
    }

    pub fn from_named(
        library: &BasisLibrary,
        terms: &[(&'static str, f64)],
    ) -> Result<Self, DynamicsError> {
        let mut coefficients = vec![0.0; library.len()];
        for &(name, value) in terms {
            let k = library.position_by_name(name).ok_or(DynamicsError::MissingTerm(name))?;
            coefficients[k] = value;
        }
        Self::new(library.clone(), coefficients)
    }

    pub fn library(&self) -> &BasisLibrary {
        &self.library
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.library.functions().iter().zip(&self.coefficients).map(|(f, v)| v * f.eval(x)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.library.n_states();
        let mut g = vec![0.0; n];
        for (f, &v) in self.library.functions().iter().zip(&self.coefficients) {
            if v == 0.0 {
                continue;
            }
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += v * f.eval_partial(i, x);
            }
        }
        g
    }

    /// `grad V(x) . f(x)`.
    pub fn derivative(&self, field: &dyn VectorField, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        let f = field.eval(x);
        g.iter().zip(&f).map(|(a, b)| a * b).sum()
    }
}

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u), "inverted box");
        Self { lower, upper }
    }

    /// `[-h, h]^n`.
    pub fn symmetric(n: usize, half_width: f64) -> Self {
        Self::new(vec![-half_width; n], vec![half_width; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Tensor grid with `resolution` points per axis, endpoints included, the
    /// last state varying fastest.
    pub fn grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        assert!(resolution >= 2, "grid needs at least two points per axis");
        let n = self.dim();
        let axis = |d: usize, t: usize| {
            let s = t as f64 / (resolution - 1) as f64;
            self.lower[d] + s * (self.upper[d] - self.lower[d])
        };
        let total = resolution.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            out.push((0..n).map(|d| axis(d, idx[d])).collect());
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < resolution {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

fn check_state(n: usize, x: &[f64]) -> Result<(), DynamicsError> {
    if x.len() != n {
        return Err(DynamicsError::Dimension { expected: n, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite("initial state"));
    }
    Ok(())
}

/// Classical fixed-step RK4; returns `n_steps + 1` states starting at `x0`.
pub fn rk4_integrate(
    field: &dyn VectorField,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::BadStep(dt));
    }
    if n_steps == 0 {
        return Err(DynamicsError::Empty);
    }
    let n = field.n_states();
    check_state(n, x0)?;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut x = x0.to_vec();
    for step in 1..=n_steps {
        field.eval_into(&x, &mut k1);
        for d in 0..n {
            tmp[d] = x[d] + 0.5 * dt * k1[d];
        }
        field.eval_into(&tmp, &mut k2);
        for d in 0..n {
            tmp[d] = x[d] + 0.5 * dt * k2[d];
        }
        field.eval_into(&tmp, &mut k3);
        for d in 0..n {
            tmp[d] = x[d] + dt * k3[d];
        }
        field.eval_into(&tmp, &mut k4);
        for d in 0..n {
            x[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        let norm = norm2(&x);
        if !(norm <= DIVERGENCE_NORM) {
            return Err(DynamicsError::Divergence { step, norm });
        }
        times.push(step as f64 * dt);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Training records `{x_j, x'_j}` plus the equilibrium index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_states: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivatives: Vec<Vec<f64>>,
    equilibrium: Vec<usize>,
    noise_sigma: f64,
    seed: u64,
}

impl Dataset {
    /// Builds a dataset from explicit records. Equilibrium indices must point
    /// at records whose state is exactly zero.
    pub fn from_records(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        derivatives: Vec<Vec<f64>>,
        equilibrium: Vec<usize>,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, DynamicsError> {
        let n_states = states.first().map(|s| s.len()).ok_or(DynamicsError::Empty)?;
        if times.len() != states.len()
            || derivatives.len() != states.len()
            || states.iter().chain(&derivatives).any(|r| r.len() != n_states)
        {
            return Err(DynamicsError::RecordShape);
        }
        if states.iter().chain(&derivatives).flatten().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite("dataset records"));
        }
        for &j in &equilibrium {
            if j >= states.len() || states[j].iter().any(|&v| v != 0.0) {
                return Err(DynamicsError::BadEquilibrium(j));
            }
        }
        let mut equilibrium = equilibrium;
        equilibrium.sort_unstable();
        equilibrium.dedup();
        Ok(Self { n_states, times, states, derivatives, equilibrium, noise_sigma, seed })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of records `|J|`, equilibrium records included.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j]
    }

    pub fn derivative(&self, j: usize) -> &[f64] {
        &self.derivatives[j]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn derivatives(&self) -> &[Vec<f64>] {
        &self.derivatives
    }

    /// Sample times; equilibrium records carry NaN.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn equilibrium_indices(&self) -> &[usize] {
        &self.equilibrium
    }

    pub fn is_equilibrium(&self, j: usize) -> bool {
        self.equilibrium.binary_search(&j).is_ok()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Samples `n_points` states along an RK4 trajectory from `x0`, takes exact
/// derivatives from `system`, adds `N(0, sigma^2)` noise to every state and
/// derivative component, and optionally appends one exact `(0, 0)` record.
pub fn make_dataset(
    system: &dyn VectorField,
    x0: &[f64],
    dt: f64,
    n_points: usize,
    sigma: f64,
    seed: u64,
    append_equilibrium: bool,
) -> Result<Dataset, DynamicsError> {
    if n_points == 0 {
        return Err(DynamicsError::Empty);
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DynamicsError::BadSigma(sigma));
    }
    let n = system.n_states();
    let traj = if n_points == 1 {
        check_state(n, x0)?;
        Trajectory { times: vec![0.0], states: vec![x0.to_vec()] }
    } else {
        rk4_integrate(system, x0, dt, n_points - 1)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n_points + 1);
    let mut derivatives = Vec::with_capacity(n_points + 1);
    for x in traj.states {
        let mut dx = system.eval(&x);
        let mut x = x;
        if sigma > 0.0 {
            for v in x.iter_mut().chain(dx.iter_mut()) {
                let w: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * w;
            }
        }
        states.push(x);
        derivatives.push(dx);
    }
    let mut times = traj.times;
    let mut equilibrium = Vec::new();
    if append_equilibrium {
        equilibrium.push(states.len());
        states.push(vec![0.0; n]);
        derivatives.push(vec![0.0; n]);
        times.push(f64::NAN);
    }
    Ok(Dataset { n_states: n, times, states, derivatives, equilibrium, noise_sigma: sigma, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_library, BasisFunction};
    use proptest::prelude::*;

    struct Decay;
    impl VectorField for Decay {
        fn n_states(&self) -> usize {
            1
        }
        fn eval_into(&self, x: &[f64], out: &mut [f64]) {
            out[0] = -x[0];
        }
    }

    #[test]
    fn rk4_matches_exponential() {
        let t = rk4_integrate(&Decay, &[1.0], 0.01, 100).unwrap();
        assert_eq!(t.states.len(), 101);
        assert!((t.states[100][0] - libm::exp(-1.0)).abs() < 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64, n| (rk4_integrate(&Decay, &[1.0], dt, n).unwrap().states[n][0] - libm::exp(-1.0)).abs();
        let coarse = err(0.1, 10);
        let fine = err(0.05, 20);
        assert!(coarse / fine >= 15.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn rk4_stays_at_equilibrium() {
        let t = rk4_integrate(&BuiltinSystem::Pendulum, &[0.0, 0.0], 0.05, 1).unwrap();
        assert_eq!(t.states[1], [0.0, 0.0]);
    }

    #[test]
    fn pendulum_decays() {
        let t = rk4_integrate(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 400).unwrap();
        assert!(norm2(&t.states[400]) < 0.05);
    }

    #[test]
    fn divergence_is_reported() {
        struct Blowup;
        impl VectorField for Blowup {
            fn n_states(&self) -> usize {
                1
            }
            fn eval_into(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0] * x[0];
            }
        }
        let err = rk4_integrate(&Blowup, &[10.0], 0.05, 1000).unwrap_err();
        assert!(matches!(err, DynamicsError::Divergence { .. }));
    }

    #[test]
    fn dataset_sizes() {
        let d = make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 400, 0.0, 1, true).unwrap();
        assert_eq!(d.len(), 401);
        assert_eq!(d.equilibrium_indices(), [400]);
        assert_eq!(d.state(400), [0.0, 0.0]);
        let d = make_dataset(&BuiltinSystem::Oscillator, &[2.0, 1.5], 0.01, 600, 0.0, 1, true).unwrap();
        assert_eq!(d.len(), 601);
    }

    #[test]
    fn noiseless_records_match_trajectory() {
        let d = make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 50, 0.0, 9, false).unwrap();
        let t = rk4_integrate(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 49).unwrap();
        assert_eq!(d.states(), &t.states[..]);
        for j in 0..d.len() {
            assert_eq!(d.derivative(j), &BuiltinSystem::Pendulum.eval(d.state(j))[..]);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let mk = |seed| make_dataset(&BuiltinSystem::Oscillator, &[2.0, 1.5], 0.01, 100, 0.05, seed, true).unwrap();
        let (a, b, c) = (mk(3), mk(3), mk(4));
        assert_eq!((a.states(), a.derivatives()), (b.states(), b.derivatives()));
        assert_ne!(a.states(), c.states());
        let d = mk(3);
        assert_eq!(d.state(100), [0.0, 0.0]);
        assert_eq!(d.derivative(100), [0.0, 0.0]);
    }

    #[test]
    fn true_models_evaluate() {
        let lib = build_library(2, 2, true);
        let p = BuiltinSystem::Pendulum.true_model(&lib).unwrap();
        assert_eq!(eval_model(&p, &[0.0, 1.0]).unwrap(), [1.0, -1.0]);
        let lib3 = build_library(2, 3, false);
        let o = BuiltinSystem::Oscillator.true_model(&lib3).unwrap();
        assert_eq!(eval_model(&o, &[1.0, 0.0]).unwrap(), [-3.0, -3.0]);
        let z = SparseModel::zeros(lib3);
        assert_eq!(eval_model(&z, &[0.4, -2.0]).unwrap(), [0.0, 0.0]);
        assert!(BuiltinSystem::Oscillator.true_model(&lib).is_err());
    }

    #[test]
    fn energy_derivative_is_minus_x2_squared() {
        let lib = build_library(2, 2, true);
        let v = LyapunovFunction::pendulum_energy(&lib).unwrap();
        for x in StateBox::symmetric(2, 3.0).grid(7) {
            let vd = v.derivative(&BuiltinSystem::Pendulum, &x);
            assert!((vd + x[1] * x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_layout() {
        let g = StateBox::symmetric(2, 1.0).grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], [-1.0, -1.0]);
        assert_eq!(g[1], [-1.0, 0.0]);
        assert_eq!(g[8], [1.0, 1.0]);
    }

    #[test]
    fn dataset_rejects_fake_equilibrium() {
        let r = Dataset::from_records(vec![0.0], vec![vec![0.1]], vec![vec![0.0]], vec![0], 0.0, 0);
        assert!(matches!(r, Err(DynamicsError::BadEquilibrium(0))));
        let lib = BasisLibrary::new(1, vec![BasisFunction::monomial(vec![1])]).unwrap();
        assert!(SparseModel::new(lib, vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn sparse_model_is_linear_in_coefficients(
            c in proptest::collection::vec(-2.0f64..2.0, 20),
            x1 in -3.0f64..3.0, x2 in -3.0f64..3.0,
        ) {
            let lib = build_library(2, 2, true);
            let m = SparseModel::new(lib.clone(), c.clone()).unwrap();
            let phi = lib.evaluate(&[x1, x2]).unwrap();
            let f = m.eval(&[x1, x2]);
            for i in 0..2 {
                let want: f64 = (0..10).map(|k| c[i * 10 + k] * phi[k]).sum();
                prop_assert!((f[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }
}
