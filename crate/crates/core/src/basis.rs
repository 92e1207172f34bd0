//! Basis functions used to parameterize both the vector field and the
//! Lyapunov function.
//!
//! A [`BasisLibrary`] is an ordered, duplicate-free list of elementary
//! functions: monomials in the state variables (graded lexicographic order,
//! `x1 > x2 > ...`) optionally followed by `sin(x_i)`, `cos(x_i)` for each
//! state. Every function has an analytic partial derivative that is again a
//! scaled basis function, which is what the Lyapunov decrease rows and the
//! interval verifier rely on.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::math::ipow;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("state vector has length {got}, library expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite state component at index {0}")]
    NonFinite(usize),
    #[error("duplicate basis function `{0}`")]
    Duplicate(String),
    #[error("monomial exponent vector has length {got}, library has {expected} states")]
    ExponentLength { expected: usize, got: usize },
    #[error("state index {index} out of range for {n_states} states")]
    StateIndex { index: usize, n_states: usize },
    #[error("library needs at least one state")]
    NoStates,
}

/// The elementary shape of a basis function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisKind {
    /// `prod_i x_i^{e_i}`; the empty product (all zeros) is the constant 1.
    Monomial(Vec<u32>),
    Sin(usize),
    Cos(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisFunction {
    kind: BasisKind,
    display_name: String,
}

impl BasisFunction {
    pub fn monomial(exponents: Vec<u32>) -> Self {
        let display_name = monomial_name(&exponents);
        Self { kind: BasisKind::Monomial(exponents), display_name }
    }

    pub fn sin(state: usize) -> Self {
        Self { kind: BasisKind::Sin(state), display_name: format!("sin(x{})", state + 1) }
    }

    pub fn cos(state: usize) -> Self {
        Self { kind: BasisKind::Cos(state), display_name: format!("cos(x{})", state + 1) }
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    /// True for the constant function 1.
    pub fn is_constant(&self) -> bool {
        matches!(&self.kind, BasisKind::Monomial(e) if e.iter().all(|&p| p == 0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            BasisKind::Monomial(exps) => exps
                .iter()
                .zip(x)
                .fold(1.0, |acc, (&e, &xi)| acc * ipow(xi, e)),
            BasisKind::Sin(i) => libm::sin(x[*i]),
            BasisKind::Cos(i) => libm::cos(x[*i]),
        }
    }

    /// Analytic partial derivative with respect to `state`, as a scale and a
    /// basis function, or `None` when the derivative is identically zero.
    pub fn partial(&self, state: usize) -> Option<(f64, BasisFunction)> {
        match &self.kind {
            BasisKind::Monomial(exps) => {
                let e = *exps.get(state)?;
                if e == 0 {
                    return None;
                }
                let mut lowered = exps.clone();
                lowered[state] -= 1;
                Some((e as f64, BasisFunction::monomial(lowered)))
            }
            BasisKind::Sin(i) if *i == state => Some((1.0, BasisFunction::cos(*i))),
            BasisKind::Cos(i) if *i == state => Some((-1.0, BasisFunction::sin(*i))),
            _ => None,
        }
    }

    /// Evaluates `d/dx_state` at `x` without allocating.
    pub fn eval_partial(&self, state: usize, x: &[f64]) -> f64 {
        match &self.kind {
            BasisKind::Monomial(exps) => {
                let e = exps[state];
                if e == 0 {
                    return 0.0;
                }
                let mut acc = e as f64;
                for (i, (&p, &xi)) in exps.iter().zip(x).enumerate() {
                    let p = if i == state { p - 1 } else { p };
                    acc *= ipow(xi, p);
                }
                acc
            }
            BasisKind::Sin(i) if *i == state => libm::cos(x[*i]),
            BasisKind::Cos(i) if *i == state => -libm::sin(x[*i]),
            _ => 0.0,
        }
    }

    fn states_referenced(&self) -> usize {
        match &self.kind {
            BasisKind::Monomial(e) => e.len(),
            BasisKind::Sin(i) | BasisKind::Cos(i) => i + 1,
        }
    }
}

impl fmt::Display for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name)
    }
}

fn monomial_name(exps: &[u32]) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (i, &e) in exps.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(format!("x{}", i + 1)),
            _ => parts.push(format!("x{}^{}", i + 1, e)),
        }
    }
    if parts.is_empty() {
        String::from("1")
    } else {
        parts.join("*")
    }
}

/// Generation parameters of a library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LibraryRecipe {
    pub n_states: usize,
    pub poly_degree: u32,
    pub include_trig: bool,
}

impl LibraryRecipe {
    pub fn build(&self) -> BasisLibrary {
        build_library(self.n_states, self.poly_degree, self.include_trig)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisLibrary {
    functions: Vec<BasisFunction>,
    n_states: usize,
}

impl BasisLibrary {
    /// Builds a library from an explicit list, rejecting duplicates and
    /// functions that reference states outside `0..n_states`.
    pub fn new(n_states: usize, functions: Vec<BasisFunction>) -> Result<Self, BasisError> {
        if n_states == 0 {
            return Err(BasisError::NoStates);
        }
        for (idx, f) in functions.iter().enumerate() {
            match f.kind() {
                BasisKind::Monomial(e) if e.len() != n_states => {
                    return Err(BasisError::ExponentLength { expected: n_states, got: e.len() })
                }
                BasisKind::Sin(i) | BasisKind::Cos(i) if *i >= n_states => {
                    return Err(BasisError::StateIndex { index: *i, n_states })
                }
                _ => {}
            }
            debug_assert!(f.states_referenced() <= n_states);
            if functions[..idx].iter().any(|g| g.kind() == f.kind()) {
                return Err(BasisError::Duplicate(f.display_name.clone()));
            }
        }
        Ok(Self { functions, n_states })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn get(&self, k: usize) -> &BasisFunction {
        &self.functions[k]
    }

    pub fn display_names(&self) -> Vec<&str> {
        self.functions.iter().map(|f| f.display_name()).collect()
    }

    pub fn position(&self, kind: &BasisKind) -> Option<usize> {
        self.functions.iter().position(|f| f.kind() == kind)
    }

    pub fn position_by_name(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.display_name() == name)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), BasisError> {
        if x.len() != self.n_states {
            return Err(BasisError::Dimension { expected: self.n_states, got: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(BasisError::NonFinite(i));
        }
        Ok(())
    }

    /// `[phi_k(x)]` in library order.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, BasisError> {
        self.check_point(x)?;
        Ok(self.functions.iter().map(|f| f.eval(x)).collect())
    }

    /// Jacobian of the library at `x`, row-major `len() x n_states`:
    /// entry `(k, i)` is `d phi_k / d x_i`.
    pub fn evaluate_gradient(&self, x: &[f64]) -> Result<Vec<f64>, BasisError> {
        self.check_point(x)?;
        let n = self.n_states;
        let mut out = vec![0.0; self.len() * n];
        for (k, f) in self.functions.iter().enumerate() {
            for i in 0..n {
                out[k * n + i] = f.eval_partial(i, x);
            }
        }
        Ok(out)
    }
}

/// All monomials of total degree `<= poly_degree` in graded lexicographic
/// order, followed by `sin(x_i), cos(x_i)` for each state when requested.
pub fn build_library(n_states: usize, poly_degree: u32, include_trig: bool) -> BasisLibrary {
    assert!(n_states >= 1, "library needs at least one state");
    let mut functions = Vec::new();
    for degree in 0..=poly_degree {
        let mut exps = vec![0u32; n_states];
        push_graded(&mut functions, &mut exps, 0, degree);
    }
    if include_trig {
        for i in 0..n_states {
            functions.push(BasisFunction::sin(i));
            functions.push(BasisFunction::cos(i));
        }
    }
    BasisLibrary { functions, n_states }
}

// Exponent vectors of fixed total degree, largest power of the earliest state first.
fn push_graded(out: &mut Vec<BasisFunction>, exps: &mut Vec<u32>, pos: usize, remaining: u32) {
    let n = exps.len();
    if pos == n - 1 {
        exps[pos] = remaining;
        out.push(BasisFunction::monomial(exps.clone()));
        exps[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        push_graded(out, exps, pos + 1, remaining - e);
    }
    exps[pos] = 0;
}

/// Library values and gradients at a fixed set of points, computed once.
#[derive(Debug, Clone)]
pub struct BasisCache {
    n_points: usize,
    n_funcs: usize,
    n_states: usize,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl BasisCache {
    pub fn new<'a, I>(lib: &BasisLibrary, points: I) -> Result<Self, BasisError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut values = Vec::new();
        let mut grads = Vec::new();
        let mut n_points = 0;
        for x in points {
            values.extend(lib.evaluate(x)?);
            grads.extend(lib.evaluate_gradient(x)?);
            n_points += 1;
        }
        Ok(Self { n_points, n_funcs: lib.len(), n_states: lib.n_states(), values, grads })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n_funcs + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_funcs..(j + 1) * self.n_funcs]
    }

    /// `d phi_k / d x_i` at point `j`.
    #[inline]
    pub fn grad(&self, j: usize, k: usize, i: usize) -> f64 {
        self.grads[(j * self.n_funcs + k) * self.n_states + i]
    }
}
