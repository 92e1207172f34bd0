//! Linear programming by a bounded-variable primal simplex method.
//!
//! Problems are stated as
//!
//! ```text
//! min / max  c^T x   s.t.  row_lo <= A x <= row_hi,   lb <= x <= ub
//! ```
//!
//! with one logical variable per row. The basis factorization keeps the
//! singleton columns (logicals and one-entry structurals) out of a dense LU
//! kernel, so the dense part only grows with the number of structural columns
//! that share rows. Updates use a product-form eta file between
//! refactorizations.

mod factor;
mod simplex;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub use simplex::solve_lp_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("variable index {index} out of range ({n_vars} variables)")]
    VariableIndex { index: usize, n_vars: usize },
    #[error("non-finite coefficient in row {0}")]
    NonFiniteCoefficient(usize),
    #[error("non-finite objective entry for variable {0}")]
    NonFiniteObjective(usize),
    #[error("inconsistent bounds on variable {index}: [{lower}, {upper}]")]
    VariableBounds { index: usize, lower: f64, upper: f64 },
    #[error("inconsistent bounds on row {index}: [{lower}, {upper}]")]
    RowBounds { index: usize, lower: f64, upper: f64 },
    #[error("warm-start basis has the wrong shape")]
    BasisShape,
}

/// A linear program with sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    sense: Sense,
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    row_start: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
}

impl LpProblem {
    /// `n_vars` variables with zero cost and bounds `[0, +inf)`.
    pub fn new(n_vars: usize) -> Self {
        Self {
            sense: Sense::Minimize,
            objective: vec![0.0; n_vars],
            lower: vec![0.0; n_vars],
            upper: vec![f64::INFINITY; n_vars],
            row_start: vec![0],
            row_cols: Vec::new(),
            row_vals: Vec::new(),
            row_lo: Vec::new(),
            row_hi: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_lo.len()
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn set_sense(&mut self, sense: Sense) {
        self.sense = sense;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Appends `sum entries (kind) rhs`; repeated columns are summed and
    /// exact zeros dropped. Returns the row index.
    pub fn add_row(&mut self, entries: &[(usize, f64)], kind: RowKind, rhs: f64) -> usize {
        let (lo, hi) = match kind {
            RowKind::Le => (f64::NEG_INFINITY, rhs),
            RowKind::Eq => (rhs, rhs),
            RowKind::Ge => (rhs, f64::INFINITY),
        };
        self.add_ranged_row(entries, lo, hi)
    }

    /// Appends `lo <= sum entries <= hi`.
    pub fn add_ranged_row(&mut self, entries: &[(usize, f64)], lo: f64, hi: f64) -> usize {
        let mut sorted: Vec<(usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < sorted.len() {
            let col = sorted[k].0;
            let mut val = 0.0;
            while k < sorted.len() && sorted[k].0 == col {
                val += sorted[k].1;
                k += 1;
            }
            if val != 0.0 {
                self.row_cols.push(col);
                self.row_vals.push(val);
            }
        }
        self.row_start.push(self.row_cols.len());
        self.row_lo.push(lo);
        self.row_hi.push(hi);
        self.row_lo.len() - 1
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_start[r], self.row_start[r + 1]);
        (&self.row_cols[a..b], &self.row_vals[a..b])
    }

    pub fn row_bounds(&self, r: usize) -> (f64, f64) {
        (self.row_lo[r], self.row_hi[r])
    }

    pub fn row_activity(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of a row or variable bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for r in 0..self.n_rows() {
            let a = self.row_activity(r, x);
            worst = worst.max(self.row_lo[r] - a).max(a - self.row_hi[r]);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        for (j, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::NonFiniteObjective(j));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::VariableBounds { index: j, lower: l, upper: u });
            }
        }
        for r in 0..self.n_rows() {
            let (cols, vals) = self.row(r);
            if let Some(&c) = cols.iter().find(|&&c| c >= n) {
                return Err(LpError::VariableIndex { index: c, n_vars: n });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(LpError::NonFiniteCoefficient(r));
            }
            let (l, u) = (self.row_lo[r], self.row_hi[r]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::RowBounds { index: r, lower: l, upper: u });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The factorization or the final residual check broke down.
    NumericalFailure,
    IterationLimit,
}

/// Status of one column (structural first, then one logical per row).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

/// A simplex basis, reusable as a warm start for a problem of the same shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub status: Vec<VarStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural values; meaningful when `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the objective to each row bound.
    pub row_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub basis: Option<Basis>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Primal feasibility tolerance on bounds of basic variables.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Final row residual tolerance, scaled by the row's largest term.
    pub residual_tol: f64,
    /// Run the dual simplex before the primal cleanup pass.
    pub dual: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            refactor_interval: 100,
            bland_after: 50,
            residual_tol: 1e-8,
            dual: true,
        }
    }
}

/// Solves `p` from a cold start with default options.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(p, &LpOptions::default(), None)
}
