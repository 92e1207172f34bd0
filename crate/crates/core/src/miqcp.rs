//! Assembly of the joint dynamics/Lyapunov learning problem.
//!
//! Bilinear terms `v_k' * c_ik` and `alpha2 * v_k` get one auxiliary variable
//! each; every constraint is then linear in the extended variable vector and
//! the nonconvexity lives entirely in the product definitions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::basis::{BasisCache, BasisError, BasisLibrary};
use crate::dynamics::{Dataset, LyapunovFunction, SparseModel};
use crate::lp::{LpProblem, RowKind};
use crate::math::norm2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiqcpError {
    #[error("basis library is empty")]
    EmptyLibrary,
    #[error("dataset has {dataset} states but a library has {library}")]
    Dimension { dataset: usize, library: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("variable decay rate needs at least one equilibrium record")]
    NoEquilibrium,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate interval on variable {var}: [{lower}, {upper}]")]
    DegenerateInterval { var: usize, lower: f64, upper: f64 },
    #[error("product {0} has neither factor fixed")]
    UnfixedProduct(usize),
    #[error("pattern length {got} does not match {expected} selected binaries")]
    PatternLength { expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Norm used in the positivity margin `V_j >= alpha1 * |x_j|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    L2,
    L2Squared,
    L1,
    LInf,
}

impl NormKind {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            NormKind::L2 => norm2(x),
            NormKind::L2Squared => x.iter().map(|v| v * v).sum(),
            NormKind::L1 => x.iter().map(|v| v.abs()).sum(),
            NormKind::LInf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormKind::L2 => "l2",
            NormKind::L2Squared => "l2_squared",
            NormKind::L1 => "l1",
            NormKind::LInf => "linf",
        }
    }
}

/// Decay rate in `dV/dt <= -alpha2 V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha2Mode {
    Fixed(f64),
    Variable { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub c_lb: f64,
    pub c_ub: f64,
    pub v_lb: f64,
    pub v_ub: f64,
    pub alpha1: f64,
    pub alpha2: Alpha2Mode,
    /// Upper bound on `V` at equilibrium records.
    pub delta: f64,
    pub budget_f: usize,
    pub budget_v: usize,
    pub omega1: f64,
    pub omega2: f64,
    pub norm: NormKind,
    /// When false, all Lyapunov variables and rows are left out.
    pub lyapunov: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            c_lb: -5.0,
            c_ub: 5.0,
            v_lb: -10.0,
            v_ub: 10.0,
            alpha1: 0.2,
            alpha2: Alpha2Mode::Variable { lower: 1e-5, upper: 10.0 },
            delta: 1e-6,
            budget_f: 5,
            budget_v: 5,
            omega1: 5e-3,
            omega2: 5e-3,
            norm: NormKind::L2Squared,
            lyapunov: true,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<(), MiqcpError> {
        let bad = |msg: &str| Err(MiqcpError::Config(String::from(msg)));
        let finite = [self.c_lb, self.c_ub, self.v_lb, self.v_ub, self.alpha1, self.delta, self.omega1, self.omega2];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all numeric parameters must be finite");
        }
        if self.c_lb >= self.c_ub {
            return bad("c_lb must be below c_ub");
        }
        if self.v_lb >= self.v_ub {
            return bad("v_lb must be below v_ub");
        }
        if self.c_lb > 0.0 || self.c_ub < 0.0 || self.v_lb > 0.0 || self.v_ub < 0.0 {
            return bad("coefficient bounds must contain zero");
        }
        if self.alpha1 <= 0.0 {
            return bad("alpha1 must be positive");
        }
        if self.delta < 0.0 {
            return bad("delta must be non-negative");
        }
        if self.omega1 < 0.0 || self.omega2 < 0.0 {
            return bad("objective weights must be non-negative");
        }
        match self.alpha2 {
            Alpha2Mode::Fixed(a) if !(a >= 0.0 && a.is_finite()) => bad("fixed alpha2 must be finite and >= 0"),
            Alpha2Mode::Variable { lower, upper }
                if !(lower >= 0.0 && upper.is_finite() && lower <= upper) =>
            {
                bad("alpha2 range must satisfy 0 <= lower <= upper < inf")
            }
            _ => Ok(()),
        }
    }
}

/// Index map of the extended variable vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub n_states: usize,
    pub k_f: usize,
    /// Zero when the Lyapunov part is disabled.
    pub k_v: usize,
    pub n_points: usize,
    pub c0: usize,
    pub v0: usize,
    pub alpha2: Option<usize>,
    pub zf0: usize,
    pub zv0: usize,
    pub ep0: usize,
    pub em0: usize,
    pub w0: usize,
    pub u0: usize,
    pub u_count: usize,
    pub n_vars: usize,
}

impl Layout {
    fn new(n_states: usize, k_f: usize, k_v: usize, n_points: usize, variable_alpha2: bool) -> Self {
        let c0 = 0;
        let v0 = c0 + n_states * k_f;
        let mut next = v0 + k_v;
        let alpha2 = if variable_alpha2 {
            next += 1;
            Some(next - 1)
        } else {
            None
        };
        let zf0 = next;
        let zv0 = zf0 + n_states * k_f;
        let ep0 = zv0 + k_v;
        let em0 = ep0 + n_states * n_points;
        let w0 = em0 + n_states * n_points;
        let u0 = w0 + n_states * k_f * k_v;
        let u_count = if variable_alpha2 { k_v } else { 0 };
        let n_vars = u0 + u_count;
        Self { n_states, k_f, k_v, n_points, c0, v0, alpha2, zf0, zv0, ep0, em0, w0, u0, u_count, n_vars }
    }

    pub fn c(&self, i: usize, k: usize) -> usize {
        self.c0 + i * self.k_f + k
    }
    pub fn v(&self, k: usize) -> usize {
        self.v0 + k
    }
    pub fn zf(&self, i: usize, k: usize) -> usize {
        self.zf0 + i * self.k_f + k
    }
    pub fn zv(&self, k: usize) -> usize {
        self.zv0 + k
    }
    pub fn ep(&self, i: usize, j: usize) -> usize {
        self.ep0 + i * self.n_points + j
    }
    pub fn em(&self, i: usize, j: usize) -> usize {
        self.em0 + i * self.n_points + j
    }
    /// Auxiliary for `v_{k'} * c_{ik}`.
    pub fn w(&self, i: usize, k: usize, kv: usize) -> usize {
        self.w0 + (i * self.k_f + k) * self.k_v + kv
    }
    /// Auxiliary for `alpha2 * v_k`.
    pub fn u(&self, k: usize) -> usize {
        self.u0 + k
    }

    /// Variables carried in branch-and-bound node boxes: `c`, `v`, `alpha2`
    /// and the binaries, which form the prefix `0..ep0`.
    pub fn core_len(&self) -> usize {
        self.ep0
    }

    pub fn n_binaries(&self) -> usize {
        self.ep0 - self.zf0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTag {
    Fit { state: usize, point: usize },
    LinkLower { var: usize },
    LinkUpper { var: usize },
    Positivity { point: usize },
    Equilibrium { point: usize },
    Decrease { point: usize },
    EquilibriumDecrease { point: usize },
    BudgetF,
    BudgetV,
    IntegerCut { index: usize },
}

/// `lo <= sum entries <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub tag: ConstraintTag,
    pub entries: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        (self.lo - a).max(a - self.hi).max(0.0)
    }
}

/// `aux = left * right`.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub aux: usize,
    pub left: usize,
    pub right: usize,
    /// False when `aux` has no nonzero coefficient in any row.
    pub active: bool,
    /// Binaries whose zero value forces the product to zero.
    pub binaries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqcpProblem {
    layout: Layout,
    config: ProblemConfig,
    lib_f: BasisLibrary,
    lib_v: Option<BasisLibrary>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    binaries: Vec<usize>,
    constraints: Vec<Constraint>,
    products: Vec<Product>,
    n_cuts: usize,
    n_data: usize,
    names: Vec<String>,
}

/// Builds the learning problem for `dataset`.
pub fn assemble(
    dataset: &Dataset,
    lib_f: &BasisLibrary,
    lib_v: &BasisLibrary,
    config: &ProblemConfig,
) -> Result<MiqcpProblem, MiqcpError> {
    config.validate()?;
    if lib_f.is_empty() || (config.lyapunov && lib_v.is_empty()) {
        return Err(MiqcpError::EmptyLibrary);
    }
    if dataset.is_empty() {
        return Err(MiqcpError::EmptyDataset);
    }
    let nx = dataset.n_states();
    for lib in [lib_f, lib_v] {
        if lib.n_states() != nx {
            return Err(MiqcpError::Dimension { dataset: nx, library: lib.n_states() });
        }
    }
    let variable_alpha2 = config.lyapunov && matches!(config.alpha2, Alpha2Mode::Variable { .. });
    if variable_alpha2 && dataset.equilibrium_indices().is_empty() {
        return Err(MiqcpError::NoEquilibrium);
    }
    let n_points = dataset.len();
    let k_f = lib_f.len();
    let k_v = if config.lyapunov { lib_v.len() } else { 0 };
    let layout = Layout::new(nx, k_f, k_v, n_points, variable_alpha2);
    let n = layout.n_vars;
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut objective = vec![0.0; n];
    let mut names = vec![String::new(); n];
    let n_data = nx * n_points;

    for i in 0..nx {
        for k in 0..k_f {
            let c = layout.c(i, k);
            lower[c] = config.c_lb;
            upper[c] = config.c_ub;
            names[c] = format!("c_{}_{}", i + 1, k);
            let z = layout.zf(i, k);
            upper[z] = 1.0;
            objective[z] = config.omega1;
            names[z] = format!("zf_{}_{}", i + 1, k);
        }
    }
    for k in 0..k_v {
        let v = layout.v(k);
        lower[v] = config.v_lb;
        upper[v] = config.v_ub;
        names[v] = format!("v_{k}");
        let z = layout.zv(k);
        upper[z] = 1.0;
        objective[z] = config.omega2;
        names[z] = format!("zv_{k}");
    }
    if let (Some(a), Alpha2Mode::Variable { lower: lo, upper: hi }) = (layout.alpha2, config.alpha2) {
        lower[a] = lo;
        upper[a] = hi;
        names[a] = String::from("alpha2");
    }
    let cache_f = BasisCache::new(lib_f, dataset.states().iter().map(|s| s.as_slice()))?;
    // A residual split never needs to exceed the largest residual the
    // coefficient box allows.
    let c_mag = config.c_lb.abs().max(config.c_ub.abs());
    for i in 0..nx {
        for j in 0..n_points {
            let reach = dataset.derivative(j)[i].abs() + (0..k_f).map(|k| c_mag * cache_f.value(j, k).abs()).sum::<f64>();
            for (var, tag) in [(layout.ep(i, j), "ep"), (layout.em(i, j), "em")] {
                upper[var] = reach;
                objective[var] = 1.0 / n_data as f64;
                names[var] = format!("{tag}_{}_{j}", i + 1);
            }
        }
    }

    let mut constraints = Vec::new();
    for i in 0..nx {
        for j in 0..n_points {
            let mut entries: Vec<(usize, f64)> = (0..k_f)
                .map(|k| (layout.c(i, k), cache_f.value(j, k)))
                .filter(|e| e.1 != 0.0)
                .collect();
            entries.push((layout.ep(i, j), 1.0));
            entries.push((layout.em(i, j), -1.0));
            let rhs = dataset.derivative(j)[i];
            constraints.push(Constraint { tag: ConstraintTag::Fit { state: i, point: j }, entries, lo: rhs, hi: rhs });
        }
    }
    let link = |var: usize, z: usize, lb: f64, ub: f64, constraints: &mut Vec<Constraint>| {
        constraints.push(Constraint {
            tag: ConstraintTag::LinkLower { var },
            entries: vec![(var, 1.0), (z, -lb)],
            lo: 0.0,
            hi: f64::INFINITY,
        });
        constraints.push(Constraint {
            tag: ConstraintTag::LinkUpper { var },
            entries: vec![(var, 1.0), (z, -ub)],
            lo: f64::NEG_INFINITY,
            hi: 0.0,
        });
    };
    for i in 0..nx {
        for k in 0..k_f {
            link(layout.c(i, k), layout.zf(i, k), config.c_lb, config.c_ub, &mut constraints);
        }
    }
    for k in 0..k_v {
        link(layout.v(k), layout.zv(k), config.v_lb, config.v_ub, &mut constraints);
    }

    let mut products = Vec::new();
    if config.lyapunov {
        let cache_v = BasisCache::new(lib_v, dataset.states().iter().map(|s| s.as_slice()))?;
        let mut w_used = vec![false; nx * k_f * k_v];
        let mut u_used = vec![false; k_v];
        for j in 0..n_points {
            let x = dataset.state(j);
            let v_entries: Vec<(usize, f64)> = (0..k_v)
                .map(|k| (layout.v(k), cache_v.value(j, k)))
                .filter(|e| e.1 != 0.0)
                .collect();
            let equilibrium = dataset.is_equilibrium(j);
            if equilibrium {
                constraints.push(Constraint {
                    tag: ConstraintTag::Equilibrium { point: j },
                    entries: v_entries.clone(),
                    lo: 0.0,
                    hi: config.delta,
                });
            } else {
                constraints.push(Constraint {
                    tag: ConstraintTag::Positivity { point: j },
                    entries: v_entries.clone(),
                    lo: config.alpha1 * config.norm.eval(x),
                    hi: f64::INFINITY,
                });
            }
            let mut entries = Vec::new();
            for i in 0..nx {
                for k in 0..k_f {
                    let phi = cache_f.value(j, k);
                    if phi == 0.0 {
                        continue;
                    }
                    for kv in 0..k_v {
                        let g = cache_v.grad(j, kv, i);
                        if g != 0.0 {
                            let w = layout.w(i, k, kv);
                            entries.push((w, g * phi));
                            w_used[w - layout.w0] = true;
                        }
                    }
                }
            }
            if equilibrium {
                constraints.push(Constraint {
                    tag: ConstraintTag::EquilibriumDecrease { point: j },
                    entries,
                    lo: 0.0,
                    hi: 0.0,
                });
                continue;
            }
            match config.alpha2 {
                Alpha2Mode::Variable { .. } => {
                    for k in 0..k_v {
                        let phi = cache_v.value(j, k);
                        if phi != 0.0 {
                            entries.push((layout.u(k), phi));
                            u_used[k] = true;
                        }
                    }
                }
                Alpha2Mode::Fixed(a) if a != 0.0 => {
                    entries.extend(v_entries.iter().map(|&(var, phi)| (var, a * phi)));
                }
                Alpha2Mode::Fixed(_) => {}
            }
            constraints.push(Constraint {
                tag: ConstraintTag::Decrease { point: j },
                entries,
                lo: f64::NEG_INFINITY,
                hi: 0.0,
            });
        }
        for i in 0..nx {
            for k in 0..k_f {
                for kv in 0..k_v {
                    let w = layout.w(i, k, kv);
                    names[w] = format!("w_{}_{}_{}", i + 1, k, kv);
                    products.push(Product {
                        aux: w,
                        left: layout.v(kv),
                        right: layout.c(i, k),
                        active: w_used[w - layout.w0],
                        binaries: vec![layout.zf(i, k), layout.zv(kv)],
                    });
                }
            }
        }
        if let Some(a) = layout.alpha2 {
            for k in 0..k_v {
                let u = layout.u(k);
                names[u] = format!("u_{k}");
                products.push(Product {
                    aux: u,
                    left: a,
                    right: layout.v(k),
                    active: u_used[k],
                    binaries: vec![layout.zv(k)],
                });
            }
        }
    }

    constraints.push(Constraint {
        tag: ConstraintTag::BudgetF,
        entries: (0..nx * k_f).map(|t| (layout.zf0 + t, 1.0)).collect(),
        lo: f64::NEG_INFINITY,
        hi: config.budget_f as f64,
    });
    if config.lyapunov {
        constraints.push(Constraint {
            tag: ConstraintTag::BudgetV,
            entries: (0..k_v).map(|k| (layout.zv(k), 1.0)).collect(),
            lo: f64::NEG_INFINITY,
            hi: config.budget_v as f64,
        });
    }

    for p in &products {
        let (lo, hi) = product_range(lower[p.left], upper[p.left], lower[p.right], upper[p.right]);
        lower[p.aux] = lo;
        upper[p.aux] = hi;
    }
    let binaries = (layout.zf0..layout.ep0).collect();
    Ok(MiqcpProblem {
        layout,
        config: config.clone(),
        lib_f: lib_f.clone(),
        lib_v: if config.lyapunov { Some(lib_v.clone()) } else { None },
        lower,
        upper,
        objective,
        binaries,
        constraints,
        products,
        n_cuts: 0,
        n_data,
        names,
    })
}

/// Range of `a * b` over a box.
pub fn product_range(al: f64, au: f64, bl: f64, bu: f64) -> (f64, f64) {
    let c = [al * bl, al * bu, au * bl, au * bu];
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// The four McCormick rows for `w = a * b` as `(coef_w, coef_a, coef_b, lo, hi)`.
pub fn mccormick_rows(al: f64, au: f64, bl: f64, bu: f64) -> [(f64, f64, f64, f64, f64); 4] {
    let inf = f64::INFINITY;
    [
        (1.0, -bl, -al, -al * bl, inf),
        (1.0, -bu, -au, -au * bu, inf),
        (1.0, -bu, -al, -inf, -al * bu),
        (1.0, -bl, -au, -inf, -au * bl),
    ]
}

/// A worst-violated constraint or bound.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationSite {
    Constraint(ConstraintTag),
    Bound(usize),
    Integrality(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub site: ViolationSite,
    pub residual: f64,
}

/// A feasible assignment with exact products.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub values: Vec<f64>,
    pub objective: f64,
    pub fit_loss: f64,
    pub complexity_f: usize,
    pub complexity_v: usize,
    pub max_violation: f64,
}

impl MiqcpProblem {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }
    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }
    pub fn lib_f(&self) -> &BasisLibrary {
        &self.lib_f
    }
    pub fn lib_v(&self) -> Option<&BasisLibrary> {
        self.lib_v.as_ref()
    }
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
    pub fn objective(&self) -> &[f64] {
        &self.objective
    }
    pub fn binaries(&self) -> &[usize] {
        &self.binaries
    }
    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }
    pub fn products(&self) -> &[Product] {
        &self.products
    }
    pub fn active_products(&self) -> impl Iterator<Item = &Product> {
        self.products.iter().filter(|p| p.active)
    }
    pub fn variable_name(&self, var: usize) -> &str {
        &self.names[var]
    }
    /// `N_D`, the number of fitted residuals.
    pub fn n_data(&self) -> usize {
        self.n_data
    }
    pub fn n_cuts(&self) -> usize {
        self.n_cuts
    }

    pub fn count(&self, pred: impl Fn(&ConstraintTag) -> bool) -> usize {
        self.constraints.iter().filter(|c| pred(&c.tag)).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Copy of `x` with every auxiliary set to its exact product.
    pub fn with_exact_products(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for p in &self.products {
            y[p.aux] = y[p.left] * y[p.right];
        }
        y
    }

    /// Largest `|aux - left * right|` over active products.
    pub fn product_violation(&self, x: &[f64]) -> f64 {
        self.active_products().map(|p| (x[p.aux] - x[p.left] * x[p.right]).abs()).fold(0.0, f64::max)
    }

    /// Evaluates every original constraint with exact bilinear products.
    pub fn check_feasible(&self, point: &[f64], tol: f64) -> Result<Incumbent, Violation> {
        assert_eq!(point.len(), self.n_vars(), "assignment must cover all variables");
        let x = self.with_exact_products(point);
        let mut worst = Violation { site: ViolationSite::Bound(0), residual: 0.0 };
        let mut consider = |site: ViolationSite, r: f64| {
            if r > worst.residual {
                worst = Violation { site, residual: r };
            }
        };
        for &z in &self.binaries {
            consider(ViolationSite::Integrality(z), x[z].min(1.0 - x[z]).max(0.0).min(x[z].abs()));
        }
        let is_aux = |j: usize| j >= self.layout.w0;
        for j in 0..self.n_vars() {
            if is_aux(j) {
                continue;
            }
            consider(ViolationSite::Bound(j), (self.lower[j] - x[j]).max(x[j] - self.upper[j]));
        }
        for c in &self.constraints {
            consider(ViolationSite::Constraint(c.tag), c.violation(&x));
        }
        if worst.residual > tol {
            return Err(worst);
        }
        let l = &self.layout;
        let fit_loss = (l.ep0..l.w0).map(|j| x[j]).sum::<f64>() / self.n_data as f64;
        let complexity_f = (l.zf0..l.zv0).filter(|&z| x[z] > 0.5).count();
        let complexity_v = (l.zv0..l.ep0).filter(|&z| x[z] > 0.5).count();
        Ok(Incumbent {
            objective: self.objective_value(&x),
            values: x,
            fit_loss,
            complexity_f,
            complexity_v,
            max_violation: worst.residual,
        })
    }

    /// Linear relaxation over `lower..upper` (full-length bounds): binaries
    /// relaxed to `[0, 1]`, each active product replaced by its McCormick
    /// envelope plus `|aux| <= M z` rows for its binaries. Row structure is
    /// independent of the box, so bases carry over between boxes.
    pub fn mccormick_relax(&self, lower: &[f64], upper: &[f64]) -> Result<LpProblem, MiqcpError> {
        let n = self.n_vars();
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        for j in 0..n {
            if lo[j] > hi[j] {
                return Err(MiqcpError::DegenerateInterval { var: j, lower: lo[j], upper: hi[j] });
            }
        }
        // A binary at zero pins its coefficient to zero.
        let l = &self.layout;
        for (z, var) in (0..l.n_states * l.k_f)
            .map(|t| (l.zf0 + t, l.c0 + t))
            .chain((0..l.k_v).map(|k| (l.zv(k), l.v(k))))
        {
            if hi[z] < 0.5 && lo[var] <= 0.0 && hi[var] >= 0.0 {
                lo[var] = 0.0;
                hi[var] = 0.0;
            }
        }
        for p in &self.products {
            let (a, b) = product_range(lo[p.left], hi[p.left], lo[p.right], hi[p.right]);
            lo[p.aux] = lo[p.aux].max(a);
            hi[p.aux] = hi[p.aux].min(b).max(lo[p.aux]);
        }
        let mut lp = LpProblem::new(n);
        for j in 0..n {
            lp.set_objective(j, self.objective[j]);
            lp.set_bounds(j, lo[j], hi[j]);
        }
        for c in &self.constraints {
            lp.add_ranged_row(&c.entries, c.lo, c.hi);
        }
        for p in self.active_products() {
            let (al, au, bl, bu) = (lo[p.left], hi[p.left], lo[p.right], hi[p.right]);
            for (cw, ca, cb, rlo, rhi) in mccormick_rows(al, au, bl, bu) {
                lp.add_ranged_row(&[(p.aux, cw), (p.left, ca), (p.right, cb)], rlo, rhi);
            }
            let big = al.abs().max(au.abs()) * bl.abs().max(bu.abs());
            for &z in &p.binaries {
                lp.add_row(&[(p.aux, 1.0), (z, -big)], RowKind::Le, 0.0);
                lp.add_row(&[(p.aux, 1.0), (z, big)], RowKind::Ge, 0.0);
            }
        }
        Ok(lp)
    }

    /// LP obtained by fixing the variables given in `fixed`; every product
    /// must then have a fixed factor. Fixed variables keep their columns with
    /// equal bounds, auxiliaries are substituted out.
    pub fn linearize_fixed(&self, fixed: &[Option<f64>]) -> Result<LpProblem, MiqcpError> {
        let n = self.n_vars();
        let mut sub: Vec<Option<(usize, f64, f64)>> = vec![None; n];
        for (idx, p) in self.products.iter().enumerate() {
            sub[p.aux] = Some(match (fixed[p.left], fixed[p.right]) {
                (Some(a), Some(b)) => (usize::MAX, 0.0, a * b),
                (Some(a), None) => (p.right, a, 0.0),
                (None, Some(b)) => (p.left, b, 0.0),
                (None, None) => {
                    if p.active {
                        return Err(MiqcpError::UnfixedProduct(idx));
                    }
                    (usize::MAX, 0.0, 0.0)
                }
            });
        }
        let mut lp = LpProblem::new(n);
        for j in 0..n {
            lp.set_objective(j, self.objective[j]);
            match (fixed[j], sub[j]) {
                (_, Some(_)) => lp.set_bounds(j, 0.0, 0.0),
                (Some(v), None) => lp.set_bounds(j, v, v),
                (None, None) => lp.set_bounds(j, self.lower[j], self.upper[j]),
            }
        }
        let mut entries = Vec::new();
        for c in &self.constraints {
            entries.clear();
            let mut shift = 0.0;
            for &(j, a) in &c.entries {
                match sub[j] {
                    Some((var, factor, constant)) => {
                        if var != usize::MAX {
                            entries.push((var, a * factor));
                        }
                        shift += a * constant;
                    }
                    None => entries.push((j, a)),
                }
            }
            lp.add_ranged_row(&entries, c.lo - shift, c.hi - shift);
        }
        Ok(lp)
    }

    /// Appends the no-good cut excluding `pattern` on the binaries `vars`.
    pub fn add_cut_on(&self, vars: &[usize], pattern: &[bool]) -> Result<MiqcpProblem, MiqcpError> {
        if vars.len() != pattern.len() {
            return Err(MiqcpError::PatternLength { expected: vars.len(), got: pattern.len() });
        }
        let mut out = self.clone();
        let ones = pattern.iter().filter(|&&b| b).count();
        let entries = vars.iter().zip(pattern).map(|(&z, &on)| (z, if on { -1.0 } else { 1.0 })).collect();
        out.constraints.push(Constraint {
            tag: ConstraintTag::IntegerCut { index: self.n_cuts },
            entries,
            lo: 1.0 - ones as f64,
            hi: f64::INFINITY,
        });
        out.n_cuts += 1;
        Ok(out)
    }

    /// Learned dynamics from a full assignment.
    pub fn model(&self, x: &[f64]) -> SparseModel {
        let l = &self.layout;
        let c = x[l.c0..l.c0 + l.n_states * l.k_f].to_vec();
        SparseModel::new(self.lib_f.clone(), c).expect("finite coefficients")
    }

    /// Learned Lyapunov function from a full assignment.
    pub fn lyapunov(&self, x: &[f64]) -> Option<LyapunovFunction> {
        let l = &self.layout;
        let lib = self.lib_v.as_ref()?;
        Some(LyapunovFunction::new(lib.clone(), x[l.v0..l.v0 + l.k_v].to_vec()).expect("finite coefficients"))
    }

    /// Binary values rounded to 0/1.
    pub fn binary_pattern(&self, x: &[f64]) -> Vec<bool> {
        self.binaries.iter().map(|&z| x[z] > 0.5).collect()
    }

    pub fn alpha2_value(&self, x: &[f64]) -> f64 {
        match (self.layout.alpha2, self.config.alpha2) {
            (Some(a), _) => x[a],
            (None, Alpha2Mode::Fixed(a)) => a,
            (None, _) => 0.0,
        }
    }

    /// A full assignment from dynamics and Lyapunov coefficients: binaries
    /// follow the nonzero pattern, residual splits are exact, products exact.
    pub fn assignment(&self, c: &[f64], v: &[f64], alpha2: f64, dataset: &Dataset) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; self.n_vars()];
        x[l.c0..l.c0 + c.len()].copy_from_slice(c);
        for (t, &cv) in c.iter().enumerate() {
            x[l.zf0 + t] = if cv != 0.0 { 1.0 } else { 0.0 };
        }
        for (k, &vv) in v.iter().enumerate().take(l.k_v) {
            x[l.v(k)] = vv;
            x[l.zv(k)] = if vv != 0.0 { 1.0 } else { 0.0 };
        }
        if let Some(a) = l.alpha2 {
            x[a] = alpha2;
        }
        let model = self.model(&x);
        for j in 0..l.n_points {
            let f = crate::dynamics::VectorField::eval(&model, dataset.state(j));
            for i in 0..l.n_states {
                let r = dataset.derivative(j)[i] - f[i];
                x[l.ep(i, j)] = r.max(0.0);
                x[l.em(i, j)] = (-r).max(0.0);
            }
        }
        self.with_exact_products(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_library;
    use crate::dynamics::{make_dataset, BuiltinSystem};
    use crate::lp::{solve_lp, LpStatus};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pendulum_data() -> Dataset {
        make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 400, 0.0, 0, true).unwrap()
    }

    fn pendulum_config() -> ProblemConfig {
        ProblemConfig { c_lb: -1.0, c_ub: 1.0, v_lb: -1.0, v_ub: 1.0, ..ProblemConfig::default() }
    }

    fn energy_assignment(p: &MiqcpProblem, d: &Dataset, scale: f64) -> Vec<f64> {
        let lib = p.lib_f().clone();
        let truth = BuiltinSystem::Pendulum.true_model(&lib).unwrap();
        let v = LyapunovFunction::pendulum_energy(&lib).unwrap();
        let vs: Vec<f64> = v.coefficients().iter().map(|c| c * scale).collect();
        p.assignment(truth.coefficients(), &vs, 1e-5, d)
    }

    #[test]
    fn pendulum_counts() {
        let d = pendulum_data();
        let lib = build_library(2, 2, true);
        let p = assemble(&d, &lib, &lib, &pendulum_config()).unwrap();
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::Fit { .. })), 802);
        assert_eq!(p.products().iter().filter(|q| q.aux >= p.layout().w0 && q.aux < p.layout().u0).count(), 200);
        assert_eq!(p.layout().u_count, 10);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::LinkLower { .. } | ConstraintTag::LinkUpper { .. })), 2 * 20 + 2 * 10);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::Positivity { .. })), 400);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::Equilibrium { .. })), 1);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::Decrease { .. })), 400);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::EquilibriumDecrease { .. })), 1);
        assert_eq!(p.count(|t| matches!(t, ConstraintTag::BudgetF | ConstraintTag::BudgetV)), 2);
        assert_eq!(p.n_data(), 802);
    }

    #[test]
    fn true_pendulum_with_energy_is_feasible() {
        let d = pendulum_data();
        let lib = build_library(2, 2, true);
        let cfg = pendulum_config();
        let p = assemble(&d, &lib, &lib, &cfg).unwrap();
        let x = energy_assignment(&p, &d, 0.9);
        let inc = p.check_feasible(&x, 1e-6).unwrap();
        assert!(inc.fit_loss <= 1e-8);
        assert!(inc.objective <= 1e-8 + cfg.omega1 * 3.0 + cfg.omega2 * 3.0);
        assert_eq!((inc.complexity_f, inc.complexity_v), (3, 3));
    }

    #[test]
    fn all_zero_violates_positivity() {
        let d = pendulum_data();
        let lib = build_library(2, 2, true);
        let p = assemble(&d, &lib, &lib, &pendulum_config()).unwrap();
        let x = p.assignment(&[0.0; 20], &[0.0; 10], 1e-5, &d);
        let err = p.check_feasible(&x, 1e-6).unwrap_err();
        assert!(matches!(err.site, ViolationSite::Constraint(ConstraintTag::Positivity { .. })));
    }

    #[test]
    fn structural_cases() {
        let d = pendulum_data();
        let lib = build_library(2, 1, false);
        let cfg = ProblemConfig { alpha2: Alpha2Mode::Fixed(0.0), budget_f: 0, ..pendulum_config() };
        let p = assemble(&d, &lib, &lib, &cfg).unwrap();
        assert!(p.layout().alpha2.is_none());
        assert_eq!(p.layout().u_count, 0);
        // A linear V cannot be positive around a spiral.
        let lp = p.mccormick_relax(p.lower(), p.upper()).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
        let lyap_free = ProblemConfig { lyapunov: false, ..cfg };
        let q = assemble(&d, &lib, &lib, &lyap_free).unwrap();
        assert!(q.products().is_empty());
        assert_eq!(q.layout().k_v, 0);
        let s = solve_lp(&q.mccormick_relax(q.lower(), q.upper()).unwrap()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let l = q.layout();
        assert!(s.x[l.c0..l.v0].iter().all(|&c| c.abs() < 1e-9));
    }

    #[test]
    fn assembly_errors() {
        let d = pendulum_data();
        let lib = build_library(2, 2, true);
        let lib3 = build_library(3, 1, false);
        assert!(matches!(assemble(&d, &lib3, &lib, &pendulum_config()), Err(MiqcpError::Dimension { .. })));
        let empty = BasisLibrary::new(2, Vec::new()).unwrap();
        assert!(matches!(assemble(&d, &empty, &lib, &pendulum_config()), Err(MiqcpError::EmptyLibrary)));
        let no_eq = make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 20, 0.0, 0, false).unwrap();
        assert!(matches!(assemble(&no_eq, &lib, &lib, &pendulum_config()), Err(MiqcpError::NoEquilibrium)));
        let bad = ProblemConfig { alpha1: 0.0, ..pendulum_config() };
        assert!(matches!(assemble(&d, &lib, &lib, &bad), Err(MiqcpError::Config(_))));
    }

    #[test]
    fn envelope_examples() {
        // a, b in [-1, 1] at (0, 0): w in [-1, 1].
        let rows = mccormick_rows(-1.0, 1.0, -1.0, 1.0);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (cw, _, _, rlo, rhi) in rows {
            lo = lo.max(rlo / cw);
            hi = hi.min(rhi / cw);
        }
        assert_eq!((lo, hi), (-1.0, 1.0));
        // a, b in [0, 1] at (1, 1): w = 1.
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (cw, ca, cb, rlo, rhi) in mccormick_rows(0.0, 1.0, 0.0, 1.0) {
            lo = lo.max((rlo - ca - cb) / cw);
            hi = hi.min((rhi - ca - cb) / cw);
        }
        assert_eq!((lo, hi), (1.0, 1.0));
        assert!(matches!(
            assemble(&pendulum_data(), &build_library(2, 1, false), &build_library(2, 1, false), &pendulum_config())
                .unwrap()
                .mccormick_relax(&[1.0; 100], &[0.0; 100]),
            Err(MiqcpError::DegenerateInterval { .. })
        ));
    }

    proptest! {
        #[test]
        fn envelopes_contain_products(
            al in -5.0f64..5.0, aw in 0.0f64..5.0, bl in -5.0f64..5.0, bw in 0.0f64..5.0,
            s in 0.0f64..1.0, t in 0.0f64..1.0,
        ) {
            let (au, bu) = (al + aw, bl + bw);
            let a = al + s * aw;
            let b = bl + t * bw;
            let w = a * b;
            for (cw, ca, cb, lo, hi) in mccormick_rows(al, au, bl, bu) {
                let act = cw * w + ca * a + cb * b;
                let scale = 1e-9 * (1.0 + w.abs() + (ca * a).abs() + (cb * b).abs());
                prop_assert!(act >= lo - scale && act <= hi + scale);
            }
        }
    }

    #[test]
    fn relaxation_keeps_feasible_points() {
        let d = make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 40, 0.0, 0, true).unwrap();
        let lib = build_library(2, 2, true);
        let p = assemble(&d, &lib, &lib, &pendulum_config()).unwrap();
        let x = energy_assignment(&p, &d, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            // Random sub-box of the root box that still contains x.
            let mut lo = p.lower().to_vec();
            let mut hi = p.upper().to_vec();
            for j in 0..p.layout().core_len() {
                if p.binaries().contains(&j) {
                    continue;
                }
                lo[j] = x[j] - rng.gen_range(0.0..1.0) * (x[j] - lo[j]);
                hi[j] = x[j] + rng.gen_range(0.0..1.0) * (hi[j] - x[j]);
            }
            let lp = p.mccormick_relax(&lo, &hi).unwrap();
            assert!(lp.max_violation(&x) <= 1e-9, "{}", lp.max_violation(&x));
        }
        let root = solve_lp(&p.mccormick_relax(p.lower(), p.upper()).unwrap()).unwrap();
        assert!(root.objective <= p.check_feasible(&x, 1e-6).unwrap().objective + 1e-9);
    }

    #[test]
    fn integer_cut_excludes_pattern() {
        let d = pendulum_data();
        let lib = build_library(2, 2, true);
        let p = assemble(&d, &lib, &lib, &pendulum_config()).unwrap();
        let x = energy_assignment(&p, &d, 0.9);
        let pat = p.binary_pattern(&x);
        let q = p.add_cut_on(p.binaries(), &pat).unwrap();
        let err = q.check_feasible(&x, 1e-6).unwrap_err();
        assert_eq!(err.site, ViolationSite::Constraint(ConstraintTag::IntegerCut { index: 0 }));
        assert!(p.add_cut_on(p.binaries(), &pat[1..]).is_err());
    }

    #[test]
    fn linearization_with_fixed_lyapunov_is_exact() {
        let d = make_dataset(&BuiltinSystem::Pendulum, &[-2.0, -1.5], 0.05, 60, 0.0, 0, true).unwrap();
        let lib = build_library(2, 2, true);
        let p = assemble(&d, &lib, &lib, &pendulum_config()).unwrap();
        let x = energy_assignment(&p, &d, 0.9);
        let l = p.layout();
        let mut fixed = vec![None; p.n_vars()];
        for j in l.v0..l.ep0 {
            fixed[j] = Some(x[j]);
        }
        let lp = p.linearize_fixed(&fixed).unwrap();
        let mut reduced = x.clone();
        for q in p.products() {
            reduced[q.aux] = 0.0;
        }
        assert!(lp.max_violation(&reduced) <= 1e-9);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let full = p.with_exact_products(&s.x);
        assert!(p.check_feasible(&full, 1e-6).is_ok());
        assert!(s.objective <= p.objective_value(&x) + 1e-9);
    }
}
