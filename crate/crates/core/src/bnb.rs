//! Spatial branch-and-bound over McCormick relaxations.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::lp::{solve_lp_with, Basis, LpOptions, LpProblem, LpSolution, LpStatus};
use crate::miqcp::{Incumbent, MiqcpError, MiqcpProblem};

/// Seconds since the start of a solve. The core crate has no clock of its
/// own; [`NoClock`] disables time limits.
pub trait Clock {
    fn seconds(&self) -> f64;
}

pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbOptions {
    pub gap_tol: f64,
    /// Seconds; only honored with a real [`Clock`].
    pub time_limit: f64,
    pub node_limit: usize,
    pub feas_tol: f64,
    /// Absolute slack in the pruning test `bound >= UB - slack`.
    pub prune_slack: f64,
    /// Emit a progress event every this many nodes (0 disables).
    pub log_every: usize,
    /// Local refinement attempts per binary pattern.
    pub refine_per_pattern: usize,
    pub lp: LpOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            time_limit: f64::INFINITY,
            node_limit: usize::MAX,
            feas_tol: 1e-6,
            prune_slack: 1e-9,
            log_every: 0,
            refine_per_pattern: 3,
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GapReached,
    Infeasible,
    NodeLimit,
    TimeLimit,
    /// Search ended but some node relaxations failed numerically, so neither
    /// optimality nor infeasibility is certified.
    Unresolved,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::GapReached => "gap_reached",
            Termination::Infeasible => "infeasible",
            Termination::NodeLimit => "node_limit",
            Termination::TimeLimit => "time_limit",
            Termination::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub nodes: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap: f64,
    pub elapsed: f64,
    pub open: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncumbentSource {
    Relaxation,
    LocalRefine,
    Rounding,
    Polish,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeInfo<'a> {
    /// Node box over the branching variables.
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub depth: usize,
    pub lp_status: LpStatus,
    pub lp_iterations: usize,
    pub bound: f64,
}

pub enum Event<'a> {
    Progress(Progress),
    /// One per processed node, after its relaxation.
    Node(NodeInfo<'a>),
    Incumbent { incumbent: &'a Incumbent, source: IncumbentSource, nodes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub incumbent: Option<Incumbent>,
    pub lower_bound: f64,
    /// `(UB - LB) / max(|UB|, 1e-9)`, infinite without an incumbent.
    pub gap: f64,
    pub nodes: usize,
    pub wall_time: f64,
    pub termination: Termination,
    pub lp_iterations: usize,
    pub failed_nodes: usize,
    /// Relaxations re-solved from scratch after a warm start broke down.
    pub cold_restarts: usize,
    pub incumbent_updates: usize,
}

impl SolveReport {
    pub fn upper_bound(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective)
    }
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
    bound: f64,
    depth: usize,
    id: usize,
    basis: Option<Rc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Max-heap order: lowest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

pub fn gap(upper: f64, lower: f64) -> f64 {
    if upper.is_finite() {
        ((upper - lower) / upper.abs().max(1e-9)).max(0.0)
    } else {
        f64::INFINITY
    }
}

/// Solves without a clock or observer.
pub fn solve(problem: &MiqcpProblem, opts: &BnbOptions) -> SolveReport {
    solve_with(problem, opts, &NoClock, &mut |_| {})
}

pub fn solve_with(
    problem: &MiqcpProblem,
    opts: &BnbOptions,
    clock: &dyn Clock,
    observer: &mut dyn FnMut(&Event),
) -> SolveReport {
    Search::new(problem, opts, clock, observer).run()
}

struct Search<'a, 'o> {
    problem: &'a MiqcpProblem,
    opts: &'a BnbOptions,
    clock: &'a dyn Clock,
    observer: &'o mut dyn FnMut(&Event),
    core: usize,
    root_width: Vec<f64>,
    heap: BinaryHeap<Node>,
    incumbent: Option<Incumbent>,
    next_id: usize,
    nodes: usize,
    lp_iterations: usize,
    failed_nodes: usize,
    cold_restarts: usize,
    failed_floor: f64,
    lower_bound: f64,
    incumbent_updates: usize,
    refine_attempts: BTreeMap<Vec<bool>, usize>,
}

enum Branch {
    Binary(usize),
    Spatial(usize, f64),
}

impl<'a, 'o> Search<'a, 'o> {
    fn new(
        problem: &'a MiqcpProblem,
        opts: &'a BnbOptions,
        clock: &'a dyn Clock,
        observer: &'o mut dyn FnMut(&Event),
    ) -> Self {
        let core = problem.layout().core_len();
        let root_width = (0..core).map(|j| problem.upper()[j] - problem.lower()[j]).collect();
        Self {
            problem,
            opts,
            clock,
            observer,
            core,
            root_width,
            heap: BinaryHeap::new(),
            incumbent: None,
            next_id: 0,
            nodes: 0,
            lp_iterations: 0,
            failed_nodes: 0,
            cold_restarts: 0,
            failed_floor: f64::INFINITY,
            lower_bound: f64::NEG_INFINITY,
            incumbent_updates: 0,
            refine_attempts: BTreeMap::new(),
        }
    }

    fn upper_bound(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective)
    }

    fn current_lower(&self) -> f64 {
        let open = self.heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let lb = open.min(self.failed_floor).min(self.upper_bound());
        lb.max(self.lower_bound)
    }

    fn push(&mut self, lower: Vec<f64>, upper: Vec<f64>, bound: f64, depth: usize, basis: Option<Rc<Basis>>) {
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Node { lower, upper, bound, depth, id, basis });
    }

    fn full_bounds(&self, node: &Node) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.problem.lower().to_vec();
        let mut hi = self.problem.upper().to_vec();
        lo[..self.core].copy_from_slice(&node.lower);
        hi[..self.core].copy_from_slice(&node.upper);
        (lo, hi)
    }

    fn solve_relaxation(&mut self, lp: &LpProblem, warm: Option<&Basis>) -> Option<LpSolution> {
        // A warm start that needs more pivots than a cold solve usually does
        // is abandoned early.
        let budget = if warm.is_some() { 2 * (lp.n_rows() + lp.n_vars()) } else { usize::MAX };
        let lp_opts = LpOptions { max_iterations: self.opts.lp.max_iterations.min(budget), ..self.opts.lp.clone() };
        let first = solve_lp_with(lp, &lp_opts, warm).ok()?;
        self.lp_iterations += first.iterations;
        if matches!(first.status, LpStatus::Optimal | LpStatus::Infeasible) || warm.is_none() {
            return Some(first);
        }
        self.cold_restarts += 1;
        let cold = solve_lp_with(lp, &self.opts.lp, None).ok()?;
        self.lp_iterations += cold.iterations;
        Some(cold)
    }

    fn offer(&mut self, inc: Incumbent, source: IncumbentSource) {
        if inc.objective < self.upper_bound() - 1e-12 {
            self.incumbent_updates += 1;
            (self.observer)(&Event::Incumbent { incumbent: &inc, source, nodes: self.nodes });
            self.incumbent = Some(inc);
        }
    }

    fn try_refine(&mut self, x: &[f64], source: IncumbentSource) {
        let pattern = self.problem.binary_pattern(x);
        let tried = self.refine_attempts.entry(pattern.clone()).or_insert(0);
        if *tried >= self.opts.refine_per_pattern {
            return;
        }
        *tried += 1;
        if let Some(inc) = local_refine(self.problem, &pattern, x, self.opts) {
            let improved = inc.objective < self.upper_bound() - 1e-12;
            self.offer(inc, source);
            if improved {
                self.polish();
            }
        }
    }

    /// Greedy support reduction of the incumbent: switch off one active
    /// binary at a time, smallest coefficient relative to its bound first,
    /// and refine. Restarts from every improvement.
    fn polish(&mut self) {
        let l = self.problem.layout();
        let lower = self.problem.lower();
        let upper = self.problem.upper();
        let binaries = self.problem.binaries();
        'outer: while let Some(inc) = self.incumbent.clone() {
            let pattern = self.problem.binary_pattern(&inc.values);
            let mut on: Vec<(f64, usize)> = (0..binaries.len())
                .filter(|&b| pattern[b])
                .map(|b| {
                    let z = binaries[b];
                    let var = if z < l.zv0 { l.c0 + z - l.zf0 } else { l.v0 + z - l.zv0 };
                    let scale = lower[var].abs().max(upper[var].abs()).max(1e-12);
                    (inc.values[var].abs() / scale, b)
                })
                .collect();
            on.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, b) in on {
                let mut reduced = pattern.clone();
                reduced[b] = false;
                let tried = self.refine_attempts.entry(reduced.clone()).or_insert(0);
                if *tried >= self.opts.refine_per_pattern {
                    continue;
                }
                *tried += 1;
                if let Some(cand) = local_refine(self.problem, &reduced, &inc.values, self.opts) {
                    if cand.objective < self.upper_bound() - 1e-12 {
                        self.offer(cand, IncumbentSource::Polish);
                        continue 'outer;
                    }
                }
            }
            break;
        }
    }

    /// Budget-respecting rounding of a fractional point followed by refinement.
    fn try_rounding(&mut self, x: &[f64]) {
        let l = self.problem.layout();
        let cfg = self.problem.config();
        let mut rounded = x.to_vec();
        let groups = [(l.zf0, l.zv0, l.c0, cfg.budget_f), (l.zv0, l.ep0, l.v0, cfg.budget_v)];
        for (z0, z1, var0, budget) in groups {
            let mut order: Vec<usize> = (z0..z1).collect();
            let score = |z: usize| x[z].max(x[var0 + z - z0].abs() * 1e-3);
            order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
            for (rank, &z) in order.iter().enumerate() {
                rounded[z] = if rank < budget && x[z] > 1e-6 { 1.0 } else { 0.0 };
            }
        }
        self.try_refine(&rounded, IncumbentSource::Rounding);
    }

    fn choose_branch(&self, node: &Node, x: &[f64]) -> Option<Branch> {
        let mut best: Option<(usize, f64)> = None;
        for &z in self.problem.binaries() {
            if node.lower[z] == node.upper[z] {
                continue;
            }
            let frac = x[z].min(1.0 - x[z]);
            if frac > self.opts.feas_tol && best.map_or(true, |(_, f)| frac > f) {
                best = Some((z, frac));
            }
        }
        if let Some((z, _)) = best {
            return Some(Branch::Binary(z));
        }
        let mut worst: Option<(usize, f64)> = None;
        for (idx, p) in self.problem.products().iter().enumerate() {
            if !p.active {
                continue;
            }
            let v = (x[p.aux] - x[p.left] * x[p.right]).abs();
            if v > 0.0 && worst.map_or(true, |(_, w)| v > w) {
                worst = Some((idx, v));
            }
        }
        let (idx, _) = worst?;
        let p = &self.problem.products()[idx];
        let rel = |j: usize| (node.upper[j] - node.lower[j]) / self.root_width[j].max(1e-300);
        let var = if rel(p.left) >= rel(p.right) { p.left } else { p.right };
        let (lo, hi) = (node.lower[var], node.upper[var]);
        if hi - lo <= 0.0 {
            return None;
        }
        let split = x[var].clamp(lo + 0.2 * (hi - lo), lo + 0.8 * (hi - lo));
        Some(Branch::Spatial(var, split))
    }

    /// Branch without relaxation information: first open binary, otherwise
    /// bisect the widest product factor.
    fn fallback_branch(&self, node: &Node) -> Option<Branch> {
        if let Some(&z) = self.problem.binaries().iter().find(|&&z| node.lower[z] < node.upper[z]) {
            return Some(Branch::Binary(z));
        }
        let mut best: Option<(usize, f64)> = None;
        for p in self.problem.active_products() {
            for var in [p.left, p.right] {
                let r = (node.upper[var] - node.lower[var]) / self.root_width[var].max(1e-300);
                if r > 1e-6 && best.map_or(true, |(_, b)| r > b) {
                    best = Some((var, r));
                }
            }
        }
        best.map(|(var, _)| Branch::Spatial(var, 0.5 * (node.lower[var] + node.upper[var])))
    }

    fn split(&mut self, node: &Node, branch: Branch, bound: f64, basis: Option<Rc<Basis>>) {
        let (var, at) = match branch {
            Branch::Binary(z) => {
                let mut up0 = node.upper.clone();
                up0[z] = 0.0;
                self.push(node.lower.clone(), up0, bound, node.depth + 1, basis.clone());
                let mut lo1 = node.lower.clone();
                lo1[z] = 1.0;
                self.push(lo1, node.upper.clone(), bound, node.depth + 1, basis);
                return;
            }
            Branch::Spatial(var, at) => (var, at),
        };
        let mut left_hi = node.upper.clone();
        left_hi[var] = at;
        self.push(node.lower.clone(), left_hi, bound, node.depth + 1, basis.clone());
        let mut right_lo = node.lower.clone();
        right_lo[var] = at;
        self.push(right_lo, node.upper.clone(), bound, node.depth + 1, basis);
    }

    fn fail(&mut self, node: &Node) {
        self.failed_nodes += 1;
        match self.fallback_branch(node) {
            Some(b) => self.split(node, b, node.bound, node.basis.clone()),
            None => self.failed_floor = self.failed_floor.min(node.bound),
        }
    }

    fn process(&mut self, node: Node) {
        let (lo, hi) = self.full_bounds(&node);
        let lp = match self.problem.mccormick_relax(&lo, &hi) {
            Ok(lp) => lp,
            Err(MiqcpError::DegenerateInterval { .. }) => return,
            Err(_) => return self.fail(&node),
        };
        let Some(sol) = self.solve_relaxation(&lp, node.basis.as_deref()) else {
            return self.fail(&node);
        };
        let info = NodeInfo {
            lower: &node.lower,
            upper: &node.upper,
            depth: node.depth,
            lp_status: sol.status,
            lp_iterations: sol.iterations,
            bound: sol.objective,
        };
        (self.observer)(&Event::Node(info));
        match sol.status {
            LpStatus::Infeasible => return,
            LpStatus::Optimal => {}
            _ => return self.fail(&node),
        }
        let bound = sol.objective.max(node.bound);
        if bound >= self.upper_bound() - self.opts.prune_slack {
            return;
        }
        let x = sol.x;
        if node.depth == 0 {
            self.try_rounding(&x);
        }
        let integral = self
            .problem
            .binaries()
            .iter()
            .all(|&z| x[z].min(1.0 - x[z]) <= self.opts.feas_tol);
        if integral {
            if self.problem.product_violation(&x) <= self.opts.feas_tol {
                if let Ok(inc) = self.problem.check_feasible(&x, self.opts.feas_tol) {
                    let exact = inc.objective;
                    self.offer(inc, IncumbentSource::Relaxation);
                    if exact <= bound + self.opts.prune_slack {
                        return;
                    }
                }
            }
            self.try_refine(&x, IncumbentSource::LocalRefine);
            if bound >= self.upper_bound() - self.opts.prune_slack {
                return;
            }
        }
        let node = self.tighten(node, &lp, &sol.reduced_costs, &x, bound);
        let basis = sol.basis.map(Rc::new);
        match self.choose_branch(&node, &x) {
            Some(b) => self.split(&node, b, bound, basis),
            None => {
                // Relaxation point is exact yet failed the original check.
                let node = Node { bound, basis, ..node };
                self.fail(&node)
            }
        }
    }

    /// Reduced-cost bound tightening: moving a nonbasic variable by `t` off
    /// its bound raises the relaxation bound by at least `|d| t`, so the part
    /// of the box where that exceeds the incumbent is dropped.
    fn tighten(&self, mut node: Node, lp: &LpProblem, d: &[f64], x: &[f64], bound: f64) -> Node {
        let ub = self.upper_bound();
        if !ub.is_finite() {
            return node;
        }
        let room = ub - bound + 1e-9 * ub.abs().max(1.0);
        let binary_end = self.problem.layout().ep0;
        let binary_start = self.problem.layout().zf0;
        for j in 0..self.core {
            let (lo, hi) = (node.lower[j], node.upper[j]);
            if hi <= lo || d[j].abs() <= 1e-7 {
                continue;
            }
            let binary = (binary_start..binary_end).contains(&j);
            if d[j] > 0.0 && x[j] <= lp.lower()[j] + 1e-9 {
                let cap = lp.lower()[j] + room / d[j];
                if binary {
                    if cap < 1.0 {
                        node.upper[j] = lo;
                    }
                } else if cap < hi {
                    node.upper[j] = cap.max(lo);
                }
            } else if d[j] < 0.0 && x[j] >= lp.upper()[j] - 1e-9 {
                let floor = lp.upper()[j] + room / d[j];
                if binary {
                    if floor > 0.0 {
                        node.lower[j] = hi;
                    }
                } else if floor > lo {
                    node.lower[j] = floor.min(hi);
                }
            }
        }
        node
    }

    fn progress(&mut self) {
        let lb = self.current_lower();
        let ub = self.upper_bound();
        let p = Progress {
            nodes: self.nodes,
            lower_bound: lb,
            upper_bound: ub,
            gap: gap(ub, lb),
            elapsed: self.clock.seconds(),
            open: self.heap.len(),
        };
        (self.observer)(&Event::Progress(p));
    }

    fn run(mut self) -> SolveReport {
        let core = self.core;
        let root_lo = self.problem.lower()[..core].to_vec();
        let root_hi = self.problem.upper()[..core].to_vec();
        self.push(root_lo, root_hi, f64::NEG_INFINITY, 0, None);
        let termination = loop {
            self.lower_bound = self.current_lower();
            let ub = self.upper_bound();
            if self.heap.is_empty() {
                break if self.failed_nodes > 0 && self.failed_floor < ub {
                    Termination::Unresolved
                } else if self.incumbent.is_some() {
                    Termination::GapReached
                } else {
                    Termination::Infeasible
                };
            }
            if self.incumbent.is_some() && gap(ub, self.lower_bound) <= self.opts.gap_tol {
                break Termination::GapReached;
            }
            if self.nodes >= self.opts.node_limit {
                break Termination::NodeLimit;
            }
            if self.clock.seconds() >= self.opts.time_limit {
                break Termination::TimeLimit;
            }
            let node = self.heap.pop().unwrap();
            if node.bound >= ub - self.opts.prune_slack {
                continue;
            }
            self.nodes += 1;
            self.process(node);
            if self.opts.log_every > 0 && self.nodes % self.opts.log_every == 0 {
                self.progress();
            }
        };
        self.lower_bound = self.current_lower();
        if self.opts.log_every > 0 {
            self.progress();
        }
        let ub = self.upper_bound();
        SolveReport {
            lower_bound: if termination == Termination::Infeasible { f64::INFINITY } else { self.lower_bound },
            gap: gap(ub, self.lower_bound),
            incumbent: self.incumbent,
            nodes: self.nodes,
            wall_time: self.clock.seconds(),
            termination,
            lp_iterations: self.lp_iterations,
            failed_nodes: self.failed_nodes,
            cold_restarts: self.cold_restarts,
            incumbent_updates: self.incumbent_updates,
        }
    }
}

/// Appends the no-good cut excluding `pattern` on all binaries.
pub fn add_integer_cut(problem: &MiqcpProblem, pattern: &[bool]) -> Result<MiqcpProblem, MiqcpError> {
    problem.add_cut_on(problem.binaries(), pattern)
}

/// Alternating linearization with the binaries fixed to `pattern`.
///
/// The decay rate is held at its lower bound: positivity rows make `V >= 0`
/// at every non-equilibrium record, so a smaller rate only relaxes the
/// decrease rows and never changes the objective.
pub fn local_refine(
    problem: &MiqcpProblem,
    pattern: &[bool],
    start: &[f64],
    opts: &BnbOptions,
) -> Option<Incumbent> {
    let mut trace = Vec::new();
    local_refine_traced(problem, pattern, start, opts, &mut trace)
}

/// As [`local_refine`], recording the objective after every dynamics step.
pub fn local_refine_traced(
    problem: &MiqcpProblem,
    pattern: &[bool],
    start: &[f64],
    opts: &BnbOptions,
    trace: &mut Vec<f64>,
) -> Option<Incumbent> {
    let l = problem.layout();
    if pattern.len() != problem.binaries().len() {
        return None;
    }
    let n = problem.n_vars();
    let lower = problem.lower();
    let upper = problem.upper();
    let mut base: Vec<Option<f64>> = vec![None; n];
    for (&z, &on) in problem.binaries().iter().zip(pattern) {
        base[z] = Some(if on { 1.0 } else { 0.0 });
    }
    if let Some(a) = l.alpha2 {
        base[a] = Some(lower[a]);
    }
    let coupled = |var: usize| -> Option<usize> {
        if var >= l.c0 && var < l.v0 {
            Some(l.zf0 + var - l.c0)
        } else if var >= l.v0 && var < l.v0 + l.k_v {
            Some(l.zv(var - l.v0))
        } else {
            None
        }
    };
    let mut cur: Vec<f64> = start.to_vec();
    for j in l.c0..l.v0 + l.k_v {
        cur[j] = if base[coupled(j).unwrap()] == Some(0.0) { 0.0 } else { cur[j].clamp(lower[j], upper[j]) };
    }
    let fix_range = |fixed: &mut Vec<Option<f64>>, range: core::ops::Range<usize>, cur: &[f64]| {
        for j in range {
            fixed[j] = Some(cur[j]);
        }
    };
    let mut warm_a: Option<Basis> = None;
    let mut warm_b: Option<Basis> = None;
    let mut best: Option<Incumbent> = None;
    let mut last = f64::INFINITY;
    let solve = |lp: &LpProblem, warm: &mut Option<Basis>| -> Option<Vec<f64>> {
        let s = solve_lp_with(lp, &opts.lp, warm.as_ref()).ok()?;
        let s = if s.status == LpStatus::NumericalFailure && warm.is_some() {
            solve_lp_with(lp, &opts.lp, None).ok()?
        } else {
            s
        };
        if s.status != LpStatus::Optimal {
            return None;
        }
        *warm = s.basis;
        Some(s.x)
    };
    // Dynamics step with V fixed, or V step with dynamics fixed.
    let step_a = |cur: &[f64], warm: &mut Option<Basis>| -> Option<Vec<f64>> {
        let mut fixed = base.clone();
        fix_range(&mut fixed, l.v0..l.v0 + l.k_v, cur);
        let lp = problem.linearize_fixed(&fixed).ok()?;
        solve(&lp, warm)
    };
    let step_b = |cur: &[f64], warm: &mut Option<Basis>| -> Option<Vec<f64>> {
        let mut fixed = base.clone();
        fix_range(&mut fixed, l.c0..l.v0, cur);
        fix_range(&mut fixed, l.ep0..l.w0, cur);
        let lp = problem.linearize_fixed(&fixed).ok()?;
        solve(&lp, warm)
    };
    let accept = |x: &[f64], best: &mut Option<Incumbent>| -> Option<f64> {
        let inc = problem.check_feasible(x, opts.feas_tol).ok()?;
        let obj = inc.objective;
        if best.as_ref().map_or(true, |b| obj < b.objective) {
            *best = Some(inc);
        }
        Some(obj)
    };
    let mut first_a = step_a(&cur, &mut warm_a);
    if first_a.is_none() && l.k_v > 0 {
        // Start from the dynamics side when the starting V is infeasible.
        let mut seeded = cur.clone();
        let fit = fit_only(problem, &base, &cur, opts)?;
        seeded[l.c0..l.v0].copy_from_slice(&fit[l.c0..l.v0]);
        seeded[l.ep0..l.w0].copy_from_slice(&fit[l.ep0..l.w0]);
        let v = step_b(&seeded, &mut warm_b)?;
        cur = problem.with_exact_products(&v);
        first_a = step_a(&cur, &mut warm_a);
    }
    let mut x = problem.with_exact_products(&first_a?);
    for _round in 0..50 {
        let obj = accept(&x, &mut best)?;
        trace.push(obj);
        if last - obj < 1e-9 {
            break;
        }
        last = obj;
        if l.k_v == 0 {
            break;
        }
        let Some(v) = step_b(&x, &mut warm_b) else { break };
        let v = problem.with_exact_products(&v);
        let Some(c) = step_a(&v, &mut warm_a) else { break };
        x = problem.with_exact_products(&c);
    }
    best
}

/// Least-absolute-deviation fit of the dynamics alone on the pattern.
fn fit_only(problem: &MiqcpProblem, base: &[Option<f64>], cur: &[f64], opts: &BnbOptions) -> Option<Vec<f64>> {
    let l = problem.layout();
    let mut lp = LpProblem::new(problem.n_vars());
    for j in 0..problem.n_vars() {
        lp.set_objective(j, problem.objective()[j]);
        match base[j] {
            Some(v) => lp.set_bounds(j, v, v),
            None if j < l.v0 || (j >= l.ep0 && j < l.w0) => lp.set_bounds(j, problem.lower()[j], problem.upper()[j]),
            None => lp.set_bounds(j, cur[j], cur[j]),
        }
    }
    for (t, _) in (l.c0..l.v0).enumerate() {
        if base[l.zf0 + t] == Some(0.0) {
            lp.set_bounds(l.c0 + t, 0.0, 0.0);
        }
    }
    for c in problem.constraints() {
        if let crate::miqcp::ConstraintTag::Fit { .. } = c.tag {
            lp.add_ranged_row(&c.entries, c.lo, c.hi);
        }
    }
    let s = solve_lp_with(&lp, &opts.lp, None).ok()?;
    s.is_optimal().then_some(s.x)
}

#[cfg(test)]
mod tests;
