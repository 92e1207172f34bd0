use alloc::vec;
use alloc::vec::Vec;

use super::factor::{Columns, Factor, NONE};
use super::{Basis, LpError, LpOptions, LpProblem, LpSolution, LpStatus, Sense, VarStatus};

/// Solves `p`, optionally starting from `warm`. A warm basis from a problem
/// of the same shape is accepted even if bounds or coefficients changed.
pub fn solve_lp_with(
    p: &LpProblem,
    opts: &LpOptions,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    p.validate()?;
    let nt = p.n_vars() + p.n_rows();
    if let Some(b) = warm {
        if b.status.len() != nt {
            return Err(LpError::BasisShape);
        }
    }
    let mut s = Simplex::new(p, opts);
    let started = match warm {
        Some(b) => s.start_warm(b) || s.start_cold(),
        None => s.start_cold(),
    };
    if !started {
        return Ok(s.finish(LpStatus::NumericalFailure));
    }
    let status = if opts.dual { s.dual_then_primal() } else { s.iterate() };
    Ok(s.finish(status))
}

struct Candidate {
    pos: usize,
    ratio: f64,
    target: f64,
}

struct Simplex<'a> {
    p: &'a LpProblem,
    opts: &'a LpOptions,
    n: usize,
    m: usize,
    cols: Columns,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    head: Vec<usize>,
    pos: Vec<usize>,
    factor: Option<Factor>,
    weight: Vec<f64>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    rowbuf: Vec<f64>,
    posbuf: Vec<f64>,
    iterations: usize,
    base_cost: Vec<f64>,
    d: Vec<f64>,
    dse: Vec<f64>,
    rho: Vec<f64>,
    arow: Vec<f64>,
    tau: Vec<f64>,
}

enum DualEnd {
    Optimal,
    Infeasible,
    Stopped,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProblem, opts: &'a LpOptions) -> Self {
        let n = p.n_vars();
        let m = p.n_rows();
        let nt = n + m;
        let sign = match p.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; nt];
        for (j, c) in p.objective().iter().enumerate() {
            cost[j] = sign * c;
        }
        let mut lo = p.lower().to_vec();
        let mut up = p.upper().to_vec();
        // One-sided rows get their implied activity range as the missing
        // bound, so their logicals are boxed and the dual can flip them.
        for r in 0..m {
            let (mut l, mut u) = p.row_bounds(r);
            let (cols, vals) = p.row(r);
            let (mut amin, mut amax) = (0.0, 0.0);
            for (&c, &a) in cols.iter().zip(vals) {
                let (xl, xu) = (p.lower()[c], p.upper()[c]);
                if a > 0.0 {
                    amin += a * xl;
                    amax += a * xu;
                } else {
                    amin += a * xu;
                    amax += a * xl;
                }
            }
            if l == f64::NEG_INFINITY && amin.is_finite() && amin < u {
                l = amin;
            }
            if u == f64::INFINITY && amax.is_finite() && amax > l {
                u = amax;
            }
            lo.push(l);
            up.push(u);
        }
        let cols = Columns::build(p);
        let weight = (0..nt)
            .map(|j| 1.0 + cols.col(j).1.iter().map(|a| a * a).sum::<f64>())
            .collect();
        Self {
            p,
            opts,
            n,
            m,
            cols,
            cost: cost.clone(),
            lo,
            up,
            x: vec![0.0; nt],
            head: Vec::new(),
            pos: vec![NONE; nt],
            factor: None,
            weight,
            y: vec![0.0; m],
            alpha: vec![0.0; m],
            rowbuf: vec![0.0; m],
            posbuf: vec![0.0; m],
            iterations: 0,
            base_cost: cost.clone(),
            d: vec![0.0; nt],
            dse: vec![1.0; m],
            rho: vec![0.0; m],
            arow: vec![0.0; nt],
            tau: vec![0.0; m],
        }
    }

    fn nonbasic_value(&self, j: usize, prefer_upper: bool) -> f64 {
        let (l, u) = (self.lo[j], self.up[j]);
        match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                if prefer_upper {
                    u
                } else {
                    l
                }
            }
            (true, false) => l,
            (false, true) => u,
            (false, false) => 0.0,
        }
    }

    fn set_head(&mut self, head: Vec<usize>) {
        for j in 0..self.pos.len() {
            self.pos[j] = NONE;
        }
        for (p, &j) in head.iter().enumerate() {
            self.pos[j] = p;
        }
        self.head = head;
    }

    fn start_cold(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        for j in 0..n + m {
            self.x[j] = self.nonbasic_value(j, false);
        }
        let mut head: Vec<usize> = (n..n + m).collect();
        // Equality rows: prefer a one-entry structural column over the fixed logical.
        let mut activity = vec![0.0; m];
        for j in 0..n {
            let (r, v) = self.cols.col(j);
            for (&i, &a) in r.iter().zip(v) {
                activity[i] += a * self.x[j];
            }
        }
        let mut taken = vec![false; n];
        let mut singles: Vec<Vec<usize>> = vec![Vec::new(); m];
        for j in 0..n {
            let (r, _) = self.cols.col(j);
            if r.len() == 1 {
                singles[r[0]].push(j);
            }
        }
        for r in 0..m {
            if self.lo[n + r] != self.up[n + r] || singles[r].is_empty() {
                continue;
            }
            let rhs = self.lo[n + r];
            let mut chosen = NONE;
            for &j in &singles[r] {
                if taken[j] {
                    continue;
                }
                let a = self.cols.col(j).1[0];
                if a.abs() < 1e-3 {
                    continue;
                }
                let v = self.x[j] + (rhs - activity[r]) / a;
                if chosen == NONE {
                    chosen = j;
                }
                if v >= self.lo[j] - self.opts.feasibility_tol && v <= self.up[j] + self.opts.feasibility_tol {
                    chosen = j;
                    break;
                }
            }
            if chosen != NONE {
                taken[chosen] = true;
                head[r] = chosen;
            }
        }
        self.set_head(head);
        self.refactor()
    }

    fn start_warm(&mut self, b: &Basis) -> bool {
        let nt = self.n + self.m;
        let head: Vec<usize> = (0..nt).filter(|&j| b.status[j] == VarStatus::Basic).collect();
        if head.len() != self.m {
            return false;
        }
        for j in 0..nt {
            self.x[j] = match b.status[j] {
                VarStatus::AtUpper => self.nonbasic_value(j, true),
                _ => self.nonbasic_value(j, false),
            };
        }
        self.set_head(head);
        self.refactor()
    }

    /// Factorizes the current basis, swapping dependent columns for logicals,
    /// then recomputes the basic values.
    fn refactor(&mut self) -> bool {
        for _ in 0..8 {
            match Factor::new(&self.cols, &self.head, self.m) {
                Ok(f) => {
                    self.factor = Some(f);
                    self.compute_basic_values();
                    return true;
                }
                Err(sing) => {
                    if sing.dependent.len() != sing.free_rows.len() {
                        return false;
                    }
                    for (&p, &r) in sing.dependent.iter().zip(&sing.free_rows) {
                        let old = self.head[p];
                        let logical = self.n + r;
                        let v = self.x[old];
                        let (l, u) = (self.lo[old], self.up[old]);
                        self.x[old] = if l.is_finite() && u.is_finite() {
                            if (v - l).abs() <= (u - v).abs() {
                                l
                            } else {
                                u
                            }
                        } else {
                            self.nonbasic_value(old, false)
                        };
                        self.pos[old] = NONE;
                        self.head[p] = logical;
                        self.pos[logical] = p;
                    }
                }
            }
        }
        false
    }

    fn compute_basic_values(&mut self) {
        let m = self.m;
        for r in 0..m {
            self.rowbuf[r] = 0.0;
        }
        for j in 0..self.n + m {
            if self.pos[j] != NONE || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            let (r, v) = self.cols.col(j);
            for (&i, &a) in r.iter().zip(v) {
                self.rowbuf[i] -= a * xj;
            }
        }
        let f = self.factor.as_mut().unwrap();
        f.ftran(&mut self.rowbuf, &mut self.posbuf);
        for p in 0..m {
            self.x[self.head[p]] = self.posbuf[p];
        }
    }

    /// Fills `posbuf` with the cost of each basic variable (phase 1 costs if
    /// any basic variable is infeasible) and returns whether in phase 1.
    fn basic_costs(&mut self) -> bool {
        let tol = self.opts.feasibility_tol;
        let mut phase1 = false;
        for p in 0..self.m {
            let j = self.head[p];
            let c = if self.x[j] < self.lo[j] - tol {
                -1.0
            } else if self.x[j] > self.up[j] + tol {
                1.0
            } else {
                0.0
            };
            self.posbuf[p] = c;
            phase1 |= c != 0.0;
        }
        if !phase1 {
            for p in 0..self.m {
                self.posbuf[p] = self.cost[self.head[p]];
            }
        }
        phase1
    }

    fn reduced_cost(&self, j: usize, phase1: bool) -> f64 {
        let c = if phase1 { 0.0 } else { self.cost[j] };
        c - self.cols.dot(j, &self.y)
    }

    fn price(&self, phase1: bool, bland: bool) -> Option<(usize, f64)> {
        let tol = self.opts.optimality_tol;
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.n + self.m {
            if self.pos[j] != NONE || self.lo[j] == self.up[j] {
                continue;
            }
            let d = self.reduced_cost(j, phase1);
            let dir = if d < -tol && self.x[j] < self.up[j] {
                1.0
            } else if d > tol && self.x[j] > self.lo[j] {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = d * d / self.weight[j];
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn ratio_test(&self, dir: f64, phase1: bool, bland: bool) -> (f64, Option<Candidate>) {
        let tol = self.opts.feasibility_tol;
        let piv = self.opts.pivot_tol;
        let mut theta_max = f64::INFINITY;
        for p in 0..self.m {
            let a = self.alpha[p];
            if a.abs() < piv {
                continue;
            }
            let delta = -dir * a;
            let j = self.head[p];
            let (xv, l, u) = (self.x[j], self.lo[j], self.up[j]);
            let r = if phase1 && xv < l - tol {
                if delta > 0.0 {
                    (l - xv) / delta
                } else {
                    continue;
                }
            } else if phase1 && xv > u + tol {
                if delta < 0.0 {
                    (xv - u) / -delta
                } else {
                    continue;
                }
            } else if delta > 0.0 && u.is_finite() {
                (u + tol - xv) / delta
            } else if delta < 0.0 && l.is_finite() {
                (xv - l + tol) / -delta
            } else {
                continue;
            };
            if r < theta_max {
                theta_max = r;
            }
        }
        if theta_max == f64::INFINITY {
            return (theta_max, None);
        }
        let mut chosen: Option<Candidate> = None;
        let mut chosen_key = (0.0f64, 0usize);
        for p in 0..self.m {
            let a = self.alpha[p];
            if a.abs() < piv {
                continue;
            }
            let delta = -dir * a;
            let j = self.head[p];
            let (xv, l, u) = (self.x[j], self.lo[j], self.up[j]);
            let (r, target) = if phase1 && xv < l - tol {
                if delta > 0.0 {
                    ((l - xv) / delta, l)
                } else {
                    continue;
                }
            } else if phase1 && xv > u + tol {
                if delta < 0.0 {
                    ((xv - u) / -delta, u)
                } else {
                    continue;
                }
            } else if delta > 0.0 && u.is_finite() {
                ((u - xv) / delta, u)
            } else if delta < 0.0 && l.is_finite() {
                ((xv - l) / -delta, l)
            } else {
                continue;
            };
            if r > theta_max {
                continue;
            }
            let better = match &chosen {
                None => true,
                Some(_) if bland => j < chosen_key.1,
                Some(_) => a.abs() > chosen_key.0,
            };
            if better {
                chosen_key = (a.abs(), j);
                chosen = Some(Candidate { pos: p, ratio: r.max(0.0), target });
            }
        }
        (theta_max, chosen)
    }

    fn iterate(&mut self) -> LpStatus {
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut fresh = true;
        let mut retries = 0;
        let mut verifications = 0;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return LpStatus::IterationLimit;
            }
            if self.factor.as_ref().unwrap().eta_count() >= self.opts.refactor_interval {
                if !self.refactor() {
                    return LpStatus::NumericalFailure;
                }
                fresh = true;
            }
            let phase1 = self.basic_costs();
            {
                let f = self.factor.as_mut().unwrap();
                f.btran(&mut self.posbuf, &mut self.y);
            }
            let Some((q, dir)) = self.price(phase1, bland) else {
                // Confirm with a fresh factorization; near-tolerance reduced
                // costs can otherwise bounce between refactor and pivot.
                if !fresh && (phase1 || verifications < 3) {
                    verifications += 1;
                    if verifications > 20 {
                        return LpStatus::NumericalFailure;
                    }
                    if !self.refactor() {
                        return LpStatus::NumericalFailure;
                    }
                    fresh = true;
                    continue;
                }
                return if phase1 { LpStatus::Infeasible } else { LpStatus::Optimal };
            };
            for r in 0..self.m {
                self.rowbuf[r] = 0.0;
            }
            {
                let (r, v) = self.cols.col(q);
                for (&i, &a) in r.iter().zip(v) {
                    self.rowbuf[i] = a;
                }
            }
            {
                let f = self.factor.as_mut().unwrap();
                f.ftran(&mut self.rowbuf, &mut self.alpha);
            }
            let (theta_max, cand) = self.ratio_test(dir, phase1, bland);
            let range = self.up[q] - self.lo[q];
            let flip = range.is_finite() && range <= theta_max;
            self.iterations += 1;
            if flip {
                let t = range;
                self.x[q] = if dir > 0.0 { self.up[q] } else { self.lo[q] };
                for p in 0..self.m {
                    let a = self.alpha[p];
                    if a != 0.0 {
                        self.x[self.head[p]] -= dir * a * t;
                    }
                }
                degenerate = 0;
                bland = false;
                fresh = false;
                continue;
            }
            let Some(c) = cand else {
                if phase1 || !fresh {
                    retries += 1;
                    if retries > 3 || !self.refactor() {
                        return LpStatus::NumericalFailure;
                    }
                    fresh = true;
                    continue;
                }
                return LpStatus::Unbounded;
            };
            let t = c.ratio;
            for p in 0..self.m {
                let a = self.alpha[p];
                if a != 0.0 {
                    self.x[self.head[p]] -= dir * a * t;
                }
            }
            self.x[q] += dir * t;
            let leaving = self.head[c.pos];
            self.x[leaving] = c.target;
            self.pos[leaving] = NONE;
            self.head[c.pos] = q;
            self.pos[q] = c.pos;
            self.factor.as_mut().unwrap().push_eta(c.pos, &self.alpha);
            fresh = false;
            if t <= 1e-12 {
                degenerate += 1;
                if degenerate >= self.opts.bland_after {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
        }
    }


    /// Reduced costs of all nonbasic columns for the current (shifted) costs.
    fn compute_duals(&mut self) {
        for p in 0..self.m {
            self.posbuf[p] = self.cost[self.head[p]];
        }
        let f = self.factor.as_mut().unwrap();
        f.btran(&mut self.posbuf, &mut self.y);
        for j in 0..self.n + self.m {
            self.d[j] = if self.pos[j] == NONE { self.cost[j] - self.cols.dot(j, &self.y) } else { 0.0 };
        }
    }

    /// Restores dual feasibility by moving boxed columns to the bound their
    /// reduced cost prefers and shifting the cost of the rest.
    fn make_dual_feasible(&mut self) {
        let tol = self.opts.optimality_tol;
        let mut moved = false;
        for j in 0..self.n + self.m {
            if self.pos[j] != NONE || self.lo[j] == self.up[j] {
                continue;
            }
            let dj = self.d[j];
            let (l, u) = (self.lo[j], self.up[j]);
            if dj < -tol && self.x[j] != u {
                if u.is_finite() {
                    self.x[j] = u;
                    moved = true;
                } else {
                    self.cost[j] -= dj;
                    self.d[j] = 0.0;
                }
            } else if dj > tol && self.x[j] != l {
                if l.is_finite() {
                    self.x[j] = l;
                    moved = true;
                } else {
                    self.cost[j] -= dj;
                    self.d[j] = 0.0;
                }
            }
        }
        if moved {
            self.compute_basic_values();
        }
    }

    fn dual_refresh(&mut self) -> bool {
        if !self.refactor() {
            return false;
        }
        self.compute_duals();
        self.make_dual_feasible();
        true
    }

    /// Bounded dual simplex with dual steepest-edge pricing and a
    /// bound-flipping ratio test. Leaves a primal feasible basis on success.
    fn dual_iterate(&mut self) -> DualEnd {
        let (n, m) = (self.n, self.m);
        let ftol = self.opts.feasibility_tol;
        let dtol = self.opts.optimality_tol;
        let piv = self.opts.pivot_tol;
        self.compute_duals();
        self.make_dual_feasible();
        let mut fresh = true;
        let mut verifications = 0;
        let mut cands: Vec<(f64, usize)> = Vec::new();
        let mut flips: Vec<usize> = Vec::new();
        loop {
            if self.iterations >= self.opts.max_iterations {
                return DualEnd::Stopped;
            }
            if self.factor.as_ref().unwrap().eta_count() >= self.opts.refactor_interval {
                if !self.dual_refresh() {
                    return DualEnd::Stopped;
                }
                fresh = true;
            }
            // Leaving row: largest squared infeasibility over its weight.
            let mut leave = NONE;
            let mut best = 0.0;
            for p in 0..m {
                let j = self.head[p];
                let v = self.x[j];
                let inf = if v < self.lo[j] - ftol {
                    self.lo[j] - v
                } else if v > self.up[j] + ftol {
                    v - self.up[j]
                } else {
                    continue;
                };
                let score = inf * inf / self.dse[p];
                if score > best {
                    best = score;
                    leave = p;
                }
            }
            if leave == NONE {
                // The primal pass refactorizes and verifies.
                return DualEnd::Optimal;
            }
            let jl = self.head[leave];
            let increase = self.x[jl] < self.lo[jl];
            let target = if increase { self.lo[jl] } else { self.up[jl] };
            let s = if increase { 1.0 } else { -1.0 };

            for p in 0..m {
                self.posbuf[p] = 0.0;
            }
            self.posbuf[leave] = 1.0;
            {
                let f = self.factor.as_mut().unwrap();
                f.btran(&mut self.posbuf, &mut self.rho);
            }
            for j in 0..n {
                self.arow[j] = 0.0;
            }
            for r in 0..m {
                let pr = self.rho[r];
                self.arow[n + r] = -pr;
                if pr != 0.0 {
                    let (cols, vals) = self.p.row(r);
                    for (&c, &a) in cols.iter().zip(vals) {
                        self.arow[c] += pr * a;
                    }
                }
            }

            cands.clear();
            for j in 0..n + m {
                if self.pos[j] != NONE || self.lo[j] == self.up[j] {
                    continue;
                }
                let a = self.arow[j];
                if a.abs() < piv {
                    continue;
                }
                // Moving x_j by `step` changes the leaving value by -a * step.
                let up_ok = self.x[j] < self.up[j];
                let down_ok = self.x[j] > self.lo[j];
                let want_up = -s * a > 0.0;
                if (want_up && !up_ok) || (!want_up && !down_ok) {
                    continue;
                }
                let dj = if want_up { self.d[j].max(0.0) } else { (-self.d[j]).max(0.0) };
                cands.push((dj / a.abs(), j));
            }
            if cands.is_empty() {
                if !fresh {
                    verifications += 1;
                    if verifications > 5 {
                        return DualEnd::Stopped;
                    }
                    if !self.dual_refresh() {
                        return DualEnd::Stopped;
                    }
                    fresh = true;
                    continue;
                }
                return DualEnd::Infeasible;
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut slope = (self.x[jl] - target).abs();
            flips.clear();
            let mut chosen = NONE;
            let mut i = 0;
            while i < cands.len() {
                let (_, j) = cands[i];
                let range = self.up[j] - self.lo[j];
                let drop = self.arow[j].abs() * range;
                if range.is_finite() && slope - drop > ftol {
                    slope -= drop;
                    flips.push(j);
                    i += 1;
                    continue;
                }
                // Harris pass over the remaining breakpoints.
                let mut bound = f64::INFINITY;
                for &(_, k) in &cands[i..] {
                    let dk = self.d[k].abs();
                    bound = bound.min((dk + dtol) / self.arow[k].abs());
                }
                let mut best_a = 0.0;
                for &(r, k) in &cands[i..] {
                    if r > bound {
                        break;
                    }
                    if self.arow[k].abs() > best_a {
                        best_a = self.arow[k].abs();
                        chosen = k;
                    }
                }
                break;
            }
            if chosen == NONE {
                // Every breakpoint is a bound flip and the leaving row still
                // cannot reach its bound: a dual ray, once the columns below
                // the pivot tolerance cannot make up the rest.
                let mut rest = 0.0;
                for j in 0..n + m {
                    if self.pos[j] == NONE && self.lo[j] != self.up[j] && self.arow[j].abs() < piv {
                        rest += self.arow[j].abs() * (self.up[j] - self.lo[j]);
                    }
                }
                if fresh && slope - rest > ftol {
                    return DualEnd::Infeasible;
                }
                if !fresh {
                    verifications += 1;
                    if verifications > 5 || !self.dual_refresh() {
                        return DualEnd::Stopped;
                    }
                    fresh = true;
                    continue;
                }
                chosen = cands.last().unwrap().1;
                flips.pop();
            }
            let q = chosen;
            let t = cands.iter().find(|c| c.1 == q).unwrap().0;
            let theta = -s * t;

            // Bound flips.
            if !flips.is_empty() {
                for r in 0..m {
                    self.rowbuf[r] = 0.0;
                }
                for &j in &flips {
                    let new = if self.x[j] == self.lo[j] { self.up[j] } else { self.lo[j] };
                    let delta = new - self.x[j];
                    self.x[j] = new;
                    let (r, v) = self.cols.col(j);
                    for (&i, &a) in r.iter().zip(v) {
                        self.rowbuf[i] += a * delta;
                    }
                }
                let f = self.factor.as_mut().unwrap();
                f.ftran(&mut self.rowbuf, &mut self.posbuf);
                for p in 0..m {
                    self.x[self.head[p]] -= self.posbuf[p];
                }
            }

            for r in 0..m {
                self.rowbuf[r] = 0.0;
            }
            {
                let (r, v) = self.cols.col(q);
                for (&i, &a) in r.iter().zip(v) {
                    self.rowbuf[i] = a;
                }
            }
            {
                let f = self.factor.as_mut().unwrap();
                f.ftran(&mut self.rowbuf, &mut self.alpha);
            }
            let apq = self.alpha[leave];
            let drift = (apq - self.arow[q]).abs();
            if apq.abs() < piv || drift > 1e-6 * (1.0 + apq.abs()) {
                if fresh {
                    return DualEnd::Stopped;
                }
                if !self.dual_refresh() {
                    return DualEnd::Stopped;
                }
                fresh = true;
                continue;
            }
            self.iterations += 1;

            // Dual steepest-edge weights need B^-1 rho.
            let wp = self.rho.iter().map(|v| v * v).sum::<f64>();
            for r in 0..m {
                self.rowbuf[r] = self.rho[r];
            }
            {
                let f = self.factor.as_mut().unwrap();
                f.ftran(&mut self.rowbuf, &mut self.tau);
            }
            for p in 0..m {
                if p == leave {
                    continue;
                }
                let ratio = self.alpha[p] / apq;
                if ratio != 0.0 {
                    let w = self.dse[p] - 2.0 * ratio * self.tau[p] + ratio * ratio * wp;
                    self.dse[p] = w.max(ratio * ratio * wp).max(1e-8);
                }
            }
            self.dse[leave] = (wp / (apq * apq)).max(1e-8);

            // Primal step.
            let step = (self.x[jl] - target) / apq;
            for p in 0..m {
                let a = self.alpha[p];
                if a != 0.0 {
                    self.x[self.head[p]] -= a * step;
                }
            }
            self.x[q] += step;
            self.x[jl] = target;

            // Dual step.
            for j in 0..n + m {
                if self.pos[j] == NONE {
                    self.d[j] -= theta * self.arow[j];
                }
            }
            self.d[q] = 0.0;
            self.d[jl] = -theta;

            self.pos[jl] = NONE;
            self.head[leave] = q;
            self.pos[q] = leave;
            self.factor.as_mut().unwrap().push_eta(leave, &self.alpha);
            fresh = false;
        }
    }

    /// Dual phase followed by a primal cleanup with the original costs.
    fn dual_then_primal(&mut self) -> LpStatus {
        match self.dual_iterate() {
            DualEnd::Infeasible => {
                self.cost.copy_from_slice(&self.base_cost);
                LpStatus::Infeasible
            }
            DualEnd::Optimal | DualEnd::Stopped => {
                self.cost.copy_from_slice(&self.base_cost);
                if !self.refactor() {
                    return LpStatus::NumericalFailure;
                }
                self.iterate()
            }
        }
    }

    fn finish(mut self, status: LpStatus) -> LpSolution {
        let (n, m) = (self.n, self.m);
        let sign = match self.p.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut x: Vec<f64> = self.x[..n].to_vec();
        let mut status = status;
        let mut row_duals = vec![0.0; m];
        let mut reduced_costs = vec![0.0; n];
        if status == LpStatus::Optimal {
            for j in 0..n {
                x[j] = x[j].clamp(self.p.lower()[j], self.p.upper()[j]);
            }
            for r in 0..m {
                let (cols, vals) = self.p.row(r);
                let mut act = 0.0;
                let mut scale: f64 = 1.0;
                for (&c, &a) in cols.iter().zip(vals) {
                    act += a * x[c];
                    scale = scale.max((a * x[c]).abs());
                }
                let (l, u) = self.p.row_bounds(r);
                let viol = (l - act).max(act - u).max(0.0);
                if viol > self.opts.residual_tol * scale {
                    status = LpStatus::NumericalFailure;
                    break;
                }
            }
        }
        if status == LpStatus::Optimal {
            for p in 0..m {
                self.posbuf[p] = self.cost[self.head[p]];
            }
            let f = self.factor.as_mut().unwrap();
            f.btran(&mut self.posbuf, &mut self.y);
            for r in 0..m {
                row_duals[r] = sign * self.y[r];
            }
            for j in 0..n {
                if self.pos[j] == NONE {
                    reduced_costs[j] = sign * self.reduced_cost(j, false);
                }
            }
        }
        let objective = match status {
            LpStatus::Optimal => self.p.objective_value(&x),
            LpStatus::Unbounded => sign * f64::NEG_INFINITY,
            _ => f64::NAN,
        };
        let basis = if self.head.len() == m && status != LpStatus::NumericalFailure {
            let status = (0..n + m)
                .map(|j| {
                    if self.pos[j] != NONE {
                        VarStatus::Basic
                    } else if self.x[j] == self.up[j] && self.x[j] != self.lo[j] {
                        VarStatus::AtUpper
                    } else if self.x[j] == self.lo[j] {
                        VarStatus::AtLower
                    } else {
                        VarStatus::Free
                    }
                })
                .collect();
            Some(Basis { status })
        } else {
            None
        };
        LpSolution { status, x, objective, row_duals, reduced_costs, basis, iterations: self.iterations }
    }
}
