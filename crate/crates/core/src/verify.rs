//! Post-hoc checks of a learned `(f, V)` pair over a state box: `V >= 0`
//! and `dV/dt = grad V . f <= 0` away from a small ball around the origin.
//!
//! Grid mode samples and can only falsify. Interval mode runs a
//! branch-and-bound over sub-boxes with rigorous interval enclosures and
//! can certify.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::basis::BasisKind;
use crate::dynamics::{LyapunovFunction, SparseModel, StateBox, VectorField};
use crate::interval::Interval;
use crate::math::{ipow, norm2};

/// `dV/dt` values up to this are accepted as non-positive.
pub const VDOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("dimension mismatch: expected {expected} states, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("exclusion radius {0} must be positive and smaller than the box half-width")]
    Radius(f64),
    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Grid,
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// `V(x) >= 0`.
    Positivity,
    /// `dV/dt(x) <= 0`.
    Decrease,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified,
    /// `value` is `V(point)` or `dV/dt(point)` evaluated directly.
    Falsified { point: Vec<f64>, condition: Condition, value: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub domain: StateBox,
    pub exclusion_radius: f64,
    pub mode: Mode,
    /// Grid minimum of `V`, or a rigorous lower bound in interval mode.
    pub v_min: f64,
    /// Grid maximum of `dV/dt`, or a rigorous upper bound in interval mode.
    pub vdot_max: f64,
    pub verdict: Verdict,
    /// Grid points evaluated or sub-boxes processed.
    pub evaluations: usize,
}

impl VerificationReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    pub fn is_falsified(&self) -> bool {
        matches!(self.verdict, Verdict::Falsified { .. })
    }
}

/// Sum of products of basis factors: `sum_t a_t prod_i x_i^p sin(x_i)^q cos(x_i)^r`.
/// Like terms are merged, so exact cancellations such as the cross terms of
/// an energy function disappear before any interval is formed.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSum {
    n: usize,
    /// Key layout: `[p_0..p_n, q_0..q_n, r_0..r_n]`.
    terms: Vec<(Vec<u32>, f64)>,
}

fn factor_key(n: usize, kind: &BasisKind) -> Vec<u32> {
    let mut key = vec![0u32; 3 * n];
    match kind {
        BasisKind::Monomial(e) => key[..e.len()].copy_from_slice(e),
        BasisKind::Sin(i) => key[n + i] = 1,
        BasisKind::Cos(i) => key[2 * n + i] = 1,
    }
    key
}

impl TermSum {
    fn from_map(n: usize, map: BTreeMap<Vec<u32>, f64>) -> Self {
        Self { n, terms: map.into_iter().filter(|(_, a)| *a != 0.0).collect() }
    }

    /// `V` itself.
    pub fn value_of(v: &LyapunovFunction) -> Self {
        let n = v.library().n_states();
        let mut map = BTreeMap::new();
        for (f, &a) in v.library().functions().iter().zip(v.coefficients()) {
            if a != 0.0 {
                *map.entry(factor_key(n, f.kind())).or_insert(0.0) += a;
            }
        }
        Self::from_map(n, map)
    }

    /// `grad V . f` expanded term by term.
    pub fn derivative_of(v: &LyapunovFunction, model: &SparseModel) -> Result<Self, VerifyError> {
        let n = v.library().n_states();
        if model.n_states() != n {
            return Err(VerifyError::Dimension { expected: n, got: model.n_states() });
        }
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let lib_f = model.library();
        for (fv, &a) in v.library().functions().iter().zip(v.coefficients()) {
            if a == 0.0 {
                continue;
            }
            for i in 0..n {
                let Some((scale, d)) = fv.partial(i) else { continue };
                let dkey = factor_key(n, d.kind());
                for (m, fm) in lib_f.functions().iter().enumerate() {
                    let c = model.coefficient(i, m);
                    if c == 0.0 {
                        continue;
                    }
                    let mut key = factor_key(n, fm.kind());
                    for (k, e) in key.iter_mut().zip(&dkey) {
                        *k += e;
                    }
                    *map.entry(key).or_insert(0.0) += a * scale * c;
                }
            }
        }
        Ok(Self::from_map(n, map))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let s: Vec<f64> = x.iter().map(|&v| libm::sin(v)).collect();
        let c: Vec<f64> = x.iter().map(|&v| libm::cos(v)).collect();
        self.terms
            .iter()
            .map(|(k, a)| {
                let mut t = *a;
                for i in 0..n {
                    t *= ipow(x[i], k[i]) * ipow(s[i], k[n + i]) * ipow(c[i], k[2 * n + i]);
                }
                t
            })
            .sum()
    }

    /// Interval enclosure of the sum over the box `x`.
    pub fn enclose(&self, x: &[Interval]) -> Interval {
        let n = self.n;
        let s: Vec<Interval> = x.iter().map(Interval::sin).collect();
        let c: Vec<Interval> = x.iter().map(Interval::cos).collect();
        let mut acc = Interval::ZERO;
        for (k, a) in &self.terms {
            let mut t = Interval::point(*a);
            for i in 0..n {
                if k[i] > 0 {
                    t = t * x[i].powi(k[i]);
                }
                if k[n + i] > 0 {
                    t = t * s[i].powi(k[n + i]);
                }
                if k[2 * n + i] > 0 {
                    t = t * c[i].powi(k[2 * n + i]);
                }
            }
            acc = acc + t;
        }
        acc
    }
}

fn check_inputs(n_field: usize, v: &LyapunovFunction, domain: &StateBox, rho: f64) -> Result<(), VerifyError> {
    let n = v.library().n_states();
    for got in [n_field, domain.dim()] {
        if got != n {
            return Err(VerifyError::Dimension { expected: n, got });
        }
    }
    let half = (0..n).map(|d| 0.5 * (domain.upper[d] - domain.lower[d])).fold(f64::INFINITY, f64::min);
    if !(rho > 0.0 && rho < half) {
        return Err(VerifyError::Radius(rho));
    }
    Ok(())
}

/// Samples `V` and `dV/dt` on a tensor grid, skipping `|x| <= rho`.
/// Falsifies on `min V < 0` (reported first) or `max dV/dt > VDOT_TOL`;
/// otherwise the verdict is inconclusive.
pub fn verify_grid(
    field: &dyn VectorField,
    v: &LyapunovFunction,
    domain: &StateBox,
    resolution: usize,
    rho: f64,
) -> Result<VerificationReport, VerifyError> {
    check_inputs(field.n_states(), v, domain, rho)?;
    if resolution < 2 {
        return Err(VerifyError::Resolution(resolution));
    }
    let mut v_min = (f64::INFINITY, Vec::new());
    let mut vdot_max = (f64::NEG_INFINITY, Vec::new());
    let mut evaluations = 0;
    for x in domain.grid(resolution) {
        if norm2(&x) <= rho {
            continue;
        }
        evaluations += 1;
        let val = v.value(&x);
        let dv = v.derivative(field, &x);
        if val < v_min.0 {
            v_min = (val, x.clone());
        }
        if dv > vdot_max.0 {
            vdot_max = (dv, x);
        }
    }
    let verdict = if v_min.0 < 0.0 {
        Verdict::Falsified { point: v_min.1, condition: Condition::Positivity, value: v_min.0 }
    } else if vdot_max.0 > VDOT_TOL {
        Verdict::Falsified { point: vdot_max.1, condition: Condition::Decrease, value: vdot_max.0 }
    } else {
        Verdict::Inconclusive
    };
    Ok(VerificationReport {
        domain: domain.clone(),
        exclusion_radius: rho,
        mode: Mode::Grid,
        v_min: v_min.0,
        vdot_max: vdot_max.0,
        verdict,
        evaluations,
    })
}

struct SubBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Interval,
    vdot: Interval,
    need_value: bool,
    need_vdot: bool,
    priority: f64,
}

impl PartialEq for SubBox {
    fn eq(&self, o: &Self) -> bool {
        self.priority.total_cmp(&o.priority) == Ordering::Equal
    }
}
impl Eq for SubBox {}
impl PartialOrd for SubBox {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for SubBox {
    fn cmp(&self, o: &Self) -> Ordering {
        self.priority.total_cmp(&o.priority)
    }
}

/// Interval branch-and-bound over sub-boxes of `domain`, worst bound first,
/// bisecting the widest side. Boxes that fall entirely inside the ball
/// `|x| <= rho` are dropped; boxes crossing its boundary keep splitting
/// until they leave it. Each box's midpoint is also evaluated directly as a
/// counterexample candidate.
pub fn verify_interval(
    model: &SparseModel,
    v: &LyapunovFunction,
    domain: &StateBox,
    rho: f64,
    max_boxes: usize,
) -> Result<VerificationReport, VerifyError> {
    check_inputs(model.n_states(), v, domain, rho)?;
    let n = domain.dim();
    let value = TermSum::value_of(v);
    let vdot = TermSum::derivative_of(v, model)?;
    let mut heap = BinaryHeap::new();
    let mut v_min = f64::INFINITY;
    let mut vdot_max = f64::NEG_INFINITY;
    let mut evaluations = 0;

    let assess = |lo: Vec<f64>, hi: Vec<f64>, need_value: bool, need_vdot: bool, parent: (Interval, Interval)| {
        let x: Vec<Interval> = lo.iter().zip(&hi).map(|(&a, &b)| Interval::new(a, b)).collect();
        let value_iv = if need_value { value.enclose(&x) } else { parent.0 };
        let vdot_iv = if need_vdot { vdot.enclose(&x) } else { parent.1 };
        let need_value = need_value && value_iv.lo < 0.0;
        let need_vdot = need_vdot && vdot_iv.hi > VDOT_TOL;
        let mut priority = f64::NEG_INFINITY;
        if need_value {
            priority = priority.max(-value_iv.lo);
        }
        if need_vdot {
            priority = priority.max(vdot_iv.hi);
        }
        SubBox { lo, hi, value: value_iv, vdot: vdot_iv, need_value, need_vdot, priority }
    };
    let whole = (Interval::ZERO, Interval::ZERO);
    heap.push(assess(domain.lower.clone(), domain.upper.clone(), true, true, whole));

    let report = |verdict, v_min, vdot_max, evaluations| VerificationReport {
        domain: domain.clone(),
        exclusion_radius: rho,
        mode: Mode::Interval,
        v_min,
        vdot_max,
        verdict,
        evaluations,
    };

    while let Some(b) = heap.pop() {
        evaluations += 1;
        let far: f64 = (0..n).map(|d| ipow(b.lo[d], 2).max(ipow(b.hi[d], 2))).sum();
        if far <= rho * rho {
            continue;
        }
        if !b.need_value && !b.need_vdot {
            v_min = v_min.min(b.value.lo);
            vdot_max = vdot_max.max(b.vdot.hi);
            continue;
        }
        let mid: Vec<f64> = (0..n).map(|d| 0.5 * b.lo[d] + 0.5 * b.hi[d]).collect();
        if norm2(&mid) > rho {
            let val = v.value(&mid);
            if b.need_value && val < 0.0 {
                let verdict = Verdict::Falsified { point: mid, condition: Condition::Positivity, value: val };
                return Ok(report(verdict, val.min(v_min), vdot_max, evaluations));
            }
            let dv = v.derivative(model, &mid);
            if b.need_vdot && dv > VDOT_TOL {
                let verdict = Verdict::Falsified { point: mid, condition: Condition::Decrease, value: dv };
                return Ok(report(verdict, v_min, dv.max(vdot_max), evaluations));
            }
        }
        if evaluations >= max_boxes {
            heap.push(b);
            break;
        }
        let d = (0..n).max_by(|&a, &c| (b.hi[a] - b.lo[a]).total_cmp(&(b.hi[c] - b.lo[c]))).unwrap();
        let cut = mid[d];
        if !(cut > b.lo[d] && cut < b.hi[d]) {
            // Cannot split further; leave it open.
            heap.push(b);
            break;
        }
        let mut left_hi = b.hi.clone();
        left_hi[d] = cut;
        let mut right_lo = b.lo.clone();
        right_lo[d] = cut;
        let parent = (b.value, b.vdot);
        heap.push(assess(b.lo.clone(), left_hi, b.need_value, b.need_vdot, parent));
        heap.push(assess(right_lo, b.hi, b.need_value, b.need_vdot, parent));
    }
    if heap.is_empty() {
        return Ok(report(Verdict::Certified, v_min, vdot_max, evaluations));
    }
    for b in heap.iter() {
        v_min = v_min.min(b.value.lo);
        vdot_max = vdot_max.max(b.vdot.hi);
    }
    Ok(report(Verdict::Inconclusive, v_min, vdot_max, evaluations))
}
