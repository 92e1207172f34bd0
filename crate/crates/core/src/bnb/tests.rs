use super::*;
use crate::basis::{BasisFunction, BasisLibrary};
use crate::dynamics::Dataset;
use crate::lp::solve_lp;
use crate::miqcp::{assemble, Alpha2Mode, NormKind, ProblemConfig};
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lib(n: usize, exps: &[&[u32]]) -> BasisLibrary {
    BasisLibrary::new(n, exps.iter().map(|e| BasisFunction::monomial(e.to_vec())).collect()).unwrap()
}

fn data_1d(xs: &[f64], f: impl Fn(f64) -> f64, equilibrium: bool) -> Dataset {
    let mut states: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let mut ders: Vec<Vec<f64>> = xs.iter().map(|&x| vec![f(x)]).collect();
    let mut eq = Vec::new();
    if equilibrium {
        eq.push(states.len());
        states.push(vec![0.0]);
        ders.push(vec![0.0]);
    }
    let times = vec![0.0; states.len()];
    Dataset::from_records(times, states, ders, eq, 0.0, 0).unwrap()
}

fn toy_config() -> ProblemConfig {
    ProblemConfig {
        c_lb: -3.0,
        c_ub: 3.0,
        v_lb: -2.0,
        v_ub: 2.0,
        alpha1: 0.1,
        alpha2: Alpha2Mode::Fixed(0.1),
        budget_f: 1,
        budget_v: 1,
        omega1: 0.0,
        omega2: 0.0,
        ..ProblemConfig::default()
    }
}

fn tight() -> BnbOptions {
    BnbOptions { gap_tol: 1e-9, node_limit: 20_000, ..BnbOptions::default() }
}

#[test]
fn stable_linear_toy_reaches_zero() {
    let d = data_1d(&[-1.5, -0.5, 0.7, 1.2], |x| -x, true);
    let p = assemble(&d, &lib(1, &[&[1]]), &lib(1, &[&[2]]), &toy_config()).unwrap();
    assert_eq!(p.binaries().len(), 2);
    assert_eq!(p.active_products().count(), 1);
    let r = solve(&p, &tight());
    assert_eq!(r.termination, Termination::GapReached);
    let inc = r.incumbent.unwrap();
    assert!(inc.objective.abs() < 1e-9);
    assert_eq!(p.binary_pattern(&inc.values), vec![true, true]);
    assert!((inc.values[p.layout().c(0, 0)] + 1.0).abs() < 1e-7);
    assert!(r.gap <= 1e-9);
}

#[test]
fn linear_lyapunov_candidate_is_infeasible_at_root() {
    // V = v x cannot be positive on both sides of the origin.
    let d = data_1d(&[-1.0, 1.0], |x| -x, false);
    let p = assemble(&d, &lib(1, &[&[1]]), &lib(1, &[&[1]]), &toy_config()).unwrap();
    let r = solve(&p, &tight());
    assert_eq!(r.termination, Termination::Infeasible);
    assert_eq!(r.nodes, 1);
    assert!(r.incumbent.is_none());
}

#[test]
fn cutting_the_only_feasible_pattern_is_infeasible() {
    let d = data_1d(&[-1.5, -0.5, 0.7, 1.2], |x| -x, true);
    let p = assemble(&d, &lib(1, &[&[1]]), &lib(1, &[&[2]]), &toy_config()).unwrap();
    let first = solve(&p, &tight()).incumbent.unwrap();
    let pattern = p.binary_pattern(&first.values);
    // z_f = 0 leaves dx/dt = 0 >= -0.1 V, so V must be zero: infeasible.
    let cut = add_integer_cut(&p, &pattern).unwrap();
    let r = solve(&cut, &tight());
    assert_eq!(r.termination, Termination::Infeasible);
}

#[test]
fn cut_forces_a_different_support() {
    let d = data_1d(&[-1.5, -0.5, 0.7, 1.2], |x| -x - 0.2 * x * x * x, true);
    let cfg = ProblemConfig { budget_f: 2, omega1: 0.01, omega2: 0.01, ..toy_config() };
    let p = assemble(&d, &lib(1, &[&[1], &[3]]), &lib(1, &[&[2]]), &cfg).unwrap();
    let first = solve(&p, &tight()).incumbent.unwrap();
    let pattern = p.binary_pattern(&first.values);
    let cut = add_integer_cut(&p, &pattern).unwrap();
    let second = solve(&cut, &tight()).incumbent.unwrap();
    assert_ne!(cut.binary_pattern(&second.values), pattern);
    assert!(second.objective >= first.objective - 1e-9);
}

#[test]
fn refine_from_feasible_point_does_not_worsen() {
    let d = data_1d(&[-1.5, -0.5, 0.7, 1.2, 1.9], |x| -x - 0.2 * x * x * x, true);
    let cfg = ProblemConfig { budget_f: 2, ..toy_config() };
    let p = assemble(&d, &lib(1, &[&[1], &[3]]), &lib(1, &[&[2]]), &cfg).unwrap();
    let x = p.assignment(&[-0.8, 0.0], &[1.0], 0.1, &d);
    let start = p.check_feasible(&x, 1e-6).unwrap();
    let pattern = vec![true, true, true];
    let mut trace = Vec::new();
    let out = local_refine_traced(&p, &pattern, &x, &BnbOptions::default(), &mut trace).unwrap();
    assert!(out.objective <= start.objective + 1e-12);
    assert!(out.objective < 1e-8);
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn observer_sees_only_feasible_incumbents_and_monotone_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let p = random_instance(&mut rng);
        let mut lbs = Vec::new();
        let mut ubs = Vec::new();
        let opts = BnbOptions { log_every: 1, ..tight() };
        solve_with(&p, &opts, &NoClock, &mut |e| match e {
            Event::Progress(pr) => lbs.push(pr.lower_bound),
            Event::Incumbent { incumbent, .. } => {
                assert!(p.check_feasible(&incumbent.values, 1e-6).is_ok());
                ubs.push(incumbent.objective);
            }
            Event::Node(_) => {}
        });
        assert!(lbs.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(ubs.windows(2).all(|w| w[1] <= w[0]));
    }
}

/// Random toy with at most six binaries and four active products.
pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> MiqcpProblem {
    let (n, lf, lv): (usize, Vec<&[u32]>, Vec<&[u32]>) = match rng.gen_range(0..4) {
        0 => (1, vec![&[1], &[2], &[3], &[0]], vec![&[2]]),
        1 => (1, vec![&[1], &[3]], vec![&[2], &[4]]),
        2 => (2, vec![&[1, 0], &[0, 1]], vec![&[2, 0]]),
        _ => (2, vec![&[1, 1]], vec![&[2, 0], &[0, 2]]),
    };
    let kf = if n == 1 && lv.len() == 1 { rng.gen_range(1..=4) } else { lf.len() };
    let lib_f = lib(n, &lf[..kf]);
    let lib_v = lib(n, &lv);
    let m = rng.gen_range(4..8);
    let truth: Vec<f64> = (0..n * kf).map(|_| if rng.gen_bool(0.6) { rng.gen_range(-2.0..1.0) } else { 0.0 }).collect();
    let mut states = Vec::new();
    let mut ders = Vec::new();
    for _ in 0..m {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let phi = lib_f.evaluate(&x).unwrap();
        let dx: Vec<f64> = (0..n)
            .map(|i| (0..kf).map(|k| truth[i * kf + k] * phi[k]).sum::<f64>() + rng.gen_range(-0.05..0.05))
            .collect();
        states.push(x);
        ders.push(dx);
    }
    let mut eq = Vec::new();
    if rng.gen_bool(0.5) {
        eq.push(m);
        states.push(vec![0.0; n]);
        ders.push(vec![0.0; n]);
    }
    let d = Dataset::from_records(vec![0.0; states.len()], states, ders, eq, 0.0, 0).unwrap();
    let cfg = ProblemConfig {
        c_lb: -3.0,
        c_ub: 3.0,
        v_lb: -2.0,
        v_ub: 2.0,
        alpha1: [0.05, 0.2][rng.gen_range(0..2)],
        alpha2: Alpha2Mode::Fixed(rng.gen_range(0.0..0.3)),
        budget_f: rng.gen_range(1..=n * kf),
        budget_v: rng.gen_range(1..=lib_v.len()),
        omega1: rng.gen_range(0.01..0.1),
        omega2: rng.gen_range(0.01..0.1),
        norm: NormKind::L2Squared,
        ..ProblemConfig::default()
    };
    let p = assemble(&d, &lib_f, &lib_v, &cfg).unwrap();
    assert!(p.binaries().len() <= 6 && p.active_products().count() <= 4);
    p
}

/// Enumerates binary patterns, grids the Lyapunov coefficients, solves the
/// exact LP in the dynamics coefficients at each grid point, then refines
/// the best grid point.
pub(crate) fn brute_force(p: &MiqcpProblem, per_axis: usize) -> Option<f64> {
    let l = p.layout();
    let nb = p.binaries().len();
    let cfg = p.config();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << nb) {
        let pattern: Vec<bool> = (0..nb).map(|b| mask >> b & 1 == 1).collect();
        let nf = (l.zf0..l.zv0).filter(|&z| pattern[z - l.zf0]).count();
        let nv = (l.zv0..l.ep0).filter(|&z| pattern[z - l.zf0]).count();
        if nf > cfg.budget_f || nv > cfg.budget_v {
            continue;
        }
        let axes: Vec<usize> = (0..l.k_v).filter(|&k| pattern[l.zv(k) - l.zf0]).collect();
        let total = per_axis.pow(axes.len() as u32);
        let mut best_here: Option<(f64, Vec<f64>)> = None;
        for g in 0..total {
            let mut fixed = vec![None; p.n_vars()];
            for (&z, &on) in p.binaries().iter().zip(&pattern) {
                fixed[z] = Some(if on { 1.0 } else { 0.0 });
            }
            for k in 0..l.k_v {
                fixed[l.v(k)] = Some(0.0);
            }
            let mut rem = g;
            for &k in &axes {
                let t = (rem % per_axis) as f64 / (per_axis - 1) as f64;
                rem /= per_axis;
                fixed[l.v(k)] = Some(cfg.v_lb + t * (cfg.v_ub - cfg.v_lb));
            }
            let lp = p.linearize_fixed(&fixed).unwrap();
            let s = solve_lp(&lp).unwrap();
            if !s.is_optimal() {
                continue;
            }
            let x = p.with_exact_products(&s.x);
            if let Ok(inc) = p.check_feasible(&x, 1e-6) {
                if best_here.as_ref().map_or(true, |b| inc.objective < b.0) {
                    best_here = Some((inc.objective, x));
                }
            }
        }
        let Some((mut obj, x)) = best_here else { continue };
        if let Some(r) = local_refine(p, &pattern, &x, &BnbOptions::default()) {
            obj = obj.min(r.objective);
        }
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

#[test]
fn matches_brute_force_on_random_toys() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut infeasible = 0;
    for case in 0..6 {
        let p = random_instance(&mut rng);
        let want = brute_force(&p, 60);
        let r = solve(&p, &tight());
        match want {
            None => {
                infeasible += 1;
                assert_eq!(r.termination, Termination::Infeasible, "case {case}");
            }
            Some(w) => {
                let got = r.incumbent.as_ref().map(|i| i.objective).unwrap();
                assert!((got - w).abs() <= 1e-4, "case {case}: {got} vs {w}");
            }
        }
    }
    let _ = infeasible;
}
