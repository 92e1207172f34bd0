//! Export of a learning problem in CPLEX LP text format.
//!
//! Bilinear products become quadratic equality rows `aux - [ left * right ] = 0`,
//! which CPLEX, Gurobi and SCIP read as nonconvex quadratic constraints.
//! Ranged rows are split into two one-sided rows.

use std::fmt::Write;

use lyapfit_core::MiqcpProblem;

fn term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
    if coef == 0.0 {
        return;
    }
    let sign = if coef < 0.0 { "-" } else { "+" };
    if *first && coef > 0.0 {
        let _ = write!(out, " {} {}", coef, name);
    } else {
        let _ = write!(out, " {} {} {}", sign, coef.abs(), name);
    }
    *first = false;
}

fn linear(problem: &MiqcpProblem, entries: &[(usize, f64)]) -> String {
    let mut s = String::new();
    let mut first = true;
    for &(j, a) in entries {
        term(&mut s, &mut first, a, problem.variable_name(j));
    }
    if first {
        s.push_str(" 0 ");
        s.push_str(problem.variable_name(0));
    }
    s
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

pub fn to_lp_string(problem: &MiqcpProblem) -> String {
    let n = problem.n_vars();
    let mut out = String::new();
    out.push_str("\\ Sparse dynamics and Lyapunov learning problem\n");
    let _ = writeln!(
        out,
        "\\ {} variables, {} binaries, {} linear rows, {} active products",
        n,
        problem.binaries().len(),
        problem.constraints().len(),
        problem.active_products().count()
    );
    out.push_str("Minimize\n obj:");
    let obj: Vec<(usize, f64)> = problem.objective().iter().cloned().enumerate().filter(|(_, c)| *c != 0.0).collect();
    out.push_str(&linear(problem, &obj));
    out.push_str("\nSubject To\n");
    for (r, c) in problem.constraints().iter().enumerate() {
        let lhs = linear(problem, &c.entries);
        let name = format!("r{r}");
        if c.lo == c.hi {
            let _ = writeln!(out, " {name}:{lhs} = {}", c.lo);
            continue;
        }
        if c.lo.is_finite() {
            let _ = writeln!(out, " {name}_lo:{lhs} >= {}", c.lo);
        }
        if c.hi.is_finite() {
            let _ = writeln!(out, " {name}_hi:{lhs} <= {}", c.hi);
        }
    }
    for (p_idx, p) in problem.active_products().enumerate() {
        let _ = writeln!(
            out,
            " prod{p_idx}: {} + [ - {} * {} ] = 0",
            problem.variable_name(p.aux),
            problem.variable_name(p.left),
            problem.variable_name(p.right)
        );
    }
    out.push_str("Bounds\n");
    let is_binary: Vec<bool> = {
        let mut b = vec![false; n];
        for &z in problem.binaries() {
            b[z] = true;
        }
        b
    };
    for j in 0..n {
        if is_binary[j] {
            continue;
        }
        let (lo, hi) = (problem.lower()[j], problem.upper()[j]);
        let name = problem.variable_name(j);
        if lo == hi {
            let _ = writeln!(out, " {name} = {}", lo);
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", num(lo), num(hi));
        }
    }
    out.push_str("Binaries\n");
    for &z in problem.binaries() {
        let _ = writeln!(out, " {}", problem.variable_name(z));
    }
    out.push_str("End\n");
    out
}
