//! Basis factorization: singleton columns are solved by substitution, the
//! remaining "kernel" block gets a dense LU with partial pivoting, and basis
//! changes are appended as product-form eta factors.

use alloc::vec;
use alloc::vec::Vec;

use super::LpProblem;

pub(crate) const NONE: usize = usize::MAX;

const DROP_TOL: f64 = 1e-14;

/// Column-major copy of `[A | -I]`.
#[derive(Debug, Clone)]
pub(crate) struct Columns {
    start: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

impl Columns {
    pub(crate) fn build(p: &LpProblem) -> Self {
        let n = p.n_vars();
        let m = p.n_rows();
        let mut counts = vec![0usize; n + m];
        for r in 0..m {
            for &c in p.row(r).0 {
                counts[c] += 1;
            }
            counts[n + r] = 1;
        }
        let mut start = Vec::with_capacity(n + m + 1);
        start.push(0);
        for c in &counts {
            start.push(start.last().unwrap() + c);
        }
        let nnz = *start.last().unwrap();
        let mut rows = vec![0usize; nnz];
        let mut vals = vec![0.0; nnz];
        let mut fill = start.clone();
        for r in 0..m {
            let (cols, v) = p.row(r);
            for (&c, &a) in cols.iter().zip(v) {
                rows[fill[c]] = r;
                vals[fill[c]] = a;
                fill[c] += 1;
            }
            rows[fill[n + r]] = r;
            vals[fill[n + r]] = -1.0;
        }
        Self { start, rows, vals }
    }

    #[inline]
    pub(crate) fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.start[j], self.start[j + 1]);
        (&self.rows[a..b], &self.vals[a..b])
    }

    #[inline]
    pub(crate) fn dot(&self, j: usize, y: &[f64]) -> f64 {
        let (r, v) = self.col(j);
        r.iter().zip(v).map(|(&i, &a)| a * y[i]).sum()
    }
}

#[derive(Debug, Clone)]
struct Eta {
    p: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

/// Dependent basis positions together with rows left without a pivot.
#[derive(Debug, Clone)]
pub(crate) struct Singular {
    pub dependent: Vec<usize>,
    pub free_rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Factor {
    single_row: Vec<usize>,
    single_val: Vec<f64>,
    kpos: Vec<usize>,
    krows: Vec<usize>,
    k: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    e_cols: Vec<Vec<(usize, f64)>>,
    etas: Vec<Eta>,
    work: Vec<f64>,
}

impl Factor {
    pub(crate) fn new(cols: &Columns, head: &[usize], m: usize) -> Result<Self, Singular> {
        let mut row_owner = vec![NONE; m];
        let mut single_row = vec![NONE; m];
        let mut single_val = vec![0.0; m];
        let mut kpos = Vec::new();
        for (p, &j) in head.iter().enumerate() {
            let (r, v) = cols.col(j);
            if r.len() == 1 && v[0].abs() >= 1e-9 && row_owner[r[0]] == NONE {
                row_owner[r[0]] = p;
                single_row[p] = r[0];
                single_val[p] = v[0];
            } else {
                kpos.push(p);
            }
        }
        let krows: Vec<usize> = (0..m).filter(|&r| row_owner[r] == NONE).collect();
        let k = kpos.len();
        debug_assert_eq!(krows.len(), k);
        let mut row_k = vec![NONE; m];
        for (i, &r) in krows.iter().enumerate() {
            row_k[r] = i;
        }
        let mut lu = vec![0.0; k * k];
        let mut e_cols = Vec::with_capacity(k);
        let mut col_scale = vec![0.0f64; k];
        for (t, &p) in kpos.iter().enumerate() {
            let (r, v) = cols.col(head[p]);
            let mut e = Vec::new();
            for (&i, &a) in r.iter().zip(v) {
                if row_k[i] != NONE {
                    lu[row_k[i] * k + t] = a;
                    col_scale[t] = col_scale[t].max(a.abs());
                } else {
                    e.push((i, a));
                }
            }
            e_cols.push(e);
        }

        let mut perm: Vec<usize> = (0..k).collect();
        let mut dependent = Vec::new();
        let mut s = 0;
        for t in 0..k {
            let mut best = s;
            let mut best_val = 0.0;
            for i in s..k {
                let a = lu[i * k + t].abs();
                if a > best_val {
                    best_val = a;
                    best = i;
                }
            }
            if best_val <= 1e-11 * col_scale[t] || best_val < 1e-13 {
                dependent.push(kpos[t]);
                continue;
            }
            if best != s {
                for c in 0..k {
                    lu.swap(s * k + c, best * k + c);
                }
                perm.swap(s, best);
            }
            let piv = lu[s * k + t];
            let (upper, lower) = lu.split_at_mut((s + 1) * k);
            let prow = &upper[s * k..s * k + k];
            for i in 0..(k - s - 1) {
                let row = &mut lower[i * k..i * k + k];
                let l = row[t] / piv;
                row[t] = l;
                if l != 0.0 {
                    for c in t + 1..k {
                        row[c] -= l * prow[c];
                    }
                }
            }
            s += 1;
        }
        if !dependent.is_empty() {
            let free_rows = (s..k).map(|i| krows[perm[i]]).collect();
            return Err(Singular { dependent, free_rows });
        }
        Ok(Self {
            single_row,
            single_val,
            kpos,
            krows,
            k,
            lu,
            perm,
            e_cols,
            etas: Vec::new(),
            work: vec![0.0; k],
        })
    }

    pub(crate) fn eta_count(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B out = rhs`; `rhs` is indexed by row and is overwritten,
    /// `out` is indexed by basis position.
    pub(crate) fn ftran(&mut self, rhs: &mut [f64], out: &mut [f64]) {
        let k = self.k;
        let z = &mut self.work;
        let mut any = false;
        for i in 0..k {
            z[i] = rhs[self.krows[self.perm[i]]];
            any |= z[i] != 0.0;
        }
        if any {
            for i in 0..k {
                let row = &self.lu[i * k..i * k + i];
                let mut acc = z[i];
                for (c, &l) in row.iter().enumerate() {
                    acc -= l * z[c];
                }
                z[i] = acc;
            }
            for i in (0..k).rev() {
                let row = &self.lu[i * k..i * k + k];
                let mut acc = z[i];
                for c in i + 1..k {
                    acc -= row[c] * z[c];
                }
                z[i] = acc / row[i];
            }
        }
        for t in 0..k {
            let zt = z[t];
            out[self.kpos[t]] = zt;
            if zt != 0.0 {
                for &(r, a) in &self.e_cols[t] {
                    rhs[r] -= a * zt;
                }
            }
        }
        for (p, &r) in self.single_row.iter().enumerate() {
            if r != NONE {
                out[p] = rhs[r] / self.single_val[p];
            }
        }
        for eta in &self.etas {
            let vp = out[eta.p] / eta.pivot;
            out[eta.p] = vp;
            if vp != 0.0 {
                for &(i, a) in &eta.entries {
                    out[i] -= a * vp;
                }
            }
        }
    }

    /// Solves `B^T y = c`; `c` is indexed by basis position and is
    /// overwritten, `y` is indexed by row.
    pub(crate) fn btran(&mut self, c: &mut [f64], y: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut acc = c[eta.p];
            for &(i, a) in &eta.entries {
                acc -= a * c[i];
            }
            c[eta.p] = acc / eta.pivot;
        }
        for (p, &r) in self.single_row.iter().enumerate() {
            if r != NONE {
                y[r] = c[p] / self.single_val[p];
            }
        }
        let k = self.k;
        let w = &mut self.work;
        for t in 0..k {
            let mut acc = c[self.kpos[t]];
            for &(r, a) in &self.e_cols[t] {
                acc -= a * y[r];
            }
            w[t] = acc;
        }
        for i in 0..k {
            let row = &self.lu[i * k..i * k + k];
            let wi = w[i] / row[i];
            w[i] = wi;
            if wi != 0.0 {
                for c in i + 1..k {
                    w[c] -= row[c] * wi;
                }
            }
        }
        for i in (0..k).rev() {
            let qi = w[i];
            if qi != 0.0 {
                let row = &self.lu[i * k..i * k + i];
                for (c, &l) in row.iter().enumerate() {
                    w[c] -= l * qi;
                }
            }
        }
        for i in 0..k {
            y[self.krows[self.perm[i]]] = w[i];
        }
    }

    /// Records that position `p` was replaced by a column whose FTRAN image
    /// is `alpha`.
    pub(crate) fn push_eta(&mut self, p: usize, alpha: &[f64]) {
        let entries = alpha
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != p && a.abs() > DROP_TOL)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push(Eta { p, pivot: alpha[p], entries });
    }
}
