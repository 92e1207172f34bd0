//! Closed intervals with outward rounding.
//!
//! Sums and products are computed in round-to-nearest and then checked with
//! an error-free transform; an endpoint is moved one ulp outward only when
//! the float result is not exact. sin/cos widen by two ulps to cover the
//! libm error bound.

use core::f64::consts::{FRAC_PI_2, PI, TAU};
use core::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn add_down(a: f64, b: f64) -> f64 {
    let s = a + b;
    if !s.is_finite() {
        return s;
    }
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    if err < 0.0 {
        s.next_down()
    } else {
        s
    }
}

fn add_up(a: f64, b: f64) -> f64 {
    -add_down(-a, -b)
}

fn mul_down(a: f64, b: f64) -> f64 {
    let p = a * b;
    if !p.is_finite() {
        return p;
    }
    if libm::fma(a, b, -p) < 0.0 {
        p.next_down()
    } else {
        p
    }
}

fn mul_up(a: f64, b: f64) -> f64 {
    -mul_down(-a, b)
}

impl Interval {
    pub const ZERO: Self = Self { lo: 0.0, hi: 0.0 };
    pub const UNIT: Self = Self { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * self.lo + 0.5 * self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Self) -> Self {
        Self { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn scale(&self, c: f64) -> Self {
        *self * Self::point(c)
    }

    pub fn powi(&self, e: u32) -> Self {
        match e {
            0 => Self::point(1.0),
            1 => *self,
            _ if e % 2 == 0 => {
                let m = self.lo.abs().max(self.hi.abs());
                let n = if self.contains(0.0) { 0.0 } else { self.lo.abs().min(self.hi.abs()) };
                let (mut lo, mut hi) = (1.0, 1.0);
                for _ in 0..e {
                    lo = mul_down(lo, n);
                    hi = mul_up(hi, m);
                }
                Self { lo, hi }
            }
            _ => {
                // Odd powers are monotone and odd.
                let mag = |x: f64, up: bool| {
                    let mut acc = 1.0;
                    for _ in 0..e {
                        acc = if up { mul_up(acc, x.abs()) } else { mul_down(acc, x.abs()) };
                    }
                    acc
                };
                let lo = if self.lo >= 0.0 { mag(self.lo, false) } else { -mag(self.lo, true) };
                let hi = if self.hi >= 0.0 { mag(self.hi, true) } else { -mag(self.hi, false) };
                Self { lo, hi }
            }
        }
    }

    pub fn sin(&self) -> Self {
        self.trig(libm::sin, FRAC_PI_2)
    }

    pub fn cos(&self) -> Self {
        self.trig(libm::cos, 0.0)
    }

    /// `f` is sin or cos with its maxima at `peak + 2k pi` and minima half a
    /// period later. Extrema whose location is within rounding of an
    /// endpoint are counted as included.
    fn trig(&self, f: fn(f64) -> f64, peak: f64) -> Self {
        if !(self.width() < TAU) {
            return Self::UNIT;
        }
        let widen = |v: f64| (v.next_down().next_down().max(-1.0), v.next_up().next_up().min(1.0));
        let (a0, a1) = widen(f(self.lo));
        let (b0, b1) = widen(f(self.hi));
        let mut lo = a0.min(b0);
        let mut hi = a1.max(b1);
        let slack = 1e-12 * (1.0 + self.lo.abs().max(self.hi.abs()));
        let hits = |phase: f64| {
            let k = libm::ceil((self.lo - slack - phase) / TAU);
            phase + k * TAU <= self.hi + slack
        };
        if hits(peak) {
            hi = 1.0;
        }
        if hits(peak + PI) {
            lo = -1.0;
        }
        Self { lo, hi }
    }
}

impl Add for Interval {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { lo: add_down(self.lo, o.lo), hi: add_up(self.hi, o.hi) }
    }
}

impl Sub for Interval {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Neg for Interval {
    type Output = Self;
    fn neg(self) -> Self {
        Self { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let c = [(self.lo, o.lo), (self.lo, o.hi), (self.hi, o.lo), (self.hi, o.hi)];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (a, b) in c {
            lo = lo.min(mul_down(a, b));
            hi = hi.max(mul_up(a, b));
        }
        Self { lo, hi }
    }
}
