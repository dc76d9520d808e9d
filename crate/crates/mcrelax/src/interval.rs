//! Closed-interval arithmetic on plain f64, without outward rounding.
//!
//! These are the range bounds every relaxation is cut against, so each op
//! must return an enclosure of the true image. Division and the negative
//! powers reject intervals containing zero instead of going to extended
//! arithmetic.

use std::f64::consts::{E, PI, TAU};

use rand::Rng;

/// A closed interval `[lo, hi]`, `lo <= hi`, both finite unless stated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Domain violation raised by a partial interval op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DomainViolation {
    DivisorSpansZero,
    LogNonPositive,
    SqrtNegative,
    XlogNegative,
    PowSpansZero,
}

impl std::fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msg = match self {
            DomainViolation::DivisorSpansZero => "division by an interval containing zero",
            DomainViolation::LogNonPositive => "log of an interval not strictly positive",
            DomainViolation::SqrtNegative => "sqrt of an interval with negative part",
            DomainViolation::XlogNegative => "x*log(x) of an interval with negative part",
            DomainViolation::PowSpansZero => "negative power of an interval containing zero",
        };
        f.write_str(msg)
    }
}

impl std::error::Error for DomainViolation {}

impl Interval {
    /// Panics if `lo > hi` or either endpoint is NaN.
    pub fn new(lo: f64, hi: f64) -> Interval {
        assert!(!lo.is_nan() && !hi.is_nan(), "interval endpoint is NaN");
        assert!(lo <= hi, "interval endpoints out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Interval {
        Interval::new(v, v)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Widens both endpoints by `eps` (absolute). Robustness experiments
    /// only; every default path uses `eps = 0`.
    pub fn inflated(&self, eps: f64) -> Interval {
        Interval::new(self.lo - eps, self.hi + eps)
    }

    /// Clamps `x` into the interval.
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

pub fn iadd(a: Interval, b: Interval) -> Interval {
    Interval::new(a.lo + b.lo, a.hi + b.hi)
}

pub fn isub(a: Interval, b: Interval) -> Interval {
    Interval::new(a.lo - b.hi, a.hi - b.lo)
}

pub fn ineg(a: Interval) -> Interval {
    Interval::new(-a.hi, -a.lo)
}

pub fn imul(a: Interval, b: Interval) -> Interval {
    let p = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi];
    let mut lo = p[0];
    let mut hi = p[0];
    for &v in &p[1..] {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Interval::new(lo, hi)
}

/// Scales by a constant.
pub fn iscale(a: Interval, s: f64) -> Interval {
    if s >= 0.0 {
        Interval::new(s * a.lo, s * a.hi)
    } else {
        Interval::new(s * a.hi, s * a.lo)
    }
}

pub fn idiv(a: Interval, b: Interval) -> Result<Interval, DomainViolation> {
    if b.lo <= 0.0 && b.hi >= 0.0 {
        return Err(DomainViolation::DivisorSpansZero);
    }
    Ok(imul(a, Interval::new(1.0 / b.hi, 1.0 / b.lo)))
}

pub fn iexp(a: Interval) -> Interval {
    Interval::new(a.lo.exp(), a.hi.exp())
}

pub fn ilog(a: Interval) -> Result<Interval, DomainViolation> {
    if a.lo <= 0.0 {
        return Err(DomainViolation::LogNonPositive);
    }
    Ok(Interval::new(a.lo.ln(), a.hi.ln()))
}

pub fn isqrt(a: Interval) -> Result<Interval, DomainViolation> {
    if a.lo < 0.0 {
        return Err(DomainViolation::SqrtNegative);
    }
    Ok(Interval::new(a.lo.sqrt(), a.hi.sqrt()))
}

pub fn isqr(a: Interval) -> Interval {
    let (p, q) = (a.lo * a.lo, a.hi * a.hi);
    if a.lo <= 0.0 && a.hi >= 0.0 {
        Interval::new(0.0, p.max(q))
    } else {
        Interval::new(p.min(q), p.max(q))
    }
}

/// `x * ln(x)` extended with value 0 at `x = 0`.
pub fn xlog_val(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn ixlog(a: Interval) -> Result<Interval, DomainViolation> {
    if a.lo < 0.0 {
        return Err(DomainViolation::XlogNegative);
    }
    let stat = 1.0 / E; // unique minimum of x*ln(x)
    let lo = if a.contains(stat) {
        -1.0 / E
    } else if a.hi < stat {
        xlog_val(a.hi)
    } else {
        xlog_val(a.lo)
    };
    Ok(Interval::new(lo, xlog_val(a.lo).max(xlog_val(a.hi))))
}

pub fn ipow_int(a: Interval, k: i32) -> Result<Interval, DomainViolation> {
    match k {
        0 => Ok(Interval::point(1.0)),
        1 => Ok(a),
        _ if k >= 2 => {
            let (p, q) = (a.lo.powi(k), a.hi.powi(k));
            if k % 2 == 0 {
                if a.lo <= 0.0 && a.hi >= 0.0 {
                    Ok(Interval::new(0.0, p.max(q)))
                } else {
                    Ok(Interval::new(p.min(q), p.max(q)))
                }
            } else {
                Ok(Interval::new(p, q))
            }
        }
        _ => {
            // k <= -1: monotone on any zero-free interval.
            if a.lo <= 0.0 && a.hi >= 0.0 {
                return Err(DomainViolation::PowSpansZero);
            }
            let (p, q) = (a.lo.powi(k), a.hi.powi(k));
            Ok(Interval::new(p.min(q), p.max(q)))
        }
    }
}

/// True iff some `peak + 2k*pi` lies in `[lo, hi]` where `cos(peak) = 1`.
fn contains_cos_peak(a: Interval) -> bool {
    (a.lo / TAU).ceil() * TAU <= a.hi
}

fn contains_cos_trough(a: Interval) -> bool {
    ((a.lo - PI) / TAU).ceil() * TAU + PI <= a.hi
}

pub fn icos(a: Interval) -> Interval {
    let hi = if contains_cos_peak(a) {
        1.0
    } else {
        a.lo.cos().max(a.hi.cos())
    };
    let lo = if contains_cos_trough(a) {
        -1.0
    } else {
        a.lo.cos().min(a.hi.cos())
    };
    Interval::new(lo, hi)
}

pub fn isin(a: Interval) -> Interval {
    // Computed directly rather than by shifting `icos`, so endpoint values
    // stay exact (sin(0) must give 0, not cos' rounding of pi/2).
    let has_peak = ((a.lo - PI / 2.0) / TAU).ceil() * TAU + PI / 2.0 <= a.hi;
    let has_trough = ((a.lo + PI / 2.0) / TAU).ceil() * TAU - PI / 2.0 <= a.hi;
    let hi = if has_peak {
        1.0
    } else {
        a.lo.sin().max(a.hi.sin())
    };
    let lo = if has_trough {
        -1.0
    } else {
        a.lo.sin().min(a.hi.sin())
    };
    Interval::new(lo, hi)
}

/// Second-order Taylor form `h(c) + h'(c)(X - c) + h''(X)/2 (X - c)^2`.
/// `d2h` must enclose the second derivative over the whole of `x`.
pub fn taylor2(h_c: f64, dh_c: f64, d2h: Interval, x: Interval, c: f64) -> Interval {
    let shifted = Interval::new(x.lo - c, x.hi - c);
    let linear = iscale(shifted, dh_c);
    let quad = imul(iscale(d2h, 0.5), isqr(shifted));
    iadd(Interval::point(h_c), iadd(linear, quad))
}

/// Axis-aligned product of intervals; the search domain of a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalBox {
    pub dims: Vec<Interval>,
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> IntervalBox {
        assert!(!dims.is_empty(), "empty box");
        IntervalBox { dims }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dims.len() && self.dims.iter().zip(p).all(|(d, &x)| d.contains(x))
    }

    pub fn clamp(&self, p: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(p).map(|(d, &x)| d.clamp(x)).collect()
    }

    /// Index of the widest dimension; ties go to the lowest index.
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        for (i, d) in self.dims.iter().enumerate().skip(1) {
            if d.width() > self.dims[best].width() {
                best = i;
            }
        }
        best
    }

    pub fn max_width(&self) -> f64 {
        self.dims[self.widest_dim()].width()
    }

    /// Splits at the midpoint of `dim` into (lower, upper) halves.
    pub fn bisect(&self, dim: usize) -> (IntervalBox, IntervalBox) {
        let m = self.dims[dim].mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[dim] = Interval::new(self.dims[dim].lo, m);
        right.dims[dim] = Interval::new(m, self.dims[dim].hi);
        (left, right)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| {
                if d.width() == 0.0 {
                    d.lo
                } else {
                    rng.gen_range(d.lo..=d.hi)
                }
            })
            .collect()
    }
}
