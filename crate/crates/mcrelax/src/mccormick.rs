//! McCormick convex/concave relaxations with subgradient propagation.
//!
//! Every DAG node gets a `McValue`: relaxation values at the evaluation
//! point, range bounds, and one subgradient per side. Univariate intrinsics
//! go through their convex/concave envelopes on the operand's range; products
//! use the bilinear rule on the operands' ranges; composition follows the
//! mid-function form, so a subgradient of the envelope times the matching
//! operand subgradient propagates upward.
//!
//! Single source of truth for the cut step: every constructor clamps into the
//! node's range bounds and zeroes the subgradient of a side that got clamped,
//! so downstream consumers always see `lo <= cv <= cc <= hi`.

use std::f64::consts::{E, PI, TAU};

use crate::expr::{Dag, EvalError, NodeId, OpKind};
use crate::interval::{Interval, IntervalBox};

/// Relaxation state of one factor at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct McValue {
    pub cv: f64,
    pub cc: f64,
    pub lo: f64,
    pub hi: f64,
    pub sub_cv: Vec<f64>,
    pub sub_cc: Vec<f64>,
}

impl McValue {
    pub fn range(&self) -> Interval {
        Interval::new(self.lo, self.hi)
    }

    /// Value of the affine underestimator anchored at `point`, evaluated
    /// at `z`.
    pub fn affine_cv(&self, point: &[f64], z: &[f64]) -> f64 {
        let mut v = self.cv;
        for i in 0..point.len() {
            v += self.sub_cv[i] * (z[i] - point[i]);
        }
        v
    }

    /// Value of the affine overestimator anchored at `point`, evaluated
    /// at `z`.
    pub fn affine_cc(&self, point: &[f64], z: &[f64]) -> f64 {
        let mut v = self.cc;
        for i in 0..point.len() {
            v += self.sub_cc[i] * (z[i] - point[i]);
        }
        v
    }

    pub(crate) fn cut(mut self, range: Interval) -> McValue {
        self.lo = range.lo;
        self.hi = range.hi;
        if self.cv < range.lo {
            self.cv = range.lo;
            self.sub_cv.iter_mut().for_each(|s| *s = 0.0);
        }
        if self.cc > range.hi {
            self.cc = range.hi;
            self.sub_cc.iter_mut().for_each(|s| *s = 0.0);
        }
        self
    }
}

/// Inputs shared by a whole propagation pass.
pub struct PropagationContext<'a> {
    pub domain: &'a IntervalBox,
    pub point: &'a [f64],
    /// Range bounds per node id. When absent, the natural interval extension
    /// is computed on the fly.
    pub stored_bounds: Option<&'a [Interval]>,
}

/// Relaxes every factor of `dag` at `ctx.point`, returning one `McValue` per
/// node, indexed by node id.
pub fn propagate(dag: &Dag, ctx: &PropagationContext) -> Result<Vec<McValue>, EvalError> {
    assert_eq!(ctx.point.len(), dag.nvars(), "point dimension mismatch");
    debug_assert!(ctx.domain.contains(ctx.point), "evaluation point outside box");
    let owned_bounds;
    let bounds: &[Interval] = match ctx.stored_bounds {
        Some(b) => {
            assert_eq!(b.len(), dag.len(), "stored bounds length mismatch");
            b
        }
        None => {
            owned_bounds = dag.eval_interval(ctx.domain)?;
            &owned_bounds
        }
    };
    let mut out: Vec<Option<McValue>> = vec![None; dag.len()];
    for &id in &dag.schedule {
        let v = mc_node(dag, id, &out, bounds, ctx.point)?;
        out[id.0] = Some(v);
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Relaxes a single node given its children's finished values. `bounds[id]`
/// is the range the result is cut against.
pub(crate) fn mc_node(
    dag: &Dag,
    id: NodeId,
    mc: &[Option<McValue>],
    bounds: &[Interval],
    point: &[f64],
) -> Result<McValue, EvalError> {
    let n = point.len();
    let node = dag.node(id);
    let child = |k: usize| mc[node.args[k].0].as_ref().expect("child not yet relaxed");
    let range = bounds[id.0];
    let v = match node.op {
        OpKind::Var(i) => {
            let mut sub = vec![0.0; n];
            sub[i] = 1.0;
            McValue {
                cv: point[i],
                cc: point[i],
                lo: range.lo,
                hi: range.hi,
                sub_cv: sub.clone(),
                sub_cc: sub,
            }
            .cut(range)
        }
        OpKind::Const(c) => McValue {
            cv: c,
            cc: c,
            lo: range.lo,
            hi: range.hi,
            sub_cv: vec![0.0; n],
            sub_cc: vec![0.0; n],
        }
        .cut(range),
        OpKind::Add => {
            let (a, b) = (child(0), child(1));
            McValue {
                cv: a.cv + b.cv,
                cc: a.cc + b.cc,
                lo: range.lo,
                hi: range.hi,
                sub_cv: vec_add(&a.sub_cv, &b.sub_cv),
                sub_cc: vec_add(&a.sub_cc, &b.sub_cc),
            }
            .cut(range)
        }
        OpKind::Sub => {
            let (a, b) = (child(0), child(1));
            McValue {
                cv: a.cv - b.cc,
                cc: a.cc - b.cv,
                lo: range.lo,
                hi: range.hi,
                sub_cv: vec_sub(&a.sub_cv, &b.sub_cc),
                sub_cc: vec_sub(&a.sub_cc, &b.sub_cv),
            }
            .cut(range)
        }
        OpKind::Neg => {
            let a = child(0);
            McValue {
                cv: -a.cc,
                cc: -a.cv,
                lo: range.lo,
                hi: range.hi,
                sub_cv: vec_scale(&a.sub_cc, -1.0),
                sub_cc: vec_scale(&a.sub_cv, -1.0),
            }
            .cut(range)
        }
        OpKind::Mul => mc_mul(child(0), child(1), range),
        OpKind::Div => {
            // a/b = a * (1/b); the reciprocal is an ordinary envelope step
            // cut against its own natural range.
            let (a, b) = (child(0), child(1));
            let b_range = Interval::new(b.lo, b.hi);
            let recip_range = crate::interval::ipow_int(b_range, -1)
                .map_err(|e| EvalError {
                    node: id,
                    op: "div",
                    reason: e.to_string(),
                })?;
            let recip = mc_univariate(OpKind::Pow(-1), b, recip_range);
            mc_mul(a, &recip, range)
        }
        OpKind::Pow(k) => {
            debug_assert!(k >= 3 || k <= -1);
            mc_univariate(OpKind::Pow(k), child(0), range)
        }
        op @ (OpKind::Exp
        | OpKind::Log
        | OpKind::Sqrt
        | OpKind::Sqr
        | OpKind::Xlog
        | OpKind::Sin
        | OpKind::Cos) => mc_univariate(op, child(0), range),
    };
    Ok(v)
}

fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn vec_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

/// Bilinear product rule. Each candidate under/overestimator picks the
/// operand relaxation side that keeps the scaled term convex resp. concave;
/// max/min over the two candidates, ties resolved to the first.
fn mc_mul(a: &McValue, b: &McValue, range: Interval) -> McValue {
    let (xl, xu, yl, yu) = (a.lo, a.hi, b.lo, b.hi);

    // term = coeff * operand, underestimating when `under`, with subgradient.
    let pick = |coeff: f64, v: &McValue, under: bool| -> (f64, Vec<f64>) {
        let use_cv = (coeff >= 0.0) == under;
        if use_cv {
            (coeff * v.cv, vec_scale(&v.sub_cv, coeff))
        } else {
            (coeff * v.cc, vec_scale(&v.sub_cc, coeff))
        }
    };

    let (cv, sub_cv) = {
        let (p1, s1) = pick(yl, a, true);
        let (q1, t1) = pick(xl, b, true);
        let v1 = p1 + q1 - xl * yl;
        let (p2, s2) = pick(yu, a, true);
        let (q2, t2) = pick(xu, b, true);
        let v2 = p2 + q2 - xu * yu;
        if v2 > v1 {
            (v2, vec_add(&s2, &t2))
        } else {
            (v1, vec_add(&s1, &t1))
        }
    };
    let (cc, sub_cc) = {
        let (p1, s1) = pick(yl, a, false);
        let (q1, t1) = pick(xu, b, false);
        let v1 = p1 + q1 - xu * yl;
        let (p2, s2) = pick(yu, a, false);
        let (q2, t2) = pick(xl, b, false);
        let v2 = p2 + q2 - xl * yu;
        if v2 < v1 {
            (v2, vec_add(&s2, &t2))
        } else {
            (v1, vec_add(&s1, &t1))
        }
    };
    McValue {
        cv,
        cc,
        lo: range.lo,
        hi: range.hi,
        sub_cv,
        sub_cc,
    }
    .cut(range)
}

#[derive(Clone, Copy, PartialEq)]
enum MidBranch {
    TookCv,
    TookCc,
    Fixed,
}

/// Median of `{cv, cc, c}` assuming `cv <= cc`, and which argument won.
fn mid3(cv: f64, cc: f64, c: f64) -> (f64, MidBranch) {
    debug_assert!(cv <= cc + 1e-9, "relaxation values out of order: {cv} > {cc}");
    if c <= cv {
        (cv, MidBranch::TookCv)
    } else if c >= cc {
        (cc, MidBranch::TookCc)
    } else {
        (c, MidBranch::Fixed)
    }
}

/// Composition rule for a univariate intrinsic with known envelopes on the
/// operand's range. On a non-finite envelope slope (possible only at a range
/// endpoint with an infinite one-sided derivative, e.g. `xlog` at 0) the side
/// degrades to the constant range bound, which is always a valid relaxation.
fn mc_univariate(op: OpKind, a: &McValue, range: Interval) -> McValue {
    let n = a.sub_cv.len();
    let (l, u) = (a.lo, a.hi);

    let xmin = env_argmin(op, l, u);
    let (x_cv, br_cv) = mid3(a.cv, a.cc, xmin);
    let (mut cv, slope_cv) = env_cv(op, l, u, x_cv);
    let mut sub_cv = match br_cv {
        _ if !slope_cv.is_finite() => {
            cv = range.lo;
            vec![0.0; n]
        }
        MidBranch::TookCv => vec_scale(&a.sub_cv, slope_cv),
        MidBranch::TookCc => vec_scale(&a.sub_cc, slope_cv),
        MidBranch::Fixed => vec![0.0; n],
    };
    if !cv.is_finite() {
        cv = range.lo;
        sub_cv = vec![0.0; n];
    }

    let xmax = env_argmax(op, l, u);
    let (x_cc, br_cc) = mid3(a.cv, a.cc, xmax);
    let (mut cc, slope_cc) = env_cc(op, l, u, x_cc);
    let mut sub_cc = match br_cc {
        _ if !slope_cc.is_finite() => {
            cc = range.hi;
            vec![0.0; n]
        }
        MidBranch::TookCv => vec_scale(&a.sub_cv, slope_cc),
        MidBranch::TookCc => vec_scale(&a.sub_cc, slope_cc),
        MidBranch::Fixed => vec![0.0; n],
    };
    if !cc.is_finite() {
        cc = range.hi;
        sub_cc = vec![0.0; n];
    }

    McValue {
        cv,
        cc,
        lo: range.lo,
        hi: range.hi,
        sub_cv,
        sub_cc,
    }
    .cut(range)
}

/// Chord through `(l, fl)` and `(u, fu)`; `dfl` is the slope used when the
/// interval is degenerate.
fn secant(l: f64, u: f64, fl: f64, fu: f64, dfl: f64, x: f64) -> (f64, f64) {
    let slope = if u > l { (fu - fl) / (u - l) } else { dfl };
    (fl + slope * (x - l), slope)
}

fn secant_slope(l: f64, u: f64, fl: f64, fu: f64, dfl: f64) -> f64 {
    if u > l {
        (fu - fl) / (u - l)
    } else {
        dfl
    }
}

fn powi(x: f64, k: i32) -> f64 {
    x.powi(k)
}

fn pow_deriv(x: f64, k: i32) -> f64 {
    k as f64 * x.powi(k - 1)
}

/// Convex envelope of the intrinsic on `[l, u]`, evaluated at `x` in
/// `[l, u]`; returns value and a subgradient of the envelope.
fn env_cv(op: OpKind, l: f64, u: f64, x: f64) -> (f64, f64) {
    match op {
        OpKind::Exp => (x.exp(), x.exp()),
        OpKind::Log => secant(l, u, l.ln(), u.ln(), 1.0 / l, x),
        OpKind::Sqrt => secant(l, u, l.sqrt(), u.sqrt(), 0.5 / l.sqrt(), x),
        OpKind::Sqr => (x * x, 2.0 * x),
        OpKind::Xlog => (crate::interval::xlog_val(x), x.ln() + 1.0),
        OpKind::Pow(k) if k >= 3 && k % 2 == 1 => pow_odd_cv(k, l, u, x),
        OpKind::Pow(k) if k >= 4 => (powi(x, k), pow_deriv(x, k)),
        OpKind::Pow(k) => {
            // k <= -1 on a zero-free interval.
            debug_assert!(k <= -1 && (l > 0.0 || u < 0.0));
            if l > 0.0 || k % 2 == 0 {
                (powi(x, k), pow_deriv(x, k))
            } else {
                secant(l, u, powi(l, k), powi(u, k), pow_deriv(l, k), x)
            }
        }
        OpKind::Sin => cos_cv(l - PI / 2.0, u - PI / 2.0, x - PI / 2.0),
        OpKind::Cos => cos_cv(l, u, x),
        _ => unreachable!("not a univariate intrinsic"),
    }
}

fn env_cc(op: OpKind, l: f64, u: f64, x: f64) -> (f64, f64) {
    match op {
        OpKind::Exp => secant(l, u, l.exp(), u.exp(), l.exp(), x),
        OpKind::Log => (x.ln(), 1.0 / x),
        OpKind::Sqrt => (x.sqrt(), 0.5 / x.sqrt()),
        OpKind::Sqr => secant(l, u, l * l, u * u, 2.0 * l, x),
        OpKind::Xlog => {
            let (fl, fu) = (crate::interval::xlog_val(l), crate::interval::xlog_val(u));
            secant(l, u, fl, fu, l.ln() + 1.0, x)
        }
        OpKind::Pow(k) if k >= 3 && k % 2 == 1 => {
            let (v, s) = pow_odd_cv(k, -u, -l, -x);
            (-v, s)
        }
        OpKind::Pow(k) if k >= 4 => secant(l, u, powi(l, k), powi(u, k), pow_deriv(l, k), x),
        OpKind::Pow(k) => {
            debug_assert!(k <= -1 && (l > 0.0 || u < 0.0));
            if l > 0.0 || k % 2 == 0 {
                secant(l, u, powi(l, k), powi(u, k), pow_deriv(l, k), x)
            } else {
                (powi(x, k), pow_deriv(x, k))
            }
        }
        OpKind::Sin => {
            let (v, s) = cos_cv(l + PI / 2.0, u + PI / 2.0, x + PI / 2.0);
            (-v, -s)
        }
        OpKind::Cos => {
            let (v, s) = cos_cv(l + PI, u + PI, x + PI);
            (-v, -s)
        }
        _ => unreachable!("not a univariate intrinsic"),
    }
}

/// Minimizer of the convex envelope over `[l, u]`.
fn env_argmin(op: OpKind, l: f64, u: f64) -> f64 {
    match op {
        OpKind::Exp | OpKind::Log | OpKind::Sqrt => l,
        OpKind::Sqr => 0.0f64.clamp(l, u),
        OpKind::Xlog => (1.0 / E).clamp(l, u),
        OpKind::Pow(k) if k >= 3 && k % 2 == 1 => l,
        OpKind::Pow(k) if k >= 4 => 0.0f64.clamp(l, u),
        OpKind::Pow(k) => {
            debug_assert!(k <= -1);
            if l > 0.0 {
                u
            } else if k % 2 == 0 {
                l
            } else {
                u
            }
        }
        OpKind::Sin => cos_argmin(l - PI / 2.0, u - PI / 2.0) + PI / 2.0,
        OpKind::Cos => cos_argmin(l, u),
        _ => unreachable!("not a univariate intrinsic"),
    }
}

/// Maximizer of the concave envelope over `[l, u]`.
fn env_argmax(op: OpKind, l: f64, u: f64) -> f64 {
    match op {
        OpKind::Exp | OpKind::Log | OpKind::Sqrt => u,
        OpKind::Sqr => {
            if l + u >= 0.0 {
                u
            } else {
                l
            }
        }
        OpKind::Xlog => {
            let s = secant_slope(
                l,
                u,
                crate::interval::xlog_val(l),
                crate::interval::xlog_val(u),
                l.ln() + 1.0,
            );
            if s >= 0.0 {
                u
            } else {
                l
            }
        }
        OpKind::Pow(k) if k >= 3 && k % 2 == 1 => u,
        OpKind::Pow(k) if k >= 4 => {
            let s = secant_slope(l, u, powi(l, k), powi(u, k), pow_deriv(l, k));
            if s >= 0.0 {
                u
            } else {
                l
            }
        }
        OpKind::Pow(k) => {
            debug_assert!(k <= -1);
            if l > 0.0 {
                l
            } else if k % 2 == 0 {
                u
            } else {
                l
            }
        }
        OpKind::Sin => cos_argmin(l + PI / 2.0, u + PI / 2.0) - PI / 2.0,
        OpKind::Cos => cos_argmin(l + PI, u + PI) - PI,
        _ => unreachable!("not a univariate intrinsic"),
    }
}

/// Convex envelope of x^k (k odd >= 3) on [l, u]: the function where it is
/// convex, a tangent chord from the left endpoint across the concave part.
fn pow_odd_cv(k: i32, l: f64, u: f64, x: f64) -> (f64, f64) {
    debug_assert!(k >= 3 && k % 2 == 1);
    if l >= 0.0 {
        return (powi(x, k), pow_deriv(x, k));
    }
    if u <= 0.0 {
        return secant(l, u, powi(l, k), powi(u, k), pow_deriv(l, k), x);
    }
    // Tangency from (l, l^k) at p in (0, u]: k p^(k-1) (p - l) = p^k - l^k.
    let chi = |p: f64| pow_deriv(p, k) * (p - l) - powi(p, k) + powi(l, k);
    if chi(u) <= 0.0 {
        return secant(l, u, powi(l, k), powi(u, k), pow_deriv(l, k), x);
    }
    let p = bisect_root(0.0, u, &chi);
    if x <= p {
        let m = pow_deriv(p, k);
        (powi(l, k) + m * (x - l), m)
    } else {
        (powi(x, k), pow_deriv(x, k))
    }
}

/// Root of `g` in `[lo, hi]` given `g(lo) <= 0 <= g(hi)`. Rounding can push
/// an endpoint's sign past zero by a hair; the endpoint is then the root.
fn bisect_root(mut lo: f64, mut hi: f64, g: &impl Fn(f64) -> f64) -> f64 {
    if g(lo) > 0.0 {
        return lo;
    }
    if g(hi) < 0.0 {
        return hi;
    }
    for _ in 0..80 {
        let m = 0.5 * (lo + hi);
        if g(m) <= 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

/// First trough (cos = -1) at or after `l`, if it is at most `u`.
fn first_trough(l: f64, u: f64) -> Option<f64> {
    let t = PI + TAU * ((l - PI) / TAU).ceil();
    (t <= u).then_some(t)
}

fn last_trough(l: f64, u: f64) -> Option<f64> {
    let t = PI + TAU * ((u - PI) / TAU).floor();
    (t >= l).then_some(t)
}

fn has_peak(l: f64, u: f64) -> bool {
    TAU * (l / TAU).ceil() <= u
}

/// Minimizer of the convex envelope of cos on [l, u]: a trough if one is
/// inside, otherwise the endpoint with the smaller value.
fn cos_argmin(l: f64, u: f64) -> f64 {
    if let Some(t) = first_trough(l, u) {
        t
    } else if l.cos() <= u.cos() {
        l
    } else {
        u
    }
}

/// Convex envelope of cos on `[l, u]` at `x`, with a subgradient.
///
/// With a trough inside, the envelope is the curve (or an endpoint-anchored
/// tangent chord) down to the first trough, -1 between troughs, and the
/// mirror image on the right. Without one, it is the curve where cos is
/// convex, the secant where it is concave, and a single tangent chord in the
/// mixed cases; a chord tangent to both convex tails cannot exist because
/// their slopes have opposite signs.
fn cos_cv(l: f64, u: f64, x: f64) -> (f64, f64) {
    debug_assert!(l <= u && x >= l - 1e-9 && x <= u + 1e-9);
    if u - l < 1e-12 {
        return (l.cos() + (-l.sin()) * (x - l), -l.sin());
    }
    if let (Some(t1), Some(t2)) = (first_trough(l, u), last_trough(l, u)) {
        if x <= t1 {
            return cos_cv_into_trough(l, t1, x);
        }
        if x >= t2 {
            // cos is symmetric about a trough, so reflect the left-piece
            // construction; slopes flip sign.
            let (v, s) = cos_cv_into_trough(2.0 * t2 - u, t2, 2.0 * t2 - x);
            return (v, -s);
        }
        return (-1.0, 0.0);
    }

    let (cl, cu) = (l.cos(), u.cos());
    if cl <= 0.0 && cu <= 0.0 && !has_peak(l, u) {
        return (x.cos(), -x.sin());
    }
    if cl >= 0.0 && cu >= 0.0 {
        // No trough inside, so entirely within one concave stripe.
        return secant(l, u, cl, cu, -l.sin(), x);
    }
    if cl <= cu {
        // Convex tail at the left end: curve on [l, p], chord from the
        // tangency p to (u, cos u), if the tangency exists.
        let g = |p: f64| -p.sin() * (u - p) - cu + p.cos();
        if g(l) >= 0.0 {
            return secant(l, u, cl, cu, -l.sin(), x);
        }
        // Ascending zero of cos bounds the convex stripe on the right.
        let z = stripe_zero_above(l);
        let p = bisect_root(l, z.min(u), &g);
        if x <= p {
            (x.cos(), -x.sin())
        } else {
            let m = -p.sin();
            (p.cos() + m * (x - p), m)
        }
    } else {
        // Mirror case: chord from (l, cos l) to a tangency in the right
        // convex tail, then the curve.
        let g = |p: f64| -p.sin() * (p - l) - p.cos() + cl;
        if g(u) <= 0.0 {
            return secant(l, u, cl, cu, -l.sin(), x);
        }
        // Descending zero of cos bounds the convex stripe on the left; g is
        // increasing across the stripe, nonpositive at the zero.
        let z = stripe_zero_below(u);
        let p = bisect_root(z.max(l), u, &g);
        if x >= p {
            (x.cos(), -x.sin())
        } else {
            let m = -p.sin();
            (cl + m * (x - l), m)
        }
    }
}

/// Envelope piece on `[l, t]` where `t` is the nearest trough at or after
/// `l`: the curve once inside the trough's convex stripe, otherwise a chord
/// from `(l, cos l)` tangent to the curve inside the stripe.
fn cos_cv_into_trough(l: f64, t: f64, x: f64) -> (f64, f64) {
    if l >= t - PI / 2.0 {
        return (x.cos(), -x.sin());
    }
    let g = |p: f64| -p.sin() * (p - l) - p.cos() + l.cos();
    // g <= 0 at the stripe edge, g = 1 + cos(l) >= 0 at the trough.
    let p = bisect_root(t - PI / 2.0, t, &g);
    if x <= p {
        let m = -p.sin();
        (l.cos() + m * (x - l), m)
    } else {
        (x.cos(), -x.sin())
    }
}

/// Smallest zero of cos at or after `x` (edge of the convex stripe).
fn stripe_zero_above(x: f64) -> f64 {
    PI / 2.0 + PI * ((x - PI / 2.0) / PI).ceil()
}

/// Largest zero of cos at or before `x`.
fn stripe_zero_below(x: f64) -> f64 {
    PI / 2.0 + PI * ((x - PI / 2.0) / PI).floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn relax_at(src: &str, vars: &[&str], dims: Vec<Interval>, point: &[f64]) -> (Vec<McValue>, NodeId) {
        let (dag, root) = parse_expression(src, vars).unwrap();
        let domain = IntervalBox::new(dims);
        let ctx = PropagationContext {
            domain: &domain,
            point,
            stored_bounds: None,
        };
        (propagate(&dag, &ctx).unwrap(), root)
    }

    #[test]
    fn exp_envelope_at_quarter() {
        let (mc, root) = relax_at(
            "exp(z)",
            &["z"],
            vec![Interval::new(-0.5, 1.0)],
            &[0.25],
        );
        let v = &mc[root.0];
        assert!((v.cv - 0.25f64.exp()).abs() < 1e-12);
        // Concave side is the secant: ((e^-0.5 + e) / 2 at the midpoint-ish
        // evaluation point works out to 1.66240624...
        let want = 0.5 * ((-0.5f64).exp() + 1.0f64.exp());
        assert!((v.cc - want).abs() < 1e-12);
        assert!((v.cc - 1.66240624).abs() < 1e-7);
        let secant_slope = (1.0f64.exp() - (-0.5f64).exp()) / 1.5;
        assert!((v.sub_cc[0] - secant_slope).abs() < 1e-12);
        assert!((v.sub_cv[0] - 0.25f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn bilinear_at_upper_corner() {
        let (mc, root) = relax_at(
            "x*y",
            &["x", "y"],
            vec![Interval::new(0.0, 1.0), Interval::new(0.0, 1.0)],
            &[1.0, 1.0],
        );
        // cv = max(x + y - 1, 0) = 1 at (1, 1).
        assert!((mc[root.0].cv - 1.0).abs() < 1e-15);
        assert!((mc[root.0].cc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cube_envelope_tangent_point() {
        // x^3 on [-0.5, 1]: tangency from the left endpoint lands at 0.25.
        let (mc, root) = relax_at("z^3", &["z"], vec![Interval::new(-0.5, 1.0)], &[0.25]);
        let v = &mc[root.0];
        assert!((v.cv - 0.015625).abs() < 1e-9, "cv = {}", v.cv);
        assert!((v.sub_cv[0] - 0.1875).abs() < 1e-9);
        assert!((v.cc - 0.4375).abs() < 1e-12);
        assert!((v.sub_cc[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn difference_factors_match_hand_derivation() {
        // f5 = z - z^2 and f6 = z^3 - exp(z) on [-0.5, 1] at 0.25.
        let (mc, root) = relax_at(
            "(z-z^2)*(z^3-exp(z))",
            &["z"],
            vec![Interval::new(-0.5, 1.0)],
            &[0.25],
        );
        let f5 = mc.iter().position(|v| (v.lo + 1.5).abs() < 1e-12).unwrap();
        let v5 = &mc[f5];
        assert!((v5.cv + 0.375).abs() < 1e-12);
        assert!((v5.cc - 0.1875).abs() < 1e-12);
        assert!((v5.sub_cv[0] - 0.5).abs() < 1e-12);
        assert!((v5.sub_cc[0] - 0.5).abs() < 1e-12);

        let e_half = (-0.5f64).exp();
        let e_one = 1.0f64.exp();
        let f6_lo = -0.125 - e_one;
        let f6 = mc
            .iter()
            .position(|v| (v.lo - f6_lo).abs() < 1e-12)
            .unwrap();
        let v6 = &mc[f6];
        let exp_secant = (e_one - e_half) / 1.5;
        assert!((v6.cv - (0.015625 - (e_half + exp_secant * 0.75))).abs() < 1e-12);
        assert!((v6.sub_cv[0] - (0.1875 - exp_secant)).abs() < 1e-12);
        assert!((v6.cc - (0.4375 - 0.25f64.exp())).abs() < 1e-12);
        assert!((v6.sub_cc[0] - (0.75 - 0.25f64.exp())).abs() < 1e-12);

        // Root: bilinear rule on the natural ranges, second candidate wins
        // for cv, first for cc.
        let v7 = &mc[root.0];
        let (yl, yu) = (f6_lo, 1.0 - e_half);
        let t2 = yu * v5.cv + 1.0 * v6.cv - 1.0 * yu;
        assert!((v7.cv - t2).abs() < 1e-12);
        let t3 = yl * v5.cv + 1.0 * v6.cc - 1.0 * yl;
        assert!((v7.cc - t3).abs() < 1e-12);
    }

    #[test]
    fn stored_bounds_equal_to_natural_change_nothing() {
        let (dag, root) = parse_expression("(z-z^2)*(z^3-exp(z))", &["z"]).unwrap();
        let domain = IntervalBox::new(vec![Interval::new(-0.5, 1.0)]);
        let natural = dag.eval_interval(&domain).unwrap();
        let base = propagate(
            &dag,
            &PropagationContext {
                domain: &domain,
                point: &[0.25],
                stored_bounds: None,
            },
        )
        .unwrap();
        let overridden = propagate(
            &dag,
            &PropagationContext {
                domain: &domain,
                point: &[0.25],
                stored_bounds: Some(&natural),
            },
        )
        .unwrap();
        assert_eq!(base[root.0], overridden[root.0]);
    }

    #[test]
    fn cut_zeroes_subgradient_of_active_side() {
        let (dag, root) = parse_expression("sqr(z)", &["z"]).unwrap();
        let domain = IntervalBox::new(vec![Interval::new(-1.0, 1.0)]);
        // Store a lower bound above the envelope value at 0.
        let mut bounds = dag.eval_interval(&domain).unwrap();
        bounds[root.0] = Interval::new(0.25, 0.8);
        let mc = propagate(
            &dag,
            &PropagationContext {
                domain: &domain,
                point: &[0.0],
                stored_bounds: Some(&bounds),
            },
        )
        .unwrap();
        assert_eq!(mc[root.0].cv, 0.25);
        assert_eq!(mc[root.0].sub_cv, vec![0.0]);
        // Concave side: secant value at 0 is 1 -> cut to 0.8, slope zeroed.
        assert_eq!(mc[root.0].cc, 0.8);
        assert_eq!(mc[root.0].sub_cc, vec![0.0]);
    }

    // Relaxation and subgradient validity for every univariate intrinsic
    // over randomized ranges; inner operand is the bare variable, so the
    // relaxation equals the envelope.
    #[test]
    fn univariate_envelopes_are_valid_and_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases: Vec<(&str, f64, f64)> = vec![
            ("exp(z)", -3.0, 3.0),
            ("log(z)", 0.05, 6.0),
            ("sqrt(z)", 0.0, 6.0),
            ("sqr(z)", -4.0, 4.0),
            ("xlog(z)", 0.0, 4.0),
            ("z^3", -3.0, 3.0),
            ("z^5", -2.0, 2.0),
            ("z^4", -2.5, 2.5),
            ("z^6", -1.8, 1.8),
            ("z^-1", 0.05, 5.0),
            ("z^-1", -5.0, -0.05),
            ("z^-2", 0.05, 5.0),
            ("z^-2", -5.0, -0.05),
            ("z^-3", 0.1, 4.0),
            ("z^-3", -4.0, -0.1),
            ("sin(z)", -12.0, 12.0),
            ("cos(z)", -12.0, 12.0),
        ];
        for (src, dlo, dhi) in cases {
            let (dag, root) = parse_expression(src, &["z"]).unwrap();
            for _ in 0..400 {
                let a = rng.gen_range(dlo..dhi);
                let b = rng.gen_range(dlo..dhi);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if hi - lo < 1e-6 {
                    continue;
                }
                let domain = IntervalBox::new(vec![Interval::new(lo, hi)]);
                // Clamp: the last grid point can overshoot hi by one ulp.
                let grid: Vec<f64> = (0..=40)
                    .map(|i| (lo + (hi - lo) * i as f64 / 40.0).clamp(lo, hi))
                    .collect();
                let mut vals = Vec::new();
                for &z in &grid {
                    let mc = propagate(
                        &dag,
                        &PropagationContext {
                            domain: &domain,
                            point: &[z],
                            stored_bounds: None,
                        },
                    )
                    .unwrap();
                    let f = dag.eval_real(&[z]).unwrap()[root.0];
                    let v = mc[root.0].clone();
                    assert!(
                        v.cv <= f + 1e-9 && f <= v.cc + 1e-9,
                        "{src} on [{lo}, {hi}]: relaxation {} .. {} misses f({z}) = {f}",
                        v.cv,
                        v.cc
                    );
                    vals.push((z, v));
                }
                // Affine under/overestimators from the subgradients must
                // bound f across the whole range.
                for &(z, ref v) in &vals {
                    for &(y, _) in &vals {
                        let f_y = dag.eval_real(&[y]).unwrap()[root.0];
                        let under = v.cv + v.sub_cv[0] * (y - z);
                        let over = v.cc + v.sub_cc[0] * (y - z);
                        assert!(
                            under <= f_y + 1e-8,
                            "{src} on [{lo}, {hi}]: affine under at {z} exceeds f({y})"
                        );
                        assert!(
                            over >= f_y - 1e-8,
                            "{src} on [{lo}, {hi}]: affine over at {z} under f({y})"
                        );
                    }
                }
                // Midpoint convexity of the cv curve, concavity of cc.
                for w in vals.windows(3) {
                    let (z0, v0) = (&w[0].0, &w[0].1);
                    let (z2, v2) = (&w[2].0, &w[2].1);
                    let mid = (0.5 * (z0 + z2)).clamp(lo, hi);
                    let mc = propagate(
                        &dag,
                        &PropagationContext {
                            domain: &domain,
                            point: &[mid],
                            stored_bounds: None,
                        },
                    )
                    .unwrap();
                    assert!(
                        mc[root.0].cv <= 0.5 * (v0.cv + v2.cv) + 1e-9,
                        "{src} on [{lo}, {hi}]: cv not convex near {mid}"
                    );
                    assert!(
                        mc[root.0].cc >= 0.5 * (v0.cc + v2.cc) - 1e-9,
                        "{src} on [{lo}, {hi}]: cc not concave near {mid}"
                    );
                }
            }
        }
    }

    #[test]
    fn division_by_sign_definite_interval() {
        let (mc, root) = relax_at(
            "x/y",
            &["x", "y"],
            vec![Interval::new(-1.0, 2.0), Interval::new(0.5, 3.0)],
            &[1.0, 1.0],
        );
        let v = &mc[root.0];
        assert!(v.cv <= 1.0 + 1e-12 && 1.0 <= v.cc + 1e-12);
        let (dag, _root) = parse_expression("x/y", &["x", "y"]).unwrap();
        let domain = IntervalBox::new(vec![Interval::new(-1.0, 2.0), Interval::new(-0.5, 3.0)]);
        let err = propagate(
            &dag,
            &PropagationContext {
                domain: &domain,
                point: &[1.0, 1.0],
                stored_bounds: None,
            },
        );
        assert!(err.is_err());
        assert_eq!(err.unwrap_err().op, "div");
    }
}
