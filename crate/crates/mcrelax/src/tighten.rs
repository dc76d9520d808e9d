//! Range-bound tightening from subgradient-derived affine estimators.
//!
//! Each factor's relaxation at a point gives an affine underestimator and
//! overestimator of the factor over the whole box. Minimizing respectively
//! maximizing those affines (a corner evaluation) can beat the stored range
//! bounds; the improved bounds are kept and consumed by every later factor in
//! the same pass. With more than one iteration per factor, the next
//! evaluation point bisects toward the minimizing corner and the factor's
//! schedule prefix is re-propagated at that point.

use crate::expr::{Dag, EvalError, NodeId, OpKind};
use crate::interval::{Interval, IntervalBox};
use crate::mccormick::{mc_node, McValue};

/// Where the evaluation point for the pass comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointPolicy {
    Midpoint,
    /// Use the incumbent solution; any coordinate outside the box (or a
    /// missing incumbent) falls back to the box midpoint coordinate.
    Incumbent,
}

/// How the starting range bounds of each factor are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartingBounds {
    Natural,
    /// Natural bounds intersected with a second-order Taylor-form enclosure
    /// (univariate problems only; elsewhere identical to `Natural`).
    TaylorForm,
}

#[derive(Clone, Debug)]
pub struct TightenConfig {
    /// Max affine-bound iterations per factor; 0 disables the heuristic.
    pub max_iters: usize,
    pub point_policy: PointPolicy,
    /// Refine lower and upper bounds with separate points when iterating.
    pub two_point_mode: bool,
    pub starting_bounds: StartingBounds,
}

impl Default for TightenConfig {
    fn default() -> TightenConfig {
        TightenConfig {
            max_iters: 1,
            point_policy: PointPolicy::Midpoint,
            two_point_mode: false,
            starting_bounds: StartingBounds::Natural,
        }
    }
}

/// What finally determined a factor's stored interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundSource {
    Natural,
    TaylorForm,
    Heuristic,
}

/// Per-factor range bounds produced by a tightening pass, with enough
/// context to report where each interval came from.
#[derive(Clone, Debug)]
pub struct FactorBounds {
    /// Final stored interval per node id; always a subset of `natural`.
    pub intervals: Vec<Interval>,
    pub source: Vec<BoundSource>,
    pub natural: Vec<Interval>,
    /// Raw Taylor-form enclosures (not intersected), when computed.
    pub taylor: Option<Vec<Interval>>,
}

/// Extremes of the affine under/overestimators over the box, with the
/// corners attaining them.
#[derive(Clone, Debug)]
pub struct AffineBoundResult {
    pub t_cv: f64,
    pub t_cc: f64,
    pub corner_cv: Vec<f64>,
    pub corner_cc: Vec<f64>,
}

/// Minimum of the affine underestimator and maximum of the affine
/// overestimator anchored at `point`, over `domain`. Both are attained at a
/// corner picked per coordinate by the subgradient sign.
pub fn affine_bound(mc: &McValue, domain: &IntervalBox, point: &[f64]) -> AffineBoundResult {
    let n = domain.ndim();
    let mut t_cv = mc.cv;
    let mut t_cc = mc.cc;
    let mut corner_cv = Vec::with_capacity(n);
    let mut corner_cc = Vec::with_capacity(n);
    for i in 0..n {
        let d = domain.dims[i];
        let zc = if mc.sub_cv[i] >= 0.0 { d.lo } else { d.hi };
        t_cv += mc.sub_cv[i] * (zc - point[i]);
        corner_cv.push(zc);
        let zc = if mc.sub_cc[i] >= 0.0 { d.hi } else { d.lo };
        t_cc += mc.sub_cc[i] * (zc - point[i]);
        corner_cc.push(zc);
    }
    AffineBoundResult {
        t_cv,
        t_cc,
        corner_cv,
        corner_cc,
    }
}

/// Result of a tightening pass over a whole DAG.
#[derive(Clone, Debug)]
pub struct TightenOutcome {
    pub bounds: FactorBounds,
    /// Relaxations at `point`, each cut against its factor's final interval.
    pub relax: Vec<McValue>,
    /// The evaluation point actually used.
    pub point: Vec<f64>,
    /// Number of per-node relaxation evaluations performed. With
    /// `max_iters <= 1` this equals the node count: a single pass.
    pub node_evals: usize,
}

/// Runs the tightening pass over every factor in schedule order. Bounds
/// improved at factor `j` are used by all later factors. `incumbent` feeds
/// the `Incumbent` point policy.
pub fn tighten_dag(
    dag: &Dag,
    domain: &IntervalBox,
    cfg: &TightenConfig,
    incumbent: Option<&[f64]>,
) -> Result<TightenOutcome, EvalError> {
    let point = choose_point(domain, cfg.point_policy, incumbent);
    let natural = dag.eval_interval(domain)?;
    let mut source = vec![BoundSource::Natural; dag.len()];

    let taylor = if cfg.starting_bounds == StartingBounds::TaylorForm && dag.nvars() == 1 {
        let mut t = Vec::with_capacity(dag.len());
        for id in 0..dag.len() {
            let node = dag.node(NodeId(id));
            if matches!(node.op, OpKind::Var(_) | OpKind::Const(_)) {
                t.push(natural[id]);
            } else {
                t.push(dag.taylor2_extension(NodeId(id), domain.dims[0])?);
            }
        }
        Some(t)
    } else {
        None
    };

    let mut bounds = natural.clone();
    if let Some(t) = &taylor {
        for id in 0..dag.len() {
            // Both enclose the true range, so they intersect; keep the
            // tighter combination.
            if let Some(isect) = bounds[id].intersect(&t[id]) {
                if isect != bounds[id] {
                    source[id] = BoundSource::TaylorForm;
                }
                bounds[id] = isect;
            }
        }
    }

    let mut mc: Vec<Option<McValue>> = vec![None; dag.len()];
    let mut scratch: Vec<Option<McValue>> = vec![None; dag.len()];
    let mut node_evals = 0usize;

    for (pos, &j) in dag.schedule.iter().enumerate() {
        let v = mc_node(dag, j, &mc, &bounds, &point)?;
        node_evals += 1;
        if cfg.max_iters > 0 && bounds[j.0].lo != bounds[j.0].hi {
            tighten_factor(
                dag,
                j,
                pos,
                domain,
                cfg,
                &point,
                &v,
                &mut bounds,
                &mut source,
                &mut scratch,
                &mut node_evals,
            )?;
        }
        mc[j.0] = Some(v.cut(bounds[j.0]));
    }

    Ok(TightenOutcome {
        bounds: FactorBounds {
            intervals: bounds,
            source,
            natural,
            taylor,
        },
        relax: mc.into_iter().map(Option::unwrap).collect(),
        point,
        node_evals,
    })
}

fn choose_point(domain: &IntervalBox, policy: PointPolicy, incumbent: Option<&[f64]>) -> Vec<f64> {
    match (policy, incumbent) {
        (PointPolicy::Incumbent, Some(p)) if p.len() == domain.ndim() => domain
            .dims
            .iter()
            .zip(p)
            .map(|(d, &x)| if d.contains(x) { x } else { d.mid() })
            .collect(),
        _ => domain.midpoint(),
    }
}

/// Up to `cfg.max_iters` rounds of affine bounding on one factor. Iteration
/// 1 reuses `v` from the main pass; later iterations bisect the point toward
/// the active corner and re-propagate the schedule prefix `0..=pos` with the
/// bounds improved so far. The stored interval shrinks monotonically.
#[allow(clippy::too_many_arguments)]
fn tighten_factor(
    dag: &Dag,
    j: NodeId,
    pos: usize,
    domain: &IntervalBox,
    cfg: &TightenConfig,
    point: &[f64],
    v: &McValue,
    bounds: &mut [Interval],
    source: &mut [BoundSource],
    scratch: &mut Vec<Option<McValue>>,
    node_evals: &mut usize,
) -> Result<(), EvalError> {
    let mut p_cv = point.to_vec();
    let mut p_cc = point.to_vec();
    let mut v_cv = v.clone();
    let mut v_cc = v.clone();

    for k in 0..cfg.max_iters {
        let ab = affine_bound(&v_cv, domain, &p_cv);
        let (t_cc, corner_cc) = if cfg.two_point_mode && k > 0 {
            let ab2 = affine_bound(&v_cc, domain, &p_cc);
            (ab2.t_cc, ab2.corner_cc)
        } else {
            (ab.t_cc, ab.corner_cc.clone())
        };

        let cur = bounds[j.0];
        let lo = if ab.t_cv > cur.lo { ab.t_cv } else { cur.lo };
        let hi = if t_cc < cur.hi { t_cc } else { cur.hi };
        if lo > cur.lo || hi < cur.hi {
            bounds[j.0] = Interval::new(lo, hi);
            source[j.0] = BoundSource::Heuristic;
        }

        if k + 1 < cfg.max_iters {
            bisect_toward(&mut p_cv, &ab.corner_cv);
            v_cv = propagate_prefix(dag, pos, bounds, &p_cv, scratch, node_evals)?;
            if cfg.two_point_mode {
                bisect_toward(&mut p_cc, &corner_cc);
                v_cc = propagate_prefix(dag, pos, bounds, &p_cc, scratch, node_evals)?;
            } else {
                p_cc.copy_from_slice(&p_cv);
                v_cc = v_cv.clone();
            }
        }
    }
    Ok(())
}

fn bisect_toward(p: &mut [f64], corner: &[f64]) {
    for (x, &c) in p.iter_mut().zip(corner) {
        *x = 0.5 * (*x + c);
    }
}

/// Relaxes schedule positions `0..=pos` at `p` into `scratch`, returning the
/// value at position `pos`. Entries beyond the prefix may hold stale values
/// from an earlier call; they are never read, because children always sit
/// earlier in the schedule.
fn propagate_prefix(
    dag: &Dag,
    pos: usize,
    bounds: &[Interval],
    p: &[f64],
    scratch: &mut Vec<Option<McValue>>,
    node_evals: &mut usize,
) -> Result<McValue, EvalError> {
    for q in 0..=pos {
        let id = dag.schedule[q];
        let v = mc_node(dag, id, scratch, bounds, p)?;
        *node_evals += 1;
        scratch[id.0] = Some(v);
    }
    Ok(scratch[dag.schedule[pos].0].clone().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::mccormick::{propagate, PropagationContext};

    const EX_SRC: &str = "(z-z^2)*(z^3-exp(z))";

    fn ex_domain() -> IntervalBox {
        IntervalBox::new(vec![Interval::new(-0.5, 1.0)])
    }

    fn node_with_lo(bounds: &FactorBounds, lo: f64) -> usize {
        bounds
            .natural
            .iter()
            .position(|iv| (iv.lo - lo).abs() < 1e-9)
            .expect("no factor with that natural lower bound")
    }

    #[test]
    fn difference_factor_bounds_reach_closed_forms() {
        let (dag, _) = parse_expression(EX_SRC, &["z"]).unwrap();
        let out = tighten_dag(&dag, &ex_domain(), &TightenConfig::default(), None).unwrap();
        assert_eq!(out.point, vec![0.25]);

        // z - z^2: natural [-1.5, 1] tightens to exactly [-0.75, 0.5625].
        let f5 = node_with_lo(&out.bounds, -1.5);
        let i5 = out.bounds.intervals[f5];
        assert!((i5.lo + 0.75).abs() < 1e-9, "lo = {}", i5.lo);
        assert!((i5.hi - 0.5625).abs() < 1e-9, "hi = {}", i5.hi);
        assert_eq!(out.bounds.source[f5], BoundSource::Heuristic);

        // z^3 - exp(z): closed forms 0.15625 - e and -0.125 - 0.25 e^0.25.
        let e = 1.0f64.exp();
        let f6 = node_with_lo(&out.bounds, -0.125 - e);
        let i6 = out.bounds.intervals[f6];
        assert!((i6.lo - (0.15625 - e)).abs() < 1e-9, "lo = {}", i6.lo);
        assert!(
            (i6.hi - (-0.125 - 0.25 * 0.25f64.exp())).abs() < 1e-9,
            "hi = {}",
            i6.hi
        );
        // Matches the two-to-three decimal figures -2.562 and -0.446.
        assert!((i6.lo + 2.562).abs() < 1e-3);
        assert!((i6.hi + 0.446).abs() < 1e-3);
    }

    #[test]
    fn taylor_form_bounds_reach_closed_forms() {
        let (dag, _) =
            parse_expression("(log(z+1)-z^2)*(log(z+1)-exp(z-0.5))", &["z"]).unwrap();
        let cfg = TightenConfig {
            starting_bounds: StartingBounds::TaylorForm,
            ..TightenConfig::default()
        };
        let out = tighten_dag(&dag, &ex_domain(), &cfg, None).unwrap();
        let taylor = out.bounds.taylor.as_ref().unwrap();

        // log(z+1) - z^2, natural lower bound ln(0.5) - 1.
        let ln2 = 2.0f64.ln();
        let f9 = node_with_lo(&out.bounds, -ln2 - 1.0);
        // Raw Taylor enclosure: center value 0.25 ln 5 - 1/16, slope 0.3,
        // curvature range [-6, -2.25] halved over (Z-c)^2 = [0, 0.5625].
        let h9 = 1.25f64.ln() - 0.0625;
        assert!((taylor[f9].lo - (h9 - 0.225 - 1.6875)).abs() < 1e-9);
        assert!((taylor[f9].hi - (h9 + 0.225)).abs() < 1e-9);
        assert!((taylor[f9].lo + 1.751).abs() < 1e-3);
        assert!((taylor[f9].hi - 0.385).abs() < 1e-3);
        // After tightening: [-ln 2 - 0.25, h9 + 0.225].
        let i9 = out.bounds.intervals[f9];
        assert!((i9.lo - (-ln2 - 0.25)).abs() < 1e-9, "lo = {}", i9.lo);
        assert!((i9.hi - (h9 + 0.225)).abs() < 1e-9, "hi = {}", i9.hi);
        assert!((i9.lo + 0.943).abs() < 1e-3);

        // log(z+1) - exp(z-0.5).
        let f10 = node_with_lo(&out.bounds, -ln2 - 0.5f64.exp());
        let h10 = 1.25f64.ln() - 0.25f64.exp().recip();
        let q_lo = 0.5 * (-4.0 - 0.5f64.exp()) * 0.5625;
        let lin = 0.75 * (0.8 - (-0.25f64).exp());
        assert!((taylor[f10].lo - (h10 - lin + q_lo)).abs() < 1e-9);
        assert!((taylor[f10].hi - (h10 + lin)).abs() < 1e-9);
        assert!((taylor[f10].lo + 2.16).abs() < 1e-2);
        assert!((taylor[f10].hi + 0.539).abs() < 1e-3);
        let i10 = out.bounds.intervals[f10];
        let e_m1 = (-1.0f64).exp();
        assert!((i10.lo - (-ln2 - e_m1)).abs() < 1e-9, "lo = {}", i10.lo);
        assert!((i10.hi - (h10 + lin)).abs() < 1e-9, "hi = {}", i10.hi);
        assert!((i10.lo + 1.061).abs() < 1e-3);
        assert!((i10.hi + 0.539).abs() < 1e-3);
    }

    #[test]
    fn endpoint_start_needs_second_iteration() {
        // exp(z) - z^3 on [-1, 1] evaluated at the right endpoint: one
        // iteration cannot move either bound, a second (bisected to 0) can.
        let (dag, root) = parse_expression("exp(z) - z^3", &["z"]).unwrap();
        let domain = IntervalBox::new(vec![Interval::new(-1.0, 1.0)]);
        let cfg1 = TightenConfig {
            point_policy: PointPolicy::Incumbent,
            ..TightenConfig::default()
        };
        let out1 = tighten_dag(&dag, &domain, &cfg1, Some(&[1.0])).unwrap();
        assert_eq!(out1.point, vec![1.0]);
        assert_eq!(out1.bounds.intervals[root.0], out1.bounds.natural[root.0]);

        let cfg2 = TightenConfig {
            max_iters: 2,
            ..cfg1
        };
        let out2 = tighten_dag(&dag, &domain, &cfg2, Some(&[1.0])).unwrap();
        let nat = out2.bounds.natural[root.0];
        let alg = out2.bounds.intervals[root.0];
        assert!(
            alg.lo > nat.lo + 1e-9 || alg.hi < nat.hi - 1e-9,
            "no strict improvement: {alg:?} vs {nat:?}"
        );
        // The bisected point lands at 0, where the affine minimum is 0.5.
        assert!((alg.lo - 0.5).abs() < 1e-9, "lo = {}", alg.lo);
    }

    #[test]
    fn disabled_heuristic_returns_natural_bounds() {
        let (dag, _) = parse_expression(EX_SRC, &["z"]).unwrap();
        let cfg = TightenConfig {
            max_iters: 0,
            ..TightenConfig::default()
        };
        let out = tighten_dag(&dag, &ex_domain(), &cfg, None).unwrap();
        assert_eq!(out.bounds.intervals, out.bounds.natural);
        assert!(out.bounds.source.iter().all(|s| *s == BoundSource::Natural));
        assert_eq!(out.node_evals, dag.len());
    }

    #[test]
    fn single_iteration_is_a_single_pass() {
        let (dag, _) = parse_expression(EX_SRC, &["z"]).unwrap();
        let out = tighten_dag(&dag, &ex_domain(), &TightenConfig::default(), None).unwrap();
        // No re-propagation may happen with one iteration per factor.
        assert_eq!(out.node_evals, dag.len());
    }

    #[test]
    fn constant_factors_are_skipped() {
        // A degenerate domain makes every factor constant-range, the var
        // included (declared vars are interned even when unreferenced).
        let (dag, _) = parse_expression("3.5*2 - 1", &["z"]).unwrap();
        let cfg = TightenConfig {
            max_iters: 5,
            ..TightenConfig::default()
        };
        let domain = IntervalBox::new(vec![Interval::point(0.25)]);
        let out = tighten_dag(&dag, &domain, &cfg, None).unwrap();
        assert_eq!(out.bounds.intervals, out.bounds.natural);
        // All factors are constant-range, so even N=5 does one pass.
        assert_eq!(out.node_evals, dag.len());
    }

    #[test]
    fn bounds_never_loosen_and_shrink_with_iterations() {
        let (dag, _) = parse_expression(EX_SRC, &["z"]).unwrap();
        let mut prev: Option<Vec<Interval>> = None;
        for n in 1..=5 {
            let cfg = TightenConfig {
                max_iters: n,
                ..TightenConfig::default()
            };
            let out = tighten_dag(&dag, &ex_domain(), &cfg, None).unwrap();
            for id in 0..dag.len() {
                assert!(
                    out.bounds.intervals[id].is_subset_of(&out.bounds.natural[id]),
                    "factor {id} loosened at N={n}"
                );
                if let Some(prev) = &prev {
                    assert!(
                        out.bounds.intervals[id].is_subset_of(&prev[id]),
                        "factor {id} grew from N={} to N={n}",
                        n - 1
                    );
                }
            }
            prev = Some(out.bounds.intervals);
        }
    }

    #[test]
    fn tightened_root_relaxation_dominates_natural_pointwise() {
        let (dag, root) = parse_expression(EX_SRC, &["z"]).unwrap();
        let domain = ex_domain();
        let out = tighten_dag(&dag, &domain, &TightenConfig::default(), None).unwrap();
        for i in 0..=200 {
            let z = -0.5 + 1.5 * i as f64 / 200.0;
            let p = [z.min(1.0)];
            let natural = propagate(
                &dag,
                &PropagationContext {
                    domain: &domain,
                    point: &p,
                    stored_bounds: None,
                },
            )
            .unwrap();
            let tightened = propagate(
                &dag,
                &PropagationContext {
                    domain: &domain,
                    point: &p,
                    stored_bounds: Some(&out.bounds.intervals),
                },
            )
            .unwrap();
            assert!(
                tightened[root.0].cv >= natural[root.0].cv - 1e-12,
                "cv degraded at {z}"
            );
            assert!(
                tightened[root.0].cc <= natural[root.0].cc + 1e-12,
                "cc degraded at {z}"
            );
        }
    }

    #[test]
    fn two_point_mode_stays_sound() {
        let (dag, root) = parse_expression(EX_SRC, &["z"]).unwrap();
        let domain = ex_domain();
        let cfg = TightenConfig {
            max_iters: 3,
            two_point_mode: true,
            ..TightenConfig::default()
        };
        let out = tighten_dag(&dag, &domain, &cfg, None).unwrap();
        for i in 0..=500 {
            let z = (-0.5 + 1.5 * i as f64 / 500.0).min(1.0);
            let vals = dag.eval_real(&[z]).unwrap();
            for id in 0..dag.len() {
                assert!(
                    out.bounds.intervals[id].inflated(1e-9).contains(vals[id]),
                    "factor {id} excludes its value at z = {z}"
                );
            }
        }
        assert!(out.bounds.intervals[root.0].is_subset_of(&out.bounds.natural[root.0]));
    }

    #[test]
    fn incumbent_outside_box_falls_back_to_midpoint() {
        let (dag, _) = parse_expression(EX_SRC, &["z"]).unwrap();
        let cfg = TightenConfig {
            point_policy: PointPolicy::Incumbent,
            ..TightenConfig::default()
        };
        let out = tighten_dag(&dag, &ex_domain(), &cfg, Some(&[7.0])).unwrap();
        assert_eq!(out.point, vec![0.25]);
        let out = tighten_dag(&dag, &ex_domain(), &cfg, None).unwrap();
        assert_eq!(out.point, vec![0.25]);
    }
}
