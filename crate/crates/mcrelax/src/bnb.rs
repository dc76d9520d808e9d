//! Best-first spatial branch-and-bound on subgradient linearization bounds.
//!
//! Each node is bounded below by relaxing every expression at a single
//! point, collecting the affine under- and overestimators into a small LP,
//! and taking the better of the LP value and the interval bound. Upper
//! bounds come from a derivative-free multistart local search. Optional
//! range reduction shrinks node boxes by bound probing (with filtering)
//! and by reduced-cost arguments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{Dag, NodeId};
use crate::interval::{Interval, IntervalBox};
use crate::lp::{solve_box_lp, solve_simplex, dual_bound_tighten, LinearProgram, LpSolution, LpStatus};
use crate::tighten::{tighten_dag, TightenConfig, TightenOutcome};

/// A minimization problem. All expression roots live in one shared DAG so
/// common factors are relaxed once.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub dag: Dag,
    pub objective: NodeId,
    /// Inequality constraints, each `g(z) <= 0`.
    pub ineqs: Vec<NodeId>,
    /// Equality constraints, each `h(z) = 0`, enforced to the feasibility
    /// tolerance and relaxed as a pair of affine inequalities.
    pub eqs: Vec<NodeId>,
    pub domain: IntervalBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeReduction {
    None,
    /// Bound probing on the linearized relaxation plus reduced-cost
    /// tightening from the node LP.
    Full,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub feas_tol: f64,
    pub time_limit: Duration,
    /// Bound-tightening heuristic settings; `max_iters = 0` disables it.
    /// Its point policy also chooses the linearization point.
    pub tighten: TightenConfig,
    pub range_reduction: RangeReduction,
    /// A probed bound re-enters the next probing round only if the last
    /// round moved it by at least this fraction of the dimension width.
    pub obbt_filtering_factor: f64,
    /// Bound probing runs at the root and at nodes no deeper than this.
    pub obbt_max_depth: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            feas_tol: 1e-6,
            time_limit: Duration::from_secs(3600),
            tighten: TightenConfig::default(),
            range_reduction: RangeReduction::None,
            obbt_filtering_factor: 0.5,
            obbt_max_depth: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BnbNode {
    pub id: u64,
    pub depth: usize,
    pub domain: IntervalBox,
    /// Lower bound inherited from the parent; valid for this box.
    pub lb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    TimedOut,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::TimedOut => "timeout",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub problem: String,
    pub status: SolveStatus,
    pub best_value: Option<f64>,
    pub best_point: Option<Vec<f64>>,
    /// Proven lower bound on the global minimum.
    pub final_lb: f64,
    /// Nodes processed (both bounding steps each).
    pub iterations: usize,
    pub wall_time: Duration,
    /// Percent progress of the lower bound toward the incumbent, 100 at
    /// convergence.
    pub convergence_ratio: f64,
    pub nodes_created: u64,
    pub fathomed_by_bound: u64,
    pub fathomed_infeasible: u64,
}

/// Min-heap adapter: the best node is the lowest lower bound, ties going
/// to the oldest id so runs are reproducible.
struct OpenNode(BnbNode);

impl PartialEq for OpenNode {
    fn eq(&self, other: &OpenNode) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenNode {}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &OpenNode) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenNode {
    fn cmp(&self, other: &OpenNode) -> Ordering {
        other
            .0
            .lb
            .total_cmp(&self.0.lb)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

enum Processed {
    Infeasible,
    Bound(f64),
    Branch(BnbNode, BnbNode),
}

pub fn solve(problem: &Problem, cfg: &SolverConfig) -> SolveReport {
    solve_observed(problem, cfg, &mut |_| {})
}

/// `solve` with a hook that sees the lower bound of every popped node, in
/// pop order; exposed to tests checking bound monotonicity.
fn solve_observed(
    problem: &Problem,
    cfg: &SolverConfig,
    on_pop: &mut dyn FnMut(f64),
) -> SolveReport {
    assert!(cfg.eps_abs > 0.0 && cfg.eps_rel > 0.0 && cfg.feas_tol > 0.0);
    assert!(
        problem
            .domain
            .dims
            .iter()
            .all(|d| d.lo.is_finite() && d.hi.is_finite()),
        "branch-and-bound needs a finite domain"
    );
    let start = Instant::now();
    let mut s = Solver {
        p: problem,
        cfg,
        incumbent: None,
        next_id: 0,
        nodes_created: 0,
        fathomed_bound: 0,
        fathomed_infeasible: 0,
    };
    let mut queue = BinaryHeap::new();
    let root = s.make_node(problem.domain.clone(), 0, f64::NEG_INFINITY);
    queue.push(OpenNode(root));

    let mut iterations = 0usize;
    // Lowest bound among regions already fathomed; open regions are
    // covered by the lb of the node at the heap top.
    let mut fathom_floor = f64::INFINITY;
    let mut open_lb = f64::NEG_INFINITY;
    let mut status = None;

    while let Some(OpenNode(node)) = queue.pop() {
        on_pop(node.lb);
        open_lb = node.lb;
        if start.elapsed() >= cfg.time_limit {
            status = Some(SolveStatus::TimedOut);
            break;
        }
        let ub = s.ub();
        if node.lb >= ub - s.fathom_tol(ub) {
            // Best-first: every open node is at least as bad.
            fathom_floor = fathom_floor.min(node.lb);
            s.fathomed_bound += 1;
            open_lb = f64::INFINITY;
            status = Some(SolveStatus::Converged);
            break;
        }
        iterations += 1;
        match s.process(&node) {
            Processed::Infeasible => {
                s.fathomed_infeasible += 1;
                open_lb = f64::INFINITY;
            }
            Processed::Bound(lb) => {
                fathom_floor = fathom_floor.min(lb);
                s.fathomed_bound += 1;
                open_lb = f64::INFINITY;
            }
            Processed::Branch(a, b) => {
                open_lb = f64::INFINITY;
                queue.push(OpenNode(a));
                queue.push(OpenNode(b));
            }
        }
    }

    if status.is_none() {
        // Queue exhausted: everything was fathomed.
        status = Some(if s.incumbent.is_some() {
            SolveStatus::Converged
        } else {
            SolveStatus::Infeasible
        });
    }
    let status = status.unwrap();
    let remaining = queue
        .peek()
        .map(|n| n.0.lb.min(open_lb))
        .unwrap_or(open_lb);
    let final_lb = fathom_floor.min(remaining);
    let (best_value, best_point) = match &s.incumbent {
        Some((v, z)) => (Some(*v), Some(z.clone())),
        None => (None, None),
    };

    let convergence_ratio = match best_value {
        Some(ub) if final_lb.is_finite() => {
            let scale = ub.abs().max(final_lb.abs()).max(1.0);
            (100.0 * (1.0 - (ub - final_lb) / scale)).clamp(0.0, 100.0)
        }
        Some(_) => 0.0,
        None => 0.0,
    };

    SolveReport {
        problem: problem.name.clone(),
        status,
        best_value,
        best_point,
        final_lb,
        iterations,
        wall_time: start.elapsed(),
        convergence_ratio,
        nodes_created: s.nodes_created,
        fathomed_by_bound: s.fathomed_bound,
        fathomed_infeasible: s.fathomed_infeasible,
    }
}

struct Solver<'a> {
    p: &'a Problem,
    cfg: &'a SolverConfig,
    incumbent: Option<(f64, Vec<f64>)>,
    next_id: u64,
    nodes_created: u64,
    fathomed_bound: u64,
    fathomed_infeasible: u64,
}

impl Solver<'_> {
    fn make_node(&mut self, domain: IntervalBox, depth: usize, lb: f64) -> BnbNode {
        let id = self.next_id;
        self.next_id += 1;
        self.nodes_created += 1;
        BnbNode {
            id,
            depth,
            domain,
            lb,
        }
    }

    fn ub(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |(v, _)| *v)
    }

    fn fathom_tol(&self, ub: f64) -> f64 {
        if ub.is_finite() {
            self.cfg.eps_abs.max(self.cfg.eps_rel * ub.abs())
        } else {
            0.0
        }
    }

    /// Deterministic per-box randomness: the same box gets the same search
    /// seeds in every run and every configuration.
    fn node_rng(&self, domain: &IntervalBox) -> ChaCha8Rng {
        let mut h = self.cfg.seed ^ 0xcbf2_9ce4_8422_2325;
        for d in &domain.dims {
            for bits in [d.lo.to_bits(), d.hi.to_bits()] {
                h ^= bits;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn process(&mut self, node: &BnbNode) -> Processed {
        self.search_upper_bound(&node.domain);

        let outcome = match tighten_dag(
            &self.p.dag,
            &node.domain,
            &self.cfg.tighten,
            self.incumbent.as_ref().map(|(_, z)| z.as_slice()),
        ) {
            Ok(o) => o,
            // Interval arithmetic rejected the box (a factor left its
            // domain); without a bound the region cannot be fathomed, so
            // split it and let the children sort it out.
            Err(_) => {
                if node.domain.max_width() <= 1e-12 {
                    return Processed::Bound(node.lb);
                }
                let (a, b) = node.domain.bisect(node.domain.widest_dim());
                let a = self.make_node(a, node.depth + 1, node.lb);
                let b = self.make_node(b, node.depth + 1, node.lb);
                return Processed::Branch(a, b);
            }
        };

        if self.interval_infeasible(&outcome) {
            return Processed::Infeasible;
        }

        // Range reduction, part 1: probe variable bounds against the
        // linearized constraints and the incumbent cut.
        let mut domain = node.domain.clone();
        let mut outcome = outcome;
        if self.cfg.range_reduction == RangeReduction::Full
            && node.depth <= self.cfg.obbt_max_depth
        {
            let rows = self.linear_rows(&outcome, true);
            if !rows.is_empty() {
                match self.probe_bounds(&domain, &rows) {
                    None => return Processed::Infeasible,
                    Some(shrunk) => {
                        if shrunk.dims != domain.dims {
                            domain = shrunk;
                            match tighten_dag(
                                &self.p.dag,
                                &domain,
                                &self.cfg.tighten,
                                self.incumbent.as_ref().map(|(_, z)| z.as_slice()),
                            ) {
                                Ok(o) => outcome = o,
                                Err(_) => {}
                            }
                            if self.interval_infeasible(&outcome) {
                                return Processed::Infeasible;
                            }
                        }
                    }
                }
            }
        }

        // Lower bound: LP over the affine relaxations, backed by the
        // interval bound of the objective.
        let interval_lb = outcome.bounds.intervals[self.p.objective.0].lo;
        let mut lb = node.lb.max(interval_lb);
        let rows = self.linear_rows(&outcome, false);
        let (oc, oc0) = self.objective_affine(&outcome);
        let sol: Option<LpSolution> = if rows.is_empty() {
            Some(solve_box_lp(&oc, oc0, &domain))
        } else {
            let mut lp = LinearProgram::new(oc, oc0, domain.clone());
            for (coeffs, rhs) in rows {
                lp.push_row(coeffs, rhs);
            }
            solve_simplex(&lp).ok()
        };
        if let Some(sol) = &sol {
            match sol.status {
                LpStatus::Infeasible => return Processed::Infeasible,
                LpStatus::Optimal => {
                    lb = lb.max(sol.objective);
                    let z = sol.primal.clone();
                    self.offer_incumbent(&z);
                }
                LpStatus::Unbounded => {}
            }
        }

        let ub = self.ub();
        if lb >= ub - self.fathom_tol(ub) {
            return Processed::Bound(lb);
        }

        // Range reduction, part 2: reduced-cost tightening for the
        // children.
        if self.cfg.range_reduction == RangeReduction::Full && ub.is_finite() {
            if let Some(sol) = &sol {
                if sol.status == LpStatus::Optimal {
                    domain = dual_bound_tighten(sol, &domain, ub);
                }
            }
        }

        if domain.max_width() <= 1e-10 {
            // Nothing left to split; the bound stands for this speck.
            return Processed::Bound(lb);
        }
        let (a, b) = domain.bisect(domain.widest_dim());
        let a = self.make_node(a, node.depth + 1, lb);
        let b = self.make_node(b, node.depth + 1, lb);
        Processed::Branch(a, b)
    }

    fn interval_infeasible(&self, outcome: &TightenOutcome) -> bool {
        let tol = self.cfg.feas_tol;
        for &g in &self.p.ineqs {
            if outcome.bounds.intervals[g.0].lo > tol {
                return true;
            }
        }
        for &h in &self.p.eqs {
            let r = outcome.bounds.intervals[h.0];
            if r.lo > tol || r.hi < -tol {
                return true;
            }
        }
        false
    }

    fn objective_affine(&self, outcome: &TightenOutcome) -> (Vec<f64>, f64) {
        let v = &outcome.relax[self.p.objective.0];
        let c0 = v.cv
            - v.sub_cv
                .iter()
                .zip(&outcome.point)
                .map(|(s, z)| s * z)
                .sum::<f64>();
        (v.sub_cv.clone(), c0)
    }

    /// Affine feasibility rows from the constraint relaxations. With
    /// `with_ub_cut` the objective underestimator is capped by the
    /// incumbent, which only bound probing may use.
    fn linear_rows(&self, outcome: &TightenOutcome, with_ub_cut: bool) -> Vec<(Vec<f64>, f64)> {
        let zbar = &outcome.point;
        let tol = self.cfg.feas_tol;
        let mut rows = Vec::new();
        let under = |id: NodeId, rhs_at_zero: f64| {
            let v = &outcome.relax[id.0];
            let shift: f64 = v.sub_cv.iter().zip(zbar).map(|(s, z)| s * z).sum();
            (v.sub_cv.clone(), rhs_at_zero - v.cv + shift)
        };
        for &g in &self.p.ineqs {
            rows.push(under(g, tol));
        }
        for &h in &self.p.eqs {
            rows.push(under(h, tol));
            // h >= -tol via the overestimator, negated into <= form.
            let v = &outcome.relax[h.0];
            let shift: f64 = v.sub_cc.iter().zip(zbar).map(|(s, z)| s * z).sum();
            let coeffs: Vec<f64> = v.sub_cc.iter().map(|s| -s).collect();
            rows.push((coeffs, tol + v.cc - shift));
        }
        if with_ub_cut {
            let ub = self.ub();
            if ub.is_finite() {
                let (c, c0) = self.objective_affine(outcome);
                rows.push((c, ub - c0));
            }
        }
        rows
    }

    /// One round of bound probing solves two LPs per candidate variable
    /// (min and max of that coordinate over the relaxation). Rounds repeat
    /// only for variables whose bound moved by at least the filtering
    /// fraction of their width. `None` means the relaxation is empty.
    fn probe_bounds(
        &self,
        domain: &IntervalBox,
        rows: &[(Vec<f64>, f64)],
    ) -> Option<IntervalBox> {
        let n = domain.ndim();
        let mut dims = domain.dims.clone();
        let mut candidate = vec![true; n];
        for _round in 0..4 {
            if !candidate.iter().any(|&c| c) {
                break;
            }
            let width0: Vec<f64> = dims.iter().map(Interval::width).collect();
            let mut moved = vec![0.0; n];
            for i in 0..n {
                if !candidate[i] || dims[i].width() == 0.0 {
                    candidate[i] = false;
                    continue;
                }
                for maximize in [false, true] {
                    let mut c = vec![0.0; n];
                    c[i] = if maximize { -1.0 } else { 1.0 };
                    let mut lp = LinearProgram::new(c, 0.0, IntervalBox::new(dims.clone()));
                    for (coeffs, rhs) in rows {
                        lp.push_row(coeffs.clone(), *rhs);
                    }
                    let Ok(sol) = solve_simplex(&lp) else { continue };
                    match sol.status {
                        LpStatus::Infeasible => return None,
                        LpStatus::Optimal => {
                            // Small margin guards against LP roundoff
                            // cutting a boundary optimum.
                            let d = dims[i];
                            if maximize {
                                let v = (-sol.objective + 1e-9).min(d.hi).max(d.lo);
                                moved[i] += d.hi - v;
                                dims[i] = Interval::new(d.lo, v);
                            } else {
                                let v = (sol.objective - 1e-9).max(d.lo).min(d.hi);
                                moved[i] += v - d.lo;
                                dims[i] = Interval::new(v, dims[i].hi);
                            }
                        }
                        LpStatus::Unbounded => {}
                    }
                }
            }
            for i in 0..n {
                candidate[i] = moved[i] >= self.cfg.obbt_filtering_factor * width0[i]
                    && width0[i] > 0.0;
            }
        }
        Some(IntervalBox::new(dims))
    }

    /// Multistart local search over a node box: projected gradient with a
    /// penalty schedule, then a derivative-free polish, from the midpoint
    /// and nine seeded samples. Feasible improvements become the incumbent.
    fn search_upper_bound(&mut self, domain: &IntervalBox) {
        let mut rng = self.node_rng(domain);
        let mut starts = vec![domain.midpoint()];
        for _ in 0..9 {
            starts.push(domain.sample(&mut rng));
        }
        let constrained = !(self.p.ineqs.is_empty() && self.p.eqs.is_empty());
        let stages: &[f64] = if constrained {
            &[1e3, 1e5, 1e7]
        } else {
            &[1.0]
        };
        for start in starts {
            let mut z = start;
            for &rho in stages {
                let merit = |y: &[f64]| self.merit(y, rho);
                z = projected_gradient(domain, z, &merit, 40);
            }
            let rho = *stages.last().unwrap();
            let merit = |y: &[f64]| self.merit(y, rho);
            z = nelder_mead(domain, z, &merit, 80 * domain.ndim().max(2));
            self.offer_incumbent(&z);
        }
    }

    fn merit(&self, z: &[f64], rho: f64) -> f64 {
        let Ok(vals) = self.p.dag.eval_real(z) else {
            return f64::INFINITY;
        };
        let mut m = vals[self.p.objective.0];
        for &g in &self.p.ineqs {
            let v = vals[g.0].max(0.0);
            m += rho * v * v;
        }
        for &h in &self.p.eqs {
            m += rho * vals[h.0] * vals[h.0];
        }
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    /// Accepts `z` as the incumbent if it is feasible within tolerance and
    /// improves the current value. Always evaluated on the full domain, so
    /// points found in any node are globally valid.
    fn offer_incumbent(&mut self, z: &[f64]) -> bool {
        if z.len() != self.p.domain.ndim() {
            return false;
        }
        let z = self.p.domain.clamp(z);
        let Ok(vals) = self.p.dag.eval_real(&z) else {
            return false;
        };
        let tol = self.cfg.feas_tol;
        for &g in &self.p.ineqs {
            if vals[g.0] > tol {
                return false;
            }
        }
        for &h in &self.p.eqs {
            if vals[h.0].abs() > tol {
                return false;
            }
        }
        let v = vals[self.p.objective.0];
        if !v.is_finite() {
            return false;
        }
        if self.incumbent.as_ref().is_none_or(|(best, _)| v < *best) {
            self.incumbent = Some((v, z));
            true
        } else {
            false
        }
    }
}

/// Projected gradient descent with box-aware central differences and a
/// backtracking step. `f` must tolerate any point in the box.
fn projected_gradient(
    domain: &IntervalBox,
    z0: Vec<f64>,
    f: &dyn Fn(&[f64]) -> f64,
    iters: usize,
) -> Vec<f64> {
    let n = domain.ndim();
    let mut z = domain.clamp(&z0);
    let mut fz = f(&z);
    let mut step = 0.25 * domain.max_width().max(1e-9);
    for _ in 0..iters {
        let mut grad = vec![0.0; n];
        let mut gnorm = 0.0;
        for i in 0..n {
            let d = domain.dims[i];
            let h = 1e-6 * (1.0 + z[i].abs());
            let hp = h.min(d.hi - z[i]);
            let hm = h.min(z[i] - d.lo);
            if hp + hm <= 0.0 {
                continue;
            }
            let mut zp = z.clone();
            zp[i] = z[i] + hp;
            let mut zm = z.clone();
            zm[i] = z[i] - hm;
            let g = (f(&zp) - f(&zm)) / (hp + hm);
            if g.is_finite() {
                grad[i] = g;
                gnorm += g * g;
            }
        }
        if gnorm.sqrt() <= 1e-12 {
            break;
        }
        let scale = step / gnorm.sqrt();
        let mut t = scale;
        let mut accepted = false;
        for _ in 0..25 {
            let zt: Vec<f64> = (0..n)
                .map(|i| domain.dims[i].clamp(z[i] - t * grad[i]))
                .collect();
            let ft = f(&zt);
            if ft < fz - 1e-12 {
                z = zt;
                fz = ft;
                step = (step * 2.0).min(domain.max_width());
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            step *= 0.25;
            if step <= 1e-14 {
                break;
            }
        }
    }
    z
}

/// Nelder-Mead restricted to the box (every trial point is clamped).
fn nelder_mead(
    domain: &IntervalBox,
    z0: Vec<f64>,
    f: &dyn Fn(&[f64]) -> f64,
    iters: usize,
) -> Vec<f64> {
    let n = domain.ndim();
    let z0 = domain.clamp(&z0);
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((f(&z0), z0.clone()));
    for i in 0..n {
        let d = domain.dims[i];
        let mut p = z0.clone();
        let nudge = 0.05 * d.width().max(1e-6);
        p[i] = d.clamp(p[i] + if p[i] + nudge <= d.hi { nudge } else { -nudge });
        simplex.push((f(&p), p));
    }
    let eval = |p: Vec<f64>| -> (f64, Vec<f64>) {
        let p = domain.clamp(&p);
        (f(&p), p)
    };
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[n].0 - simplex[0].0;
        if !spread.is_finite() || spread < 1e-13 {
            if !spread.is_finite() {
                // Worst vertex is unusable territory; pull it inward.
            } else {
                break;
            }
        }
        let mut centroid = vec![0.0; n];
        for (_, p) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += p[i] / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n).map(|i| 2.0 * centroid[i] - worst.1[i]).collect();
        let (fr, zr) = eval(reflect);
        if fr < simplex[0].0 {
            let expand: Vec<f64> = (0..n).map(|i| 3.0 * centroid[i] - 2.0 * worst.1[i]).collect();
            let (fe, ze) = eval(expand);
            simplex[n] = if fe < fr { (fe, ze) } else { (fr, zr) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, zr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|i| 0.5 * (centroid[i] + worst.1[i]))
                .collect();
            let (fc, zc) = eval(contract);
            if fc < worst.0 {
                simplex[n] = (fc, zc);
            } else {
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = (0..n)
                        .map(|i| 0.5 * (best[i] + entry.1[i]))
                        .collect();
                    *entry = eval(p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    simplex.swap_remove(0).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::DagBuilder;
    use crate::tighten::StartingBounds;

    fn build(
        name: &str,
        vars: &[(&str, f64, f64)],
        objective: &str,
        ineqs: &[&str],
        eqs: &[&str],
    ) -> Problem {
        let names: Vec<&str> = vars.iter().map(|(n, _, _)| *n).collect();
        let mut b = DagBuilder::new(&names);
        let obj = b.parse(objective).unwrap();
        let gi: Vec<NodeId> = ineqs.iter().map(|s| b.parse(s).unwrap()).collect();
        let hj: Vec<NodeId> = eqs.iter().map(|s| b.parse(s).unwrap()).collect();
        Problem {
            name: name.to_string(),
            dag: b.finish(),
            objective: obj,
            ineqs: gi,
            eqs: hj,
            domain: IntervalBox::new(
                vars.iter().map(|(_, lo, hi)| Interval::new(*lo, *hi)).collect(),
            ),
        }
    }

    fn mc_only() -> SolverConfig {
        SolverConfig {
            tighten: TightenConfig {
                max_iters: 0,
                ..TightenConfig::default()
            },
            ..SolverConfig::default()
        }
    }

    #[test]
    fn linear_objective_converges_in_one_node() {
        let p = build("lin", &[("x", 0.0, 1.0), ("y", 0.0, 1.0)], "x + y", &[], &[]);
        let r = solve(&p, &mc_only());
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.iterations, 1);
        assert!(r.best_value.unwrap().abs() <= 1e-9);
        assert!(r.final_lb.abs() <= 1e-9);
    }

    #[test]
    fn constant_objective_is_immediate() {
        let p = build("const", &[("x", -1.0, 1.0)], "3", &[], &[]);
        let r = solve(&p, &mc_only());
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.iterations, 1);
        assert!((r.best_value.unwrap() - 3.0).abs() <= 1e-12);
        assert!((r.final_lb - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn impossible_constraint_is_infeasible() {
        let p = build("bad", &[("x", 0.0, 1.0)], "x", &["x + 10"], &[]);
        let r = solve(&p, &mc_only());
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.best_value.is_none());
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn six_hump_camel_reaches_the_known_minimum() {
        let p = build(
            "camel",
            &[("x", -3.0, 3.0), ("y", -2.0, 2.0)],
            "(4 - 2.1*x^2 + x^4/3)*x^2 + x*y + (-4 + 4*y^2)*y^2",
            &[],
            &[],
        );
        let r = solve(&p, &mc_only());
        assert_eq!(r.status, SolveStatus::Converged);
        let v = r.best_value.unwrap();
        assert!((v + 1.031628).abs() <= 1e-4, "value {v}");
        assert!(r.final_lb <= v && r.final_lb >= v - 2e-4);
    }

    #[test]
    fn heuristic_never_needs_more_nodes_on_the_paper_example() {
        let p = build(
            "difference",
            &[("z", -0.5, 1.0)],
            "(z - z^2)*(z^3 - exp(z))",
            &[],
            &[],
        );
        let off = solve(&p, &mc_only());
        let mut cfg_on = SolverConfig::default();
        cfg_on.tighten.max_iters = 1;
        let on = solve(&p, &cfg_on);
        assert_eq!(off.status, SolveStatus::Converged);
        assert_eq!(on.status, SolveStatus::Converged);
        assert!(on.iterations <= off.iterations);
        let vo = off.best_value.unwrap();
        let vn = on.best_value.unwrap();
        assert!((vo - vn).abs() <= 2e-4);
    }

    #[test]
    fn popped_bounds_are_monotone() {
        let p = build(
            "camel",
            &[("x", -3.0, 3.0), ("y", -2.0, 2.0)],
            "(4 - 2.1*x^2 + x^4/3)*x^2 + x*y + (-4 + 4*y^2)*y^2",
            &[],
            &[],
        );
        let mut seen = Vec::new();
        let r = solve_observed(&p, &mc_only(), &mut |lb| seen.push(lb));
        assert_eq!(r.status, SolveStatus::Converged);
        for w in seen.windows(2) {
            assert!(w[0] <= w[1] + 1e-12, "pop order not monotone: {w:?}");
        }
    }

    #[test]
    fn equality_and_inequality_mix_solves_to_closed_form() {
        // min x+y on the circle x^2+y^2=4 with xy <= 1: the best corner of
        // the circle allowed by the product cut gives x+y = -sqrt(6).
        let p = build(
            "ring",
            &[("x", -2.0, 2.0), ("y", -2.0, 2.0)],
            "x + y",
            &["x*y - 1"],
            &["x^2 + y^2 - 4"],
        );
        let mut cfg = SolverConfig::default();
        cfg.range_reduction = RangeReduction::Full;
        let r = solve(&p, &cfg);
        assert_eq!(r.status, SolveStatus::Converged);
        let v = r.best_value.unwrap();
        let truth = -(6.0f64).sqrt();
        assert!((v - truth).abs() <= 1e-3, "value {v} vs {truth}");
        assert!(r.final_lb <= v + 1e-9);
    }

    #[test]
    fn reports_are_deterministic() {
        let p = build(
            "camel",
            &[("x", -3.0, 3.0), ("y", -2.0, 2.0)],
            "(4 - 2.1*x^2 + x^4/3)*x^2 + x*y + (-4 + 4*y^2)*y^2",
            &[],
            &[],
        );
        let mut cfg = SolverConfig::default();
        cfg.seed = 7;
        cfg.range_reduction = RangeReduction::Full;
        let a = solve(&p, &cfg);
        let b = solve(&p, &cfg);
        assert_eq!(a.best_value, b.best_value);
        assert_eq!(a.final_lb, b.final_lb);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.nodes_created, b.nodes_created);
        assert_eq!(a.best_point, b.best_point);
    }

    #[test]
    fn taylor_seeding_stays_sound_inside_the_solver() {
        let p = build(
            "logdiff",
            &[("z", -0.5, 1.0)],
            "(log(z + 1) - z^2)*(log(z + 1) - exp(z - 0.5))",
            &[],
            &[],
        );
        let mut cfg = SolverConfig::default();
        cfg.tighten.starting_bounds = StartingBounds::TaylorForm;
        let r = solve(&p, &cfg);
        assert_eq!(r.status, SolveStatus::Converged);
        let v = r.best_value.unwrap();
        assert!(r.final_lb <= v + 1e-9);
        // Sanity: the optimum of this product on the box is negative.
        assert!(v < 0.0);
    }
}
