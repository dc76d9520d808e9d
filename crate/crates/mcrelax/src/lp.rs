//! Dense linear programming for the affine lower-bounding subproblems.
//!
//! The LPs built from single-point linearizations are tiny (a handful of
//! variables, a few dozen rows), so a dense two-phase tableau simplex with
//! Bland's rule is the right tool: deterministic, simple to audit, and the
//! dual multipliers fall straight out of the final tableau. There is also a
//! closed-form path for box-constrained objectives and a vertex-enumeration
//! reference solver used to validate the simplex.

use crate::interval::{Interval, IntervalBox};

/// `minimize c . z + c0` subject to `rows` (each `a . z <= rhs`) and
/// `z in bounds`. All coefficients must be finite; bound endpoints may be
/// infinite, in which case that side is simply unconstrained.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub c: Vec<f64>,
    pub c0: f64,
    pub rows: Vec<LinearRow>,
    pub bounds: IntervalBox,
}

/// One inequality `coeffs . z <= rhs`.
#[derive(Clone, Debug)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearProgram {
    pub fn new(c: Vec<f64>, c0: f64, bounds: IntervalBox) -> LinearProgram {
        assert_eq!(c.len(), bounds.ndim(), "objective/bounds dimension mismatch");
        LinearProgram {
            c,
            c0,
            rows: Vec::new(),
            bounds,
        }
    }

    pub fn push_row(&mut self, coeffs: Vec<f64>, rhs: f64) {
        assert_eq!(coeffs.len(), self.nvars(), "row dimension mismatch");
        self.rows.push(LinearRow { coeffs, rhs });
    }

    pub fn nvars(&self) -> usize {
        self.c.len()
    }

    fn assert_well_formed(&self) {
        assert!(self.nvars() > 0, "LP needs at least one variable");
        assert!(self.c.iter().all(|v| v.is_finite()) && self.c0.is_finite());
        for row in &self.rows {
            assert_eq!(row.coeffs.len(), self.nvars());
            assert!(row.coeffs.iter().all(|v| v.is_finite()) && row.rhs.is_finite());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `primal`, `row_duals`, and `reduced_costs` are empty
/// unless the status is `Optimal`; `objective` is `+inf` when infeasible and
/// `-inf` when unbounded.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    /// One multiplier per explicit row, nonnegative. Relaxing row `r` by
    /// `d` lowers the optimal value by at most `row_duals[r] * d`.
    pub row_duals: Vec<f64>,
    /// Per-variable bound sensitivity: positive when the variable sits at
    /// its lower bound, negative at its upper bound, zero when strictly
    /// between. Moving the variable off its active bound by `d` raises the
    /// objective by at least `|reduced_costs[i]| * d`.
    pub reduced_costs: Vec<f64>,
}

impl LpSolution {
    fn infeasible() -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            primal: Vec::new(),
            objective: f64::INFINITY,
            row_duals: Vec::new(),
            reduced_costs: Vec::new(),
        }
    }

    fn unbounded() -> LpSolution {
        LpSolution {
            status: LpStatus::Unbounded,
            primal: Vec::new(),
            objective: f64::NEG_INFINITY,
            row_duals: Vec::new(),
            reduced_costs: Vec::new(),
        }
    }
}

/// Pivot-loop failure: the iteration cap was hit, which with Bland's rule
/// indicates numerical breakdown rather than cycling.
#[derive(Clone, Debug)]
pub struct LpError {
    pub phase: u8,
    pub pivots: usize,
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "simplex stalled in phase {} after {} pivots",
            self.phase, self.pivots
        )
    }
}

impl std::error::Error for LpError {}

/// Minimizes `c . z + c0` over a box alone. Each coordinate is free of the
/// others, so the optimum is read off the coefficient signs, and the
/// reduced costs are exactly `c`.
pub fn solve_box_lp(c: &[f64], c0: f64, bounds: &IntervalBox) -> LpSolution {
    assert_eq!(c.len(), bounds.ndim());
    let mut primal = Vec::with_capacity(c.len());
    let mut objective = c0;
    for (ci, d) in c.iter().zip(&bounds.dims) {
        let zi = if *ci > 0.0 {
            d.lo
        } else if *ci < 0.0 {
            d.hi
        } else {
            // Any point is optimal in this coordinate; prefer a finite one.
            if d.lo.is_finite() { d.lo } else { d.clamp(0.0) }
        };
        if !zi.is_finite() {
            return LpSolution::unbounded();
        }
        objective += ci * zi;
        primal.push(zi);
    }
    LpSolution {
        status: LpStatus::Optimal,
        primal,
        objective,
        row_duals: Vec::new(),
        reduced_costs: c.to_vec(),
    }
}

const ENTER_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const PHASE1_TOL: f64 = 1e-7;

/// Dense two-phase tableau with slack variables and Bland's rule.
struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Reduced-cost row; its last entry is minus the objective value.
    z: Vec<f64>,
    basis: Vec<usize>,
    /// Columns eligible to enter; artificial columns lie beyond this.
    enterable: usize,
}

enum PivotOutcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn width(&self) -> usize {
        self.z.len()
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width();
        let p = self.rows[r][j];
        for v in &mut self.rows[r] {
            *v /= p;
        }
        for i in 0..self.rows.len() {
            if i != r {
                let f = self.rows[i][j];
                if f != 0.0 {
                    for k in 0..w {
                        self.rows[i][k] -= f * self.rows[r][k];
                    }
                }
            }
        }
        let f = self.z[j];
        if f != 0.0 {
            for k in 0..w {
                self.z[k] -= f * self.rows[r][k];
            }
        }
        self.basis[r] = j;
    }

    /// Rebuilds the reduced-cost row for the cost vector `cost` (indexed by
    /// column, missing entries cost zero) from the current basis.
    fn price(&mut self, cost: &[f64]) {
        let w = self.width();
        self.z = vec![0.0; w];
        for j in 0..w - 1 {
            self.z[j] = cost.get(j).copied().unwrap_or(0.0);
        }
        for r in 0..self.rows.len() {
            let cb = cost.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for k in 0..w {
                    self.z[k] -= cb * self.rows[r][k];
                }
            }
        }
    }

    fn run(&mut self, phase: u8) -> Result<PivotOutcome, LpError> {
        let m = self.rows.len();
        let w = self.width();
        let cap = 1000 + 50 * (w + m);
        for pivots in 0..cap {
            // Bland's rule: lowest-index improving column enters.
            let Some(j) = (0..self.enterable).find(|&j| self.z[j] < -ENTER_TOL) else {
                return Ok(PivotOutcome::Optimal);
            };
            // Lowest basic index breaks ratio ties, completing Bland's rule.
            let mut best: Option<(f64, usize)> = None;
            for r in 0..m {
                let a = self.rows[r][j];
                if a > PIVOT_TOL {
                    let ratio = self.rows[r][w - 1] / a;
                    let better = match best {
                        None => true,
                        Some((br, brow)) => {
                            ratio < br - 1e-12
                                || (ratio < br + 1e-12 && self.basis[r] < self.basis[brow])
                        }
                    };
                    if better {
                        best = Some((ratio, r));
                    }
                }
            }
            let Some((_, r)) = best else {
                return Ok(PivotOutcome::Unbounded);
            };
            self.pivot(r, j);
            let _ = pivots;
        }
        Err(LpError {
            phase,
            pivots: cap,
        })
    }
}

/// Solves the LP exactly via the two-phase simplex. Variables are shifted
/// to `y = z - lo >= 0`; finite upper bounds become explicit rows so their
/// multipliers are ordinary slack reduced costs.
pub fn solve_simplex(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.assert_well_formed();
    let n = lp.nvars();
    let lo: Vec<f64> = lp.bounds.dims.iter().map(|d| d.lo).collect();
    assert!(
        lo.iter().all(|v| v.is_finite()),
        "simplex requires finite lower bounds"
    );

    // Shifted rows: user inequalities first, then upper-bound rows.
    let nuser = lp.rows.len();
    let mut coeff: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for row in &lp.rows {
        let shift: f64 = row.coeffs.iter().zip(&lo).map(|(a, l)| a * l).sum();
        coeff.push(row.coeffs.clone());
        rhs.push(row.rhs - shift);
    }
    let mut bound_row = vec![usize::MAX; n];
    for i in 0..n {
        let w = lp.bounds.dims[i].width();
        if w.is_finite() {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            bound_row[i] = coeff.len();
            coeff.push(a);
            rhs.push(w);
        }
    }
    let m = coeff.len();

    let nart = rhs.iter().filter(|&&b| b < 0.0).count();
    let width = n + m + nart + 1;
    let mut rows = vec![vec![0.0; width]; m];
    let mut basis = vec![0usize; m];
    let mut next_art = n + m;
    for r in 0..m {
        // Rows with negative right-hand side are negated and given an
        // artificial variable so the initial basis is feasible.
        let sign = if rhs[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            rows[r][j] = sign * coeff[r][j];
        }
        rows[r][n + r] = sign;
        rows[r][width - 1] = sign * rhs[r];
        if sign < 0.0 {
            rows[r][next_art] = 1.0;
            basis[r] = next_art;
            next_art += 1;
        } else {
            basis[r] = n + r;
        }
    }

    let mut t = Tableau {
        rows,
        z: vec![0.0; width],
        basis,
        enterable: n + m,
    };

    if nart > 0 {
        let mut phase1_cost = vec![0.0; width - 1];
        for c in phase1_cost.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        t.price(&phase1_cost);
        match t.run(1)? {
            // The phase-1 objective is bounded below by zero.
            PivotOutcome::Unbounded => unreachable!("phase 1 cannot be unbounded"),
            PivotOutcome::Optimal => {}
        }
        if -t.z[width - 1] > PHASE1_TOL {
            return Ok(LpSolution::infeasible());
        }
        // Pivot leftover artificials (basic at zero) onto real columns.
        // When a row has no such column it is redundant and the artificial
        // stays, harmlessly basic at zero: it never re-enters because only
        // columns below `enterable` are candidates.
        for r in 0..m {
            if t.basis[r] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| t.rows[r][j].abs() > 1e-9) {
                    t.pivot(r, j);
                }
            }
        }
    }

    let mut cost = vec![0.0; width - 1];
    cost[..n].copy_from_slice(&lp.c);
    t.price(&cost);
    match t.run(2)? {
        PivotOutcome::Unbounded => return Ok(LpSolution::unbounded()),
        PivotOutcome::Optimal => {}
    }

    let mut value = vec![0.0; n + m + nart];
    for r in 0..m {
        value[t.basis[r]] = t.rows[r][width - 1];
    }
    let primal: Vec<f64> = (0..n).map(|i| lo[i] + value[i]).collect();
    let objective = lp.c.iter().zip(&primal).map(|(c, z)| c * z).sum::<f64>() + lp.c0;

    // Duals are the final reduced costs of the slacks; optimality makes
    // them nonnegative, so negative dust is clamped away.
    let row_duals: Vec<f64> = (0..nuser).map(|r| t.z[n + r].max(0.0)).collect();
    let mut reduced_costs = Vec::with_capacity(n);
    for i in 0..n {
        let at_lo = t.z[i].max(0.0);
        let at_hi = if bound_row[i] == usize::MAX {
            0.0
        } else {
            t.z[n + bound_row[i]].max(0.0)
        };
        reduced_costs.push(at_lo - at_hi);
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        objective,
        row_duals,
        reduced_costs,
    })
}

/// Shrinks the box using the reduced costs of an optimal relaxation solve,
/// given an incumbent upper bound. For a variable at its lower bound with
/// reduced cost `r`, every relaxation-feasible point with objective at most
/// `ub` satisfies `z_i <= lo_i + (ub - lb) / r` (dually for upper bounds),
/// so no point that could still improve the incumbent is cut off.
///
/// `bounds` must be the box the LP was solved over.
pub fn dual_bound_tighten(sol: &LpSolution, bounds: &IntervalBox, ub: f64) -> IntervalBox {
    if sol.status != LpStatus::Optimal {
        return bounds.clone();
    }
    let gap = (ub - sol.objective).max(0.0);
    let mut dims = bounds.dims.clone();
    for (i, d) in dims.iter_mut().enumerate() {
        let r = sol.reduced_costs[i];
        if r > 1e-12 {
            let cap = d.lo + gap / r;
            if cap < d.hi {
                *d = Interval::new(d.lo, cap);
            }
        } else if r < -1e-12 {
            let floor = d.hi + gap / r;
            if floor > d.lo {
                *d = Interval::new(floor, d.hi);
            }
        }
    }
    IntervalBox::new(dims)
}

/// Reference solver: scans every candidate vertex (each choice of `n`
/// active constraints among the rows and bound faces), keeping the best
/// feasible one. Exponential, for validation and small problems only.
/// Returns `None` when no feasible vertex exists, which for a bounded
/// feasible set means infeasibility.
pub fn enumerate_min(lp: &LinearProgram) -> Option<(Vec<f64>, f64)> {
    lp.assert_well_formed();
    let n = lp.nvars();
    // Constraint list: user rows, then lo faces, then hi faces.
    let mut normals: Vec<Vec<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for row in &lp.rows {
        normals.push(row.coeffs.clone());
        offsets.push(row.rhs);
    }
    for i in 0..n {
        let mut a = vec![0.0; n];
        a[i] = -1.0;
        normals.push(a);
        offsets.push(-lp.bounds.dims[i].lo);
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        normals.push(a);
        offsets.push(lp.bounds.dims[i].hi);
    }
    let total = normals.len();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut pick = vec![0usize; n];
    scan_subsets(total, n, 0, 0, &mut pick, &mut |subset| {
        let Some(z) = solve_square(subset, &normals, &offsets) else {
            return;
        };
        let feasible = normals.iter().zip(&offsets).all(|(a, b)| {
            let lhs: f64 = a.iter().zip(&z).map(|(ai, zi)| ai * zi).sum();
            lhs <= b + 1e-7
        });
        if !feasible {
            return;
        }
        let obj = lp.c.iter().zip(&z).map(|(c, zi)| c * zi).sum::<f64>() + lp.c0;
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    });
    best
}

fn scan_subsets(
    total: usize,
    need: usize,
    start: usize,
    depth: usize,
    pick: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if depth == need {
        f(pick);
        return;
    }
    for i in start..total {
        pick[depth] = i;
        scan_subsets(total, need, i + 1, depth + 1, pick, f);
    }
}

/// Solves the square system `normals[subset] . z = offsets[subset]` by
/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(subset: &[usize], normals: &[Vec<f64>], offsets: &[f64]) -> Option<Vec<f64>> {
    let n = subset.len();
    let mut a: Vec<Vec<f64>> = subset.iter().map(|&i| normals[i].clone()).collect();
    let mut b: Vec<f64> = subset.iter().map(|&i| offsets[i]).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut z = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * z[k];
        }
        z[col] = acc / a[col][col];
    }
    Some(z)
}
