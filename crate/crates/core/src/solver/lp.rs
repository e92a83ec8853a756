//! Bounded-variable revised simplex.
//!
//! The engine keeps an explicit dense basis inverse updated in product form
//! at every pivot, which is cheap at the sizes the cutting loop produces
//! (a few thousand rows at the high end). Cold solves run a zero-objective
//! dual simplex from the all-slack basis to reach feasibility, then the
//! primal simplex; warm re-solves after cut rows or bound changes run the
//! dual simplex from the previous optimal basis and fall back to a cold
//! solve on any numerical doubt.
//!
//! Determinism: entering/leaving choices break ties by lowest index after
//! preferring the largest pivot magnitude, so identical inputs take
//! identical paths.

use std::collections::BTreeSet;

pub const FEAS_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots before switching to index-order choices.
const DEGEN_SWITCH: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    /// Sparse coefficients, ascending variable index, no duplicates.
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinProgram {
    pub n_vars: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Dense minimization objective over the variables.
    pub objective: Vec<f64>,
    pub obj_offset: f64,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration cap hit; values are not trustworthy.
    Stalled,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Objective at the final point (offset included); meaningful only for
    /// [`LpStatus::Optimal`].
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stat {
    Basic,
    Lower,
    Upper,
}

/// Restorable basis: one status byte per column at snapshot time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisSnapshot {
    stats: Vec<u8>,
}

struct Engine {
    n_struct: usize,
    m: usize,
    /// Sparse columns for structural variables and row slacks, in that
    /// order; slack of row `i` is column `n_struct + i`.
    cols: Vec<Vec<(u32, f64)>>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
    b: Vec<f64>,
    stat: Vec<Stat>,
    /// Basic column per row position.
    basic: Vec<u32>,
    /// Dense basis inverse, row-major.
    binv: Vec<Vec<f64>>,
    x: Vec<f64>,
    iterations: u64,
}

#[derive(Debug)]
enum SimplexEnd {
    Optimal,
    Unbounded,
    /// Dual simplex only: a row certifies primal infeasibility.
    Infeasible,
    IterLimit,
}

impl Engine {
    fn n_cols(&self) -> usize {
        self.n_struct + self.m
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lo[j] == self.up[j]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.stat[j] {
            Stat::Upper => self.up[j],
            Stat::Lower | Stat::Basic => {
                if self.lo[j].is_finite() {
                    self.lo[j]
                } else if self.up[j].is_finite() {
                    self.up[j]
                } else {
                    0.0
                }
            }
        }
    }

    fn reset_to_slack_basis(&mut self) {
        for j in 0..self.n_cols() {
            self.stat[j] = Stat::Lower;
        }
        self.basic.clear();
        for i in 0..self.m {
            let s = self.n_struct + i;
            self.stat[s] = Stat::Basic;
            self.basic.push(s as u32);
        }
        self.binv = identity(self.m);
    }

    /// Nonbasic values from statuses, then `x_B = B^-1 (b - N x_N)`.
    fn recompute_x(&mut self) {
        let mut r = self.b.clone();
        for j in 0..self.n_cols() {
            if self.stat[j] == Stat::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            self.x[j] = v;
            if v != 0.0 {
                for &(row, a) in &self.cols[j] {
                    r[row as usize] -= a * v;
                }
            }
        }
        for pos in 0..self.m {
            let mut acc = 0.0;
            let row = &self.binv[pos];
            for k in 0..self.m {
                acc += row[k] * r[k];
            }
            self.x[self.basic[pos] as usize] = acc;
        }
    }

    /// `y = c_B^T B^-1`.
    fn btran(&self, cost: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for pos in 0..self.m {
            let cb = cost[self.basic[pos] as usize];
            if cb != 0.0 {
                let row = &self.binv[pos];
                for k in 0..self.m {
                    y[k] += cb * row[k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], y: &[f64]) -> f64 {
        let mut d = cost[j];
        for &(row, a) in &self.cols[j] {
            d -= y[row as usize] * a;
        }
        d
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut alpha = vec![0.0; self.m];
        for &(row, a) in &self.cols[j] {
            let r = row as usize;
            for pos in 0..self.m {
                alpha[pos] += self.binv[pos][r] * a;
            }
        }
        alpha
    }

    /// Product-form inverse update for `enter` replacing the basic column
    /// at `pos`, with `alpha = B^-1 a_enter` already computed.
    fn update_binv(&mut self, pos: usize, alpha: &[f64]) {
        let piv = alpha[pos];
        let inv = 1.0 / piv;
        for k in 0..self.m {
            self.binv[pos][k] *= inv;
        }
        for i in 0..self.m {
            if i != pos && alpha[i] != 0.0 {
                let f = alpha[i];
                // self.binv[i] -= f * self.binv[pos]
                let (head, tail) = self.binv.split_at_mut(pos.max(i));
                let (ri, rp) = if i < pos {
                    (&mut head[i], &tail[0])
                } else {
                    (&mut tail[0], &head[pos])
                };
                for k in 0..self.m {
                    ri[k] -= f * rp[k];
                }
            }
        }
    }

    /// Primal simplex on the given cost vector from the current basis,
    /// which must be primal feasible.
    fn primal(&mut self, cost: &[f64], iter_cap: u64) -> SimplexEnd {
        let mut degenerate_run = 0u32;
        let mut bland = false;
        let mut iters = 0u64;
        loop {
            iters += 1;
            self.iterations += 1;
            if iters > iter_cap {
                return SimplexEnd::IterLimit;
            }
            if iters % 5000 == 0 {
                log::trace!(
                    target: "qconic::solver",
                    "primal simplex at {iters} iterations (bland: {bland})"
                );
            }
            let y = self.btran(cost);
            let mut enter: Option<(usize, f64, bool)> = None; // col, score, from_lower
            for j in 0..self.n_cols() {
                if self.stat[j] == Stat::Basic || self.is_fixed(j) {
                    continue;
                }
                let d = self.reduced_cost(j, cost, &y);
                let (viol, from_lower) = match self.stat[j] {
                    Stat::Lower => (-d, true),
                    Stat::Upper => (d, false),
                    Stat::Basic => unreachable!(),
                };
                if viol > COST_TOL {
                    if bland {
                        enter = Some((j, viol, from_lower));
                        break;
                    }
                    if enter.map_or(true, |(_, best, _)| viol > best) {
                        enter = Some((j, viol, from_lower));
                    }
                }
            }
            let Some((j, _, from_lower)) = enter else {
                return SimplexEnd::Optimal;
            };
            let s = if from_lower { 1.0 } else { -1.0 };
            let alpha = self.ftran(j);

            // Ratio test: basic variables hitting a bound, or the entering
            // variable reaching its opposite bound.
            let own_range = self.up[j] - self.lo[j];
            // (step, row position, |pivot|, leaving lands on lower bound)
            let mut cand: Option<(f64, usize, f64, bool)> = None;
            for pos in 0..self.m {
                let a = alpha[pos];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let bcol = self.basic[pos] as usize;
                let xb = self.x[bcol];
                let (room, to_lower) = if s * a > 0.0 {
                    (xb - self.lo[bcol], true)
                } else {
                    (self.up[bcol] - xb, false)
                };
                if !room.is_finite() {
                    continue;
                }
                let t = room.max(0.0) / (s * a).abs();
                let take = match cand {
                    None => true,
                    Some((bt, bpos, bpiv, _)) => {
                        if bland {
                            // Lowest-numbered leaving variable among the
                            // ratio ties keeps the Bland guarantee.
                            t < bt - 1e-12
                                || (t <= bt + 1e-12 && self.basic[pos] < self.basic[bpos])
                        } else {
                            t < bt - 1e-12
                                || (t <= bt + 1e-12
                                    && (a.abs() > bpiv + 1e-15
                                        || ((a.abs() - bpiv).abs() <= 1e-15
                                            && self.basic[pos] < self.basic[bpos])))
                        }
                    }
                };
                if take {
                    cand = Some((t, pos, a.abs(), to_lower));
                }
            }
            let theta = match cand {
                None => own_range,
                Some((t, ..)) => t.min(own_range),
            };
            if theta.is_infinite() {
                return SimplexEnd::Unbounded;
            }
            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > DEGEN_SWITCH {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }

            let step = s * theta;
            // Move the entering variable and shift the basics.
            let row_step = cand.filter(|&(t, ..)| t < own_range);
            match row_step {
                Some((_, pos, _, to_lower)) => {
                    for p in 0..self.m {
                        if alpha[p] != 0.0 {
                            let c = self.basic[p] as usize;
                            self.x[c] -= step * alpha[p];
                        }
                    }
                    self.x[j] = self.nonbasic_value(j) + step;
                    let lcol = self.basic[pos] as usize;
                    self.x[lcol] = if to_lower { self.lo[lcol] } else { self.up[lcol] };
                    self.stat[lcol] = if to_lower { Stat::Lower } else { Stat::Upper };
                    self.stat[j] = Stat::Basic;
                    self.basic[pos] = j as u32;
                    self.update_binv(pos, &alpha);
                }
                None => {
                    // Bound flip: the entering variable crosses to its other
                    // bound without a basis change.
                    for p in 0..self.m {
                        if alpha[p] != 0.0 {
                            let c = self.basic[p] as usize;
                            self.x[c] -= s * own_range * alpha[p];
                        }
                    }
                    self.stat[j] = if from_lower { Stat::Upper } else { Stat::Lower };
                    self.x[j] = self.nonbasic_value(j);
                }
            }
        }
    }

    /// Dual simplex on the given cost vector; the starting reduced costs
    /// must be dual feasible. Ends primal feasible (then a primal cleanup
    /// confirms optimality) or with an infeasibility certificate.
    fn dual(&mut self, cost: &[f64], iter_cap: u64) -> SimplexEnd {
        let mut degenerate_run = 0u32;
        let mut bland = false;
        let mut iters = 0u64;
        loop {
            iters += 1;
            self.iterations += 1;
            if iters > iter_cap {
                return SimplexEnd::IterLimit;
            }
            if iters % 5000 == 0 {
                log::trace!(
                    target: "qconic::solver",
                    "dual simplex at {iters} iterations (bland: {bland})"
                );
            }
            // Leaving: the basic variable most outside its bounds; under
            // Bland, the lowest-numbered one instead.
            let mut leave: Option<(usize, f64, bool)> = None; // pos, violation, below
            for pos in 0..self.m {
                let c = self.basic[pos] as usize;
                let xb = self.x[c];
                let (v, below) = if xb < self.lo[c] - FEAS_TOL {
                    (self.lo[c] - xb, true)
                } else if xb > self.up[c] + FEAS_TOL {
                    (xb - self.up[c], false)
                } else {
                    continue;
                };
                let take = match leave {
                    None => true,
                    Some((bpos, best, _)) => {
                        if bland {
                            self.basic[pos] < self.basic[bpos]
                        } else {
                            v > best
                        }
                    }
                };
                if take {
                    leave = Some((pos, v, below));
                }
            }
            let Some((pos, _, below)) = leave else {
                return SimplexEnd::Optimal;
            };

            let y = self.btran(cost);
            let mut enter: Option<(usize, f64, f64)> = None; // col, ratio, |alpha_row|
            for j in 0..self.n_cols() {
                if self.stat[j] == Stat::Basic || self.is_fixed(j) {
                    continue;
                }
                let mut ar = 0.0;
                for &(row, a) in &self.cols[j] {
                    ar += self.binv[pos][row as usize] * a;
                }
                let eligible = match (below, self.stat[j]) {
                    (true, Stat::Lower) => ar < -PIVOT_TOL,
                    (true, Stat::Upper) => ar > PIVOT_TOL,
                    (false, Stat::Lower) => ar > PIVOT_TOL,
                    (false, Stat::Upper) => ar < -PIVOT_TOL,
                    _ => false,
                };
                if !eligible {
                    continue;
                }
                let d = self.reduced_cost(j, cost, &y);
                // Dual feasibility keeps d >= 0 at lower, <= 0 at upper;
                // clamp drift so ratios stay nonnegative.
                let dmag = match self.stat[j] {
                    Stat::Lower => d.max(0.0),
                    _ => (-d).max(0.0),
                };
                let ratio = dmag / ar.abs();
                // The ratio test still binds under Bland (dual feasibility
                // depends on it); only the tie-break changes, to the
                // lowest-numbered column, which the ascending scan keeps.
                let better = match enter {
                    None => true,
                    Some((_, bratio, bpiv)) => {
                        if bland {
                            ratio < bratio - 1e-12
                        } else {
                            ratio < bratio - 1e-12
                                || (ratio <= bratio + 1e-12 && ar.abs() > bpiv + 1e-15)
                        }
                    }
                };
                if better {
                    enter = Some((j, ratio, ar.abs()));
                }
            }
            let Some((j, ratio, _)) = enter else {
                return SimplexEnd::Infeasible;
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > DEGEN_SWITCH {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }

            let alpha = self.ftran(j);
            let lcol = self.basic[pos] as usize;
            let target = if below { self.lo[lcol] } else { self.up[lcol] };
            let delta = self.x[lcol] - target;
            let step = delta / alpha[pos];
            for p in 0..self.m {
                if alpha[p] != 0.0 {
                    let c = self.basic[p] as usize;
                    self.x[c] -= step * alpha[p];
                }
            }
            self.x[j] = self.nonbasic_value(j) + step;
            self.x[lcol] = target;
            self.stat[lcol] = if below { Stat::Lower } else { Stat::Upper };
            self.stat[j] = Stat::Basic;
            self.basic[pos] = j as u32;
            self.update_binv(pos, &alpha);
        }
    }

    /// Recompute the basis inverse from scratch. Fails on a singular basis.
    fn rebuild(&mut self) -> Result<(), ()> {
        let m = self.m;
        // Dense augmented [B | I], then Gauss-Jordan with partial pivoting.
        let mut bmat = vec![vec![0.0; m]; m];
        for pos in 0..m {
            for &(row, a) in &self.cols[self.basic[pos] as usize] {
                bmat[row as usize][pos] = a;
            }
        }
        let mut inv = identity(m);
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_val = bmat[col][col].abs();
            for r in col + 1..m {
                if bmat[r][col].abs() > piv_val {
                    piv_val = bmat[r][col].abs();
                    piv_row = r;
                }
            }
            if piv_val <= 1e-11 {
                return Err(());
            }
            bmat.swap(col, piv_row);
            inv.swap(col, piv_row);
            let inv_p = 1.0 / bmat[col][col];
            for k in 0..m {
                bmat[col][k] *= inv_p;
                inv[col][k] *= inv_p;
            }
            for r in 0..m {
                if r != col {
                    let f = bmat[r][col];
                    if f != 0.0 {
                        for k in 0..m {
                            bmat[r][k] -= f * bmat[col][k];
                            inv[r][k] -= f * inv[col][k];
                        }
                    }
                }
            }
        }
        // inv now holds B^-1 in row order matching positions: B^-1 row `pos`
        // is the row mapping e_pos; the Gauss-Jordan above produced the
        // inverse of the matrix whose column `pos` is a_{basic[pos]}, with
        // rows permuted back by the swaps applied to both sides.
        self.binv = inv;
        Ok(())
    }

    /// Largest row residual `|b - A x|` at the current point.
    fn residual_inf(&self) -> f64 {
        let mut r = self.b.clone();
        for j in 0..self.n_cols() {
            let v = self.x[j];
            if v != 0.0 {
                for &(row, a) in &self.cols[j] {
                    r[row as usize] -= a * v;
                }
            }
        }
        r.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]; m];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    out
}

/// Incremental LP solver: solve, tighten bounds or append rows, re-solve.
pub struct LpSolver {
    eng: Engine,
    offset: f64,
    /// A constant-only row was impossible to satisfy.
    constant_infeasible: bool,
    have_basis: bool,
}

impl LpSolver {
    pub fn new(p: &LinProgram) -> Result<LpSolver, String> {
        if p.lower.len() != p.n_vars
            || p.upper.len() != p.n_vars
            || p.objective.len() != p.n_vars
        {
            return Err("bound/objective vectors must match n_vars".into());
        }
        for j in 0..p.n_vars {
            if p.lower[j] > p.upper[j] {
                return Err(format!("variable {j} has crossing bounds"));
            }
            if !p.objective[j].is_finite() {
                return Err(format!("variable {j} has a non-finite cost"));
            }
        }
        let mut s = LpSolver {
            eng: Engine {
                n_struct: p.n_vars,
                m: 0,
                cols: (0..p.n_vars).map(|_| Vec::new()).collect(),
                lo: p.lower.clone(),
                up: p.upper.clone(),
                cost: p.objective.clone(),
                b: Vec::new(),
                stat: vec![Stat::Lower; p.n_vars],
                basic: Vec::new(),
                binv: Vec::new(),
                x: vec![0.0; p.n_vars],
                iterations: 0,
            },
            offset: p.obj_offset,
            constant_infeasible: false,
            have_basis: false,
        };
        for row in &p.rows {
            s.push_row(row.coeffs.clone(), row.kind, row.rhs);
        }
        Ok(s)
    }

    fn push_row(&mut self, mut coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        coeffs.retain(|&(_, v)| v != 0.0);
        if coeffs.is_empty() {
            let ok = match kind {
                RowKind::Eq => rhs.abs() <= FEAS_TOL,
                RowKind::Le => rhs >= -FEAS_TOL,
            };
            if !ok {
                self.constant_infeasible = true;
            }
            return;
        }
        // Normalize to unit max coefficient so pivot tolerances are scale
        // free.
        let maxc = coeffs.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        let scale = 1.0 / maxc;
        let eng = &mut self.eng;
        let row_idx = eng.m;
        for &(j, v) in &coeffs {
            debug_assert!(j < eng.n_struct);
            eng.cols[j].push((row_idx as u32, v * scale));
        }
        eng.b.push(rhs * scale);
        // Slack column: index n_struct + row, fixed at zero for equalities.
        let (slo, sup) = match kind {
            RowKind::Eq => (0.0, 0.0),
            RowKind::Le => (0.0, f64::INFINITY),
        };
        eng.cols.insert(eng.n_struct + row_idx, vec![(row_idx as u32, 1.0)]);
        eng.lo.insert(eng.n_struct + row_idx, slo);
        eng.up.insert(eng.n_struct + row_idx, sup);
        eng.cost.insert(eng.n_struct + row_idx, 0.0);
        eng.stat.insert(eng.n_struct + row_idx, Stat::Basic);
        eng.x.insert(eng.n_struct + row_idx, 0.0);
        eng.m += 1;

        if self.have_basis {
            // Bordered inverse: the new slack joins the basis, so the new
            // B^-1 row is [-a_B^T B^-1, 1] and earlier rows gain a zero.
            let m_old = eng.m - 1;
            let scaled: Vec<(usize, f64)> =
                coeffs.iter().map(|&(j, v)| (j, v * scale)).collect();
            let mut w = vec![0.0; m_old];
            for pos in 0..m_old {
                let bcol = eng.basic[pos] as usize;
                if bcol >= eng.n_struct {
                    continue; // slacks have no coefficient in the new row
                }
                if let Some(&(_, v)) = scaled.iter().find(|&&(j, _)| j == bcol) {
                    for k in 0..m_old {
                        w[k] += v * eng.binv[pos][k];
                    }
                }
            }
            for row in eng.binv.iter_mut() {
                row.push(0.0);
            }
            let mut new_row: Vec<f64> = w.iter().map(|v| -v).collect();
            new_row.push(1.0);
            eng.binv.push(new_row);
            eng.basic.push((eng.n_struct + row_idx) as u32);
        }
    }

    /// Append `coeffs . x <= rhs`.
    pub fn add_le_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.push_row(coeffs, RowKind::Le, rhs);
    }

    pub fn set_var_bounds(&mut self, j: usize, lo: f64, up: f64) {
        self.eng.lo[j] = lo;
        self.eng.up[j] = up;
    }

    pub fn var_bounds(&self, j: usize) -> (f64, f64) {
        (self.eng.lo[j], self.eng.up[j])
    }

    pub fn n_rows(&self) -> usize {
        self.eng.m
    }

    pub fn iterations(&self) -> u64 {
        self.eng.iterations
    }

    /// Structural variable values at the last solve.
    pub fn values(&self) -> &[f64] {
        &self.eng.x[..self.eng.n_struct]
    }

    pub fn objective_value(&self) -> f64 {
        let mut acc = self.offset;
        for j in 0..self.eng.n_struct {
            acc += self.eng.cost[j] * self.eng.x[j];
        }
        acc
    }

    fn iter_cap(&self) -> u64 {
        20_000 + 50 * (self.eng.m as u64 + self.eng.n_struct as u64)
    }

    /// Two-phase solve from the all-slack basis: a zero-objective dual pass
    /// finds a feasible basis, then the primal simplex optimizes.
    pub fn solve_cold(&mut self) -> LpOutcome {
        if self.constant_infeasible {
            return self.done(LpStatus::Infeasible);
        }
        self.eng.reset_to_slack_basis();
        self.have_basis = true;
        // Resting each column on the bound its cost sign favors makes the
        // slack basis dual feasible for the true objective, so a single
        // dual pass reaches the optimum with meaningful ratios instead of
        // the fully degenerate zero-cost crawl. A negative cost on a
        // column with no upper bound has no such resting spot; only then
        // run a zero-cost feasibility phase first.
        let mut priced = true;
        for j in 0..self.eng.n_struct {
            if self.eng.is_fixed(j) {
                continue;
            }
            if self.eng.cost[j] < 0.0 {
                if self.eng.up[j].is_finite() {
                    self.eng.stat[j] = Stat::Upper;
                } else {
                    priced = false;
                    break;
                }
            }
        }
        if !priced {
            for j in 0..self.eng.n_struct {
                if self.eng.stat[j] == Stat::Upper {
                    self.eng.stat[j] = Stat::Lower;
                }
            }
        }
        self.eng.recompute_x();
        let cap = self.iter_cap();
        let phase1 = if priced {
            self.eng.cost.clone()
        } else {
            vec![0.0; self.eng.n_cols()]
        };
        let t0 = std::time::Instant::now();
        let mark = self.eng.iterations;
        let feas = self.eng.dual(&phase1, cap);
        log::trace!(
            target: "qconic::solver",
            "cold dual pass (priced: {priced}): {:?} after {} iterations in {:.2?} ({} rows)",
            feas,
            self.eng.iterations - mark,
            t0.elapsed(),
            self.eng.m
        );
        match feas {
            SimplexEnd::Optimal => {}
            SimplexEnd::Infeasible => return self.done(LpStatus::Infeasible),
            SimplexEnd::IterLimit | SimplexEnd::Unbounded => {
                return self.done(LpStatus::Stalled)
            }
        }
        let cost = self.eng.cost.clone();
        let mark = self.eng.iterations;
        let end = self.eng.primal(&cost, cap);
        log::trace!(
            target: "qconic::solver",
            "cold primal cleanup: {:?} after {} iterations in {:.2?}",
            end,
            self.eng.iterations - mark,
            t0.elapsed()
        );
        match end {
            SimplexEnd::Optimal => self.finish_optimal(true),
            SimplexEnd::Unbounded => self.done(LpStatus::Unbounded),
            _ => self.done(LpStatus::Stalled),
        }
    }

    /// Dual re-solve from the current basis after bound changes or new
    /// rows; falls back to a cold solve when the basis is unusable.
    pub fn resolve(&mut self) -> LpOutcome {
        if self.constant_infeasible {
            return self.done(LpStatus::Infeasible);
        }
        if !self.have_basis {
            return self.solve_cold();
        }
        self.eng.recompute_x();
        // The dual simplex needs dual-feasible reduced costs; verify
        // cheaply and go cold when drift or caller changes broke them.
        let cost = self.eng.cost.clone();
        let y = self.eng.btran(&cost);
        for j in 0..self.eng.n_cols() {
            if self.eng.stat[j] == Stat::Basic || self.eng.is_fixed(j) {
                continue;
            }
            let d = self.eng.reduced_cost(j, &cost, &y);
            let bad = match self.eng.stat[j] {
                Stat::Lower => d < -1e-6,
                Stat::Upper => d > 1e-6,
                Stat::Basic => false,
            };
            if bad {
                return self.solve_cold();
            }
        }
        let cap = self.iter_cap();
        match self.eng.dual(&cost, cap) {
            SimplexEnd::Optimal => {}
            SimplexEnd::Infeasible => return self.done(LpStatus::Infeasible),
            SimplexEnd::IterLimit | SimplexEnd::Unbounded => return self.solve_cold(),
        }
        match self.eng.primal(&cost, cap) {
            SimplexEnd::Optimal => self.finish_optimal(true),
            SimplexEnd::Unbounded => self.done(LpStatus::Unbounded),
            _ => self.solve_cold(),
        }
    }

    fn finish_optimal(&mut self, allow_repair: bool) -> LpOutcome {
        let scale = 1.0 + self.eng.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if self.eng.residual_inf() > 1e-6 * scale && allow_repair {
            // Drifted inverse: rebuild and re-optimize once.
            if self.eng.rebuild().is_ok() {
                self.eng.recompute_x();
                let cost = self.eng.cost.clone();
                let cap = self.iter_cap();
                match self.eng.dual(&cost, cap) {
                    SimplexEnd::Optimal => {}
                    SimplexEnd::Infeasible => return self.done(LpStatus::Infeasible),
                    _ => return self.done(LpStatus::Stalled),
                }
                return match self.eng.primal(&cost, cap) {
                    SimplexEnd::Optimal => self.finish_optimal(false),
                    SimplexEnd::Unbounded => self.done(LpStatus::Unbounded),
                    _ => self.done(LpStatus::Stalled),
                };
            }
            // A failed rebuild means the basis data itself is unusable;
            // retrying from scratch would land back here.
            return self.done(LpStatus::Stalled);
        }
        self.done(LpStatus::Optimal)
    }

    fn done(&self, status: LpStatus) -> LpOutcome {
        LpOutcome {
            status,
            objective: self.objective_value(),
        }
    }

    pub fn snapshot(&self) -> BasisSnapshot {
        BasisSnapshot {
            stats: self
                .eng
                .stat
                .iter()
                .map(|s| match s {
                    Stat::Lower => 0,
                    Stat::Upper => 1,
                    Stat::Basic => 2,
                })
                .collect(),
        }
    }

    /// Restore a snapshot, replacing differing basic columns one pivot at a
    /// time. Returns false when the target basis cannot be reconstructed;
    /// the caller should then solve cold.
    pub fn load_snapshot(&mut self, snap: &BasisSnapshot) -> bool {
        if !self.have_basis {
            return false;
        }
        let n = self.eng.n_cols();
        if snap.stats.len() > n {
            return false;
        }
        // Rows added after the snapshot keep their slacks basic.
        let target: Vec<Stat> = (0..n)
            .map(|j| match snap.stats.get(j) {
                Some(0) => Stat::Lower,
                Some(1) => Stat::Upper,
                Some(_) => Stat::Basic,
                None => Stat::Basic,
            })
            .collect();
        let want_basic: BTreeSet<usize> = (0..n).filter(|&j| target[j] == Stat::Basic).collect();
        if want_basic.len() != self.eng.m {
            return false;
        }
        let have_basic: BTreeSet<usize> =
            self.eng.basic.iter().map(|&c| c as usize).collect();
        let entering: Vec<usize> = want_basic.difference(&have_basic).copied().collect();
        let mut removable: BTreeSet<usize> = (0..self.eng.m)
            .filter(|&pos| !want_basic.contains(&(self.eng.basic[pos] as usize)))
            .collect();
        for j in entering {
            let alpha = self.eng.ftran(j);
            let mut best: Option<(usize, f64)> = None;
            for &pos in &removable {
                let a = alpha[pos].abs();
                if a > 1e-7 && best.map_or(true, |(_, b)| a > b) {
                    best = Some((pos, a));
                }
            }
            let Some((pos, _)) = best else {
                return false;
            };
            self.eng.stat[self.eng.basic[pos] as usize] = Stat::Lower;
            self.eng.stat[j] = Stat::Basic;
            self.eng.basic[pos] = j as u32;
            self.eng.update_binv(pos, &alpha);
            removable.remove(&pos);
        }
        // Bound sides for the nonbasic columns.
        for j in 0..n {
            if target[j] != Stat::Basic {
                self.eng.stat[j] = target[j];
            }
        }
        self.eng.recompute_x();
        true
    }
}

/// One-shot cold solve.
pub fn solve_lp(p: &LinProgram) -> Result<(LpOutcome, Vec<f64>), String> {
    let mut s = LpSolver::new(p)?;
    let out = s.solve_cold();
    Ok((out, s.values().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn lp(
        n: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        objective: Vec<f64>,
        rows: Vec<LpRow>,
    ) -> LinProgram {
        LinProgram {
            n_vars: n,
            lower,
            upper,
            objective,
            obj_offset: 0.0,
            rows,
        }
    }

    fn le(coeffs: Vec<(usize, f64)>, rhs: f64) -> LpRow {
        LpRow {
            coeffs,
            kind: RowKind::Le,
            rhs,
        }
    }

    fn eq(coeffs: Vec<(usize, f64)>, rhs: f64) -> LpRow {
        LpRow {
            coeffs,
            kind: RowKind::Eq,
            rhs,
        }
    }

    #[test]
    fn single_variable_box() {
        // min -x, 0 <= x, x <= 3.
        let p = lp(
            1,
            vec![0.0],
            vec![f64::INFINITY],
            vec![-1.0],
            vec![le(vec![(0, 1.0)], 3.0)],
        );
        let (out, x) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert_eq!(out.objective, -3.0);
        assert_eq!(x, vec![3.0]);
    }

    #[test]
    fn infeasible_row_against_bounds() {
        // x >= 2 by bound, x <= 1 by row.
        let p = lp(
            1,
            vec![2.0],
            vec![f64::INFINITY],
            vec![1.0],
            vec![le(vec![(0, 1.0)], 1.0)],
        );
        let (out, _) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction() {
        let p = lp(1, vec![0.0], vec![f64::INFINITY], vec![-1.0], vec![]);
        let (out, _) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_rows_and_negative_costs() {
        // min x0 - 2 x1, x0 + x1 = 1, x in [0, 1]^2 -> x = (0, 1).
        let p = lp(
            2,
            vec![0.0; 2],
            vec![1.0; 2],
            vec![1.0, -2.0],
            vec![eq(vec![(0, 1.0), (1, 1.0)], 1.0)],
        );
        let (out, x) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 2.0).abs() < 1e-9);
        assert!((x[0] - 0.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classic_two_by_two() {
        // max 3a + 5b s.t. a <= 4, 2b <= 12, 3a + 2b <= 18 -> (2, 6), 36.
        let p = lp(
            2,
            vec![0.0; 2],
            vec![f64::INFINITY; 2],
            vec![-3.0, -5.0],
            vec![
                le(vec![(0, 1.0)], 4.0),
                le(vec![(1, 2.0)], 12.0),
                le(vec![(0, 3.0), (1, 2.0)], 18.0),
            ],
        );
        let (out, x) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn warm_resolve_after_cut_and_bound_change() {
        let p = lp(
            2,
            vec![0.0; 2],
            vec![f64::INFINITY; 2],
            vec![-1.0, -1.0],
            vec![le(vec![(0, 1.0), (1, 1.0)], 4.0)],
        );
        let mut s = LpSolver::new(&p).unwrap();
        let out = s.solve_cold();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 4.0).abs() < 1e-9);

        s.add_le_row(vec![(0, 1.0)], 1.0);
        let out = s.resolve();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 4.0).abs() < 1e-9); // still x0+x1 = 4

        s.add_le_row(vec![(1, 1.0)], 2.0);
        let out = s.resolve();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 3.0).abs() < 1e-9);

        s.set_var_bounds(0, 0.0, 0.0);
        let out = s.resolve();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 2.0).abs() < 1e-9);

        // Loosen back and warm-solve again (dual start is then primal
        // feasible already; the primal cleanup must still move).
        s.set_var_bounds(0, 0.0, 1.0);
        let out = s.resolve();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 3.0).abs() < 1e-9);
    }

    #[test]
    fn snapshot_round_trip_restores_the_optimum() {
        let p = lp(
            3,
            vec![0.0; 3],
            vec![10.0; 3],
            vec![-2.0, -3.0, -1.0],
            vec![
                le(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 8.0),
                le(vec![(0, 1.0), (1, 2.0)], 10.0),
            ],
        );
        let mut s = LpSolver::new(&p).unwrap();
        assert_eq!(s.solve_cold().status, LpStatus::Optimal);
        let snap = s.snapshot();
        let obj = s.objective_value();

        // Perturb: fix a variable, re-solve, then restore.
        s.set_var_bounds(1, 0.0, 0.0);
        assert_eq!(s.resolve().status, LpStatus::Optimal);
        assert!(s.objective_value() > obj);

        s.set_var_bounds(1, 0.0, 10.0);
        assert!(s.load_snapshot(&snap));
        let out = s.resolve();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective - obj).abs() < 1e-9);
    }

    #[test]
    fn fixed_variables_are_respected() {
        let p = lp(
            2,
            vec![0.5, 0.0],
            vec![0.5, 1.0],
            vec![1.0, 1.0],
            vec![eq(vec![(0, 1.0), (1, 1.0)], 1.0)],
        );
        let (out, x) = solve_lp(&p).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert_eq!(x[0], 0.5);
        assert!((x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn random_programs_with_known_feasible_points() {
        // Rows are built to keep a sampled point feasible, so the solver
        // must find something at least as good.
        let mut rng = SplitMix64::new(0x5eed);
        for case in 0..40 {
            let n = 2 + (rng.next_u64() % 5) as usize;
            let x0: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 2.0)).collect();
            let cost: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut rows = Vec::new();
            for _ in 0..(1 + rng.next_u64() % 6) {
                let coeffs: Vec<(usize, f64)> = (0..n)
                    .map(|j| (j, rng.uniform(-1.0, 1.0)))
                    .filter(|&(_, v)| v.abs() > 0.1)
                    .collect();
                if coeffs.is_empty() {
                    continue;
                }
                let lhs: f64 = coeffs.iter().map(|&(j, v)| v * x0[j]).sum();
                rows.push(le(coeffs, lhs + rng.uniform(0.0, 1.0)));
            }
            let p = lp(n, vec![0.0; n], vec![2.0; n], cost.clone(), rows);
            let (out, x) = solve_lp(&p).unwrap();
            assert_eq!(out.status, LpStatus::Optimal, "case {case}");
            let ref_obj: f64 = cost.iter().zip(&x0).map(|(c, v)| c * v).sum();
            assert!(
                out.objective <= ref_obj + 1e-7,
                "case {case}: {} vs reference {ref_obj}",
                out.objective
            );
            // The returned point satisfies every row.
            for row in &p.rows {
                let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
                assert!(lhs <= row.rhs + 1e-6, "case {case}");
            }
        }
    }

    #[test]
    fn determinism_same_pivots_same_answer() {
        let p = lp(
            3,
            vec![0.0; 3],
            vec![5.0; 3],
            vec![-1.0, -2.0, -3.0],
            vec![
                le(vec![(0, 2.0), (1, 1.0), (2, 1.0)], 10.0),
                le(vec![(0, 1.0), (1, 3.0), (2, 2.0)], 15.0),
            ],
        );
        let (a, xa) = solve_lp(&p).unwrap();
        let (b, xb) = solve_lp(&p).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(xa, xb);
    }
}
