//! Outer approximation of the cone rows over the LP relaxation.
//!
//! Every cone starts with a polyhedral sleeve (`|g_t| <= rhs` per norm
//! component plus `rhs >= 0`), and each round adds one supporting
//! hyperplane per violated cone at the current LP point. Cuts are globally
//! valid, deduplicated by a scale-normalized rounded key, and kept in a
//! grow-only pool so branch-and-bound nodes and threads can share them.

use std::collections::BTreeMap;

use super::lp::{LinProgram, LpRow, LpSolver, LpStatus, RowKind};
use super::SolverError;
use crate::conic::{
    form2_to_form1, gradient_cut, soc_residual, ConicError, LinExpr, SecondaryForm,
    SocConstraintPrimary,
};
use crate::model::{validate, ConicModel, VarKind};

/// Flatten an expression into sparse LP coefficients plus its constant.
fn expr_parts(e: &LinExpr) -> (Vec<(usize, f64)>, f64) {
    let coeffs = e.terms().map(|(v, c)| (v.index(), c)).collect();
    (coeffs, e.constant())
}

/// `expr <= 0` as an LP row.
fn le_row(e: &LinExpr) -> LpRow {
    let (coeffs, c) = expr_parts(e);
    LpRow {
        coeffs,
        kind: RowKind::Le,
        rhs: -c,
    }
}

/// The cone geometry the solver enforces. Models from the builders carry
/// norm-form rows; a model carrying only quadratic-form rows is converted,
/// which is valid because validation guarantees nonnegative bound sides.
pub(crate) fn enforced_cones(m: &ConicModel) -> Vec<SocConstraintPrimary> {
    if !m.soc_primary().is_empty() {
        return m.soc_primary().to_vec();
    }
    m.soc_secondary()
        .iter()
        .filter_map(|c| {
            let f1 = match c.form {
                SecondaryForm::FormI => c.clone(),
                SecondaryForm::FormII => form2_to_form1(c).ok()?,
            };
            Some(SocConstraintPrimary {
                norm_rows: f1.quad_rows,
                rhs: f1.y,
            })
        })
        .collect()
}

/// The LP relaxation: variable bounds (binaries relaxed into their unit
/// box), linear rows, and the initial sleeve rows for `cones`.
pub(crate) fn base_lp(m: &ConicModel, cones: &[SocConstraintPrimary]) -> LinProgram {
    let n = m.n_vars();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for v in m.variables() {
        lower.push(v.lower);
        upper.push(v.upper);
        debug_assert!(v.kind != VarKind::Binary || (v.lower >= 0.0 && v.upper <= 1.0));
    }
    let mut objective = vec![0.0; n];
    for (v, c) in m.objective().terms() {
        objective[v.index()] = c;
    }
    let mut rows = Vec::new();
    for e in m.linear_eqs() {
        let (coeffs, c) = expr_parts(e);
        rows.push(LpRow {
            coeffs,
            kind: RowKind::Eq,
            rhs: -c,
        });
    }
    for e in m.linear_ineqs() {
        rows.push(le_row(e));
    }
    for cone in cones {
        for g in &cone.norm_rows {
            rows.push(le_row(&g.minus(&cone.rhs)));
            rows.push(le_row(&g.scaled(-1.0).minus(&cone.rhs)));
        }
        rows.push(le_row(&cone.rhs.scaled(-1.0)));
    }
    LinProgram {
        n_vars: n,
        lower,
        upper,
        objective,
        obj_offset: m.objective().constant(),
        rows,
    }
}

/// Cut rows keyed for duplicate detection: coefficients are normalized to
/// unit max magnitude and rounded, so the same supporting hyperplane found
/// at slightly different points collapses to one row. Ordinary `BTreeSet`
/// keys keep runs reproducible.
type CutKey = (Vec<(u32, i64)>, i64);

pub(crate) struct CutPool {
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    keys: BTreeMap<CutKey, usize>,
    /// Rows beyond this are refused. Worker LPs activate pool rows as they
    /// become violated and their basis updates cost quadratic time in the
    /// row count, so an unbounded pool can throttle the whole search.
    cap: usize,
}

impl Default for CutPool {
    fn default() -> CutPool {
        CutPool {
            rows: Vec::new(),
            keys: BTreeMap::new(),
            cap: usize::MAX,
        }
    }
}

fn cut_key(coeffs: &[(usize, f64)], rhs: f64) -> Option<CutKey> {
    let maxc = coeffs.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
    if maxc == 0.0 {
        return None;
    }
    let q = |v: f64| (v / maxc * 1e9).round() as i64;
    Some((
        coeffs.iter().map(|&(j, v)| (j as u32, q(v))).collect(),
        q(rhs),
    ))
}

impl CutPool {
    pub fn new() -> CutPool {
        CutPool::default()
    }

    pub fn set_cap(&mut self, cap: usize) {
        self.cap = cap;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Add `expr <= 0` if no equivalent row is present and the cap allows.
    pub fn try_add(&mut self, expr: &LinExpr) -> CutAdd {
        let (coeffs, c) = expr_parts(expr);
        let Some(key) = cut_key(&coeffs, -c) else {
            return CutAdd::Refused;
        };
        if let Some(&i) = self.keys.get(&key) {
            return CutAdd::Known(i);
        }
        if self.rows.len() >= self.cap {
            return CutAdd::Refused;
        }
        self.keys.insert(key, self.rows.len());
        self.rows.push((coeffs, -c));
        CutAdd::New(self.rows.len() - 1)
    }

    /// Pool rows violated at `x` and not yet flagged in `in_lp`.
    pub fn violated(&self, x: &[f64], in_lp: &[bool], tol: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, (coeffs, rhs)) in self.rows.iter().enumerate() {
            if in_lp.get(i).copied().unwrap_or(false) {
                continue;
            }
            let lhs: f64 = coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            if lhs - rhs > tol {
                out.push(i);
            }
        }
        out
    }

    pub fn fetch(&self, idx: usize) -> (Vec<(usize, f64)>, f64) {
        self.rows[idx].clone()
    }
}

/// Where a generated cut ended up in the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum CutAdd {
    /// Fresh row at this index.
    New(usize),
    /// An equivalent row already sits at this index.
    Known(usize),
    /// Degenerate row, or the pool is at its cap.
    Refused,
}

/// Pool access used by the cutting loop, either exclusive or behind a lock.
pub(crate) trait PoolAccess {
    fn try_add(&mut self, expr: &LinExpr) -> CutAdd;
    fn violated(&self, x: &[f64], in_lp: &[bool], tol: f64) -> Vec<usize>;
    fn fetch(&self, idx: usize) -> (Vec<(usize, f64)>, f64);
}

impl PoolAccess for CutPool {
    fn try_add(&mut self, expr: &LinExpr) -> CutAdd {
        CutPool::try_add(self, expr)
    }
    fn violated(&self, x: &[f64], in_lp: &[bool], tol: f64) -> Vec<usize> {
        CutPool::violated(self, x, in_lp, tol)
    }
    fn fetch(&self, idx: usize) -> (Vec<(usize, f64)>, f64) {
        CutPool::fetch(self, idx)
    }
}

pub(crate) struct SharedPool<'a>(pub &'a std::sync::Mutex<CutPool>);

impl PoolAccess for SharedPool<'_> {
    fn try_add(&mut self, expr: &LinExpr) -> CutAdd {
        self.0.lock().unwrap().try_add(expr)
    }
    fn violated(&self, x: &[f64], in_lp: &[bool], tol: f64) -> Vec<usize> {
        self.0.lock().unwrap().violated(x, in_lp, tol)
    }
    fn fetch(&self, idx: usize) -> (Vec<(usize, f64)>, f64) {
        self.0.lock().unwrap().fetch(idx)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct OaParams {
    pub tol: f64,
    pub max_rounds: usize,
    /// Stop as soon as the LP objective reaches this value. Any round's
    /// optimum already bounds the node from below, so a caller that only
    /// needs to compare against an incumbent can skip the remaining rounds.
    pub cutoff: Option<f64>,
    /// Cuts added per round: only the most violated cones get one.
    pub max_cuts: usize,
}

impl OaParams {
    pub fn new(tol: f64, max_rounds: usize) -> OaParams {
        OaParams {
            tol,
            max_rounds,
            cutoff: None,
            max_cuts: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum OaEnd {
    /// LP optimal and every cone within tolerance.
    Converged { violation: f64 },
    /// LP optimal but cones still violated after the round budget (or all
    /// fresh cuts were duplicates). The LP objective is still a valid
    /// bound, only weaker.
    CutBudget { violation: f64 },
    /// LP optimal with objective at or above the requested cutoff.
    Cutoff,
    Infeasible,
    Unbounded,
    Stalled,
}

/// Mark pool row `idx` active in this LP, appending the row if needed.
fn activate(lp: &mut LpSolver, pool: &dyn PoolAccess, act: &mut Vec<bool>, idx: usize) -> bool {
    if act.len() <= idx {
        act.resize(idx + 1, false);
    }
    if act[idx] {
        return false;
    }
    let (coeffs, rhs) = pool.fetch(idx);
    lp.add_le_row(coeffs, rhs);
    act[idx] = true;
    true
}

/// Alternate LP re-solves with supporting-hyperplane rounds until every
/// cone holds to `p.tol`. Fresh cuts go through the pool, and pool rows
/// other workers produced are pulled in lazily, only once the current LP
/// point violates them: every pool row in the LP makes each basis update a
/// little slower, so breadth is rationed.
///
/// `act` is this LP's record of which pool rows it already carries; it must
/// accompany the LP across calls.
pub(crate) fn oa_loop(
    lp: &mut LpSolver,
    act: &mut Vec<bool>,
    cones: &[SocConstraintPrimary],
    pool: &mut dyn PoolAccess,
    p: OaParams,
) -> Result<OaEnd, SolverError> {
    let mut out = lp.resolve();
    let mut rounds = 0usize;
    loop {
        match out.status {
            LpStatus::Infeasible => return Ok(OaEnd::Infeasible),
            LpStatus::Unbounded => return Ok(OaEnd::Unbounded),
            LpStatus::Stalled => return Ok(OaEnd::Stalled),
            LpStatus::Optimal => {}
        }
        if let Some(c) = p.cutoff {
            if lp.objective_value() >= c {
                return Ok(OaEnd::Cutoff);
            }
        }
        let x = lp.values().to_vec();
        // Known rows first: activating one is cheaper than separating anew.
        let known = pool.violated(&x, act, p.tol);
        if !known.is_empty() {
            for idx in known {
                activate(lp, pool, act, idx);
            }
            out = lp.resolve();
            continue;
        }
        let mut worst = 0.0f64;
        let mut violated = Vec::new();
        for (ci, cone) in cones.iter().enumerate() {
            let r = soc_residual(cone, &x).map_err(|e| SolverError::Numerical(e.to_string()))?;
            worst = worst.max(r);
            if r > p.tol {
                violated.push((r, ci));
            }
        }
        if violated.is_empty() {
            return Ok(OaEnd::Converged { violation: worst });
        }
        if rounds >= p.max_rounds {
            return Ok(OaEnd::CutBudget { violation: worst });
        }
        log::trace!(
            target: "qconic::solver",
            "cut round {rounds}: {} violated, worst {worst:.3e}, obj {:.9}, {} lp iterations",
            violated.len(),
            lp.objective_value(),
            lp.iterations()
        );
        if violated.len() > p.max_cuts {
            violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            violated.truncate(p.max_cuts);
        }
        let mut fresh = 0usize;
        for (_, ci) in violated {
            match gradient_cut(&cones[ci], &x) {
                Ok(expr) => match pool.try_add(&expr) {
                    CutAdd::New(idx) | CutAdd::Known(idx) => {
                        if activate(lp, pool, act, idx) {
                            fresh += 1;
                        }
                    }
                    // The pool is full; the row is still valid and this LP
                    // still needs it, so keep it as a private row.
                    CutAdd::Refused => {
                        let (coeffs, c) = expr_parts(&expr);
                        if !coeffs.is_empty() {
                            lp.add_le_row(coeffs, -c);
                            fresh += 1;
                        }
                    }
                },
                // The sleeve rows already force `rhs >= 0`, so a vanishing
                // norm at a violated point is tolerance noise; and a cone
                // that slipped under the tolerance between the scan and the
                // cut is simply skipped this round.
                Err(ConicError::DegenerateCut { .. }) | Err(ConicError::NotViolated { .. }) => {}
                Err(e) => return Err(SolverError::Numerical(e.to_string())),
            }
        }
        if fresh == 0 {
            return Ok(OaEnd::CutBudget { violation: worst });
        }
        out = lp.resolve();
        rounds += 1;
    }
}

/// Tolerance the root relaxation is cut to.
pub(crate) const ROOT_TOL: f64 = 1e-8;

/// Objective bound of the continuous relaxation (binaries relaxed to their
/// boxes), cut until every cone holds to `1e-8`.
pub fn root_bound(m: &ConicModel) -> Result<f64, SolverError> {
    let defects = validate(m);
    if !defects.is_empty() {
        return Err(SolverError::InvalidModel(defects));
    }
    let cones = enforced_cones(m);
    let base = base_lp(m, &cones);
    let mut lp = LpSolver::new(&base).map_err(SolverError::Numerical)?;
    let mut pool = CutPool::new();
    let mut act = Vec::new();
    let end = oa_loop(
        &mut lp,
        &mut act,
        &cones,
        &mut pool,
        OaParams::new(ROOT_TOL, 100_000),
    )?;
    match end {
        OaEnd::Converged { .. } | OaEnd::CutBudget { .. } => Ok(lp.objective_value()),
        OaEnd::Cutoff => unreachable!("no cutoff was requested"),
        OaEnd::Infeasible => Err(SolverError::InfeasibleRelaxation),
        OaEnd::Unbounded => Err(SolverError::Unbounded),
        OaEnd::Stalled => Err(SolverError::Numerical("simplex stalled at the root".into())),
    }
}
