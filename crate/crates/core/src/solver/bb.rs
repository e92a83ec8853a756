//! Branch and bound over the binary variables.
//!
//! Each node re-solves the cut LP warm from its parent basis, runs a
//! bounded cutting pass, and either prunes, records an incumbent, or
//! branches. Candidate incumbents are re-solved with the binaries fixed at
//! their rounded values and polished to a tight cone tolerance, then
//! admitted only if the true model accepts the point.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use super::lp::{BasisSnapshot, LpSolver};
use super::oa::{base_lp, enforced_cones, oa_loop, CutPool, OaEnd, OaParams, SharedPool, ROOT_TOL};
use super::{
    Branching, NodeSelection, SolveResult, SolveStatus, SolverConfig, SolverError,
};
use crate::conic::{SocConstraintPrimary, VarId};
use crate::model::{eval_feasible, validate, ConicModel, PointAssignment};

const NODE_TOL: f64 = 1e-7;
const POLISH_TOL: f64 = 1e-9;
const POLISH_ROUNDS: usize = 400;
const ROOT_ROUNDS: usize = 200;
/// Cuts per node round; only the deepest violations are separated.
const NODE_CUT_LIMIT: usize = 12;
/// Shared-pool ceiling. Beyond it nodes still bound and prune off the
/// accumulated relaxation, they just stop making every worker LP taller.
const POOL_CAP: usize = 2500;
/// A relaxation value this close to 0 or 1 counts as integral.
const INT_TOL: f64 = 1e-6;
/// Tolerance for admitting an incumbent against the true model.
const EVAL_TOL: f64 = 1e-6;

/// Map key ordering nodes by `(bound, sequence)` under total order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, u64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// How a node reached the pseudocost table.
#[derive(Debug, Clone, Copy)]
struct BranchTrace {
    ord: usize,
    /// Distance the branched variable moved from its relaxation value.
    dist: f64,
    upward: bool,
    parent_bound: f64,
}

#[derive(Debug, Clone)]
struct Node {
    /// Per-binary-ordinal state: 0 free, 1 fixed at zero, 2 fixed at one.
    fixings: Vec<u8>,
    bound: f64,
    depth: u32,
    snapshot: Option<Arc<BasisSnapshot>>,
    trace: Option<BranchTrace>,
}

#[derive(Debug, Default)]
struct PcTable {
    down: Vec<(f64, u64)>,
    up: Vec<(f64, u64)>,
}

impl PcTable {
    fn new(n: usize) -> PcTable {
        PcTable {
            down: vec![(0.0, 0); n],
            up: vec![(0.0, 0); n],
        }
    }

    fn record(&mut self, t: &BranchTrace, child_bound: f64) {
        let gain = (child_bound - t.parent_bound).max(0.0) / t.dist.max(1e-6);
        let slot = if t.upward {
            &mut self.up[t.ord]
        } else {
            &mut self.down[t.ord]
        };
        slot.0 += gain;
        slot.1 += 1;
    }

    fn avg(slot: (f64, u64)) -> f64 {
        if slot.1 == 0 {
            1.0
        } else {
            slot.0 / slot.1 as f64
        }
    }
}

struct Incumbent {
    objective: f64,
    point: Vec<f64>,
}

struct Open {
    map: std::collections::BTreeMap<Key, Node>,
    seq: u64,
    active: usize,
    active_bounds: std::collections::BTreeMap<usize, f64>,
    /// Insertion-ordered keys. Until a first incumbent exists nothing can
    /// prune, so workers plunge depth-first along the newest branch (an
    /// incumbent hunt); afterwards selection reverts to the map order and
    /// stale entries here are simply never read again.
    dive: Vec<Key>,
}

struct Shared<'m> {
    model: &'m ConicModel,
    binaries: Vec<VarId>,
    /// Relaxation box of each binary when free.
    binary_box: Vec<(f64, f64)>,
    cones: Vec<SocConstraintPrimary>,
    base: super::lp::LinProgram,
    open: Mutex<Open>,
    cv: Condvar,
    incumbent: Mutex<Option<Incumbent>>,
    pool: Mutex<CutPool>,
    pc: Mutex<PcTable>,
    nodes: AtomicU64,
    lp_iterations: AtomicU64,
    stop: AtomicBool,
    /// Why the search stopped; `None` after a natural exhaustion.
    stop_status: Mutex<Option<SolveStatus>>,
    error: Mutex<Option<SolverError>>,
}

impl Shared<'_> {
    fn cutoff(&self, cfg: &SolverConfig) -> Option<f64> {
        let inc = self.incumbent.lock().unwrap();
        inc.as_ref()
            .map(|i| i.objective - cfg.abs_gap.max(cfg.rel_gap * i.objective.abs()))
    }

    fn halt(&self, status: Option<SolveStatus>) {
        if let Some(s) = status {
            let mut slot = self.stop_status.lock().unwrap();
            if slot.is_none() {
                *slot = Some(s);
            }
        }
        self.stop.store(true, Ordering::SeqCst);
        self.cv.notify_all();
    }

    fn fail(&self, e: SolverError) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
        drop(slot);
        self.halt(None);
    }

}

/// Screen a caller-supplied start point: right arity, integral binaries,
/// and feasibility for the true model. A point failing any check is simply
/// dropped; a start is a hint, never a requirement.
fn screen_start(m: &ConicModel, binaries: &[VarId], p: &PointAssignment) -> Option<Incumbent> {
    if p.values.len() != m.n_vars() {
        return None;
    }
    let mut vals = p.values.clone();
    for &b in binaries {
        let v = vals[b.index()];
        if (v - v.round()).abs() > INT_TOL {
            return None;
        }
        vals[b.index()] = v.round();
    }
    let pa = PointAssignment::new(vals);
    match eval_feasible(m, &pa, EVAL_TOL) {
        Ok(rep) if rep.feasible => {
            let obj = m.objective().eval(&pa.values).ok()?;
            log::info!(target: "qconic::solver", "start point accepted at {obj:.9}");
            Some(Incumbent {
                objective: obj,
                point: pa.values,
            })
        }
        _ => None,
    }
}

fn node_key(cfg: &SolverConfig, n: &Node, seq: u64) -> Key {
    match cfg.node_selection {
        NodeSelection::BestBound => Key(n.bound, seq),
        NodeSelection::DepthFirst => Key(0.0, u64::MAX - seq),
    }
}

/// Deterministic per-seed rank used to shuffle exact score ties.
fn tie_rank(seed: u64, ord: usize) -> u64 {
    let mut z = seed ^ (ord as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn select_branch_var(
    cfg: &SolverConfig,
    shared: &Shared<'_>,
    free: &[usize],
    point: &[f64],
) -> usize {
    // Scores within this window count as tied; seed 0 keeps the first
    // (lowest ordinal), other seeds pick the tied candidate of least rank.
    let pick = |scored: &mut dyn Iterator<Item = (usize, f64)>| {
        let (mut best, mut best_s) = scored.next().expect("a free binary to branch on");
        for (o, s) in scored {
            let better = s > best_s + 1e-12
                || ((s - best_s).abs() <= 1e-12
                    && cfg.seed != 0
                    && tie_rank(cfg.seed, o) < tie_rank(cfg.seed, best));
            if better {
                best = o;
                best_s = s.max(best_s);
            }
        }
        best
    };
    match cfg.branching {
        Branching::MostFractional => {
            let frac = |&ord: &usize| {
                let v = point[shared.binaries[ord].index()];
                (ord, (v - v.round()).abs())
            };
            pick(&mut free.iter().map(frac))
        }
        Branching::PseudoCost => {
            let pc = shared.pc.lock().unwrap();
            let score = |&o: &usize| {
                let v = point[shared.binaries[o].index()].clamp(0.0, 1.0);
                (o, (PcTable::avg(pc.down[o]) * v) * (PcTable::avg(pc.up[o]) * (1.0 - v)))
            };
            pick(&mut free.iter().map(score))
        }
    }
}

/// Process one node; returns its children (empty when pruned or closed).
#[allow(clippy::too_many_arguments)]
fn process_node(
    shared: &Shared<'_>,
    cfg: &SolverConfig,
    lp: &mut LpSolver,
    act: &mut Vec<bool>,
    node: &Node,
) -> Result<Vec<Node>, SolverError> {
    // Install the node's binary fixings (dense, so previous node state is
    // fully overwritten) and warm-start from the parent basis.
    for (ord, &f) in node.fixings.iter().enumerate() {
        let id = shared.binaries[ord].index();
        let (lo, up) = match f {
            1 => (0.0, 0.0),
            2 => (1.0, 1.0),
            _ => shared.binary_box[ord],
        };
        lp.set_var_bounds(id, lo, up);
    }
    if let Some(snap) = &node.snapshot {
        let _ = lp.load_snapshot(snap);
    }
    let mut pool = SharedPool(&shared.pool);
    let end = oa_loop(
        lp,
        act,
        &shared.cones,
        &mut pool,
        OaParams {
            cutoff: shared.cutoff(cfg),
            max_cuts: NODE_CUT_LIMIT,
            ..OaParams::new(NODE_TOL, cfg.max_oa_rounds)
        },
    )?;
    let (node_bound, lp_ok) = match end {
        OaEnd::Converged { .. } | OaEnd::CutBudget { .. } | OaEnd::Cutoff => {
            (node.bound.max(lp.objective_value()), true)
        }
        OaEnd::Infeasible => {
            if let Some(t) = &node.trace {
                // An infeasible child is a maximal bound improvement;
                // credit it so pseudocosts steer toward such variables.
                shared.pc.lock().unwrap().record(t, node.bound + 1.0);
            }
            return Ok(Vec::new());
        }
        OaEnd::Unbounded => return Err(SolverError::Unbounded),
        // Numerical dead end: keep the parent bound and branch blind.
        OaEnd::Stalled => (node.bound, false),
    };
    if let Some(t) = &node.trace {
        shared.pc.lock().unwrap().record(t, node_bound);
    }
    if let Some(cut) = shared.cutoff(cfg) {
        if node_bound >= cut {
            return Ok(Vec::new());
        }
    }

    let free: Vec<usize> = (0..node.fixings.len())
        .filter(|&o| node.fixings[o] == 0)
        .collect();

    if lp_ok {
        let point = lp.values().to_vec();
        let all_integral = free.iter().all(|&o| {
            let v = point[shared.binaries[o].index()];
            (v - v.round()).abs() <= INT_TOL
        });
        if all_integral {
            // Candidate: pin every free binary at its rounded value and
            // polish the continuous part against the cones.
            for &o in &free {
                let id = shared.binaries[o].index();
                let v = point[id].round();
                lp.set_var_bounds(id, v, v);
            }
            // The polish runs against a private pool: the shared pool's
            // dedup keys reject near-duplicates of cuts other nodes already
            // produced, which can starve the last rounds of tightening right
            // at the solution. Private rows stay in this worker's relaxation
            // and are valid everywhere, so nothing leaks.
            let mut local_pool = CutPool::new();
            let mut local_act = Vec::new();
            let pend = oa_loop(
                lp,
                &mut local_act,
                &shared.cones,
                &mut local_pool,
                OaParams {
                    cutoff: shared.cutoff(cfg),
                    ..OaParams::new(POLISH_TOL, POLISH_ROUNDS)
                },
            )?;
            match pend {
                OaEnd::Converged { .. } | OaEnd::CutBudget { .. } | OaEnd::Stalled => {
                    // Even a partially polished point can sit within the
                    // model's own tolerance; let the exact check decide.
                    let mut vals = lp.values().to_vec();
                    for ord in 0..node.fixings.len() {
                        let id = shared.binaries[ord].index();
                        vals[id] = vals[id].round();
                    }
                    let pa = PointAssignment::new(vals);
                    let report = eval_feasible(shared.model, &pa, EVAL_TOL)?;
                    if report.feasible {
                        let obj = shared
                            .model
                            .objective()
                            .eval(&pa.values)
                            .map_err(|e| SolverError::Numerical(e.to_string()))?;
                        let mut inc = shared.incumbent.lock().unwrap();
                        if inc.as_ref().map_or(true, |i| obj < i.objective) {
                            log::info!(
                                target: "qconic::solver",
                                "incumbent {obj:.9} at depth {}",
                                node.depth
                            );
                            *inc = Some(Incumbent {
                                objective: obj,
                                point: pa.values,
                            });
                        }
                        return Ok(Vec::new());
                    }
                    // The true model rejected the point; branch explicitly.
                }
                OaEnd::Unbounded => return Err(SolverError::Unbounded),
                // The pinned completion already costs at least the
                // incumbent; it cannot improve, so branch.
                OaEnd::Cutoff => {}
                // Rounding crossed a linear boundary: the fractional point
                // was an artifact of the relaxation, branch instead.
                OaEnd::Infeasible => {}
            }
        }
    }

    if free.is_empty() {
        log::warn!(
            target: "qconic::solver",
            "fully fixed node at depth {} closed without an incumbent",
            node.depth
        );
        return Ok(Vec::new());
    }
    let (bvar, frac_val) = if lp_ok {
        let point = lp.values();
        let b = select_branch_var(cfg, shared, &free, point);
        (b, point[shared.binaries[b].index()].clamp(0.0, 1.0))
    } else {
        (free[0], 0.5)
    };
    let snap = Arc::new(lp.snapshot());
    let child = |fix: u8, upward: bool, dist: f64| {
        let mut fixings = node.fixings.clone();
        fixings[bvar] = fix;
        Node {
            fixings,
            bound: node_bound,
            depth: node.depth + 1,
            snapshot: Some(snap.clone()),
            trace: Some(BranchTrace {
                ord: bvar,
                dist,
                upward,
                parent_bound: node_bound,
            }),
        }
    };
    // Down child first so depth-first search pops the up child (open a
    // facility before closing it).
    Ok(vec![
        child(1, false, frac_val.max(1e-6)),
        child(2, true, (1.0 - frac_val).max(1e-6)),
    ])
}

fn worker(id: usize, shared: &Shared<'_>, cfg: &SolverConfig, t0: Instant) {
    let mut lp = match LpSolver::new(&shared.base) {
        Ok(lp) => lp,
        Err(e) => {
            shared.fail(SolverError::Numerical(e));
            return;
        }
    };
    let mut act: Vec<bool> = Vec::new();
    loop {
        let node = {
            let mut open = shared.open.lock().unwrap();
            'acquire: loop {
                if shared.stop.load(Ordering::SeqCst) {
                    return;
                }
                if let Some(tl) = cfg.time_limit {
                    if t0.elapsed() >= tl {
                        drop(open);
                        shared.halt(Some(SolveStatus::TimeLimit));
                        return;
                    }
                }
                if shared.nodes.load(Ordering::SeqCst) >= cfg.node_limit {
                    drop(open);
                    shared.halt(Some(SolveStatus::GapLimit));
                    return;
                }
                let cutoff = shared.cutoff(cfg);
                let diving = cutoff.is_none();
                loop {
                    let popped = if diving {
                        loop {
                            match open.dive.pop() {
                                Some(k) => {
                                    if let Some(e) = open.map.remove_entry(&k) {
                                        break Some(e);
                                    }
                                    // Stale: taken by a best-bound pop.
                                }
                                None => break open.map.pop_first(),
                            }
                        }
                    } else {
                        open.map.pop_first()
                    };
                    let Some((_, node)) = popped else { break };
                    if let Some(c) = cutoff {
                        if node.bound >= c {
                            continue;
                        }
                    }
                    open.active += 1;
                    open.active_bounds.insert(id, node.bound);
                    break 'acquire node;
                }
                if open.active == 0 {
                    drop(open);
                    shared.halt(None);
                    return;
                }
                open = shared.cv.wait(open).unwrap();
            }
        };

        let before_iters = lp.iterations();
        let outcome = process_node(shared, cfg, &mut lp, &mut act, &node);
        shared
            .lp_iterations
            .fetch_add(lp.iterations() - before_iters, Ordering::Relaxed);
        let processed = shared.nodes.fetch_add(1, Ordering::SeqCst) + 1;

        {
            let mut open = shared.open.lock().unwrap();
            open.active -= 1;
            open.active_bounds.remove(&id);
            match outcome {
                Ok(children) => {
                    for ch in children {
                        open.seq += 1;
                        let key = node_key(cfg, &ch, open.seq);
                        open.map.insert(key, ch);
                        open.dive.push(key);
                    }
                }
                Err(e) => {
                    drop(open);
                    shared.fail(e);
                    return;
                }
            }
        }
        shared.cv.notify_all();

        if cfg.log_every > 0 && processed % cfg.log_every == 0 {
            let open = shared.open.lock().unwrap();
            let open_n = open.map.len();
            let bound = open
                .map
                .values()
                .map(|n| n.bound)
                .chain(open.active_bounds.values().copied())
                .fold(f64::INFINITY, f64::min);
            drop(open);
            let inc = shared
                .incumbent
                .lock()
                .unwrap()
                .as_ref()
                .map(|i| i.objective);
            log::info!(
                target: "qconic::solver",
                "nodes {processed} open {open_n} bound {bound:.6} incumbent {inc:?} cuts {}",
                shared.pool.lock().unwrap().len()
            );
        }
    }
}

/// Exact solve of a validated model. Deterministic for `threads = 1`.
pub fn solve(m: &ConicModel, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    solve_with_start(m, cfg, None)
}

/// `solve` seeded with a candidate point, typically from a problem-aware
/// heuristic. The point is screened by the exact feasibility check and, if
/// accepted, becomes the starting incumbent, so the search opens with a
/// cutoff instead of hunting for a first solution.
pub fn solve_with_start(
    m: &ConicModel,
    cfg: &SolverConfig,
    start: Option<&PointAssignment>,
) -> Result<SolveResult, SolverError> {
    let t0 = Instant::now();
    let defects = validate(m);
    if !defects.is_empty() {
        return Err(SolverError::InvalidModel(defects));
    }
    let binaries: Vec<VarId> = m.binary_ids().collect();
    let binary_box: Vec<(f64, f64)> = binaries
        .iter()
        .map(|&v| {
            let var = m.variable(v).expect("binary id from the model");
            (var.lower, var.upper)
        })
        .collect();
    let cones = enforced_cones(m);
    let base = base_lp(m, &cones);

    let warm = start.and_then(|p| screen_start(m, &binaries, p));

    // Root relaxation, cut tight; its objective is the reported root bound.
    let mut root_lp = LpSolver::new(&base).map_err(SolverError::Numerical)?;
    let mut pool = CutPool::new();
    let mut root_act = Vec::new();
    let root_end = oa_loop(
        &mut root_lp,
        &mut root_act,
        &cones,
        &mut pool,
        OaParams::new(ROOT_TOL, ROOT_ROUNDS),
    )?;
    let root_iters = root_lp.iterations();
    // The root is cut without a cap for the tightest reportable bound;
    // only the search phase rations further pool growth.
    pool.set_cap(pool.len().max(POOL_CAP));
    let root_bound = match root_end {
        OaEnd::Converged { .. } | OaEnd::CutBudget { .. } => root_lp.objective_value(),
        OaEnd::Cutoff => unreachable!("the root runs without a cutoff"),
        OaEnd::Infeasible => {
            return Ok(SolveResult {
                status: SolveStatus::Infeasible,
                objective: None,
                best_point: None,
                bound: f64::INFINITY,
                gap: None,
                nodes: 0,
                cuts: pool.len() as u64,
                lp_iterations: root_iters,
                wall_time: t0.elapsed(),
                root_bound: f64::INFINITY,
            })
        }
        OaEnd::Unbounded => return Err(SolverError::Unbounded),
        OaEnd::Stalled => {
            return Err(SolverError::Numerical("simplex stalled at the root".into()))
        }
    };
    let root_snapshot = Arc::new(root_lp.snapshot());
    drop(root_lp);

    let n_bin = binaries.len();
    let root_node = Node {
        fixings: vec![0u8; n_bin],
        bound: root_bound,
        depth: 0,
        snapshot: Some(root_snapshot),
        trace: None,
    };
    let shared = Shared {
        model: m,
        binaries,
        binary_box,
        cones,
        base,
        open: Mutex::new(Open {
            map: std::collections::BTreeMap::new(),
            seq: 0,
            active: 0,
            active_bounds: std::collections::BTreeMap::new(),
            dive: Vec::new(),
        }),
        cv: Condvar::new(),
        incumbent: Mutex::new(warm),
        pool: Mutex::new(pool),
        pc: Mutex::new(PcTable::new(n_bin)),
        nodes: AtomicU64::new(0),
        lp_iterations: AtomicU64::new(root_iters),
        stop: AtomicBool::new(false),
        stop_status: Mutex::new(None),
        error: Mutex::new(None),
    };
    {
        let mut open = shared.open.lock().unwrap();
        open.seq += 1;
        let key = node_key(cfg, &root_node, open.seq);
        open.map.insert(key, root_node);
        open.dive.push(key);
    }

    if cfg.node_limit > 0 {
        let threads = cfg.threads.max(1);
        std::thread::scope(|s| {
            for id in 0..threads {
                let shared = &shared;
                s.spawn(move || worker(id, shared, cfg, t0));
            }
        });
    } else {
        shared.halt(Some(SolveStatus::GapLimit));
    }

    if let Some(e) = shared.error.lock().unwrap().take() {
        return Err(e);
    }

    let open = shared.open.into_inner().unwrap();
    let incumbent = shared.incumbent.into_inner().unwrap();
    let stop_status = shared.stop_status.into_inner().unwrap();
    let nodes = shared.nodes.load(Ordering::SeqCst);
    let cuts = shared.pool.into_inner().unwrap().len() as u64;
    let lp_iterations = shared.lp_iterations.load(Ordering::SeqCst);
    let open_min = open
        .map
        .values()
        .map(|n| n.bound)
        .fold(f64::INFINITY, f64::min);

    let (status, objective, best_point, bound, gap) = match (stop_status, incumbent) {
        // Natural exhaustion with an incumbent: proven optimal within the
        // configured gaps.
        (None, Some(inc)) => (
            SolveStatus::Optimal,
            Some(inc.objective),
            Some(PointAssignment::new(inc.point)),
            inc.objective,
            Some(0.0),
        ),
        (None, None) => (SolveStatus::Infeasible, None, None, f64::INFINITY, None),
        (Some(st), Some(inc)) => {
            let bound = open_min.min(inc.objective).max(root_bound);
            let gap = ((inc.objective - bound) / inc.objective.abs().max(1e-10)).max(0.0);
            (
                st,
                Some(inc.objective),
                Some(PointAssignment::new(inc.point)),
                bound,
                Some(gap),
            )
        }
        (Some(st), None) => {
            let bound = if open_min.is_finite() { open_min } else { root_bound };
            (st, None, None, bound, None)
        }
    };

    Ok(SolveResult {
        status,
        objective,
        best_point,
        bound,
        gap,
        nodes,
        cuts,
        lp_iterations,
        wall_time: t0.elapsed(),
        root_bound,
    })
}
