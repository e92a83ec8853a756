//! Mixed-binary conic solver: outer approximation plus branch and bound.
//!
//! The continuous relaxation keeps the linear rows and replaces each cone
//! with an initial polyhedral sleeve; violated cones are then cut off by
//! supporting hyperplanes until the relaxation point satisfies every cone
//! to tolerance. Branching fixes binary variables; each node re-solves the
//! relaxation warm from its parent basis with the dual simplex. All cuts
//! are globally valid, so a single grow-only pool is shared across the
//! tree (and across threads).
//!
//! With `threads = 1` (the default) the search is deterministic: node
//! order, cut order, and pivot order are all fixed functions of the input.

mod bb;
mod lp;
mod oa;

pub use bb::solve;
pub use lp::{
    solve_lp, BasisSnapshot, LinProgram, LpOutcome, LpRow, LpSolver, LpStatus, RowKind,
};
pub use oa::root_bound;

use crate::model::{Defect, ModelError, PointAssignment};
use serde::Serialize;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("model failed validation ({0:?})")]
    InvalidModel(Vec<Defect>),
    #[error("the continuous relaxation is unbounded")]
    Unbounded,
    #[error("the continuous relaxation is infeasible")]
    InfeasibleRelaxation,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSelection {
    /// Process the open node with the weakest bound first; ties in
    /// first-in order.
    BestBound,
    /// Last-in, first-out.
    DepthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branching {
    /// Branch on the binary farthest from an integer; ties by lowest id.
    MostFractional,
    /// Branch on the binary with the best observed bound movement, seeded
    /// by fractionality while untrained.
    PseudoCost,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub threads: usize,
    /// Maximum nodes to process; 0 stops after the root bound computation.
    pub node_limit: u64,
    pub time_limit: Option<Duration>,
    pub abs_gap: f64,
    /// Relative optimality gap; the default 1e-5 is 0.001%.
    pub rel_gap: f64,
    /// Cutting-round budget per node.
    pub max_oa_rounds: usize,
    pub node_selection: NodeSelection,
    pub branching: Branching,
    /// Shuffles exact branching ties (deterministically per value);
    /// 0 keeps the plain lowest-index tie order.
    pub seed: u64,
    /// Emit a progress line every this many nodes; 0 disables.
    pub log_every: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            threads: 1,
            node_limit: u64::MAX,
            time_limit: None,
            abs_gap: 1e-9,
            rel_gap: 1e-5,
            max_oa_rounds: 50,
            node_selection: NodeSelection::BestBound,
            branching: Branching::MostFractional,
            seed: 0,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Proven optimal within the configured gaps.
    Optimal,
    /// Stopped by the node limit.
    GapLimit,
    /// Stopped by the time limit.
    TimeLimit,
    Infeasible,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Incumbent objective, if any integral point was found.
    pub objective: Option<f64>,
    pub best_point: Option<PointAssignment>,
    /// Global lower bound at termination.
    pub bound: f64,
    /// `(objective - bound) / max(|objective|, 1e-10)`; absent without an
    /// incumbent.
    pub gap: Option<f64>,
    pub nodes: u64,
    pub cuts: u64,
    pub lp_iterations: u64,
    pub wall_time: Duration,
    /// Continuous relaxation bound computed before branching.
    pub root_bound: f64,
}

impl SolveResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status.to_string(),
            "objective": self.objective,
            "bound": self.bound,
            "gap": self.gap,
            "nodes": self.nodes,
            "cuts": self.cuts,
            "lp_iterations": self.lp_iterations,
            "wall_time_s": self.wall_time.as_secs_f64(),
            "root_bound": self.root_bound,
        })
    }
}
