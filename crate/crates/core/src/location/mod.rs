//! Congestion-aware facility location.
//!
//! `I` candidate sites can each be opened at one of `K` service-capacity
//! levels; `J` customers with Poisson demand must each be assigned to an
//! open site, which then behaves as a single-server queue fed by the pooled
//! demand of its customers. The objective charges establishment costs, a
//! per-site congestion cost proportional to the expected number of
//! customers present, and linear travel costs.

mod io;
mod oracle;

pub use io::{instance_from_json, instance_to_json};
pub use oracle::{brute_force, OracleResult};

use crate::queue::{self, MetricKind, QueueParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cap on the coefficient of variation `mu * sigma` per level; beyond this
/// the data is almost surely mis-scaled (benchmarks use [0.5, 3]).
pub const MAX_MU_SIGMA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationInstance {
    /// Number of candidate facility sites, `I`.
    pub facilities: usize,
    /// Number of customers, `J`.
    pub customers: usize,
    /// Number of service-capacity levels per site, `K`.
    pub levels: usize,
    /// Establishment cost, `f[i][k]`.
    pub f: Vec<Vec<f64>>,
    /// Travel cost per service from customer `j` to site `i`, `d[i][j]`.
    pub d: Vec<Vec<f64>>,
    /// Demand rate per customer, `lambda[j]`.
    pub lambda: Vec<f64>,
    /// Service rate, `mu[i][k]`.
    pub mu: Vec<Vec<f64>>,
    /// Service-time standard deviation, `sigma[i][k]`.
    pub sigma: Vec<Vec<f64>>,
    /// Congestion cost per unit time at site `i`, `w[i]`.
    pub w: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LocationError {
    #[error("instance is malformed: {0}")]
    Invalid(String),
    #[error("assignment shape does not match the instance: {0}")]
    Shape(String),
    #[error("assignment is infeasible: {}", violation_list(.0))]
    Infeasible(Vec<FeasibilityViolation>),
    #[error("instance exceeds the enumeration guard: {0}")]
    TooLarge(String),
    #[error("instance admits no feasible assignment")]
    NoFeasibleAssignment,
    #[error("instance JSON is malformed: {0}")]
    Json(String),
    #[error(transparent)]
    Queue(#[from] queue::QueueError),
}

fn violation_list(v: &[FeasibilityViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl LocationInstance {
    /// Shape, finiteness, and sign checks plus the aggregate solvability
    /// test: opening every site at its fastest level must strictly exceed
    /// total demand, otherwise no feasible assignment can exist.
    pub fn validate(&self) -> Result<(), LocationError> {
        self.check_data()?;
        let total: f64 = self.lambda.iter().sum();
        let cap: f64 = (0..self.facilities)
            .map(|i| self.mu[i].iter().cloned().fold(0.0, f64::max))
            .sum();
        if total >= cap {
            return Err(LocationError::Invalid(format!(
                "total demand {total} is not strictly below best-case capacity {cap}"
            )));
        }
        Ok(())
    }

    /// The per-value part of [`validate`], without the solvability test.
    pub(crate) fn check_data(&self) -> Result<(), LocationError> {
        let inv = |msg: String| Err(LocationError::Invalid(msg));
        let (i_n, j_n, k_n) = (self.facilities, self.customers, self.levels);
        if i_n == 0 || j_n == 0 || k_n == 0 {
            return inv(format!("empty dimension: I={i_n} J={j_n} K={k_n}"));
        }
        let check_grid = |name: &str, g: &[Vec<f64>], rows: usize, cols: usize| {
            if g.len() != rows || g.iter().any(|r| r.len() != cols) {
                return Err(LocationError::Invalid(format!(
                    "{name} must be {rows}x{cols}"
                )));
            }
            if let Some(v) = g.iter().flatten().find(|v| !v.is_finite()) {
                return Err(LocationError::Invalid(format!(
                    "{name} contains non-finite value {v}"
                )));
            }
            Ok(())
        };
        check_grid("f", &self.f, i_n, k_n)?;
        check_grid("d", &self.d, i_n, j_n)?;
        check_grid("mu", &self.mu, i_n, k_n)?;
        check_grid("sigma", &self.sigma, i_n, k_n)?;
        if self.lambda.len() != j_n {
            return inv(format!("lambda must have length {j_n}"));
        }
        if self.w.len() != i_n {
            return inv(format!("w must have length {i_n}"));
        }
        if self.f.iter().flatten().any(|&v| v < 0.0) {
            return inv("establishment costs must be nonnegative".into());
        }
        if self.d.iter().flatten().any(|&v| v < 0.0) {
            return inv("travel costs must be nonnegative".into());
        }
        if self.lambda.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return inv("demand rates must be nonnegative and finite".into());
        }
        if self.mu.iter().flatten().any(|&v| !(v > 0.0)) {
            return inv("service rates must be positive".into());
        }
        if self.sigma.iter().flatten().any(|&v| v < 0.0) {
            return inv("service-time deviations must be nonnegative".into());
        }
        if self.w.iter().any(|&v| v < 0.0) {
            return inv("congestion cost weights must be nonnegative".into());
        }
        for i in 0..i_n {
            for k in 0..k_n {
                let ms = self.mu[i][k] * self.sigma[i][k];
                if ms > MAX_MU_SIGMA {
                    return inv(format!(
                        "mu*sigma = {ms} at site {i} level {k} exceeds {MAX_MU_SIGMA}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A candidate solution: `x[i][k]` opens site `i` at level `k`,
/// `y[i][k][j]` serves customer `j` from site `i` at level `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub x: Vec<Vec<bool>>,
    pub y: Vec<Vec<Vec<bool>>>,
}

impl Assignment {
    pub fn closed(inst: &LocationInstance) -> Assignment {
        Assignment {
            x: vec![vec![false; inst.levels]; inst.facilities],
            y: vec![vec![vec![false; inst.customers]; inst.levels]; inst.facilities],
        }
    }

    /// Pooled arrival rate at site `i`, level `k`.
    pub fn load(&self, inst: &LocationInstance, i: usize, k: usize) -> f64 {
        self.y[i][k]
            .iter()
            .zip(&inst.lambda)
            .filter(|(on, _)| **on)
            .map(|(_, l)| l)
            .sum()
    }

    /// Flattened (x, y) bits, x first, both in row-major index order.
    pub(crate) fn bits(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.x.iter().flatten().copied().collect();
        out.extend(self.y.iter().flatten().flatten().copied());
        out
    }

    fn check_shape(&self, inst: &LocationInstance) -> Result<(), LocationError> {
        let ok = self.x.len() == inst.facilities
            && self.x.iter().all(|r| r.len() == inst.levels)
            && self.y.len() == inst.facilities
            && self.y.iter().all(|p| {
                p.len() == inst.levels && p.iter().all(|r| r.len() == inst.customers)
            });
        if !ok {
            return Err(LocationError::Shape(format!(
                "expected x as {}x{} and y as {}x{}x{}",
                inst.facilities, inst.levels, inst.facilities, inst.levels, inst.customers
            )));
        }
        Ok(())
    }
}

/// One reason an assignment is infeasible, named after the constraint
/// family it violates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeasibilityViolation {
    /// Customer not covered by any open (site, level).
    CustomerUnassigned { customer: usize },
    /// Customer covered more than once.
    CustomerMultiplyAssigned { customer: usize, count: usize },
    /// `y[i][k][j]` set while `x[i][k]` is not.
    AssignmentToClosed {
        customer: usize,
        facility: usize,
        level: usize,
    },
    /// Site opened at more than one level.
    MultipleLevels { facility: usize, count: usize },
    /// Pooled demand at or above the service rate (steady state needs
    /// strict inequality for the congestion cost to be finite).
    Overload {
        facility: usize,
        level: usize,
        load: f64,
        rate: f64,
    },
}

impl std::fmt::Display for FeasibilityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeasibilityViolation::CustomerUnassigned { customer } => {
                write!(f, "customer {customer} is not assigned to any facility")
            }
            FeasibilityViolation::CustomerMultiplyAssigned { customer, count } => {
                write!(f, "customer {customer} is assigned {count} times")
            }
            FeasibilityViolation::AssignmentToClosed {
                customer,
                facility,
                level,
            } => write!(
                f,
                "customer {customer} is assigned to facility {facility} level {level} which is not established"
            ),
            FeasibilityViolation::MultipleLevels { facility, count } => {
                write!(f, "facility {facility} is established at {count} levels")
            }
            FeasibilityViolation::Overload {
                facility,
                level,
                load,
                rate,
            } => write!(
                f,
                "facility {facility} at level {level} carries load {load} against rate {rate}"
            ),
        }
    }
}

/// Checks every constraint family: unique assignment per customer, service
/// only from established (site, level) pairs, at most one level per site,
/// and strict stability wherever demand pools.
pub fn check_feasible(
    inst: &LocationInstance,
    a: &Assignment,
) -> Result<Vec<FeasibilityViolation>, LocationError> {
    a.check_shape(inst)?;
    let mut out = Vec::new();
    for j in 0..inst.customers {
        let count = (0..inst.facilities)
            .flat_map(|i| (0..inst.levels).map(move |k| (i, k)))
            .filter(|&(i, k)| a.y[i][k][j])
            .count();
        if count == 0 {
            out.push(FeasibilityViolation::CustomerUnassigned { customer: j });
        } else if count > 1 {
            out.push(FeasibilityViolation::CustomerMultiplyAssigned { customer: j, count });
        }
    }
    for i in 0..inst.facilities {
        let open = a.x[i].iter().filter(|b| **b).count();
        if open > 1 {
            out.push(FeasibilityViolation::MultipleLevels {
                facility: i,
                count: open,
            });
        }
        for k in 0..inst.levels {
            if !a.x[i][k] {
                for j in 0..inst.customers {
                    if a.y[i][k][j] {
                        out.push(FeasibilityViolation::AssignmentToClosed {
                            customer: j,
                            facility: i,
                            level: k,
                        });
                    }
                }
                continue;
            }
            let load = a.load(inst, i, k);
            if load >= inst.mu[i][k] {
                out.push(FeasibilityViolation::Overload {
                    facility: i,
                    level: k,
                    load,
                    rate: inst.mu[i][k],
                });
            }
        }
    }
    Ok(out)
}

/// Expected number of customers at site `i` run at level `k` with pooled
/// arrivals `total_lambda`. Equals the closed-form queue metric exactly.
pub fn congestion_tw(
    inst: &LocationInstance,
    i: usize,
    k: usize,
    total_lambda: f64,
) -> Result<f64, LocationError> {
    let p = QueueParams::new(total_lambda, inst.mu[i][k], inst.sigma[i][k])?;
    Ok(queue::metric(MetricKind::TW, &p)?)
}

/// Objective value split by cost source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub establish: f64,
    pub waiting: f64,
    pub traveling: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.establish + self.waiting + self.traveling
    }
}

/// Objective of a feasible assignment, split by source. Rejects any
/// assignment with structural violations or pooled demand at/over a
/// service rate (the congestion term would be infinite).
pub fn evaluate_parts(
    inst: &LocationInstance,
    a: &Assignment,
) -> Result<CostBreakdown, LocationError> {
    let violations = check_feasible(inst, a)?;
    if !violations.is_empty() {
        return Err(LocationError::Infeasible(violations));
    }
    let mut establish = 0.0;
    let mut waiting = 0.0;
    let mut traveling = 0.0;
    for i in 0..inst.facilities {
        for k in 0..inst.levels {
            if !a.x[i][k] {
                continue;
            }
            establish += inst.f[i][k];
            waiting += inst.w[i] * congestion_tw(inst, i, k, a.load(inst, i, k))?;
            for j in 0..inst.customers {
                if a.y[i][k][j] {
                    traveling += inst.d[i][j] * inst.lambda[j];
                }
            }
        }
    }
    Ok(CostBreakdown {
        establish,
        waiting,
        traveling,
    })
}

pub fn evaluate(inst: &LocationInstance, a: &Assignment) -> Result<f64, LocationError> {
    Ok(evaluate_parts(inst, a)?.total())
}

/// One site, one customer, one level: f = 10, d = 0, lambda = 1, mu = 2,
/// sigma = 0.5, w = 1. The only feasible assignment costs exactly 11.
#[cfg(test)]
pub(crate) fn unit_instance() -> LocationInstance {
    LocationInstance {
        facilities: 1,
        customers: 1,
        levels: 1,
        f: vec![vec![10.0]],
        d: vec![vec![0.0]],
        lambda: vec![1.0],
        mu: vec![vec![2.0]],
        sigma: vec![vec![0.5]],
        w: vec![1.0],
        metadata: BTreeMap::new(),
    }
}

#[cfg(test)]
pub(crate) fn unit_assignment() -> Assignment {
    Assignment {
        x: vec![vec![true]],
        y: vec![vec![vec![true]]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_instance_objective_is_frozen() {
        let inst = unit_instance();
        inst.validate().unwrap();
        let a = unit_assignment();
        assert!(check_feasible(&inst, &a).unwrap().is_empty());
        let parts = evaluate_parts(&inst, &a).unwrap();
        // Establishment 10, expected customers at (1, 2, 0.5) exactly 1,
        // no travel.
        assert_eq!(parts.establish, 10.0);
        assert_eq!(parts.waiting, 1.0);
        assert_eq!(parts.traveling, 0.0);
        assert_eq!(evaluate(&inst, &a).unwrap(), 11.0);
    }

    #[test]
    fn travel_cost_shifts_the_frozen_objective() {
        let mut inst = unit_instance();
        inst.d = vec![vec![3.0]];
        assert_eq!(evaluate(&inst, &unit_assignment()).unwrap(), 14.0);
    }

    #[test]
    fn deterministic_service_objective_is_frozen() {
        let mut inst = unit_instance();
        inst.sigma = vec![vec![0.0]];
        // Expected customers at (1, 2, 0) is exactly 0.75.
        let parts = evaluate_parts(&inst, &unit_assignment()).unwrap();
        assert_eq!(parts.waiting, 0.75);
        assert_eq!(parts.total(), 10.75);
    }

    #[test]
    fn congestion_matches_direct_formula() {
        // load^2 (1 + mu^2 sigma^2) / (2 mu (mu - load)) + load / mu: the
        // same quantity rearranged around the coefficient of variation.
        let cases = [
            (1.0, 2.0, 0.5),
            (3.0, 4.0, 0.1),
            (0.5, 1.0, 1.0),
            (7.0, 9.0, 0.03),
        ];
        for (load, mu, sigma) in cases {
            let inst = LocationInstance {
                mu: vec![vec![mu]],
                sigma: vec![vec![sigma]],
                lambda: vec![load],
                ..unit_instance()
            };
            let direct = load * load * (1.0 + mu * mu * sigma * sigma)
                / (2.0 * mu * (mu - load))
                + load / mu;
            let got = congestion_tw(&inst, 0, 0, load).unwrap();
            assert!(
                (got - direct).abs() <= 1e-12 * direct.abs(),
                "({load},{mu},{sigma}): {got} vs {direct}"
            );
        }
        assert_eq!(congestion_tw(&unit_instance(), 0, 0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn violations_are_reported_precisely() {
        let inst = LocationInstance {
            facilities: 2,
            customers: 2,
            levels: 1,
            f: vec![vec![1.0], vec![1.0]],
            d: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            lambda: vec![1.0, 1.0],
            mu: vec![vec![1.5], vec![10.0]],
            sigma: vec![vec![0.0], vec![0.0]],
            w: vec![1.0, 1.0],
            metadata: BTreeMap::new(),
        };
        inst.validate().unwrap();

        // Customer 0 unassigned, customer 1 served twice, once by a closed
        // site.
        let a = Assignment {
            x: vec![vec![false], vec![true]],
            y: vec![vec![vec![false, true]], vec![vec![false, true]]],
        };
        let v = check_feasible(&inst, &a).unwrap();
        assert!(v.contains(&FeasibilityViolation::CustomerUnassigned { customer: 0 }));
        assert!(v.contains(&FeasibilityViolation::CustomerMultiplyAssigned {
            customer: 1,
            count: 2
        }));
        assert!(v.contains(&FeasibilityViolation::AssignmentToClosed {
            customer: 1,
            facility: 0,
            level: 0
        }));
        assert!(matches!(
            evaluate(&inst, &a),
            Err(LocationError::Infeasible(_))
        ));

        // Both customers on the slow site: load 2 >= 1.5.
        let b = Assignment {
            x: vec![vec![true], vec![false]],
            y: vec![vec![vec![true, true]], vec![vec![false, false]]],
        };
        let v = check_feasible(&inst, &b).unwrap();
        assert_eq!(
            v,
            vec![FeasibilityViolation::Overload {
                facility: 0,
                level: 0,
                load: 2.0,
                rate: 1.5
            }]
        );

        // Load exactly at the rate is still an overload.
        let mut at_capacity = inst.clone();
        at_capacity.mu = vec![vec![2.0], vec![10.0]];
        let v = check_feasible(&at_capacity, &b).unwrap();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], FeasibilityViolation::Overload { .. }));

        // Two levels open at one site.
        let inst2 = LocationInstance {
            levels: 2,
            f: vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            mu: vec![vec![1.5, 3.0], vec![10.0, 20.0]],
            sigma: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ..inst.clone()
        };
        let c = Assignment {
            x: vec![vec![true, true], vec![false, false]],
            y: vec![
                vec![vec![true, false], vec![false, true]],
                vec![vec![false, false], vec![false, false]],
            ],
        };
        let v = check_feasible(&inst2, &c).unwrap();
        assert!(v.contains(&FeasibilityViolation::MultipleLevels {
            facility: 0,
            count: 2
        }));
    }

    #[test]
    fn validate_rejects_bad_shapes_and_values() {
        let mut inst = unit_instance();
        inst.lambda = vec![1.0, 2.0];
        assert!(matches!(inst.validate(), Err(LocationError::Invalid(_))));

        let mut inst = unit_instance();
        inst.mu = vec![vec![0.0]];
        assert!(inst.validate().is_err());

        let mut inst = unit_instance();
        inst.lambda = vec![5.0]; // demand above every rate
        assert!(inst.validate().is_err());

        let mut inst = unit_instance();
        inst.sigma = vec![vec![200.0]]; // mu*sigma = 400
        assert!(inst.validate().is_err());

        let mut inst = unit_instance();
        inst.d = vec![vec![f64::NAN]];
        assert!(inst.validate().is_err());

        let mut inst = unit_instance();
        inst.lambda = vec![0.0]; // zero demand is allowed
        inst.validate().unwrap();
    }

    #[test]
    fn evaluate_is_invariant_under_customer_relabeling() {
        let inst = LocationInstance {
            facilities: 2,
            customers: 3,
            levels: 1,
            f: vec![vec![5.0], vec![7.0]],
            d: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            lambda: vec![0.3, 0.5, 0.7],
            mu: vec![vec![2.0], vec![3.0]],
            sigma: vec![vec![0.4], vec![0.1]],
            w: vec![1.0, 2.0],
            metadata: BTreeMap::new(),
        };
        inst.validate().unwrap();
        let a = Assignment {
            x: vec![vec![true], vec![true]],
            y: vec![vec![vec![true, false, true]], vec![vec![false, true, false]]],
        };
        let base = evaluate(&inst, &a).unwrap();

        // Swap customers 0 and 2 everywhere.
        let perm = [2usize, 1, 0];
        let inst_p = LocationInstance {
            d: inst
                .d
                .iter()
                .map(|row| perm.iter().map(|&j| row[j]).collect())
                .collect(),
            lambda: perm.iter().map(|&j| inst.lambda[j]).collect(),
            ..inst.clone()
        };
        let a_p = Assignment {
            x: a.x.clone(),
            y: a
                .y
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|row| perm.iter().map(|&j| row[j]).collect())
                        .collect()
                })
                .collect(),
        };
        let permuted = evaluate(&inst_p, &a_p).unwrap();
        assert!((base - permuted).abs() <= 1e-12 * base.abs());
    }

    #[test]
    fn closed_assignment_is_rejected_by_evaluate() {
        let inst = unit_instance();
        let a = Assignment::closed(&inst);
        match evaluate(&inst, &a) {
            Err(LocationError::Infeasible(v)) => {
                assert_eq!(
                    v,
                    vec![FeasibilityViolation::CustomerUnassigned { customer: 0 }]
                );
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
