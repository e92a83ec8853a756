//! Exhaustive oracle for the location problem.
//!
//! Enumerates every level selection and every customer assignment, and
//! evaluates the objective directly. Ground truth for desk-scale solver
//! tests; guarded against combinatorial blow-up.

use super::{evaluate, Assignment, LocationError, LocationInstance};
use crate::queue::{self, MetricKind, QueueParams};
use serde::{Deserialize, Serialize};

/// Enumeration guard: sites times levels, and customers, both at most 8.
const MAX_SITE_LEVELS: usize = 8;
const MAX_CUSTOMERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: Assignment,
    pub value: f64,
    /// Candidates examined: every stable assignment evaluated, plus one
    /// for each level selection that admits no stable assignment at all
    /// (so "open nothing" counts as a candidate even though it serves
    /// nobody).
    pub enumerated: u64,
}

struct Search<'a> {
    inst: &'a LocationInstance,
    /// Open (site, level) pairs for the current level selection.
    open: Vec<(usize, usize)>,
    /// Travel-plus-demand cost `d[i][j] * lambda[j]` flattened as [i][j].
    travel: Vec<Vec<f64>>,
    /// Customer choices: index into `open` per customer.
    choice: Vec<usize>,
    /// Pooled demand per open pair, parallel to `open`.
    load: Vec<f64>,
    enumerated: u64,
    best: Option<(f64, Vec<bool>, Assignment)>,
}

impl Search<'_> {
    /// Recursively assign customers `j..`; `travel_acc` carries the travel
    /// cost of the choices made so far.
    fn assign(&mut self, j: usize, travel_acc: f64, establish: f64) -> u64 {
        if j == self.inst.customers {
            // The incremental loads drive pruning only; they pick up
            // backtracking dust because (a + b) - b need not equal a, and
            // the residue can even go slightly negative. Rebuild each
            // pooled load as a fresh ordered sum so the leaf agrees with
            // `evaluate` bit for bit.
            let mut pooled = vec![0.0; self.open.len()];
            for (jj, &slot) in self.choice.iter().enumerate() {
                pooled[slot] += self.inst.lambda[jj];
            }
            if pooled
                .iter()
                .zip(&self.open)
                .any(|(&load, &(i, k))| load >= self.inst.mu[i][k])
            {
                return 0; // exact sum sits on the stability boundary
            }
            self.enumerated += 1;
            let mut waiting = 0.0;
            for (slot, &(i, k)) in self.open.iter().enumerate() {
                let p = QueueParams::new(pooled[slot], self.inst.mu[i][k], self.inst.sigma[i][k])
                    .expect("validated rates with nonnegative pooled demand");
                waiting +=
                    self.inst.w[i] * queue::metric(MetricKind::TW, &p).expect("stable by construction");
            }
            let value = establish + waiting + travel_acc;
            let better = match &self.best {
                None => true,
                Some((best_value, best_bits, _)) => {
                    value < *best_value
                        || (value == *best_value && {
                            // Exact cost ties prefer the assignment whose
                            // flattened (x, y) bits are lexicographically
                            // greater, i.e. lower-indexed sites and levels.
                            let bits = self.current_assignment().bits();
                            bits > *best_bits
                        })
                }
            };
            if better {
                let a = self.current_assignment();
                self.best = Some((value, a.bits(), a));
            }
            return 1;
        }
        let mut stable_leaves = 0;
        for slot in 0..self.open.len() {
            let (i, k) = self.open[slot];
            let new_load = self.load[slot] + self.inst.lambda[j];
            // Steady state needs strict inequality; prune overloads early.
            if new_load >= self.inst.mu[i][k] {
                continue;
            }
            self.load[slot] = new_load;
            self.choice[j] = slot;
            stable_leaves += self.assign(j + 1, travel_acc + self.travel[i][j], establish);
            self.load[slot] -= self.inst.lambda[j];
        }
        stable_leaves
    }

    fn current_assignment(&self) -> Assignment {
        let mut a = Assignment::closed(self.inst);
        for &(i, k) in &self.open {
            a.x[i][k] = true;
        }
        for (j, &slot) in self.choice.iter().enumerate() {
            let (i, k) = self.open[slot];
            a.y[i][k][j] = true;
        }
        a
    }
}

/// Exhaustive minimization of the location objective. Errors when the
/// instance exceeds the enumeration guard or no stable assignment exists.
pub fn brute_force(inst: &LocationInstance) -> Result<OracleResult, LocationError> {
    inst.check_data()?;
    if inst.facilities * inst.levels > MAX_SITE_LEVELS {
        return Err(LocationError::TooLarge(format!(
            "facilities x levels = {} exceeds {MAX_SITE_LEVELS}",
            inst.facilities * inst.levels
        )));
    }
    if inst.customers > MAX_CUSTOMERS {
        return Err(LocationError::TooLarge(format!(
            "customers = {} exceeds {MAX_CUSTOMERS}",
            inst.customers
        )));
    }

    let travel: Vec<Vec<f64>> = (0..inst.facilities)
        .map(|i| (0..inst.customers).map(|j| inst.d[i][j] * inst.lambda[j]).collect())
        .collect();

    let mut search = Search {
        inst,
        open: Vec::new(),
        travel,
        choice: vec![0; inst.customers],
        load: Vec::new(),
        enumerated: 0,
        best: None,
    };

    // Level selections as a mixed-radix counter: digit 0 closes site i,
    // digit k+1 opens it at level k.
    let mut digits = vec![0usize; inst.facilities];
    loop {
        let open: Vec<(usize, usize)> = digits
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(i, &d)| (i, d - 1))
            .collect();
        let establish: f64 = open.iter().map(|&(i, k)| inst.f[i][k]).sum();
        search.open = open;
        search.load = vec![0.0; search.open.len()];
        let leaves = if search.open.is_empty() && inst.customers > 0 {
            0
        } else {
            search.assign(0, 0.0, establish)
        };
        if leaves == 0 {
            // The level selection itself is a candidate even though no
            // stable assignment completes it.
            search.enumerated += 1;
        }

        // Advance the counter.
        let mut pos = 0;
        loop {
            if pos == digits.len() {
                let best = search
                    .best
                    .take()
                    .ok_or(LocationError::NoFeasibleAssignment)?;
                let (value, _, assignment) = best;
                debug_assert!({
                    let direct = evaluate(inst, &assignment).unwrap();
                    (value - direct).abs() <= 1e-9 * direct.abs().max(1.0)
                });
                return Ok(OracleResult {
                    best: assignment,
                    value,
                    enumerated: search.enumerated,
                });
            }
            digits[pos] += 1;
            if digits[pos] <= inst.levels {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::location::{check_feasible, unit_assignment, unit_instance};
    use std::collections::BTreeMap;

    #[test]
    fn unit_instance_is_solved_by_hand() {
        let r = brute_force(&unit_instance()).unwrap();
        assert_eq!(r.value, 11.0);
        assert_eq!(r.enumerated, 2); // open-and-serve, plus all-closed
        assert_eq!(r.best, unit_assignment());
    }

    #[test]
    fn ties_prefer_the_lower_facility_index() {
        let inst = LocationInstance {
            facilities: 2,
            customers: 1,
            levels: 1,
            f: vec![vec![5.0], vec![5.0]],
            d: vec![vec![1.0], vec![1.0]],
            lambda: vec![1.0],
            mu: vec![vec![2.0], vec![2.0]],
            sigma: vec![vec![0.5], vec![0.5]],
            w: vec![1.0, 1.0],
            metadata: BTreeMap::new(),
        };
        let r = brute_force(&inst).unwrap();
        assert!(r.best.x[0][0]);
        assert!(!r.best.x[1][0]);
        assert!(r.best.y[0][0][0]);
    }

    #[test]
    fn guard_rejects_large_instances() {
        let mut inst = unit_instance();
        inst.facilities = 3;
        inst.levels = 3;
        inst.f = vec![vec![1.0; 3]; 3];
        inst.d = vec![vec![0.0]; 3];
        inst.mu = vec![vec![2.0; 3]; 3];
        inst.sigma = vec![vec![0.1; 3]; 3];
        inst.w = vec![1.0; 3];
        assert!(matches!(
            brute_force(&inst),
            Err(LocationError::TooLarge(_))
        ));

        let mut inst = unit_instance();
        inst.customers = 9;
        inst.d = vec![vec![0.0; 9]];
        inst.lambda = vec![0.1; 9];
        assert!(matches!(
            brute_force(&inst),
            Err(LocationError::TooLarge(_))
        ));
    }

    #[test]
    fn overloaded_instance_has_no_feasible_assignment() {
        let mut inst = unit_instance();
        inst.lambda = vec![5.0]; // above the only service rate
        assert_eq!(
            brute_force(&inst),
            Err(LocationError::NoFeasibleAssignment)
        );
    }

    #[test]
    fn oracle_value_bounds_every_feasible_assignment() {
        let inst = LocationInstance {
            facilities: 2,
            customers: 3,
            levels: 2,
            f: vec![vec![3.0, 5.0], vec![4.0, 6.0]],
            d: vec![vec![0.5, 1.0, 1.5], vec![1.5, 1.0, 0.5]],
            lambda: vec![0.4, 0.6, 0.8],
            mu: vec![vec![1.5, 3.0], vec![2.0, 4.0]],
            sigma: vec![vec![0.6, 0.3], vec![0.5, 0.25]],
            w: vec![2.0, 1.0],
            metadata: BTreeMap::new(),
        };
        inst.validate().unwrap();
        let r = brute_force(&inst).unwrap();
        assert!(check_feasible(&inst, &r.best).unwrap().is_empty());
        assert!((evaluate(&inst, &r.best).unwrap() - r.value).abs() <= 1e-9 * r.value);

        // Every stable hand-rolled assignment costs at least the oracle value.
        for (xi, xk) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)] {
            let mut a = Assignment::closed(&inst);
            a.x[xi][xk] = true;
            for j in 0..3 {
                a.y[xi][xk][j] = true;
            }
            if check_feasible(&inst, &a).unwrap().is_empty() {
                let v = evaluate(&inst, &a).unwrap();
                assert!(v >= r.value - 1e-9 * v.abs());
            }
        }
    }

    #[test]
    fn backtracking_dust_does_not_upset_the_leaf_evaluation() {
        // Demands whose running sums do not round-trip under subtraction
        // used to leave tiny negative pooled loads after backtracking,
        // which the queue parameter check then rejected.
        let inst = LocationInstance {
            facilities: 2,
            customers: 3,
            levels: 1,
            f: vec![vec![4.0], vec![5.0]],
            d: vec![vec![1.0, 2.0, 1.5], vec![2.0, 1.0, 0.5]],
            lambda: vec![0.4, 0.3, 0.3],
            mu: vec![vec![2.0], vec![2.5]],
            sigma: vec![vec![0.5], vec![0.4]],
            w: vec![1.0, 1.0],
            metadata: BTreeMap::new(),
        };
        let r = brute_force(&inst).unwrap();
        assert!(check_feasible(&inst, &r.best).unwrap().is_empty());
        assert!((evaluate(&inst, &r.best).unwrap() - r.value).abs() <= 1e-12 * r.value);
    }

    #[test]
    fn enumeration_counts_are_exact_on_a_two_site_instance() {
        // 2 sites, 1 level each, 1 customer, everything stable: level
        // selections are {}, {0}, {1}, {0,1}; stable assignments 0, 1, 1, 2.
        // Empty selection contributes 1. Total = 1 + 1 + 1 + 2 = 5.
        let inst = LocationInstance {
            facilities: 2,
            customers: 1,
            levels: 1,
            f: vec![vec![5.0], vec![6.0]],
            d: vec![vec![1.0], vec![2.0]],
            lambda: vec![1.0],
            mu: vec![vec![2.0], vec![2.0]],
            sigma: vec![vec![0.5], vec![0.5]],
            w: vec![1.0, 1.0],
            metadata: BTreeMap::new(),
        };
        let r = brute_force(&inst).unwrap();
        assert_eq!(r.enumerated, 5);
        assert_eq!(r.value, 5.0 + 1.0 + 1.0); // f + TW(1,2,0.5) + d*lambda
    }
}
