//! Seeded benchmark-instance generation.
//!
//! A single `SplitMix64` stream drawn from `GenSpec::seed` feeds every
//! random quantity, in a frozen order so the same spec reproduces the same
//! instance on any platform:
//!
//! 1. per facility `i` ascending: base cost `f_i`, base capacity `b_i`,
//!    waiting weight `w_i`, service-rate base; with planar-grid travel
//!    costs, the facility coordinates `(x_i, y_i)` follow;
//! 2. per `(i, k)` ascending with `k` inner: the deviation `sigma_ik`,
//!    uniform on `[cv_lo/mu_ik, cv_hi/mu_ik]`;
//! 3. per customer `j` ascending: demand `lambda_j`; with planar-grid
//!    travel costs, the customer coordinates follow;
//! 4. with uniform-range travel costs, per `(i, j)` ascending with `j`
//!    inner: `d_ij`. Planar-grid distances are computed, not drawn.
//!
//! Establishment costs follow the economy-of-scale ladder
//! `f_ik = (f_i / b_i)^((K-1)/(K-1+k-1)) * mu_ik` with `k` counted from 1,
//! so the exponent is 1 at the lowest level and decays toward 1/2 at
//! higher levels: per unit of service capacity, bigger installations are
//! cheaper whenever `f_i >= b_i`.
//!
//! If total demand reaches best-case capacity (every site at its fastest
//! level), demands are scaled down to 90% of that capacity and the factor
//! is recorded under the `demand_rescale` metadata key.

use crate::location::LocationInstance;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Fraction of best-case capacity that rescaled total demand is set to.
const DEMAND_HEADROOM: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid generation spec: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?} (expected desk-small, vj-large, or holmberg-large)")]
    UnknownPreset(String),
}

/// Per-level service-rate ladder. Rates must increase with the level
/// index; the multiplier variant makes the ladder explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum ServiceRateScheme {
    /// `mu_ik = base_i * k` with `k` counted from 1.
    LinearLadder { base_range: [f64; 2] },
    /// `mu_ik = base_i * multipliers[k-1]`; multipliers must be positive
    /// and strictly increasing, one per level.
    Multipliers {
        base_range: [f64; 2],
        multipliers: Vec<f64>,
    },
}

impl ServiceRateScheme {
    fn name(&self) -> &'static str {
        match self {
            ServiceRateScheme::LinearLadder { .. } => "linear-ladder",
            ServiceRateScheme::Multipliers { .. } => "multipliers",
        }
    }

    fn base_range(&self) -> [f64; 2] {
        match self {
            ServiceRateScheme::LinearLadder { base_range }
            | ServiceRateScheme::Multipliers { base_range, .. } => *base_range,
        }
    }

    fn level_rate(&self, base: f64, k: usize) -> f64 {
        match self {
            ServiceRateScheme::LinearLadder { .. } => base * (k + 1) as f64,
            ServiceRateScheme::Multipliers { multipliers, .. } => base * multipliers[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum TravelCostScheme {
    /// `d_ij` uniform on the range.
    UniformRange { range: [f64; 2] },
    /// Facilities and customers placed uniformly on a `side x side`
    /// square; `d_ij` is the Euclidean distance.
    PlanarGrid { side: f64 },
}

impl TravelCostScheme {
    fn name(&self) -> &'static str {
        match self {
            TravelCostScheme::UniformRange { .. } => "uniform-range",
            TravelCostScheme::PlanarGrid { .. } => "planar-grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub facilities: usize,
    pub customers: usize,
    pub levels: usize,
    pub seed: u64,
    /// Range for the base facility cost `f_i`.
    pub base_cost_range: [f64; 2],
    /// Range for the base facility capacity `b_i`.
    pub base_capacity_range: [f64; 2],
    /// Range for customer demand rates `lambda_j`.
    pub demand_range: [f64; 2],
    pub service_rate_scheme: ServiceRateScheme,
    pub travel_cost_scheme: TravelCostScheme,
    /// Range for the waiting-cost weights `w_i`.
    pub waiting_cost_range: [f64; 2],
    /// Range for the coefficient of variation `mu_ik * sigma_ik`.
    #[serde(default = "default_cv_range")]
    pub cv_range: [f64; 2],
}

fn default_cv_range() -> [f64; 2] {
    [1.0, 3.0]
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        let inv = |msg: String| Err(GenError::Invalid(msg));
        if self.facilities == 0 || self.customers == 0 || self.levels == 0 {
            return inv(format!(
                "counts must be positive, got I={} J={} K={}",
                self.facilities, self.customers, self.levels
            ));
        }
        let range_ok = |name: &str, r: [f64; 2], min_lo: f64| {
            if !r[0].is_finite() || !r[1].is_finite() || r[0] > r[1] || r[0] < min_lo {
                return Err(GenError::Invalid(format!(
                    "{name} range [{}, {}] must be finite with lo <= hi and lo >= {min_lo}",
                    r[0], r[1]
                )));
            }
            Ok(())
        };
        range_ok("base cost", self.base_cost_range, f64::MIN_POSITIVE)?;
        range_ok("base capacity", self.base_capacity_range, f64::MIN_POSITIVE)?;
        range_ok("demand", self.demand_range, 0.0)?;
        range_ok("waiting cost", self.waiting_cost_range, 0.0)?;
        range_ok("cv", self.cv_range, 0.0)?;
        if self.cv_range[1] > crate::location::MAX_MU_SIGMA {
            return inv(format!(
                "cv upper bound {} exceeds the supported maximum {}",
                self.cv_range[1],
                crate::location::MAX_MU_SIGMA
            ));
        }
        range_ok("service-rate base", self.service_rate_scheme.base_range(), f64::MIN_POSITIVE)?;
        if let ServiceRateScheme::Multipliers { multipliers, .. } = &self.service_rate_scheme {
            if multipliers.len() != self.levels {
                return inv(format!(
                    "expected {} level multipliers, got {}",
                    self.levels,
                    multipliers.len()
                ));
            }
            if multipliers.iter().any(|m| !m.is_finite()) || multipliers[0] <= 0.0 {
                return inv("level multipliers must be finite and positive".into());
            }
            if multipliers.windows(2).any(|p| p[1] <= p[0]) {
                return inv("level multipliers must be strictly increasing".into());
            }
        }
        match self.travel_cost_scheme {
            TravelCostScheme::UniformRange { range } => range_ok("travel cost", range, 0.0)?,
            TravelCostScheme::PlanarGrid { side } => {
                if !side.is_finite() || side <= 0.0 {
                    return inv(format!("grid side {side} must be finite and positive"));
                }
            }
        }
        Ok(())
    }
}

/// The economy-of-scale establishment cost for 1-based level `k`.
/// The exponent `(K-1)/(K-1+k-1)` equals 1 at `k = 1` for every `K`
/// (including the 0/0 corner at `K = 1`, taken as 1).
fn establishment_cost(f_i: f64, b_i: f64, levels: usize, k: usize, mu_ik: f64) -> f64 {
    let expo = if k == 1 {
        1.0
    } else {
        (levels as f64 - 1.0) / (levels as f64 + k as f64 - 2.0)
    };
    (f_i / b_i).powf(expo) * mu_ik
}

pub fn generate(spec: &GenSpec) -> Result<LocationInstance, GenError> {
    spec.validate()?;
    let (i_n, j_n, k_n) = (spec.facilities, spec.customers, spec.levels);
    let mut rng = SplitMix64::new(spec.seed);
    let draw = |rng: &mut SplitMix64, r: [f64; 2]| rng.uniform(r[0], r[1]);

    // Stage 1: facility-level quantities, one facility at a time.
    let mut base_cost = vec![0.0; i_n];
    let mut base_capacity = vec![0.0; i_n];
    let mut w = vec![0.0; i_n];
    let mut rate_base = vec![0.0; i_n];
    let mut site_xy = Vec::new();
    for i in 0..i_n {
        base_cost[i] = draw(&mut rng, spec.base_cost_range);
        base_capacity[i] = draw(&mut rng, spec.base_capacity_range);
        w[i] = draw(&mut rng, spec.waiting_cost_range);
        rate_base[i] = draw(&mut rng, spec.service_rate_scheme.base_range());
        if let TravelCostScheme::PlanarGrid { side } = spec.travel_cost_scheme {
            let x = rng.uniform(0.0, side);
            let y = rng.uniform(0.0, side);
            site_xy.push((x, y));
        }
    }

    let mu: Vec<Vec<f64>> = (0..i_n)
        .map(|i| {
            (0..k_n)
                .map(|k| spec.service_rate_scheme.level_rate(rate_base[i], k))
                .collect()
        })
        .collect();
    let f: Vec<Vec<f64>> = (0..i_n)
        .map(|i| {
            (0..k_n)
                .map(|k| establishment_cost(base_cost[i], base_capacity[i], k_n, k + 1, mu[i][k]))
                .collect()
        })
        .collect();

    // Stage 2: per-pair service-time deviations.
    let mut sigma = vec![vec![0.0; k_n]; i_n];
    for i in 0..i_n {
        for k in 0..k_n {
            sigma[i][k] = rng.uniform(spec.cv_range[0] / mu[i][k], spec.cv_range[1] / mu[i][k]);
        }
    }

    // Stage 3: customer demands (and positions on a grid).
    let mut lambda = vec![0.0; j_n];
    let mut cust_xy = Vec::new();
    for j in 0..j_n {
        lambda[j] = draw(&mut rng, spec.demand_range);
        if let TravelCostScheme::PlanarGrid { side } = spec.travel_cost_scheme {
            let x = rng.uniform(0.0, side);
            let y = rng.uniform(0.0, side);
            cust_xy.push((x, y));
        }
    }

    // Stage 4: travel costs.
    let d: Vec<Vec<f64>> = match spec.travel_cost_scheme {
        TravelCostScheme::UniformRange { range } => (0..i_n)
            .map(|_| (0..j_n).map(|_| rng.uniform(range[0], range[1])).collect())
            .collect(),
        TravelCostScheme::PlanarGrid { .. } => (0..i_n)
            .map(|i| {
                (0..j_n)
                    .map(|j| {
                        let (sx, sy) = site_xy[i];
                        let (cx, cy) = cust_xy[j];
                        ((sx - cx).powi(2) + (sy - cy).powi(2)).sqrt()
                    })
                    .collect()
            })
            .collect(),
    };

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "splitmix64".into());
    metadata.insert("seed".into(), spec.seed.to_string());
    metadata.insert(
        "service_rate_scheme".into(),
        spec.service_rate_scheme.name().into(),
    );
    metadata.insert(
        "travel_cost_scheme".into(),
        spec.travel_cost_scheme.name().into(),
    );

    // Keep total demand strictly inside best-case capacity.
    let total: f64 = lambda.iter().sum();
    let cap: f64 = mu
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum();
    if total >= cap {
        let factor = DEMAND_HEADROOM * cap / total;
        for l in &mut lambda {
            *l *= factor;
        }
        metadata.insert("demand_rescale".into(), factor.to_string());
    }

    let inst = LocationInstance {
        facilities: i_n,
        customers: j_n,
        levels: k_n,
        f,
        d,
        lambda,
        mu,
        sigma,
        w,
        metadata,
    };
    debug_assert!(inst.validate().is_ok());
    Ok(inst)
}

/// Ready-made specs: `desk-small` is sized for the exhaustive oracle
/// (3 facilities, 2 levels, 5 customers); `vj-large` (25, 5, 400) and
/// `holmberg-large` (30, 10, 200) match the published experiment shapes.
pub fn preset(name: &str) -> Result<GenSpec, GenError> {
    let spec = match name {
        "desk-small" => GenSpec {
            facilities: 3,
            customers: 5,
            levels: 2,
            seed: 1,
            base_cost_range: [60.0, 140.0],
            base_capacity_range: [15.0, 25.0],
            demand_range: [0.4, 1.2],
            service_rate_scheme: ServiceRateScheme::LinearLadder {
                base_range: [2.5, 5.0],
            },
            travel_cost_scheme: TravelCostScheme::UniformRange { range: [1.0, 10.0] },
            waiting_cost_range: [1.0, 5.0],
            cv_range: default_cv_range(),
        },
        "vj-large" => GenSpec {
            facilities: 25,
            customers: 400,
            levels: 5,
            seed: 1,
            base_cost_range: [400.0, 1600.0],
            base_capacity_range: [40.0, 160.0],
            demand_range: [0.5, 2.0],
            service_rate_scheme: ServiceRateScheme::LinearLadder {
                base_range: [8.0, 16.0],
            },
            travel_cost_scheme: TravelCostScheme::PlanarGrid { side: 100.0 },
            waiting_cost_range: [5.0, 25.0],
            cv_range: default_cv_range(),
        },
        "holmberg-large" => GenSpec {
            facilities: 30,
            customers: 200,
            levels: 10,
            seed: 1,
            base_cost_range: [500.0, 1500.0],
            base_capacity_range: [50.0, 150.0],
            demand_range: [0.5, 2.5],
            service_rate_scheme: ServiceRateScheme::LinearLadder {
                base_range: [3.0, 7.0],
            },
            travel_cost_scheme: TravelCostScheme::UniformRange { range: [1.0, 30.0] },
            waiting_cost_range: [5.0, 20.0],
            cv_range: default_cv_range(),
        },
        other => return Err(GenError::UnknownPreset(other.into())),
    };
    Ok(spec)
}

/// File name for a generated instance: `<prefix>-s<seed>.json`.
pub fn suggested_filename(prefix: &str, seed: u64) -> String {
    format!("{prefix}-s{seed}.json")
}
