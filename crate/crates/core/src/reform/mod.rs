//! Conic reformulations of the location problem.
//!
//! Four equivalent mixed-integer models, differing only in how the
//! congestion term is convexified. Writing `A = sum_j lambda_j y_ikj` for
//! the pooled demand at a (site, level) pair, each build introduces
//! auxiliary variables per pair and one cone row tying them to `A`:
//!
//! * `M1`: `r >= A^2/(mu - A)` via `A^2 <= r t`, `t = mu - A`; objective
//!   charges `w (1 + mu^2 sigma^2) r / (2 mu) + w A / mu`.
//! * `M2`: `s >= A/(mu - A)` via `sum_j lambda_j y^2 <= s t` (valid because
//!   the assignment variables are 0/1, so `y^2 = y`); objective charges
//!   `w (1 + mu^2 sigma^2) s / 2 + w (1 - mu^2 sigma^2) A / (2 mu)`.
//! * `M3`: same `s` bound via `(2A, p)` against `q`, with `p = s mu - mu`
//!   and `q = s mu + mu - 2A`; same objective as `M2`.
//! * `M4`: same `s` bound via `A^2 <= t v` with `v = s mu - A`; same
//!   objective as `M2`.
//!
//! Every build populates the quadratic (secondary) rows the solver
//! branches on and the equivalent norm (primary) rows, kept synchronized.
//!
//! The published form of `M3` also bounds `p >= 0`, which would force
//! `s >= 1` and cut off optima with `A < mu/2`; verified against the
//! exhaustive oracle, the bound is wrong and is dropped here. `p` keeps
//! its implied lower bound `-mu` instead (from `s >= 0`).

mod general;

pub use general::{
    metric_constraint, GeneralContext, MetricBundle, MetricVariant, STermScale,
};

use crate::conic::{LinExpr, SecondaryForm, SocConstraintPrimary, SocConstraintSecondary, VarId};
use crate::location::{evaluate, Assignment, LocationError, LocationInstance};
use crate::model::{ConicModel, ModelBuilder, PointAssignment, VarKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulationId {
    M1,
    M2,
    M3,
    M4,
}

impl FormulationId {
    pub const ALL: [FormulationId; 4] = [
        FormulationId::M1,
        FormulationId::M2,
        FormulationId::M3,
        FormulationId::M4,
    ];
}

impl std::fmt::Display for FormulationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReformError {
    #[error(transparent)]
    Location(#[from] LocationError),
    #[error("{0} requires binary assignment variables")]
    BinaryRequired(FormulationId),
    #[error("binary-assignment constraint form requested for continuous variables")]
    BinaryYRequired,
    #[error("variable {var} = {value} is not integral")]
    NonIntegral { var: VarId, value: f64 },
    #[error("point does not fit the model: {0}")]
    Point(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("context is malformed: {0}")]
    InvalidContext(String),
}

/// Ids of every variable family of a built formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarMap {
    /// `x[i][k]`: establish site `i` at level `k`.
    pub x: Vec<Vec<VarId>>,
    /// `y[i][k][j]`: serve customer `j` from (i, k).
    pub y: Vec<Vec<Vec<VarId>>>,
    pub r: Option<Vec<Vec<VarId>>>,
    pub s: Option<Vec<Vec<VarId>>>,
    pub t: Option<Vec<Vec<VarId>>>,
    pub p: Option<Vec<Vec<VarId>>>,
    pub q: Option<Vec<Vec<VarId>>>,
    pub v: Option<Vec<Vec<VarId>>>,
}

#[derive(Debug, Clone)]
pub struct BuildReceipt {
    pub model: ConicModel,
    pub var_map: VarMap,
    pub formulation: FormulationId,
}

pub fn build(inst: &LocationInstance, which: FormulationId) -> Result<BuildReceipt, ReformError> {
    build_with_options(inst, which, false)
}

/// `relax_binaries` declares every x and y continuous on [0, 1]. Rejected
/// for `M2`: its cone row replaces `y` by `y^2`, which only preserves the
/// feasible set for 0/1 values.
pub fn build_with_options(
    inst: &LocationInstance,
    which: FormulationId,
    relax_binaries: bool,
) -> Result<BuildReceipt, ReformError> {
    inst.validate()?;
    if relax_binaries && which == FormulationId::M2 {
        return Err(ReformError::BinaryRequired(which));
    }
    let (i_n, j_n, k_n) = (inst.facilities, inst.customers, inst.levels);
    let mut b = ConicModel::builder();
    b.set_metadata("formulation", which.to_string());
    b.set_metadata("facilities", i_n.to_string());
    b.set_metadata("customers", j_n.to_string());
    b.set_metadata("levels", k_n.to_string());
    if relax_binaries {
        b.set_metadata("relaxed_binaries", "true".to_string());
    }

    let decision_kind = if relax_binaries {
        VarKind::Continuous
    } else {
        VarKind::Binary
    };
    let grid = |b: &mut ModelBuilder, name: &str, kind, lower, upper| -> Vec<Vec<VarId>> {
        (0..i_n)
            .map(|i| {
                (0..k_n)
                    .map(|k| b.add_var(format!("{name}_{i}_{k}"), kind, lower, upper))
                    .collect()
            })
            .collect()
    };

    let x = grid(&mut b, "x", decision_kind, 0.0, 1.0);
    let y: Vec<Vec<Vec<VarId>>> = (0..i_n)
        .map(|i| {
            (0..k_n)
                .map(|k| {
                    (0..j_n)
                        .map(|j| b.add_var(format!("y_{i}_{k}_{j}"), decision_kind, 0.0, 1.0))
                        .collect()
                })
                .collect()
        })
        .collect();

    let nonneg_grid = |b: &mut ModelBuilder, name: &str| -> Vec<Vec<VarId>> {
        (0..i_n)
            .map(|i| {
                (0..k_n)
                    .map(|k| {
                        b.add_var(format!("{name}_{i}_{k}"), VarKind::Continuous, 0.0, f64::INFINITY)
                    })
                    .collect()
            })
            .collect()
    };

    let mut map = VarMap {
        x,
        y,
        r: None,
        s: None,
        t: None,
        p: None,
        q: None,
        v: None,
    };
    match which {
        FormulationId::M1 => {
            map.r = Some(nonneg_grid(&mut b, "r"));
            map.t = Some(nonneg_grid(&mut b, "t"));
        }
        FormulationId::M2 => {
            map.s = Some(nonneg_grid(&mut b, "s"));
            map.t = Some(nonneg_grid(&mut b, "t"));
        }
        FormulationId::M3 => {
            map.s = Some(nonneg_grid(&mut b, "s"));
            // p = s mu - mu has implied range [-mu, inf); the cone and
            // q >= 0 carry the geometry, see the module doc.
            map.p = Some(
                (0..i_n)
                    .map(|i| {
                        (0..k_n)
                            .map(|k| {
                                b.add_var(
                                    format!("p_{i}_{k}"),
                                    VarKind::Continuous,
                                    -inst.mu[i][k],
                                    f64::INFINITY,
                                )
                            })
                            .collect()
                    })
                    .collect(),
            );
            map.q = Some(nonneg_grid(&mut b, "q"));
        }
        FormulationId::M4 => {
            map.s = Some(nonneg_grid(&mut b, "s"));
            map.t = Some(nonneg_grid(&mut b, "t"));
            map.v = Some(nonneg_grid(&mut b, "v"));
        }
    }

    // Pooled demand at (i, k) as an expression.
    let load_expr = |i: usize, k: usize| -> LinExpr {
        let mut e = LinExpr::zero();
        for j in 0..j_n {
            e.add_term(map.y[i][k][j], inst.lambda[j]);
        }
        e
    };

    // Each customer is served exactly once.
    for j in 0..j_n {
        let mut row = LinExpr::with_constant(-1.0);
        for i in 0..i_n {
            for k in 0..k_n {
                row.add_term(map.y[i][k][j], 1.0);
            }
        }
        b.add_eq(row);
    }
    // Service only from established pairs.
    for i in 0..i_n {
        for k in 0..k_n {
            for j in 0..j_n {
                let mut row = LinExpr::var(map.y[i][k][j]);
                row.add_term(map.x[i][k], -1.0);
                b.add_ineq(row);
            }
        }
    }
    // At most one level per site.
    for i in 0..i_n {
        let mut row = LinExpr::with_constant(-1.0);
        for k in 0..k_n {
            row.add_term(map.x[i][k], 1.0);
        }
        b.add_ineq(row);
    }
    // Pooled demand within the service rate.
    for i in 0..i_n {
        for k in 0..k_n {
            let mut row = load_expr(i, k);
            row.add_constant(-inst.mu[i][k]);
            b.add_ineq(row);
        }
    }

    // Auxiliary definitions, cone rows, and the congestion objective.
    let mut obj = LinExpr::zero();
    for i in 0..i_n {
        for k in 0..k_n {
            obj.add_term(map.x[i][k], inst.f[i][k]);
            for j in 0..j_n {
                obj.add_term(map.y[i][k][j], inst.d[i][j] * inst.lambda[j]);
            }
        }
    }

    for i in 0..i_n {
        for k in 0..k_n {
            let mu = inst.mu[i][k];
            let sig = inst.sigma[i][k];
            let cv2 = mu * mu * sig * sig;
            let w = inst.w[i];
            let load = load_expr(i, k);

            match which {
                FormulationId::M1 => {
                    let r = map.r.as_ref().unwrap()[i][k];
                    let t = map.t.as_ref().unwrap()[i][k];
                    // t = mu - load
                    let mut def = LinExpr::var(t).plus(&load);
                    def.add_constant(-mu);
                    b.add_eq(def);

                    obj.add_term(r, w * (1.0 + cv2) / (2.0 * mu));
                    obj.add_scaled(&load, w / mu);

                    // 2 load^2 + r^2 + t^2 <= (r + t)^2
                    b.add_soc_secondary(SocConstraintSecondary {
                        form: SecondaryForm::FormI,
                        quad_rows: vec![
                            load.scaled(std::f64::consts::SQRT_2),
                            LinExpr::var(r),
                            LinExpr::var(t),
                        ],
                        y: LinExpr::var(r).plus(&LinExpr::var(t)),
                        z: None,
                    });
                    // ||(2 load, r - mu + load)|| <= r + mu - load
                    let mut mid = LinExpr::var(r).plus(&load);
                    mid.add_constant(-mu);
                    let mut rhs = LinExpr::var(r).minus(&load);
                    rhs.add_constant(mu);
                    b.add_soc_primary(SocConstraintPrimary {
                        norm_rows: vec![load.scaled(2.0), mid],
                        rhs,
                    });
                }
                FormulationId::M2 => {
                    let s = map.s.as_ref().unwrap()[i][k];
                    let t = map.t.as_ref().unwrap()[i][k];
                    let mut def = LinExpr::var(t).plus(&load);
                    def.add_constant(-mu);
                    b.add_eq(def);

                    obj.add_term(s, w * (1.0 + cv2) / 2.0);
                    obj.add_scaled(&load, w * (1.0 - cv2) / (2.0 * mu));

                    // 2 sum_j lambda_j y^2 + s^2 + t^2 <= (s + t)^2
                    let mut quad: Vec<LinExpr> = (0..j_n)
                        .map(|j| {
                            LinExpr::term(map.y[i][k][j], (2.0 * inst.lambda[j]).sqrt())
                        })
                        .collect();
                    quad.push(LinExpr::var(s));
                    quad.push(LinExpr::var(t));
                    b.add_soc_secondary(SocConstraintSecondary {
                        form: SecondaryForm::FormI,
                        quad_rows: quad,
                        y: LinExpr::var(s).plus(&LinExpr::var(t)),
                        z: None,
                    });
                    // ||(2 sqrt(lambda_j) y_j ..., s - mu + load)|| <= s + mu - load
                    let mut norm: Vec<LinExpr> = (0..j_n)
                        .map(|j| LinExpr::term(map.y[i][k][j], 2.0 * inst.lambda[j].sqrt()))
                        .collect();
                    let mut mid = LinExpr::var(s).plus(&load);
                    mid.add_constant(-mu);
                    norm.push(mid);
                    let mut rhs = LinExpr::var(s).minus(&load);
                    rhs.add_constant(mu);
                    b.add_soc_primary(SocConstraintPrimary { norm_rows: norm, rhs });
                }
                FormulationId::M3 => {
                    let s = map.s.as_ref().unwrap()[i][k];
                    let p = map.p.as_ref().unwrap()[i][k];
                    let q = map.q.as_ref().unwrap()[i][k];
                    // p = s mu - mu
                    let mut p_def = LinExpr::var(p);
                    p_def.add_term(s, -mu);
                    p_def.add_constant(mu);
                    b.add_eq(p_def);
                    // q = s mu + mu - 2 load
                    let mut q_def = LinExpr::var(q);
                    q_def.add_term(s, -mu);
                    q_def.add_scaled(&load, 2.0);
                    q_def.add_constant(-mu);
                    b.add_eq(q_def);

                    obj.add_term(s, w * (1.0 + cv2) / 2.0);
                    obj.add_scaled(&load, w * (1.0 - cv2) / (2.0 * mu));

                    // 4 load^2 + p^2 <= q^2
                    b.add_soc_secondary(SocConstraintSecondary {
                        form: SecondaryForm::FormI,
                        quad_rows: vec![load.scaled(2.0), LinExpr::var(p)],
                        y: LinExpr::var(q),
                        z: None,
                    });
                    b.add_soc_primary(mid_range_primary(s, mu, &load));
                }
                FormulationId::M4 => {
                    let s = map.s.as_ref().unwrap()[i][k];
                    let t = map.t.as_ref().unwrap()[i][k];
                    let v = map.v.as_ref().unwrap()[i][k];
                    let mut t_def = LinExpr::var(t).plus(&load);
                    t_def.add_constant(-mu);
                    b.add_eq(t_def);
                    // v = s mu - load
                    let mut v_def = LinExpr::var(v);
                    v_def.add_term(s, -mu);
                    v_def = v_def.plus(&load);
                    b.add_eq(v_def);

                    obj.add_term(s, w * (1.0 + cv2) / 2.0);
                    obj.add_scaled(&load, w * (1.0 - cv2) / (2.0 * mu));

                    // 2 load^2 + t^2 + v^2 <= (t + v)^2
                    b.add_soc_secondary(SocConstraintSecondary {
                        form: SecondaryForm::FormI,
                        quad_rows: vec![
                            load.scaled(std::f64::consts::SQRT_2),
                            LinExpr::var(t),
                            LinExpr::var(v),
                        ],
                        y: LinExpr::var(t).plus(&LinExpr::var(v)),
                        z: None,
                    });
                    b.add_soc_primary(mid_range_primary(s, mu, &load));
                }
            }
        }
    }

    b.set_objective(obj);
    Ok(BuildReceipt {
        model: b.finish(),
        var_map: map,
        formulation: which,
    })
}

/// `||(2 load, s mu - mu)|| <= s mu + mu - 2 load`, the shared norm form of
/// the `M3`/`M4` cone rows.
fn mid_range_primary(s: VarId, mu: f64, load: &LinExpr) -> SocConstraintPrimary {
    let mut mid = LinExpr::term(s, mu);
    mid.add_constant(-mu);
    let mut rhs = LinExpr::term(s, mu);
    rhs.add_constant(mu);
    rhs = rhs.minus(&load.scaled(2.0));
    SocConstraintPrimary {
        norm_rows: vec![load.scaled(2.0), mid],
        rhs,
    }
}

/// Assignment recovered from a solver point plus how tight each auxiliary
/// variable sits against its minimal feasible value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxGap {
    pub facility: usize,
    pub level: usize,
    pub name: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub assignment: Assignment,
    pub aux_gaps: Vec<AuxGap>,
}

const INTEGRALITY_TOL: f64 = 1e-6;

pub fn extract(
    receipt: &BuildReceipt,
    inst: &LocationInstance,
    point: &PointAssignment,
) -> Result<Extraction, ReformError> {
    if point.values.len() != receipt.model.n_vars() {
        return Err(ReformError::Point(format!(
            "point has {} values, model has {} variables",
            point.values.len(),
            receipt.model.n_vars()
        )));
    }
    let val = |id: VarId| point.values[id.index()];
    let round_bit = |id: VarId| -> Result<bool, ReformError> {
        let v = val(id);
        if (v - v.round()).abs() > INTEGRALITY_TOL {
            return Err(ReformError::NonIntegral { var: id, value: v });
        }
        Ok(v.round() == 1.0)
    };

    let map = &receipt.var_map;
    let mut a = Assignment::closed(inst);
    for i in 0..inst.facilities {
        for k in 0..inst.levels {
            a.x[i][k] = round_bit(map.x[i][k])?;
            for j in 0..inst.customers {
                a.y[i][k][j] = round_bit(map.y[i][k][j])?;
            }
        }
    }

    let mut aux_gaps = Vec::new();
    for i in 0..inst.facilities {
        for k in 0..inst.levels {
            let mu = inst.mu[i][k];
            let load = a.load(inst, i, k);
            let slack = mu - load;
            let mut push = |name: &str, grid: &Option<Vec<Vec<VarId>>>, tight: f64| {
                if let Some(g) = grid {
                    aux_gaps.push(AuxGap {
                        facility: i,
                        level: k,
                        name: name.to_string(),
                        gap: val(g[i][k]) - tight,
                    });
                }
            };
            // Minimal feasible values given the rounded assignment; the
            // equality-defined families have a unique value instead.
            let r_tight = if slack > 0.0 { load * load / slack } else { f64::INFINITY };
            let s_tight = if slack > 0.0 { load / slack } else { f64::INFINITY };
            push("r", &map.r, r_tight);
            push("s", &map.s, s_tight);
            push("t", &map.t, slack);
            push("p", &map.p, s_value(map, point, i, k) * mu - mu);
            push("q", &map.q, s_value(map, point, i, k) * mu + mu - 2.0 * load);
            push("v", &map.v, s_value(map, point, i, k) * mu - load);
        }
    }
    Ok(Extraction {
        assignment: a,
        aux_gaps,
    })
}

fn s_value(map: &VarMap, point: &PointAssignment, i: usize, k: usize) -> f64 {
    map.s
        .as_ref()
        .map(|g| point.values[g[i][k].index()])
        .unwrap_or(0.0)
}

/// The model point induced by an assignment with every auxiliary at its
/// minimal feasible value.
pub fn tight_point(
    receipt: &BuildReceipt,
    inst: &LocationInstance,
    a: &Assignment,
) -> Result<PointAssignment, ReformError> {
    let map = &receipt.var_map;
    let mut values = vec![0.0; receipt.model.n_vars()];
    for i in 0..inst.facilities {
        for k in 0..inst.levels {
            values[map.x[i][k].index()] = if a.x[i][k] { 1.0 } else { 0.0 };
            for j in 0..inst.customers {
                values[map.y[i][k][j].index()] = if a.y[i][k][j] { 1.0 } else { 0.0 };
            }
        }
    }
    for i in 0..inst.facilities {
        for k in 0..inst.levels {
            let mu = inst.mu[i][k];
            let load = a.load(inst, i, k);
            let slack = mu - load;
            if slack <= 0.0 {
                return Err(ReformError::Location(LocationError::Infeasible(vec![
                    crate::location::FeasibilityViolation::Overload {
                        facility: i,
                        level: k,
                        load,
                        rate: mu,
                    },
                ])));
            }
            let s = load / slack;
            let mut set = |grid: &Option<Vec<Vec<VarId>>>, v: f64| {
                if let Some(g) = grid {
                    values[g[i][k].index()] = v;
                }
            };
            set(&map.r, load * load / slack);
            set(&map.s, s);
            set(&map.t, slack);
            set(&map.p, s * mu - mu);
            set(&map.q, s * mu + mu - 2.0 * load);
            set(&map.v, s * mu - load);
        }
    }
    Ok(PointAssignment::new(values))
}

/// Evaluates the formulation objective at the tight point of `a` next to
/// the direct objective; the two must agree (that is the algebraic content
/// of the reformulations).
pub fn objective_identity_check(
    receipt: &BuildReceipt,
    inst: &LocationInstance,
    a: &Assignment,
) -> Result<(f64, f64), ReformError> {
    let direct = evaluate(inst, a)?;
    let point = tight_point(receipt, inst, a)?;
    let reformulated = receipt
        .model
        .objective()
        .eval(&point.values)
        .map_err(|e| ReformError::Point(e.to_string()))?;
    Ok((reformulated, direct))
}

/// Table row of structural sizes for one formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralRow {
    pub formulation: FormulationId,
    /// Continuous auxiliary variables.
    pub aux_reals: usize,
    /// Linear rows beyond the shared assignment/linkage/level/capacity
    /// families.
    pub added_constraints: usize,
    pub form1_rows: usize,
}

/// Symbolic counts: auxiliaries and added equalities scale with the number
/// of (site, level) pairs only.
pub fn table_counts(which: FormulationId, facilities: usize, levels: usize) -> StructuralRow {
    let ik = facilities * levels;
    let (aux, added) = match which {
        FormulationId::M1 | FormulationId::M2 => (2 * ik, ik),
        FormulationId::M3 | FormulationId::M4 => (3 * ik, 2 * ik),
    };
    StructuralRow {
        formulation: which,
        aux_reals: aux,
        added_constraints: added,
        form1_rows: ik,
    }
}

/// Builds all four formulations and reports their measured sizes.
pub fn structural_compare(inst: &LocationInstance) -> Result<Vec<StructuralRow>, ReformError> {
    let base_rows = inst.customers
        + inst.facilities * inst.levels * inst.customers
        + inst.facilities
        + inst.facilities * inst.levels;
    FormulationId::ALL
        .iter()
        .map(|&which| {
            let receipt = build(inst, which)?;
            let stats = crate::model::stats(&receipt.model);
            Ok(StructuralRow {
                formulation: which,
                aux_reals: stats.continuous_vars,
                added_constraints: stats.linear_rows - base_rows,
                form1_rows: stats.form1_rows,
            })
        })
        .collect()
}
