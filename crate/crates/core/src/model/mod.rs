//! Mixed-integer conic model container.
//!
//! A [`ConicModel`] is immutable once built: construction goes through
//! [`ModelBuilder`], which hands out dense variable ids in creation order.
//! Linear rows are stored in the homogeneous convention `expr = 0` /
//! `expr <= 0`, cone rows in both the norm ("primary") and quadratic
//! ("secondary") forms when a builder can supply both.

mod cbf;
mod json;

pub use cbf::export_cbf;
pub use json::{model_from_json, model_to_json};

use crate::conic::{
    secondary_residual, soc_residual, LinExpr, SecondaryForm, SocConstraintPrimary,
    SocConstraintSecondary, VarId,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub id: VarId,
    pub name: String,
    pub kind: VarKind,
    #[serde(with = "json::lower_bound")]
    pub lower: f64,
    #[serde(with = "json::upper_bound")]
    pub upper: f64,
}

/// Minimization model over continuous and binary variables with linear and
/// second-order cone rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicModel {
    pub(crate) variables: Vec<Variable>,
    pub(crate) objective: LinExpr,
    pub(crate) linear_eqs: Vec<LinExpr>,
    pub(crate) linear_ineqs: Vec<LinExpr>,
    pub(crate) soc_primary: Vec<SocConstraintPrimary>,
    pub(crate) soc_secondary: Vec<SocConstraintSecondary>,
    pub(crate) metadata: BTreeMap<String, String>,
}

impl ConicModel {
    pub fn builder() -> ModelBuilder {
        ModelBuilder::default()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> Option<&Variable> {
        self.variables.get(id.index())
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn linear_eqs(&self) -> &[LinExpr] {
        &self.linear_eqs
    }

    pub fn linear_ineqs(&self) -> &[LinExpr] {
        &self.linear_ineqs
    }

    pub fn soc_primary(&self) -> &[SocConstraintPrimary] {
        &self.soc_primary
    }

    pub fn soc_secondary(&self) -> &[SocConstraintSecondary] {
        &self.soc_secondary
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn binary_ids(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| v.id)
    }
}

#[derive(Debug, Default)]
pub struct ModelBuilder {
    variables: Vec<Variable>,
    objective: LinExpr,
    linear_eqs: Vec<LinExpr>,
    linear_ineqs: Vec<LinExpr>,
    soc_primary: Vec<SocConstraintPrimary>,
    soc_secondary: Vec<SocConstraintSecondary>,
    metadata: BTreeMap<String, String>,
}

impl ModelBuilder {
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> VarId {
        let id = VarId(self.variables.len() as u32);
        self.variables.push(Variable {
            id,
            name: name.into(),
            kind,
            lower,
            upper,
        });
        id
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Continuous, 0.0, f64::INFINITY)
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    /// Add `expr = 0`.
    pub fn add_eq(&mut self, expr: LinExpr) {
        self.linear_eqs.push(expr);
    }

    /// Add `expr <= 0`.
    pub fn add_ineq(&mut self, expr: LinExpr) {
        self.linear_ineqs.push(expr);
    }

    pub fn add_soc_primary(&mut self, c: SocConstraintPrimary) {
        self.soc_primary.push(c);
    }

    pub fn add_soc_secondary(&mut self, c: SocConstraintSecondary) {
        self.soc_secondary.push(c);
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn finish(self) -> ConicModel {
        ConicModel {
            variables: self.variables,
            objective: self.objective,
            linear_eqs: self.linear_eqs,
            linear_ineqs: self.linear_ineqs,
            soc_primary: self.soc_primary,
            soc_secondary: self.soc_secondary,
            metadata: self.metadata,
        }
    }
}

/// Values for every variable of a model, indexed by dense id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointAssignment {
    pub values: Vec<f64>,
}

impl PointAssignment {
    pub fn new(values: Vec<f64>) -> Self {
        PointAssignment { values }
    }

    pub fn value(&self, id: VarId) -> Option<f64> {
        self.values.get(id.index()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("point assigns {got} values but the model has {want} variables")]
    PointSize { got: usize, want: usize },
    #[error("model JSON is malformed: {0}")]
    Json(String),
    #[error("model failed validation: {0}")]
    Invalid(String),
}

/// One structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: DefectKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    EmptyBoundInterval,
    BinaryBoundsOutsideUnit,
    NonFiniteCoefficient,
    UndeclaredVariable,
    SecondaryBoundNotNonnegative,
    MissingSecondFactor,
    UnexpectedSecondFactor,
}

impl std::fmt::Display for Defect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

/// Structural validation. An empty defect list means every row references
/// declared variables, bounds are sane, and every secondary-form bound side
/// is visibly nonnegative.
pub fn validate(m: &ConicModel) -> Vec<Defect> {
    let mut defects = Vec::new();
    let n = m.variables.len();

    for v in &m.variables {
        if v.lower > v.upper {
            defects.push(Defect {
                kind: DefectKind::EmptyBoundInterval,
                detail: format!("variable {} ({}) has lower {} > upper {}", v.id, v.name, v.lower, v.upper),
            });
        }
        if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
            defects.push(Defect {
                kind: DefectKind::BinaryBoundsOutsideUnit,
                detail: format!(
                    "binary variable {} ({}) has bounds [{}, {}]",
                    v.id, v.name, v.lower, v.upper
                ),
            });
        }
    }

    let check_expr = |where_: &str, e: &LinExpr, defects: &mut Vec<Defect>| {
        if !e.all_finite() {
            defects.push(Defect {
                kind: DefectKind::NonFiniteCoefficient,
                detail: format!("{where_} contains a non-finite coefficient"),
            });
        }
        if let Some(v) = e.max_var() {
            if v.index() >= n {
                defects.push(Defect {
                    kind: DefectKind::UndeclaredVariable,
                    detail: format!("{where_} references {v} but the model has {n} variables"),
                });
            }
        }
    };

    check_expr("objective", &m.objective, &mut defects);
    for (i, e) in m.linear_eqs.iter().enumerate() {
        check_expr(&format!("equality row {i}"), e, &mut defects);
    }
    for (i, e) in m.linear_ineqs.iter().enumerate() {
        check_expr(&format!("inequality row {i}"), e, &mut defects);
    }
    for (i, c) in m.soc_primary.iter().enumerate() {
        for (t, row) in c.norm_rows.iter().enumerate() {
            check_expr(&format!("cone row {i}, norm component {t}"), row, &mut defects);
        }
        check_expr(&format!("cone row {i}, bound side"), &c.rhs, &mut defects);
    }

    for (i, c) in m.soc_secondary.iter().enumerate() {
        for (t, row) in c.quad_rows.iter().enumerate() {
            check_expr(
                &format!("secondary cone row {i}, quadratic component {t}"),
                row,
                &mut defects,
            );
        }
        check_expr(&format!("secondary cone row {i}, bound factor"), &c.y, &mut defects);
        if let Some(z) = &c.z {
            check_expr(
                &format!("secondary cone row {i}, second bound factor"),
                z,
                &mut defects,
            );
        }
        match (c.form, &c.z) {
            (SecondaryForm::FormI, Some(_)) => defects.push(Defect {
                kind: DefectKind::UnexpectedSecondFactor,
                detail: format!("secondary cone row {i} is form I but carries a second factor"),
            }),
            (SecondaryForm::FormII, None) => defects.push(Defect {
                kind: DefectKind::MissingSecondFactor,
                detail: format!("secondary cone row {i} is form II but lacks its second factor"),
            }),
            _ => {}
        }
        let check_bound = |label: &str, e: &LinExpr, defects: &mut Vec<Defect>| {
            if !provably_nonnegative(m, e) {
                defects.push(Defect {
                    kind: DefectKind::SecondaryBoundNotNonnegative,
                    detail: format!(
                        "secondary-form bound variable not provably nonnegative \
                         (row {i}, {label}: {e})"
                    ),
                });
            }
        };
        check_bound("first factor", &c.y, &mut defects);
        if let Some(z) = &c.z {
            check_bound("second factor", z, &mut defects);
        }
    }

    defects
}

/// A bound side is acceptable when it combines nonnegative variables with
/// positive coefficients and a nonnegative constant.
fn provably_nonnegative(m: &ConicModel, e: &LinExpr) -> bool {
    if e.constant() < 0.0 {
        return false;
    }
    e.terms().all(|(v, c)| {
        c > 0.0
            && m.variable(v)
                .map(|var| var.lower >= 0.0)
                .unwrap_or(false)
    })
}

/// Where a feasibility violation was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "row", content = "index")]
pub enum RowRef {
    LinearEq(usize),
    LinearIneq(usize),
    Bound(VarId),
    Integrality(VarId),
    SocPrimary(usize),
    SocSecondary(usize),
    SecondaryBoundSign(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(flatten)]
    pub row: RowRef,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

/// Check a full point against every row, bound, and integrality requirement
/// at absolute tolerance `tol`.
pub fn eval_feasible(
    m: &ConicModel,
    p: &PointAssignment,
    tol: f64,
) -> Result<FeasibilityReport, ModelError> {
    if p.values.len() != m.variables.len() {
        return Err(ModelError::PointSize {
            got: p.values.len(),
            want: m.variables.len(),
        });
    }
    let vals = &p.values;
    let mut violations = Vec::new();
    let mut push = |row: RowRef, amount: f64| {
        if amount > tol {
            violations.push(Violation { row, amount });
        }
    };

    for v in &m.variables {
        let x = vals[v.id.index()];
        push(RowRef::Bound(v.id), (v.lower - x).max(x - v.upper));
        if v.kind == VarKind::Binary {
            push(RowRef::Integrality(v.id), (x - x.round()).abs());
        }
    }
    let eval = |e: &LinExpr| e.eval(vals).map_err(|e| ModelError::Invalid(e.to_string()));
    for (i, e) in m.linear_eqs.iter().enumerate() {
        push(RowRef::LinearEq(i), eval(e)?.abs());
    }
    for (i, e) in m.linear_ineqs.iter().enumerate() {
        push(RowRef::LinearIneq(i), eval(e)?);
    }
    for (i, c) in m.soc_primary.iter().enumerate() {
        let r = soc_residual(c, vals).map_err(|e| ModelError::Invalid(e.to_string()))?;
        push(RowRef::SocPrimary(i), r);
    }
    for (i, c) in m.soc_secondary.iter().enumerate() {
        let r = secondary_residual(c, vals).map_err(|e| ModelError::Invalid(e.to_string()))?;
        push(RowRef::SocSecondary(i), r);
        let mut sign = -eval(&c.y)?;
        if let Some(z) = &c.z {
            sign = sign.max(-eval(z)?);
        }
        push(RowRef::SecondaryBoundSign(i), sign);
    }

    Ok(FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    })
}

/// Raw size counts of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelStats {
    pub continuous_vars: usize,
    pub binary_vars: usize,
    pub linear_rows: usize,
    pub form1_rows: usize,
    pub form2_rows: usize,
    pub soc_primary_rows: usize,
}

impl ModelStats {
    pub fn add(&self, other: &ModelStats) -> ModelStats {
        ModelStats {
            continuous_vars: self.continuous_vars + other.continuous_vars,
            binary_vars: self.binary_vars + other.binary_vars,
            linear_rows: self.linear_rows + other.linear_rows,
            form1_rows: self.form1_rows + other.form1_rows,
            form2_rows: self.form2_rows + other.form2_rows,
            soc_primary_rows: self.soc_primary_rows + other.soc_primary_rows,
        }
    }
}

pub fn stats(m: &ConicModel) -> ModelStats {
    ModelStats {
        continuous_vars: m
            .variables
            .iter()
            .filter(|v| v.kind == VarKind::Continuous)
            .count(),
        binary_vars: m
            .variables
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count(),
        linear_rows: m.linear_eqs.len() + m.linear_ineqs.len(),
        form1_rows: m
            .soc_secondary
            .iter()
            .filter(|c| c.form == SecondaryForm::FormI)
            .count(),
        form2_rows: m
            .soc_secondary
            .iter()
            .filter(|c| c.form == SecondaryForm::FormII)
            .count(),
        soc_primary_rows: m.soc_primary.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::LinExpr;

    fn small_model() -> ConicModel {
        let mut b = ConicModel::builder();
        let x = b.add_var("x", VarKind::Continuous, 0.0, 10.0);
        let y = b.add_binary("pick");
        let t = b.add_nonneg("t");
        let mut obj = LinExpr::zero();
        obj.add_term(x, 1.0).add_term(t, 2.0);
        b.set_objective(obj);
        let mut eq = LinExpr::zero();
        eq.add_term(x, 1.0).add_term(y, -3.0); // x = 3 y
        b.add_eq(eq);
        let mut ineq = LinExpr::with_constant(-8.0);
        ineq.add_term(x, 1.0).add_term(t, 1.0); // x + t <= 8
        b.add_ineq(ineq);
        b.add_soc_primary(SocConstraintPrimary {
            norm_rows: vec![LinExpr::var(x)],
            rhs: LinExpr::var(t),
        });
        b.add_soc_secondary(SocConstraintSecondary {
            form: SecondaryForm::FormI,
            quad_rows: vec![LinExpr::var(x)],
            y: LinExpr::var(t),
            z: None,
        });
        b.finish()
    }

    #[test]
    fn builder_assigns_dense_ids_in_order() {
        let m = small_model();
        let ids: Vec<u32> = m.variables().iter().map(|v| v.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(m.variables()[1].name, "pick");
    }

    #[test]
    fn valid_model_has_no_defects() {
        assert!(validate(&small_model()).is_empty());
    }

    #[test]
    fn unbounded_below_secondary_factor_is_a_defect() {
        let mut b = ConicModel::builder();
        let x = b.add_var("x", VarKind::Continuous, 0.0, 1.0);
        let free = b.add_var("free", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY);
        b.add_soc_secondary(SocConstraintSecondary {
            form: SecondaryForm::FormI,
            quad_rows: vec![LinExpr::var(x)],
            y: LinExpr::var(free),
            z: None,
        });
        let defects = validate(&b.finish());
        assert_eq!(defects.len(), 1);
        assert_eq!(defects[0].kind, DefectKind::SecondaryBoundNotNonnegative);
        assert!(defects[0].detail.contains("not provably nonnegative"));
    }

    #[test]
    fn negative_coefficient_on_bound_side_is_a_defect() {
        let mut b = ConicModel::builder();
        let x = b.add_nonneg("x");
        let t = b.add_nonneg("t");
        let mut y = LinExpr::var(t);
        y.add_term(x, -1.0);
        b.add_soc_secondary(SocConstraintSecondary {
            form: SecondaryForm::FormII,
            quad_rows: vec![LinExpr::var(x)],
            y,
            z: Some(LinExpr::var(t)),
        });
        let defects = validate(&b.finish());
        assert!(defects
            .iter()
            .any(|d| d.kind == DefectKind::SecondaryBoundNotNonnegative));
    }

    #[test]
    fn undeclared_variable_is_a_defect() {
        let mut b = ConicModel::builder();
        b.add_nonneg("x");
        b.add_ineq(LinExpr::var(VarId(5)));
        let defects = validate(&b.finish());
        assert_eq!(defects[0].kind, DefectKind::UndeclaredVariable);
    }

    #[test]
    fn eval_feasible_accepts_and_rejects() {
        let m = small_model();
        // x = 3, pick = 1, t = 3.5: all rows hold.
        let ok = eval_feasible(&m, &PointAssignment::new(vec![3.0, 1.0, 3.5]), 1e-6).unwrap();
        assert!(ok.feasible, "{:?}", ok.violations);

        // Fractional binary and violated cone.
        let bad = eval_feasible(&m, &PointAssignment::new(vec![3.0, 0.4, 1.0]), 1e-6).unwrap();
        assert!(!bad.feasible);
        assert!(bad
            .violations
            .iter()
            .any(|v| matches!(v.row, RowRef::Integrality(VarId(1)))));
        assert!(bad
            .violations
            .iter()
            .any(|v| matches!(v.row, RowRef::SocPrimary(0))));
        assert!(bad
            .violations
            .iter()
            .any(|v| matches!(v.row, RowRef::LinearEq(0))));
    }

    #[test]
    fn eval_feasible_requires_full_points() {
        let m = small_model();
        assert_eq!(
            eval_feasible(&m, &PointAssignment::new(vec![1.0]), 1e-6),
            Err(ModelError::PointSize { got: 1, want: 3 })
        );
    }

    #[test]
    fn stats_counts_and_additivity() {
        let m = small_model();
        let s = stats(&m);
        assert_eq!(s.continuous_vars, 2);
        assert_eq!(s.binary_vars, 1);
        assert_eq!(s.linear_rows, 2);
        assert_eq!(s.form1_rows, 1);
        assert_eq!(s.form2_rows, 0);
        assert_eq!(s.soc_primary_rows, 1);

        let empty = stats(&ConicModel::builder().finish());
        assert_eq!(empty, ModelStats::default());
        assert_eq!(s.add(&empty), s);
        let doubled = s.add(&s);
        assert_eq!(doubled.linear_rows, 4);
        assert_eq!(doubled.continuous_vars, 4);
    }
}
