use super::expr::{EvalError, LinExpr};
use serde::{Deserialize, Serialize};

/// Norm-form second-order cone constraint `|| rows(x) || <= rhs(x)`.
///
/// This is the representation the cutting loop and the text exporter work
/// with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocConstraintPrimary {
    pub norm_rows: Vec<LinExpr>,
    pub rhs: LinExpr,
}

/// Which quadratic shape a secondary-form constraint uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondaryForm {
    /// `sum_t rows_t(x)^2 <= y(x)^2` with `y` nonnegative.
    FormI,
    /// `sum_t rows_t(x)^2 <= y(x) z(x)` with `y`, `z` nonnegative.
    FormII,
}

/// Quadratic-form cone constraint as accepted by quadratically-aware
/// solvers. The quadratic part is the squared norm of `quad_rows`; the bound
/// side is `y^2` (form I) or `y z` (form II).
///
/// For either form to define a convex set the solver must be able to see
/// that the bound side is nonnegative, so `y` (and `z`) have to be built
/// from nonnegative variables with positive coefficients. Model validation
/// enforces that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocConstraintSecondary {
    pub form: SecondaryForm,
    pub quad_rows: Vec<LinExpr>,
    pub y: LinExpr,
    pub z: Option<LinExpr>,
}

/// Hyperbolic constraint `|| x(.) ||^2 <= y(.) z(.)`, `y, z >= 0`.
///
/// `x` holds the factored rows of the quadratic side; the single-row case is
/// the plain `x^2 <= y z`. Multi-row instances arise when a weighted sum of
/// squared variables is bounded by a product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicConstraint {
    pub x: Vec<LinExpr>,
    pub y: LinExpr,
    pub z: LinExpr,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConicError {
    #[error("constraint is not in the expected form: {0}")]
    WrongForm(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no separating cut at this point: norm part vanishes while the bound side is {rhs}")]
    DegenerateCut { rhs: f64 },
    #[error("point satisfies the constraint (residual {residual}); nothing to cut")]
    NotViolated { residual: f64 },
}

/// Rewrite `||x||^2 <= y z` as the norm constraint
/// `|| (2 x, y - z) || <= y + z`.
///
/// The two sides square to `4 ||x||^2 + (y - z)^2` and `(y + z)^2`, whose
/// difference is `4 (y z - ||x||^2)`, so together with `y + z >= 0` the two
/// constraint sets coincide wherever `y, z >= 0`.
pub fn hyperbolic_to_soc(h: &HyperbolicConstraint) -> SocConstraintPrimary {
    let mut rows: Vec<LinExpr> = h.x.iter().map(|r| r.scaled(2.0)).collect();
    rows.push(h.y.minus(&h.z));
    SocConstraintPrimary {
        norm_rows: rows,
        rhs: h.y.plus(&h.z),
    }
}

/// Rewrite a form-II constraint `||q||^2 <= y z` as the form-I constraint
/// `2 ||q||^2 + y^2 + z^2 <= (y + z)^2`.
pub fn form2_to_form1(c: &SocConstraintSecondary) -> Result<SocConstraintSecondary, ConicError> {
    if c.form != SecondaryForm::FormII {
        return Err(ConicError::WrongForm(
            "only form-II constraints can be rewritten".into(),
        ));
    }
    let z = c
        .z
        .as_ref()
        .ok_or_else(|| ConicError::WrongForm("form-II constraint lacks its second factor".into()))?;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut rows: Vec<LinExpr> = c.quad_rows.iter().map(|r| r.scaled(sqrt2)).collect();
    rows.push(c.y.clone());
    rows.push(z.clone());
    Ok(SocConstraintSecondary {
        form: SecondaryForm::FormI,
        quad_rows: rows,
        y: c.y.plus(z),
        z: None,
    })
}

/// Signed violation of a norm-form constraint at a point:
/// `|| rows(p) || - rhs(p)`. Nonpositive means satisfied.
pub fn soc_residual(c: &SocConstraintPrimary, values: &[f64]) -> Result<f64, ConicError> {
    let mut sq = 0.0;
    for row in &c.norm_rows {
        let v = row.eval(values)?;
        sq += v * v;
    }
    Ok(sq.sqrt() - c.rhs.eval(values)?)
}

/// Quadratic-side residual of a secondary-form constraint:
/// `||quad_rows(p)||^2 - bound(p)`. The sign conditions on `y`/`z` are
/// checked separately by model evaluation.
pub fn secondary_residual(
    c: &SocConstraintSecondary,
    values: &[f64],
) -> Result<f64, ConicError> {
    let mut sq = 0.0;
    for row in &c.quad_rows {
        let v = row.eval(values)?;
        sq += v * v;
    }
    let yv = c.y.eval(values)?;
    let bound = match c.form {
        SecondaryForm::FormI => yv * yv,
        SecondaryForm::FormII => {
            let z = c
                .z
                .as_ref()
                .ok_or_else(|| ConicError::WrongForm("form-II constraint lacks its second factor".into()))?;
            yv * z.eval(values)?
        }
    };
    Ok(sq - bound)
}

/// Supporting-hyperplane cut separating a violated point from the cone.
///
/// With `u = rows(p)` nonzero, every feasible `x` satisfies
/// `u . rows(x) / ||u|| <= || rows(x) || <= rhs(x)` by Cauchy-Schwarz, while
/// the violated point evaluates the returned expression to exactly the
/// violation. The expression is meant as `cut(x) <= 0`.
///
/// A point violating the constraint with all norm rows zero (possible only
/// when `rhs(p) < 0`) admits no such hyperplane; callers handle that case by
/// enforcing `rhs(x) >= 0` instead, which the [`ConicError::DegenerateCut`]
/// error signals.
pub fn gradient_cut(c: &SocConstraintPrimary, values: &[f64]) -> Result<LinExpr, ConicError> {
    let u: Vec<f64> = c
        .norm_rows
        .iter()
        .map(|r| r.eval(values))
        .collect::<Result<_, _>>()?;
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rhs_val = c.rhs.eval(values)?;
    let residual = norm - rhs_val;
    if residual <= 0.0 {
        return Err(ConicError::NotViolated { residual });
    }
    if norm == 0.0 {
        return Err(ConicError::DegenerateCut { rhs: rhs_val });
    }
    let mut cut = LinExpr::zero();
    for (row, &uv) in c.norm_rows.iter().zip(&u) {
        if uv != 0.0 {
            cut.add_scaled(row, uv / norm);
        }
    }
    cut.add_scaled(&c.rhs, -1.0);
    Ok(cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::VarId;
    use crate::rng::SplitMix64;

    fn v(i: u32) -> LinExpr {
        LinExpr::var(VarId(i))
    }

    // || (x0, x1) || <= x2
    fn cone() -> SocConstraintPrimary {
        SocConstraintPrimary {
            norm_rows: vec![v(0), v(1)],
            rhs: v(2),
        }
    }

    #[test]
    fn residual_frozen_points() {
        let c = cone();
        assert_eq!(soc_residual(&c, &[3.0, 4.0, 5.0]).unwrap(), 0.0);
        assert_eq!(soc_residual(&c, &[3.0, 4.0, 6.0]).unwrap(), -1.0);
        assert_eq!(soc_residual(&c, &[3.0, 4.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn hyperbolic_matches_product_side() {
        // x0^2 <= x1 x2 against its norm form, on a sampled box.
        let h = HyperbolicConstraint {
            x: vec![v(0)],
            y: v(1),
            z: v(2),
        };
        let soc = hyperbolic_to_soc(&h);
        let mut r = SplitMix64::new(11);
        for _ in 0..10_000 {
            let p = [r.uniform(-4.0, 4.0), r.uniform(0.0, 4.0), r.uniform(0.0, 4.0)];
            let hyp_ok = p[0] * p[0] <= p[1] * p[2] + 1e-12;
            let soc_ok = soc_residual(&soc, &p).unwrap() <= 1e-12;
            assert_eq!(hyp_ok, soc_ok, "disagree at {p:?}");
        }
    }

    #[test]
    fn form2_rewrite_preserves_verdicts() {
        // x0^2 + x1^2 <= y z, y = x2, z = x3.
        let c2 = SocConstraintSecondary {
            form: SecondaryForm::FormII,
            quad_rows: vec![v(0), v(1)],
            y: v(2),
            z: Some(v(3)),
        };
        let c1 = form2_to_form1(&c2).unwrap();
        assert_eq!(c1.form, SecondaryForm::FormI);
        assert_eq!(c1.quad_rows.len(), 4);
        assert!(c1.z.is_none());
        let mut r = SplitMix64::new(5);
        for _ in 0..10_000 {
            let p = [
                r.uniform(-2.0, 2.0),
                r.uniform(-2.0, 2.0),
                r.uniform(0.0, 3.0),
                r.uniform(0.0, 3.0),
            ];
            let v2 = secondary_residual(&c2, &p).unwrap() <= 1e-9;
            let v1 = secondary_residual(&c1, &p).unwrap() <= 1e-9;
            assert_eq!(v2, v1, "verdicts split at {p:?}");
        }
        // Rewriting twice is not possible; the result is already form I.
        assert!(form2_to_form1(&c1).is_err());
    }

    #[test]
    fn cut_separates_and_stays_valid() {
        let c = cone();
        let p = [3.0, 4.0, 4.0];
        let cut = gradient_cut(&c, &p).unwrap();
        // Violated point sits at exactly its residual above the hyperplane.
        assert!((cut.eval(&p).unwrap() - 1.0).abs() < 1e-12);
        // Feasible points all stay on the nonpositive side.
        let mut r = SplitMix64::new(23);
        for _ in 0..10_000 {
            let a = r.uniform(-5.0, 5.0);
            let b = r.uniform(-5.0, 5.0);
            let t = (a * a + b * b).sqrt() + r.uniform(0.0, 3.0);
            let q = [a, b, t];
            assert!(cut.eval(&q).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn cut_requires_violation_and_nonzero_norm() {
        let c = cone();
        assert!(matches!(
            gradient_cut(&c, &[0.3, 0.4, 5.0]),
            Err(ConicError::NotViolated { .. })
        ));
        assert!(matches!(
            gradient_cut(&c, &[0.0, 0.0, -1.0]),
            Err(ConicError::DegenerateCut { rhs }) if rhs == -1.0
        ));
    }

    #[test]
    fn multi_row_hyperbolic_norm_form() {
        // (x0^2 + x1^2) <= y z with two factored rows.
        let h = HyperbolicConstraint {
            x: vec![v(0).scaled(2.0), v(1)],
            y: v(2),
            z: v(3),
        };
        let soc = hyperbolic_to_soc(&h);
        assert_eq!(soc.norm_rows.len(), 3);
        let mut r = SplitMix64::new(31);
        for _ in 0..5_000 {
            let p = [
                r.uniform(-2.0, 2.0),
                r.uniform(-2.0, 2.0),
                r.uniform(0.0, 6.0),
                r.uniform(0.0, 6.0),
            ];
            let lhs = 4.0 * p[0] * p[0] + p[1] * p[1];
            let hyp_ok = lhs <= p[2] * p[3] + 1e-12;
            let soc_ok = soc_residual(&soc, &p).unwrap() <= 1e-12;
            assert_eq!(hyp_ok, soc_ok);
        }
    }
}
