//! Budget constraints on queue performance metrics in a general
//! server-selection setting.
//!
//! One server pool out of `P` candidates is activated (`X_p` binary, sum
//! one); demand classes `r` are routed to pools through `Y_pr`, capped by
//! `U_pr X_p`. [`metric_constraint`] appends rows enforcing
//! `sum_p metric_p <= rhs` for a chosen queue metric, linearized through
//! one auxiliary variable per pool plus a hyperbolic (two-factor) row:
//!
//! * [`MetricVariant::RForm`]: `r_p >= A_p^2 / (mu_p - A_p)` where `A_p` is
//!   the pooled demand; budget charges
//!   `(1 + mu^2 sigma^2) r_p / (2 mu) + A_p / mu` per pool. Only the
//!   customers-in-system family of metrics has this shape.
//! * [`MetricVariant::SForm`]: `s_p >= A_p / (mu_p - A_p)` through
//!   `A^2 <= (s mu - A)(mu - A)`; works for every metric.
//! * [`MetricVariant::BinarySForm`]: same `s_p` through
//!   `sum_r lambda_r Y_pr^2 <= s_p (mu_p - A_p)`, valid only for binary
//!   routing variables.
//!
//! Queue-length metrics subtract the utilization `A_p / mu_p`, waiting-time
//! metrics subtract `X_p / mu_p`; both shifts are affine, so the budget row
//! stays linear. When every pool is exponential (`mu^2 sigma^2 = 1`) or
//! deterministic (`sigma = 0`) the coefficients collapse to the familiar
//! simplified forms, which are emitted directly.

use super::ReformError;
use crate::conic::{hyperbolic_to_soc, HyperbolicConstraint, LinExpr, VarId};
use crate::model::{ModelBuilder, PointAssignment, VarKind};
use crate::queue::MetricKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricVariant {
    RForm,
    SForm,
    BinarySForm,
}

/// Scale of the `s_p` coefficient in customers-in-system budgets.
///
/// [`STermScale::Unit`] charges `(1 + mu^2 sigma^2) s_p / 2`, the value
/// that makes a tight `s_p` reproduce the closed-form metric (verified in
/// the tests below). [`STermScale::InverseRate`] divides that term by
/// `mu_p`, matching a published variant of the budget; it is kept behind
/// this opt-in flag for comparison runs. Waiting-time budgets are not
/// affected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum STermScale {
    #[default]
    Unit,
    InverseRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralContext {
    /// Service rate per pool, positive.
    pub mu: Vec<f64>,
    /// Service-time variance per pool, nonnegative.
    pub sigma2: Vec<f64>,
    /// Demand rate per class, nonnegative.
    pub lambda: Vec<f64>,
    /// Routing cap `u[p][r]` on the fraction of class `r` sent to pool `p`.
    pub u: Vec<Vec<f64>>,
    /// Declare the routing variables binary instead of continuous.
    pub y_binary: bool,
    /// Right side of the budget; may reference variables the caller already
    /// created on the same builder.
    pub rhs: LinExpr,
    pub s_scale: STermScale,
}

impl GeneralContext {
    fn check(&self) -> Result<(), ReformError> {
        let bad = |msg: String| Err(ReformError::InvalidContext(msg));
        let p_n = self.mu.len();
        let r_n = self.lambda.len();
        if p_n == 0 || r_n == 0 {
            return bad(format!("empty dimension: P={p_n} R={r_n}"));
        }
        if self.sigma2.len() != p_n {
            return bad(format!("sigma2 must have length {p_n}"));
        }
        if self.u.len() != p_n || self.u.iter().any(|row| row.len() != r_n) {
            return bad(format!("u must be {p_n}x{r_n}"));
        }
        if self.mu.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return bad("service rates must be positive and finite".into());
        }
        if self.sigma2.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("service variances must be nonnegative and finite".into());
        }
        if self.lambda.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("class rates must be nonnegative and finite".into());
        }
        if self.u.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("routing caps must be nonnegative and finite".into());
        }
        if !self.rhs.all_finite() {
            return bad("budget right side has non-finite coefficients".into());
        }
        Ok(())
    }
}

/// Everything [`metric_constraint`] created: variable ids per family, the
/// hyperbolic rows backing the cone constraints, and the budget row as
/// appended (`lhs - rhs`, constrained `<= 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBundle {
    pub kind: MetricKind,
    pub variant: MetricVariant,
    /// Pool activation, `x[p]`.
    pub x: Vec<VarId>,
    /// Routing, `y[p][r]`.
    pub y: Vec<Vec<VarId>>,
    /// One auxiliary per pool (`r_p` or `s_p` depending on the variant).
    pub aux: Vec<VarId>,
    pub hyperbolic: Vec<HyperbolicConstraint>,
    pub budget: LinExpr,
}

#[derive(Clone, Copy, PartialEq)]
enum ServiceRegime {
    General,
    /// `mu^2 sigma^2 = 1` everywhere: exponential service.
    Markov,
    /// `sigma = 0` everywhere.
    Deterministic,
}

fn detect_regime(ctx: &GeneralContext) -> ServiceRegime {
    let markov = ctx
        .mu
        .iter()
        .zip(&ctx.sigma2)
        .all(|(&mu, &s2)| (mu * mu * s2 - 1.0).abs() <= 1e-12);
    if markov {
        return ServiceRegime::Markov;
    }
    if ctx.sigma2.iter().all(|&s2| s2 == 0.0) {
        return ServiceRegime::Deterministic;
    }
    ServiceRegime::General
}

pub fn metric_constraint(
    b: &mut ModelBuilder,
    ctx: &GeneralContext,
    kind: MetricKind,
    variant: MetricVariant,
) -> Result<MetricBundle, ReformError> {
    ctx.check()?;
    // Customers-in-system metrics share one budget shape, waiting-time
    // metrics another; the queue-only metrics differ by an affine shift.
    let (time_based, shift_load, shift_x) = match kind {
        MetricKind::L | MetricKind::TW => (false, false, false),
        MetricKind::Lq | MetricKind::TWq => (false, true, false),
        MetricKind::W => (true, false, false),
        MetricKind::Wq => (true, false, true),
    };
    if time_based && variant == MetricVariant::RForm {
        return Err(ReformError::Unsupported(
            "waiting-time budgets need the s-shaped auxiliary; the r-shaped one only bounds customers in system".into(),
        ));
    }
    if variant == MetricVariant::BinarySForm && !ctx.y_binary {
        return Err(ReformError::BinaryYRequired);
    }

    let p_n = ctx.mu.len();
    let r_n = ctx.lambda.len();
    let x: Vec<VarId> = (0..p_n).map(|p| b.add_binary(format!("X_{p}"))).collect();
    let y: Vec<Vec<VarId>> = (0..p_n)
        .map(|p| {
            (0..r_n)
                .map(|r| {
                    if ctx.y_binary {
                        b.add_binary(format!("Y_{p}_{r}"))
                    } else {
                        b.add_var(format!("Y_{p}_{r}"), VarKind::Continuous, 0.0, ctx.u[p][r])
                    }
                })
                .collect()
        })
        .collect();
    let aux_name = if variant == MetricVariant::RForm { "r" } else { "s" };
    let aux: Vec<VarId> = (0..p_n)
        .map(|p| b.add_nonneg(format!("{aux_name}_{p}")))
        .collect();

    let load = |p: usize| -> LinExpr {
        let mut e = LinExpr::zero();
        for r in 0..r_n {
            e.add_term(y[p][r], ctx.lambda[r]);
        }
        e
    };

    // Total routed demand within the activated capacity.
    let mut capacity = LinExpr::zero();
    for p in 0..p_n {
        capacity.add_scaled(&load(p), 1.0);
        capacity.add_term(x[p], -ctx.mu[p]);
    }
    b.add_ineq(capacity);
    // Exactly one pool runs.
    let mut one = LinExpr::with_constant(-1.0);
    for p in 0..p_n {
        one.add_term(x[p], 1.0);
    }
    b.add_eq(one);
    // Routing only into the activated pool.
    for p in 0..p_n {
        for r in 0..r_n {
            let mut link = LinExpr::var(y[p][r]);
            link.add_term(x[p], -ctx.u[p][r]);
            b.add_ineq(link);
        }
    }

    let regime = detect_regime(ctx);
    let mut budget = LinExpr::zero();
    let mut hyperbolic = Vec::with_capacity(p_n);
    for p in 0..p_n {
        let mu = ctx.mu[p];
        let c = mu * mu * ctx.sigma2[p];
        let pool_load = load(p);

        let (a_aux, a_load, a_x) = if time_based {
            match regime {
                ServiceRegime::Markov => (1.0 / mu, 0.0, 1.0 / mu),
                ServiceRegime::Deterministic => (1.0 / (2.0 * mu), 0.0, 1.0 / mu),
                ServiceRegime::General => ((1.0 + c) / (2.0 * mu), 0.0, 1.0 / mu),
            }
        } else {
            match variant {
                MetricVariant::RForm => match regime {
                    ServiceRegime::Markov => (1.0 / mu, 1.0 / mu, 0.0),
                    ServiceRegime::Deterministic => (1.0 / (2.0 * mu), 1.0 / mu, 0.0),
                    ServiceRegime::General => ((1.0 + c) / (2.0 * mu), 1.0 / mu, 0.0),
                },
                MetricVariant::SForm | MetricVariant::BinarySForm => {
                    // The opt-in scale touches only the auxiliary term; the
                    // demand term is the same in both published variants.
                    let scale = match ctx.s_scale {
                        STermScale::Unit => 1.0,
                        STermScale::InverseRate => 1.0 / mu,
                    };
                    match regime {
                        ServiceRegime::Markov => (scale, 0.0, 0.0),
                        ServiceRegime::Deterministic => (scale / 2.0, 0.5, 0.0),
                        ServiceRegime::General => {
                            (scale * (1.0 + c) / 2.0, (1.0 - c) / 2.0, 0.0)
                        }
                    }
                }
            }
        };
        budget.add_term(aux[p], a_aux);
        // a_load is the multiplier on the pooled demand A_p; for the
        // s-shaped budgets it still carries the 1/mu of the closed form.
        let load_coeff = match (time_based, variant) {
            (false, MetricVariant::RForm) => a_load,
            (false, _) => a_load / mu,
            (true, _) => 0.0,
        };
        if load_coeff != 0.0 {
            budget.add_scaled(&pool_load, load_coeff);
        }
        if a_x != 0.0 {
            budget.add_term(x[p], a_x);
        }
        if shift_load {
            budget.add_scaled(&pool_load, -1.0 / mu);
        }
        if shift_x {
            budget.add_term(x[p], -1.0 / mu);
        }

        let mut slack = LinExpr::with_constant(mu);
        slack = slack.minus(&pool_load);
        let h = match variant {
            MetricVariant::RForm => HyperbolicConstraint {
                x: vec![pool_load.clone()],
                y: LinExpr::var(aux[p]),
                z: slack,
            },
            MetricVariant::SForm => {
                let mut y_side = LinExpr::term(aux[p], mu);
                y_side = y_side.minus(&pool_load);
                HyperbolicConstraint {
                    x: vec![pool_load.clone()],
                    y: y_side,
                    z: slack,
                }
            }
            MetricVariant::BinarySForm => HyperbolicConstraint {
                x: (0..r_n)
                    .map(|r| LinExpr::term(y[p][r], ctx.lambda[r].sqrt()))
                    .collect(),
                y: LinExpr::var(aux[p]),
                z: slack,
            },
        };
        b.add_soc_primary(hyperbolic_to_soc(&h));
        hyperbolic.push(h);
    }

    let row = budget.minus(&ctx.rhs);
    b.add_ineq(row.clone());
    Ok(MetricBundle {
        kind,
        variant,
        x,
        y,
        aux,
        hyperbolic,
        budget: row,
    })
}

impl MetricBundle {
    /// Minimal feasible auxiliary value per pool for concrete routing
    /// values. For the squared-routing variant this is only the true
    /// congestion level when the routing values are 0/1.
    pub fn tight_aux_values(
        &self,
        ctx: &GeneralContext,
        y_vals: &[Vec<f64>],
    ) -> Result<Vec<f64>, ReformError> {
        (0..ctx.mu.len())
            .map(|p| {
                let pooled: f64 = (0..ctx.lambda.len())
                    .map(|r| ctx.lambda[r] * y_vals[p][r])
                    .sum();
                let quad: f64 = (0..ctx.lambda.len())
                    .map(|r| ctx.lambda[r] * y_vals[p][r] * y_vals[p][r])
                    .sum();
                let slack = ctx.mu[p] - pooled;
                if pooled == 0.0 {
                    return Ok(0.0);
                }
                if slack <= 0.0 {
                    return Err(ReformError::InvalidContext(format!(
                        "pool {p} is saturated: pooled demand {pooled} against rate {}",
                        ctx.mu[p]
                    )));
                }
                Ok(match self.variant {
                    MetricVariant::RForm => pooled * pooled / slack,
                    MetricVariant::SForm => pooled / slack,
                    MetricVariant::BinarySForm => quad / slack,
                })
            })
            .collect()
    }

    /// Assembles a point over `n_vars` model variables with the given
    /// activation/routing and every auxiliary at its minimal feasible
    /// value; positions owned by other parts of the model stay zero.
    pub fn tight_point(
        &self,
        ctx: &GeneralContext,
        x_vals: &[f64],
        y_vals: &[Vec<f64>],
        n_vars: usize,
    ) -> Result<PointAssignment, ReformError> {
        let aux = self.tight_aux_values(ctx, y_vals)?;
        let mut values = vec![0.0; n_vars];
        for (p, &id) in self.x.iter().enumerate() {
            values[id.index()] = x_vals[p];
        }
        for (p, row) in self.y.iter().enumerate() {
            for (r, &id) in row.iter().enumerate() {
                values[id.index()] = y_vals[p][r];
            }
        }
        for (p, &id) in self.aux.iter().enumerate() {
            values[id.index()] = aux[p];
        }
        Ok(PointAssignment::new(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_feasible, validate, ConicModel};
    use crate::queue::{self, QueueParams};

    fn ctx_single(mu: f64, sigma2: f64) -> GeneralContext {
        GeneralContext {
            mu: vec![mu],
            sigma2: vec![sigma2],
            lambda: vec![1.0],
            u: vec![vec![1.0]],
            y_binary: false,
            rhs: LinExpr::with_constant(10.0),
            s_scale: STermScale::Unit,
        }
    }

    fn build(
        ctx: &GeneralContext,
        kind: MetricKind,
        variant: MetricVariant,
    ) -> (ConicModel, MetricBundle) {
        let mut b = ConicModel::builder();
        let bundle = metric_constraint(&mut b, ctx, kind, variant).unwrap();
        (b.finish(), bundle)
    }

    /// `0.09` is inexact in binary, so the squared-cv arithmetic lands a
    /// final bit away from the literal; compare to machine precision.
    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn general_regime_coefficients() {
        let ctx = ctx_single(2.0, 0.09); // mu^2 sigma^2 = 0.36
        let (m, bundle) = build(&ctx, MetricKind::L, MetricVariant::RForm);
        assert!(validate(&m).is_empty());
        close(bundle.budget.coeff(bundle.aux[0]), 1.36 / 4.0);
        close(bundle.budget.coeff(bundle.y[0][0]), 0.5);
        close(bundle.budget.constant(), -10.0);

        let (_, bundle) = build(&ctx, MetricKind::L, MetricVariant::SForm);
        close(bundle.budget.coeff(bundle.aux[0]), 1.36 / 2.0);
        close(bundle.budget.coeff(bundle.y[0][0]), 0.64 / 4.0);

        let (_, bundle) = build(&ctx, MetricKind::W, MetricVariant::SForm);
        close(bundle.budget.coeff(bundle.aux[0]), 1.36 / 4.0);
        close(bundle.budget.coeff(bundle.x[0]), 0.5);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.0);
    }

    #[test]
    fn exponential_service_drops_the_demand_term() {
        let ctx = ctx_single(2.0, 0.25); // mu^2 sigma^2 = 1 exactly
        let (_, bundle) = build(&ctx, MetricKind::L, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 1.0);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.0);

        let mut scaled = ctx.clone();
        scaled.s_scale = STermScale::InverseRate;
        let (_, bundle) = build(&scaled, MetricKind::L, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.5);

        let (_, bundle) = build(&ctx, MetricKind::L, MetricVariant::RForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.5);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.5);

        let (_, bundle) = build(&ctx, MetricKind::W, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.5);
        assert_eq!(bundle.budget.coeff(bundle.x[0]), 0.5);
    }

    #[test]
    fn deterministic_service_coefficients() {
        let ctx = ctx_single(2.0, 0.0);
        let (_, bundle) = build(&ctx, MetricKind::L, MetricVariant::RForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.25);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.5);

        let (_, bundle) = build(&ctx, MetricKind::L, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.5);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.25);

        let (_, bundle) = build(&ctx, MetricKind::W, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.25);
        assert_eq!(bundle.budget.coeff(bundle.x[0]), 0.5);

        let mut scaled = ctx.clone();
        scaled.s_scale = STermScale::InverseRate;
        let (_, bundle) = build(&scaled, MetricKind::L, MetricVariant::SForm);
        assert_eq!(bundle.budget.coeff(bundle.aux[0]), 0.25);
        assert_eq!(bundle.budget.coeff(bundle.y[0][0]), 0.25);
    }

    #[test]
    fn queue_only_metrics_shift_the_budget() {
        let ctx = ctx_single(2.0, 0.09);
        let (_, full) = build(&ctx, MetricKind::L, MetricVariant::RForm);
        let (_, queue_only) = build(&ctx, MetricKind::Lq, MetricVariant::RForm);
        let diff = full.budget.coeff(full.y[0][0]) - queue_only.budget.coeff(queue_only.y[0][0]);
        assert!((diff - 0.5).abs() < 1e-15); // lambda / mu

        let (_, wq) = build(&ctx, MetricKind::Wq, MetricVariant::SForm);
        let (_, w) = build(&ctx, MetricKind::W, MetricVariant::SForm);
        assert_eq!(w.budget.coeff(w.x[0]) - wq.budget.coeff(wq.x[0]), 0.5);
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let ctx = ctx_single(2.0, 0.09);
        let mut b = ConicModel::builder();
        assert!(matches!(
            metric_constraint(&mut b, &ctx, MetricKind::W, MetricVariant::RForm),
            Err(ReformError::Unsupported(_))
        ));
        assert!(matches!(
            metric_constraint(&mut b, &ctx, MetricKind::L, MetricVariant::BinarySForm),
            Err(ReformError::BinaryYRequired)
        ));
        let mut bad = ctx.clone();
        bad.mu = vec![-1.0];
        assert!(matches!(
            metric_constraint(&mut b, &bad, MetricKind::L, MetricVariant::SForm),
            Err(ReformError::InvalidContext(_))
        ));
    }

    #[test]
    fn tight_point_reproduces_the_closed_form_metric() {
        for (sigma2, kind, variant) in [
            (0.09, MetricKind::L, MetricVariant::RForm),
            (0.09, MetricKind::L, MetricVariant::SForm),
            (0.25, MetricKind::L, MetricVariant::SForm),
            (0.0, MetricKind::L, MetricVariant::RForm),
            (0.09, MetricKind::W, MetricVariant::SForm),
            (0.25, MetricKind::W, MetricVariant::SForm),
            (0.0, MetricKind::W, MetricVariant::SForm),
            (0.09, MetricKind::Lq, MetricVariant::SForm),
            (0.09, MetricKind::Wq, MetricVariant::SForm),
        ] {
            let ctx = ctx_single(2.0, sigma2);
            let (m, bundle) = build(&ctx, kind, variant);
            let point = bundle
                .tight_point(&ctx, &[1.0], &[vec![1.0]], m.n_vars())
                .unwrap();
            let got = bundle.budget.eval(&point.values).unwrap() + 10.0; // undo -rhs
            let params = QueueParams::new(1.0, 2.0, sigma2.sqrt()).unwrap();
            let want = queue::metric(kind, &params).unwrap();
            assert!(
                (got - want).abs() <= 1e-9,
                "{kind} {variant:?} sigma2={sigma2}: {got} vs {want}"
            );
            let report = eval_feasible(&m, &point, 1e-9).unwrap();
            assert!(report.feasible, "{kind} {variant:?}: {:?}", report.violations);
        }
    }

    #[test]
    fn binary_routing_tight_point_matches_plain_routing() {
        let mut ctx = GeneralContext {
            mu: vec![3.0, 2.0],
            sigma2: vec![0.04, 0.09],
            lambda: vec![0.5, 0.8],
            u: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            y_binary: true,
            rhs: LinExpr::with_constant(10.0),
            s_scale: STermScale::Unit,
        };
        let (m, binary) = build(&ctx, MetricKind::L, MetricVariant::BinarySForm);
        assert!(validate(&m).is_empty());
        let y_vals = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let tight_b = binary.tight_aux_values(&ctx, &y_vals).unwrap();

        ctx.y_binary = false;
        let (_, plain) = build(&ctx, MetricKind::L, MetricVariant::SForm);
        let tight_s = plain.tight_aux_values(&ctx, &y_vals).unwrap();
        assert_eq!(tight_b, tight_s);
        assert_eq!(tight_b[1], 0.0);

        // Saturating pool 1 (rate 2.0 with demand 2.0 via fractional reuse)
        // is refused.
        let sat = vec![vec![0.0, 0.0], vec![1.0, 1.875]];
        assert!(plain.tight_aux_values(&ctx, &sat).is_err());
    }

    #[test]
    fn hyperbolic_rows_cover_every_pool() {
        let ctx = GeneralContext {
            mu: vec![3.0, 2.0, 5.0],
            sigma2: vec![0.0, 0.09, 0.01],
            lambda: vec![0.5, 0.8],
            u: vec![vec![1.0; 2]; 3],
            y_binary: false,
            rhs: LinExpr::with_constant(4.0),
            s_scale: STermScale::Unit,
        };
        let (m, bundle) = build(&ctx, MetricKind::L, MetricVariant::SForm);
        assert_eq!(bundle.hyperbolic.len(), 3);
        assert_eq!(m.soc_primary().len(), 3);
        // One capacity row, 6 routing links, one budget row.
        assert_eq!(m.linear_ineqs().len(), 8);
        assert_eq!(m.linear_eqs().len(), 1);
    }
}
