//! Text export in conic-benchmark layout.
//!
//! All variables are declared free; bounds are written as explicit
//! nonnegative rows so the scalar constraint map carries the whole model.
//! Cone rows are emitted bound-entry-first: a block `Q k+1` lists the bound
//! side, then the k norm components. Only the norm-form cone rows are
//! exported; builders that populate both forms keep them synchronized, so
//! the export still describes the full feasible set.
//! Output is byte-deterministic for a given model.

use super::ConicModel;
use crate::conic::{LinExpr, VarId};
use std::fmt::Write as _;

struct Row {
    expr: LinExpr,
    /// Flips the sign of every entry on output; used for `upper - x` rows.
    negate: bool,
}

impl Row {
    fn plain(expr: LinExpr) -> Row {
        Row { expr, negate: false }
    }
}

pub fn export_cbf(m: &ConicModel) -> String {
    let mut rows: Vec<Row> = Vec::new();
    let mut blocks: Vec<(String, usize)> = Vec::new();

    let n_eq = m.linear_eqs.len();
    if n_eq > 0 {
        blocks.push(("L=".to_string(), n_eq));
        rows.extend(m.linear_eqs.iter().cloned().map(Row::plain));
    }
    let n_ineq = m.linear_ineqs.len();
    if n_ineq > 0 {
        blocks.push(("L-".to_string(), n_ineq));
        rows.extend(m.linear_ineqs.iter().cloned().map(Row::plain));
    }

    let mut bound_rows: Vec<Row> = Vec::new();
    for v in &m.variables {
        if v.lower.is_finite() {
            // x - lower >= 0
            let mut e = LinExpr::with_constant(-v.lower);
            e.add_term(v.id, 1.0);
            bound_rows.push(Row::plain(e));
        }
    }
    for v in &m.variables {
        if v.upper.is_finite() {
            // upper - x >= 0, written by negating x - upper
            let mut e = LinExpr::with_constant(-v.upper);
            e.add_term(v.id, 1.0);
            bound_rows.push(Row { expr: e, negate: true });
        }
    }
    if !bound_rows.is_empty() {
        blocks.push(("L+".to_string(), bound_rows.len()));
        rows.extend(bound_rows);
    }

    for c in &m.soc_primary {
        blocks.push(("Q".to_string(), 1 + c.norm_rows.len()));
        rows.push(Row::plain(c.rhs.clone()));
        rows.extend(c.norm_rows.iter().cloned().map(Row::plain));
    }

    let mut out = String::new();
    for (k, v) in &m.metadata {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str("VER\n3\n\nOBJSENSE\nMIN\n\n");

    let n = m.variables.len();
    let _ = writeln!(out, "VAR\n{n} 1\nF {n}\n");

    let ints: Vec<VarId> = m.binary_ids().collect();
    if !ints.is_empty() {
        let _ = writeln!(out, "INT\n{}", ints.len());
        for id in &ints {
            let _ = writeln!(out, "{}", id.index());
        }
        out.push('\n');
    }

    let obj_terms: Vec<(VarId, f64)> = m.objective.terms().collect();
    if !obj_terms.is_empty() {
        let _ = writeln!(out, "OBJACOORD\n{}", obj_terms.len());
        for (v, c) in &obj_terms {
            let _ = writeln!(out, "{} {}", v.index(), fmt(*c));
        }
        out.push('\n');
    }
    if m.objective.constant() != 0.0 {
        let _ = writeln!(out, "OBJBCOORD\n{}\n", fmt(m.objective.constant()));
    }

    let _ = writeln!(out, "CON\n{} {}", rows.len(), blocks.len());
    for (cone, size) in &blocks {
        let _ = writeln!(out, "{cone} {size}");
    }
    out.push('\n');

    let mut acoord: Vec<(usize, u32, f64)> = Vec::new();
    let mut bcoord: Vec<(usize, f64)> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let sign = if row.negate { -1.0 } else { 1.0 };
        for (v, c) in row.expr.terms() {
            acoord.push((i, v.0, sign * c));
        }
        let b = sign * row.expr.constant();
        if b != 0.0 {
            bcoord.push((i, b));
        }
    }
    let _ = writeln!(out, "ACOORD\n{}", acoord.len());
    for (i, j, v) in &acoord {
        let _ = writeln!(out, "{i} {j} {}", fmt(*v));
    }
    out.push('\n');
    let _ = writeln!(out, "BCOORD\n{}", bcoord.len());
    for (i, v) in &bcoord {
        let _ = writeln!(out, "{i} {}", fmt(*v));
    }

    out
}

/// Shortest representation that parses back to the same f64; "-0" never
/// appears so equal models export equal bytes.
fn fmt(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{SecondaryForm, SocConstraintPrimary, SocConstraintSecondary};
    use crate::model::{model_from_json, model_to_json, VarKind};

    fn sample() -> ConicModel {
        let mut b = ConicModel::builder();
        let x = b.add_var("x", VarKind::Continuous, 0.0, 4.0);
        let y = b.add_binary("y");
        let t = b.add_nonneg("t");
        let mut obj = LinExpr::with_constant(1.5);
        obj.add_term(x, 2.0).add_term(t, 1.0);
        b.set_objective(obj);
        let mut eq = LinExpr::with_constant(-2.0);
        eq.add_term(x, 1.0).add_term(y, 1.0);
        b.add_eq(eq);
        b.add_ineq(LinExpr::var(y).minus(&LinExpr::var(t)));
        b.add_soc_primary(SocConstraintPrimary {
            norm_rows: vec![LinExpr::var(x), LinExpr::var(y)],
            rhs: LinExpr::var(t),
        });
        b.set_metadata("kind", "sample");
        b.set_metadata("alpha", "first");
        b.finish()
    }

    #[test]
    fn export_matches_frozen_layout() {
        let text = export_cbf(&sample());
        let expected = "\
# alpha: first
# kind: sample
VER
3

OBJSENSE
MIN

VAR
3 1
F 3

INT
1
1

OBJACOORD
2
0 2.0
2 1.0

OBJBCOORD
1.5

CON
10 4
L= 1
L- 1
L+ 5
Q 3

ACOORD
12
0 0 1.0
0 1 1.0
1 1 1.0
1 2 -1.0
2 0 1.0
3 1 1.0
4 2 1.0
5 0 -1.0
6 1 -1.0
7 2 1.0
8 0 1.0
9 1 1.0

BCOORD
3
0 -2.0
5 4.0
6 1.0
";
        assert_eq!(text, expected);
    }

    #[test]
    fn export_is_stable_across_json_round_trip() {
        let m = sample();
        let back = model_from_json(&model_to_json(&m)).unwrap();
        assert_eq!(export_cbf(&m), export_cbf(&back));
    }

    #[test]
    fn secondary_rows_are_not_exported() {
        let mut b = ConicModel::builder();
        let x = b.add_var("x", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY);
        let u = b.add_nonneg("u");
        let v = b.add_nonneg("v");
        b.add_soc_secondary(SocConstraintSecondary {
            form: SecondaryForm::FormII,
            quad_rows: vec![LinExpr::var(x)],
            y: LinExpr::var(u),
            z: Some(LinExpr::var(v)),
        });
        let text = export_cbf(&b.finish());
        // Builders synchronize both forms, so a secondary-only model exports
        // just the bound rows for u and v.
        assert!(!text.contains('Q'), "{text}");
        assert!(text.contains("L+ 2"), "{text}");
    }
}
