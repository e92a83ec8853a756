//! JSON dump/parse for [`ConicModel`].
//!
//! The document is the serde view of the model struct itself: top-level keys
//! `variables`, `objective`, `linear_eqs`, `linear_ineqs`, `soc_primary`,
//! `soc_secondary`, `metadata`. Infinite bounds are written as `null` so the
//! file stays plain JSON. Finite numbers go through shortest-round-trip
//! formatting, so dump -> parse -> dump is byte-identical.

use super::{ConicModel, ModelError};

pub fn model_to_json(m: &ConicModel) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("model serialization cannot fail");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<ConicModel, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))
}

/// `null` encodes negative infinity.
pub(crate) mod lower_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// `null` encodes positive infinity.
pub(crate) mod upper_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{LinExpr, SecondaryForm, SocConstraintPrimary, SocConstraintSecondary};
    use crate::model::VarKind;

    fn sample() -> ConicModel {
        let mut b = ConicModel::builder();
        let x = b.add_var("x", VarKind::Continuous, f64::NEG_INFINITY, f64::INFINITY);
        let y = b.add_binary("y");
        let t = b.add_nonneg("t");
        let mut obj = LinExpr::with_constant(0.125);
        obj.add_term(x, -1.5).add_term(t, std::f64::consts::PI);
        b.set_objective(obj);
        let mut eq = LinExpr::with_constant(-1.0);
        eq.add_term(x, 1.0 / 3.0).add_term(y, 7.0);
        b.add_eq(eq);
        b.add_ineq(LinExpr::var(x).minus(&LinExpr::var(t)));
        b.add_soc_primary(SocConstraintPrimary {
            norm_rows: vec![LinExpr::var(x), LinExpr::var(y)],
            rhs: LinExpr::var(t),
        });
        b.add_soc_secondary(SocConstraintSecondary {
            form: SecondaryForm::FormII,
            quad_rows: vec![LinExpr::var(x)],
            y: LinExpr::var(t),
            z: Some(LinExpr::var(t)),
        });
        b.set_metadata("origin", "unit test");
        b.finish()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let text = model_to_json(&m);
        let back = model_from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_json(&back), text);
    }

    #[test]
    fn top_level_keys_are_stable() {
        let doc: serde_json::Value = serde_json::from_str(&model_to_json(&sample())).unwrap();
        let obj = doc.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        for want in [
            "variables",
            "objective",
            "linear_eqs",
            "linear_ineqs",
            "soc_primary",
            "soc_secondary",
            "metadata",
        ] {
            assert!(keys.contains(&want), "missing key {want} in {keys:?}");
        }
    }

    #[test]
    fn infinite_bounds_encode_as_null() {
        let doc: serde_json::Value = serde_json::from_str(&model_to_json(&sample())).unwrap();
        let vars = doc["variables"].as_array().unwrap();
        assert!(vars[0]["lower"].is_null());
        assert!(vars[0]["upper"].is_null());
        assert_eq!(vars[1]["lower"], 0.0);
        assert_eq!(vars[1]["upper"], 1.0);
        assert!(vars[2]["upper"].is_null());
    }

    #[test]
    fn malformed_text_reports_json_error() {
        match model_from_json("{\"variables\": [") {
            Err(ModelError::Json(_)) => {}
            other => panic!("expected a JSON parse error, got {other:?}"),
        }
    }
}
