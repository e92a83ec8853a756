//! Instance files: JSON with keys `facilities`, `customers`, `levels`,
//! `f`, `d`, `lambda`, `mu`, `sigma`, `w`, `metadata`. Grids are `[i][k]`
//! except `d`, which is `[i][j]`. Dump -> parse -> dump is byte-identical.

use super::{LocationError, LocationInstance};

pub fn instance_to_json(inst: &LocationInstance) -> String {
    let mut s = serde_json::to_string_pretty(inst).expect("instance serialization cannot fail");
    s.push('\n');
    s
}

pub fn instance_from_json(text: &str) -> Result<LocationInstance, LocationError> {
    let inst: LocationInstance =
        serde_json::from_str(text).map_err(|e| LocationError::Json(e.to_string()))?;
    inst.check_data()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::location::unit_instance;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut inst = unit_instance();
        inst.metadata.insert("seed".into(), "7".into());
        inst.sigma = vec![vec![1.0 / 3.0]];
        let text = instance_to_json(&inst);
        let back = instance_from_json(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(instance_to_json(&back), text);
    }

    #[test]
    fn keys_match_the_documented_schema() {
        let doc: serde_json::Value =
            serde_json::from_str(&instance_to_json(&unit_instance())).unwrap();
        let obj = doc.as_object().unwrap();
        for key in [
            "facilities",
            "customers",
            "levels",
            "f",
            "d",
            "lambda",
            "mu",
            "sigma",
            "w",
            "metadata",
        ] {
            assert!(obj.contains_key(key), "missing {key}");
        }
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(
            instance_from_json("{"),
            Err(LocationError::Json(_))
        ));
        // Well-formed JSON with inconsistent shapes is rejected too.
        let mut inst = unit_instance();
        inst.mu = vec![vec![2.0, 3.0]];
        let text = instance_to_json(&inst);
        assert!(matches!(
            instance_from_json(&text),
            Err(LocationError::Invalid(_))
        ));
    }
}
