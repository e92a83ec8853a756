use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Dense variable identifier, assigned in creation order by a model builder.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Affine expression: a sparse coefficient map plus a constant.
///
/// Coefficients that cancel to exactly zero are dropped, so two expressions
/// describing the same affine map compare equal and serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExprRepr", into = "ExprRepr")]
pub struct LinExpr {
    coeffs: BTreeMap<VarId, f64>,
    constant: f64,
}

#[derive(Serialize, Deserialize)]
struct ExprRepr {
    coeffs: Vec<(VarId, f64)>,
    constant: f64,
}

impl From<ExprRepr> for LinExpr {
    fn from(r: ExprRepr) -> Self {
        let mut e = LinExpr::with_constant(r.constant);
        for (v, c) in r.coeffs {
            e.add_term(v, c);
        }
        e
    }
}

impl From<LinExpr> for ExprRepr {
    fn from(e: LinExpr) -> Self {
        ExprRepr {
            coeffs: e.coeffs.into_iter().collect(),
            constant: e.constant,
        }
    }
}

impl Default for LinExpr {
    fn default() -> Self {
        Self::zero()
    }
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr {
            coeffs: BTreeMap::new(),
            constant: 0.0,
        }
    }

    pub fn with_constant(c: f64) -> Self {
        LinExpr {
            coeffs: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coeff: f64) -> Self {
        let mut e = Self::zero();
        e.add_term(v, coeff);
        e
    }

    /// Add `coeff * v`, merging with any existing term.
    pub fn add_term(&mut self, v: VarId, coeff: f64) -> &mut Self {
        let slot = self.coeffs.entry(v).or_insert(0.0);
        *slot += coeff;
        if *slot == 0.0 {
            self.coeffs.remove(&v);
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// Add `scale` times another expression.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for (&v, &c) in &other.coeffs {
            self.add_term(v, scale * c);
        }
        self.constant += scale * other.constant;
        self
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut e = LinExpr::with_constant(0.0);
        e.add_scaled(self, scale);
        e
    }

    pub fn minus(&self, other: &LinExpr) -> LinExpr {
        let mut e = self.clone();
        e.add_scaled(other, -1.0);
        e
    }

    pub fn plus(&self, other: &LinExpr) -> LinExpr {
        let mut e = self.clone();
        e.add_scaled(other, 1.0);
        e
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn coeff(&self, v: VarId) -> f64 {
        self.coeffs.get(&v).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (VarId, f64)> + '_ {
        self.coeffs.iter().map(|(&v, &c)| (v, c))
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_var(&self) -> Option<VarId> {
        self.coeffs.keys().next_back().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.constant.is_finite() && self.coeffs.values().all(|c| c.is_finite())
    }

    /// Largest absolute coefficient, ignoring the constant.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Evaluate against a dense value vector indexed by variable id.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        let mut acc = self.constant;
        for (&v, &c) in &self.coeffs {
            let x = values
                .get(v.index())
                .copied()
                .ok_or(EvalError::MissingVariable(v))?;
            acc += c * x;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("expression references undeclared variable {0}")]
    MissingVariable(VarId),
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (&v, &c) in &self.coeffs {
            if first {
                write!(f, "{c}*{v}")?;
                first = false;
            } else if c < 0.0 {
                write!(f, " - {}*{v}", -c)?;
            } else {
                write!(f, " + {c}*{v}")?;
            }
        }
        if first {
            write!(f, "{}", self.constant)?;
        } else if self.constant < 0.0 {
            write!(f, " - {}", -self.constant)?;
        } else if self.constant > 0.0 {
            write!(f, " + {}", self.constant)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merging_and_cancellation() {
        let mut e = LinExpr::zero();
        e.add_term(VarId(3), 2.0).add_term(VarId(1), 1.0);
        e.add_term(VarId(3), -2.0);
        assert_eq!(e.n_terms(), 1);
        assert_eq!(e.coeff(VarId(3)), 0.0);
        assert_eq!(e.coeff(VarId(1)), 1.0);
    }

    #[test]
    fn eval_and_missing_vars() {
        let mut e = LinExpr::with_constant(1.5);
        e.add_term(VarId(0), 2.0).add_term(VarId(2), -1.0);
        assert_eq!(e.eval(&[1.0, 9.0, 4.0]).unwrap(), 1.5 + 2.0 - 4.0);
        assert_eq!(
            e.eval(&[1.0, 9.0]),
            Err(EvalError::MissingVariable(VarId(2)))
        );
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let mut e = LinExpr::with_constant(0.1 + 0.2);
        e.add_term(VarId(7), 1.0 / 3.0);
        e.add_term(VarId(0), -2.5e-17);
        let s = serde_json::to_string(&e).unwrap();
        let back: LinExpr = serde_json::from_str(&s).unwrap();
        assert_eq!(e, back);
    }

    #[test]
    fn canonical_equality_after_different_build_orders() {
        let mut a = LinExpr::zero();
        a.add_term(VarId(1), 1.0).add_term(VarId(2), 3.0);
        let mut b = LinExpr::zero();
        b.add_term(VarId(2), 3.0).add_term(VarId(1), 0.5);
        b.add_term(VarId(1), 0.5);
        assert_eq!(a, b);
    }
}
