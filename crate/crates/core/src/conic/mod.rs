//! Affine expressions and second-order cone constraints.
//!
//! Quadratic-over-linear ("hyperbolic") rows like `x^2 <= y z` and both
//! solver-facing quadratic forms are carried next to their equivalent
//! norm-based cone rows. Quadratic terms are always held in factored row
//! form: a constraint stores the affine rows whose squared norm makes up the
//! quadratic part, never a raw coefficient matrix.

mod expr;
mod soc;

pub use expr::{EvalError, LinExpr, VarId};
pub use soc::{
    form2_to_form1, gradient_cut, hyperbolic_to_soc, secondary_residual, soc_residual,
    ConicError, HyperbolicConstraint, SecondaryForm, SocConstraintPrimary,
    SocConstraintSecondary,
};
