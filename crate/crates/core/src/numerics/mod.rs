//! Dense matrices, reverse-mode differentiation, optimization and the
//! dense linear algebra used by the oracles.

mod adam;
mod gradcheck;
pub(crate) mod linalg;
mod matrix;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheck, REL_FLOOR};
pub use linalg::{dense_solve, inverse, sym_eigen, SymEigen};
pub use matrix::Matrix;
pub use tape::{OpKind, Tape, Var};
