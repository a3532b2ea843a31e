//! Log-determinant functions `log det(I + K X^{-1})` and `log det(K + X^{-1})`,
//! their semidefinite liftings, a small determinant-maximization solver, and
//! numerical convexity probes.

pub mod cli;
pub mod convexity;
pub mod error;
pub mod fmt;
pub mod linalg;
pub mod lmi;
pub mod objective;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::SymmetricMatrix;
pub use lmi::{AffineExpr, Assignment, LmiConstraint};
pub use objective::{Kind, LogDetObjective};
pub use solver::{MaxDetProblem, Solution, SolverOptions, Status, Structure};
