//! Small semidefinite programs: PSD blocks tied to a scalar vector,
//! affine constraints and a diagonal-quadratic objective.

pub mod admm;
pub mod certify;
pub mod dump;
pub mod problem;

pub use admm::{solve, SolverOptions};
pub use certify::certify;
pub use problem::{BlockEntry, LinearRow, PsdBlock, SdpProblem, SdpSolution, SolveStatus};
