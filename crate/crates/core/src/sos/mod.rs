//! Polynomials, moment sequences and pseudo-expectations.

pub mod checks;
pub mod moments;
pub mod monomial;
pub mod polynomial;

pub use checks::{check_holder, check_pseudo_inequalities, InequalityKind, InequalityReport};
pub use moments::{localizing_matrix, moment_matrix, pseudo_expectation, MomentVector, PseudoDistribution};
pub use monomial::{monomial_basis, Monomial, Var};
pub use polynomial::Polynomial;
