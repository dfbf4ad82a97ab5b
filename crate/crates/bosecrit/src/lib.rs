//! Numerical toolkit for the critical coupling constants of short-range
//! interacting Brownian particle systems.
//!
//! The crate discretizes the two-body pair operator built from a mollified
//! interaction profile, extracts the critical couplings from its spectrum,
//! certifies two-sided variational bounds for the many-particle thresholds,
//! and evaluates the moment formulas (Monte Carlo path functionals, the
//! exactly-solvable three-particle kernel chains, and the singular iterated
//! time integrals) that govern moment growth.
//!
//! See the `book/` directory for a guided tour; `cargo test --workspace`
//! runs the full verification suite including the acceptance criteria.

pub mod error;
pub mod quad;
pub mod variational;

pub mod birman_schwinger;
pub mod feynman_kac;
pub mod gaussian;
pub mod iterated;
pub mod mollifier;

pub use error::{Error, Result};
