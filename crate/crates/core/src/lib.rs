//! Entropy minimization under convex moment constraints.
//!
//! The crate solves `minimize ∫ γ*(dQ/dR) dR subject to ∫ θ dQ ∈ C` through
//! its finite-dimensional dual, reconstructs (generalized) entropic
//! projections, splits moment vectors into absolutely continuous and
//! singular parts, and checks the conditional laws of large numbers behind
//! these problems by Monte Carlo simulation.

pub mod dual;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod gibbs;
pub mod ext_real;
pub mod measures;
pub mod projection;
pub mod relative;

pub use entropy::{EntropyKind, EntropySpec};
pub use error::{Error, Result};
