//! Numerical toolkit for ergodic backward SDEs driven by Galerkin-truncated
//! stochastic evolution equations: forward simulation, discounted and
//! finite-horizon BSDE solvers by least-squares Monte Carlo, the
//! vanishing-discount limit, Hamiltonians of control problems and the
//! resulting ergodic feedback controls.

pub mod bsde;
pub mod control;
pub mod error;
pub mod ergodic;
pub mod forward;
pub mod hamiltonian;
pub mod model;
pub mod parallel;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod scenarios;
pub mod stats;

pub use error::{Error, Result};
