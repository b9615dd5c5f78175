//! Markovian BSDEs by least-squares Monte Carlo.
//!
//! The backward sweep runs on a time grid of `m` steps. At step `k`:
//!
//! ```text
//! (Z_k, U_k) = E_k[(Y_{k+1} - Y_{k+1}(X_k)) (ΔW1, ΔW2)] / dt
//! S_k        = (S_{k+1} + dt ψ(X_k, Z_k G(X_k)^{-1}, U_k) - Z_k ΔW1 - U_k ΔW2) / (1 + α dt)
//! Y_k        = E_k[S_k]
//! ```
//!
//! Conditional expectations are regressions on the basis features of `X_k`.
//! `S` is a pathwise value. The conditional-mean increment terms act as
//! martingale control variates, so regression errors do not pile up along
//! the grid. Its mean at `k = 0` is the value estimate.
//!
//! Paths are never stored in full. The forward pass keeps one state per
//! noise block and the backward pass regenerates each block from it.

mod basis;
mod solver;

pub use basis::{BasisKind, RegressionBasis, Standardizer, MAX_PROJECTION_DIM};
pub use solver::{
    residual_diagnostic, solve_discounted, solve_finite_horizon, solve_with_drift, truncation_steps, BsdeConfig,
    BsdeSolution, DiscountedValue, ResidualReport, StepFit, StepSummary, StoredPaths, Terminal,
};
