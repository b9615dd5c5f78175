//! Benchmark problems shared by the tests, the command line tool and the
//! acceptance suite.

use std::sync::Arc;

use crate::error::Result;
use crate::hamiltonian::{uniform_grid, ControlStructure, DriverSpec, RunningCost, StateCost};
use crate::model::{build_ou_model, build_reaction_model, GalerkinModel, HeatField, ReactionTerm, ScalarFn};

/// Forward model, driver and optional control data of one benchmark.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: GalerkinModel,
    pub driver: DriverSpec,
    pub control: Option<Arc<ControlStructure>>,
    pub field: Option<HeatField>,
}

/// `dX = -a X dt + σ dW`, `ψ(x, z, u) = cos x`; `λ = e^{-σ²/(4a)}`.
pub fn ou_cos(a: f64, sigma: f64) -> Result<Problem> {
    Ok(Problem {
        model: build_ou_model(a, sigma)?,
        driver: DriverSpec::cos_first(1, 1),
        control: None,
        field: None,
    })
}

/// OU dynamics with `ψ ≡ c`, realized as a control problem with running
/// cost `c` and no control action, so that `λ = c` and every policy is optimal.
pub fn constant_driver(c: f64, a: f64, sigma: f64) -> Result<Problem> {
    let cs = ControlStructure::new(
        1,
        uniform_grid(-1.0, 1.0, 5),
        1,
        1,
        |_, out| out.fill(0.0),
        |_, out| out.fill(0.0),
        RunningCost::General(Arc::new(move |_, _| c)),
        c.abs(),
    )?;
    Ok(Problem {
        model: build_ou_model(a, sigma)?,
        driver: DriverSpec::constant(c, 1, 1),
        control: Some(Arc::new(cs)),
        field: None,
    })
}

/// Reaction heat equation on `(0, 1)` with `n_modes` sine modes, source
/// `0.5 sin y`, boundary process `dy = -y dt + (1 + 0.25 tanh y) (γ dt + dW1)`
/// and field noise `0.5 dW2`. Running cost
/// `ℓ(x, y) = ∫ 0.5 tanh²(X(ξ)) dξ + tanh²(y - 0.5)` plus `γ²` on `Γ = [-1, 1]`.
pub fn example2(n_modes: usize, n_controls: usize) -> Result<Problem> {
    let r = build_reaction_model(
        n_modes,
        ReactionTerm::sin_y(0.5),
        ScalarFn::linear(-1.0, 0.0),
        ScalarFn::tanh_modulated(1.0, 0.25),
        ScalarFn::constant(0.5),
    )?;
    let ell: StateCost = r.field_average(|s, y| 0.5 * s.tanh().powi(2) + (y - 0.5).tanh().powi(2));
    // d/ds tanh²(s) <= 4 / (3 √3) < 0.77
    let (lip, bound) = ((0.385f64).hypot(0.77), 1.5);
    let cs = Arc::new(ControlStructure::quadratic(ell.clone(), -1.0, 1.0, n_controls, n_modes, bound + 1.0)?);
    let driver = DriverSpec::quadratic_control(ell, lip, bound, n_modes, Some(cs.clone()));
    Ok(Problem {
        model: r.model,
        driver,
        control: Some(cs),
        field: Some(r.field),
    })
}

/// State index of the boundary process `y` in [`example2`].
pub fn example2_y_index(n_modes: usize) -> usize {
    n_modes
}
