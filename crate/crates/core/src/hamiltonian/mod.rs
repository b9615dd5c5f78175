//! Concave drivers, their Legendre transforms and Hamiltonians built from
//! control data.

mod conjugate;
mod control;
mod driver;

pub use conjugate::{
    biconjugate, build_conjugate_table, conjugate, fenchel_young_residual, ConjugateTable, ConjugateValue,
    SearchConfig, TableConfig,
};
pub use control::{
    epsilon_argmin_selection, example2_closed_form, example2_closed_form_argmin, hamiltonian_from_control,
    uniform_grid, ControlStructure, RunningCost, RunningCostFn, Selection, StateCost,
};
pub use driver::{validate_driver, DriverConstants, DriverFn, DriverSpec};
