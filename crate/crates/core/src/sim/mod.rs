//! Coupled model assembly, equilibria and time-domain simulation.

pub mod equilibrium;
pub mod integrate;
pub mod model;
mod run;
pub mod state;

pub use equilibrium::{find_equilibrium, flat_start, Equilibrium};
pub use model::{evaluate, system_derivative, Evaluation};
pub use run::{
    l2_objective, reference_from, reference_integrate, simulate, simulate_from, simulate_with,
    Diagnostics, OutputRecord, Scenario, Summary, Trajectory, SIM_ATOL, SIM_RTOL,
};
pub use state::SystemState;
