//! Operator-splitting solver for the slope-selection thin-film equation
//! `u_t = ∇·((|∇u|² - 1)∇u) - δΔ²u` on periodic domains in one and two
//! dimensions.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod spectral;
pub mod splitting;
pub mod stencil;

pub use config::{build_initial_condition, ConfigFile, InitialCondition};
pub use diagnostics::{energy, free_energy_density, max_gradient, roughness, DiagnosticsRecord};
pub use error::{Error, ErrorKind, Result};
pub use grid::{discrete_l2_norm, mean, sample_function, Field, Grid};
pub use harness::{
    convergence_study, fit_power_law, run_example1, run_example2, temporal_study, ConvergenceRow,
    Example1, Example2, PowerLawFit, Problem, ReferenceSpec,
};
pub use spectral::{build_propagator, linear_substep, SpectralPropagator};
pub use splitting::{evolve, strang_step, Cadence, RunConfig, Sink};
pub use stencil::{nonlinear_rhs, nonlinear_substep, SubcycleReport};
