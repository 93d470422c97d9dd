//! Reference chaotic systems, ground-truth data, and the Lorenz control
//! problems.

mod control;
mod ks;
mod ks_node;
mod landscape;
mod objectives;
mod split;

pub use control::{
    run_control_arm, run_control_experiment, run_forcing_experiment, run_lorenz_rho_experiment, Control, ControlArm,
    ControlExperiment, ControlExperimentConfig, LorenzControl,
};
pub use ks::{
    generate_ks_dataset, integrate_ks, ks_energy, ks_initial_field, ks_rhs_spectral, Etdrk4, KsConfig, KsOperator,
};
pub use ks_node::{
    evaluate_ks_model, ks_problem, prepare_ks_data, run_ks_experiment, split_ks_data, train_ks_arm, KsArm, KsData,
    KsEvalConfig, KsEvaluation, KsExperiment, KsExperimentConfig,
};
pub use landscape::{forcing_landscape, LandscapeCenter, LandscapeConfig, LandscapeSlice};
pub use objectives::{objective_mean_abs_z, objective_relu_quadratic, ControlObjectiveSpec, ObjectiveKind};

pub use split::ergodic_split;

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::mp::MpError;
use crate::ode::OdeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemsError {
    #[error("requested length {length} exceeds the {available} available samples")]
    LengthExceedsData { length: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Mp(#[from] MpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
