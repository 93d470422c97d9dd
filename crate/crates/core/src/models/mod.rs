//! Vector fields: MLP neural ODEs and the controlled Lorenz system.

mod lorenz;
mod mlp;

pub use lorenz::{controlled_lorenz_rhs, forced_lorenz_rhs, ForcingLayout, ForcingVector, LorenzModel, LorenzParams};
pub use mlp::{mlp_rhs, single_weight_lipschitz, Activation, BoundMlp, MlpSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time {t} outside forcing interval [{t_start}, {t_end}]")]
    TimeOutOfRange { t: f64, t_start: f64, t_end: f64 },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}
