//! Multistep-penalty optimization: window partitions, the penalized loss
//! `L = L_GT + (μ/2)·L_P`, the μ ladder, Adam, and the three training loops.

mod loss;
mod node;
mod optim;
mod partition;
mod schedule;
mod train;

pub use loss::{
    combine, mp_loss, mp_rollout, mse_term, penalty_term, predictions, vanilla_mse_loss, window_rollouts, LossVars,
    MpLossBreakdown, MpRollout,
};
pub use node::NodeProblem;
pub use optim::{AdamConfig, AdamState, CosineSchedule};
pub use partition::{init_penalty_state, make_partition, PenaltyState, WindowPartition};
pub use schedule::{schedule_step, trigger_fires, PenaltySchedule, Trigger};
pub use train::{
    evaluate_loss, evaluate_with_grad, train, train_with_callback, Evaluation, Formulation, HistoryRow, MpProblem,
    TrainConfig, TrainResult,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::models::ModelError;
use crate::ode::OdeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpError {
    #[error("{n_windows} windows need at least as many steps, only {steps} available")]
    TooManyWindows { n_windows: usize, steps: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("window {window} diverged: {source}")]
    NonFiniteWindow { window: usize, source: OdeError },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged: {consecutive} consecutive non-finite steps ending at step {step}")]
    DivergedTraining { step: usize, consecutive: usize },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
