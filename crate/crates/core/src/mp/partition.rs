use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MpError;
use crate::ode::Trajectory;

/// Contiguous windows over a sample grid. Window `k` covers sample indices
/// `boundaries[k] ..= boundaries[k + 1]`; interior boundaries carry the
/// learnable restarts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPartition {
    boundaries: Vec<usize>,
}

impl WindowPartition {
    pub fn from_boundaries(boundaries: Vec<usize>) -> Result<Self, MpError> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(MpError::InvalidPartition(format!(
                "boundaries must start at 0 and contain at least two entries, got {boundaries:?}"
            )));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MpError::InvalidPartition(format!(
                "boundaries must be strictly increasing, got {boundaries:?}"
            )));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn n_windows(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn num_samples(&self) -> usize {
        self.boundaries[self.boundaries.len() - 1] + 1
    }

    /// Interior boundaries, one per learnable restart.
    pub fn interior(&self) -> &[usize] {
        &self.boundaries[1..self.boundaries.len() - 1]
    }

    pub fn window(&self, k: usize) -> (usize, usize) {
        (self.boundaries[k], self.boundaries[k + 1])
    }

    pub fn steps_per_window(&self) -> Vec<usize> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Splits `num_samples − 1` steps into `n_windows` as-equal-as-possible
/// windows; the remainder goes to the earliest windows.
pub fn make_partition(num_samples: usize, n_windows: usize) -> Result<WindowPartition, MpError> {
    if n_windows == 0 || num_samples < 2 || num_samples - 1 < n_windows {
        return Err(MpError::TooManyWindows {
            n_windows,
            steps: num_samples.saturating_sub(1),
        });
    }
    let steps = num_samples - 1;
    let base = steps / n_windows;
    let extra = steps % n_windows;
    let mut boundaries = Vec::with_capacity(n_windows + 1);
    let mut b = 0;
    boundaries.push(0);
    for k in 0..n_windows {
        b += base + usize::from(k < extra);
        boundaries.push(b);
    }
    WindowPartition::from_boundaries(boundaries)
}

/// Learnable restarts `q_k⁺` for `k = 1 … n−1`, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    pub qk_plus: Array2<f64>,
    pub partition: WindowPartition,
}

impl PenaltyState {
    pub fn new(qk_plus: Array2<f64>, partition: WindowPartition) -> Result<Self, MpError> {
        if qk_plus.nrows() != partition.n_windows() - 1 {
            return Err(MpError::InvalidPartition(format!(
                "{} restart rows for {} windows",
                qk_plus.nrows(),
                partition.n_windows()
            )));
        }
        if qk_plus.iter().any(|x| !x.is_finite()) {
            return Err(MpError::InvalidPartition("restart values must be finite".into()));
        }
        Ok(Self { qk_plus, partition })
    }
}

/// Restarts copied from the data at the interior boundaries.
pub fn init_penalty_state(data: &Trajectory, partition: &WindowPartition) -> Result<PenaltyState, MpError> {
    if data.len() < partition.num_samples() {
        return Err(MpError::Alignment(format!(
            "partition spans {} samples but data has {}",
            partition.num_samples(),
            data.len()
        )));
    }
    let d = data.state_dim();
    let interior = partition.interior();
    let mut q = Array2::zeros((interior.len(), d));
    for (r, &b) in interior.iter().enumerate() {
        q.row_mut(r).assign(&data.state(b));
    }
    PenaltyState::new(q, partition.clone())
}
