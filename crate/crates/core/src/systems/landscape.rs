use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_control_arm, ControlExperimentConfig, SystemsError};
use crate::metrics::{landscape_scan, GridSpec, Landscape};
use crate::mp::MpProblem;

/// Point the slices pass through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeCenter {
    /// The untrained control with restarts on its own trajectory.
    Initial,
    /// The control and restarts reached by windowed training.
    Trained,
}

/// Two-parameter slices of the forcing problem, compared between the
/// windowed and the single-window loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub experiment: ControlExperimentConfig,
    pub slices: usize,
    pub points: usize,
    /// Offset range on each axis. A forcing offset `f` shifts `z` by about
    /// `f·dt` in one step, so ±100 moves the state across the attractor.
    pub half_width: f64,
    pub center: LandscapeCenter,
    /// Penalty strength of the windowed loss; the final training value when
    /// absent (or 1 for the initial center).
    pub mu: Option<f64>,
    pub seed: u64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            experiment: ControlExperimentConfig::lorenz_forcing(),
            slices: 5,
            points: 51,
            half_width: 100.0,
            center: LandscapeCenter::Initial,
            mu: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    pub index_a: usize,
    pub index_b: usize,
    pub mp: Landscape,
    pub vanilla: Landscape,
}

pub fn forcing_landscape(cfg: &LandscapeConfig) -> Result<Vec<LandscapeSlice>, SystemsError> {
    if cfg.slices == 0 || cfg.points < 3 || !(cfg.half_width > 0.0) || cfg.mu.is_some_and(|m| !(m >= 0.0)) {
        return Err(SystemsError::InvalidConfig(
            "landscape needs slices ≥ 1, points ≥ 3, positive width".into(),
        ));
    }
    let mp = cfg.experiment.problem(cfg.experiment.n_windows)?;
    let vanilla = cfg.experiment.problem(1)?;
    let (theta, qk, trained_mu) = match cfg.center {
        LandscapeCenter::Initial => {
            let theta = mp.initial_theta();
            let qk = mp.init_qk(&theta, &[0])?;
            (theta, qk, 1.0)
        }
        LandscapeCenter::Trained => {
            let arm = run_control_arm(&cfg.experiment, cfg.experiment.n_windows, None)?;
            (arm.result.theta, arm.result.qk, arm.result.mu)
        }
    };
    let mu = cfg.mu.unwrap_or(trained_mu);
    let n = theta.len();
    if n < 2 {
        return Err(SystemsError::InvalidConfig(
            "landscape needs at least two control parameters".into(),
        ));
    }
    let mut mp_base = theta.clone();
    mp_base.extend(qk);
    let grid = GridSpec::square(cfg.half_width, cfg.points);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.slices);
    for _ in 0..cfg.slices {
        let pick = sample(&mut rng, n, 2);
        let (a, b) = (pick.index(0).min(pick.index(1)), pick.index(0).max(pick.index(1)));
        let mp_scan = landscape_scan(|p| mp.loss_value(p, mu).unwrap_or(f64::NAN), &mp_base, a, b, &grid)?;
        let v_scan = landscape_scan(|p| vanilla.loss_value(p, 0.0).unwrap_or(f64::NAN), &theta, a, b, &grid)?;
        out.push(LandscapeSlice {
            index_a: a,
            index_b: b,
            mp: mp_scan,
            vanilla: v_scan,
        });
    }
    Ok(out)
}
