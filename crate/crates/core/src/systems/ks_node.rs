use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{ergodic_split, generate_ks_dataset, KsConfig, SystemsError};
use crate::metrics::{
    curve_distance, field_correlation, joint_pdf, kl_divergence, mean_spectrum, pdf_range, pooled_return_period,
    spatial_max, spectrum_rmse, PdfConfig,
};
use crate::models::{Activation, MlpSpec};
use crate::mp::{
    make_partition, train_with_callback, AdamConfig, CosineSchedule, Formulation, HistoryRow, MpProblem, NodeProblem,
    PenaltySchedule, TrainConfig, TrainResult,
};
use crate::ode::{IntegratorConfig, Method, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsEvalConfig {
    /// Free rollouts used for the invariant statistics.
    pub rollouts: usize,
    pub rollout_time: f64,
    /// Rollouts and horizon used for the short-term correlation.
    pub forecasts: usize,
    pub forecast_time: f64,
    pub pdf: PdfConfig,
    pub thresholds: usize,
}

impl Default for KsEvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 10,
            rollout_time: 250.0,
            forecasts: 20,
            forecast_time: 22.0,
            pdf: PdfConfig::default(),
            thresholds: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsExperimentConfig {
    pub ks: KsConfig,
    pub samples: usize,
    pub transient: f64,
    pub train_fraction: f64,
    /// Samples per training piece (steps + 1).
    pub piece_len: usize,
    pub n_windows: usize,
    pub model: MlpSpec,
    pub integrator: IntegratorConfig,
    pub schedule: PenaltySchedule,
    pub optimizer: AdamConfig,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval: KsEvalConfig,
}

impl Default for KsExperimentConfig {
    fn default() -> Self {
        let ks = KsConfig::default();
        Self {
            samples: 20_000,
            transient: 500.0,
            train_fraction: 0.8,
            piece_len: 76,
            n_windows: 26,
            model: MlpSpec::new(ks.grid_points, &[200, 200], Activation::Gelu, false),
            integrator: IntegratorConfig::fixed(Method::Rk4, ks.dt_sample),
            schedule: PenaltySchedule::every_k(1e-4, 5000, 1e2),
            optimizer: AdamConfig {
                cosine: Some(CosineSchedule {
                    total_steps: 40_000,
                    min_lr: 1e-5,
                }),
                ..AdamConfig::with_lr(1e-3)
            },
            max_steps: 40_000,
            batch_size: 8,
            seed: 0,
            eval: KsEvalConfig::default(),
            ks,
        }
    }
}

impl KsExperimentConfig {
    pub fn validate(&self) -> Result<(), SystemsError> {
        self.ks.validate()?;
        let bad = |m: &str| Err(SystemsError::InvalidConfig(m.into()));
        if self.model.state_dim() != self.ks.grid_points {
            return bad("model width must match the KS grid");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.piece_len < 2 || self.n_windows == 0 || self.n_windows >= self.piece_len {
            return bad("piece_len must exceed n_windows and be at least 2");
        }
        if self.batch_size == 0 || self.eval.rollouts == 0 || self.eval.forecasts == 0 || self.eval.thresholds == 0 {
            return bad("batch_size, rollouts, forecasts and thresholds must be positive");
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            seed: self.seed,
            ..TrainConfig::new(self.schedule, self.optimizer, self.max_steps)
        }
    }
}

/// Ground truth split chronologically into training and test parts.
#[derive(Debug, Clone)]
pub struct KsData {
    pub train: Trajectory,
    pub test: Trajectory,
    pub pieces: Vec<Trajectory>,
}

pub fn prepare_ks_data(cfg: &KsExperimentConfig) -> Result<KsData, SystemsError> {
    cfg.validate()?;
    let t_end = cfg.transient + (cfg.samples.saturating_sub(1)) as f64 * cfg.ks.dt_sample;
    split_ks_data(cfg, &generate_ks_dataset(&cfg.ks, t_end, cfg.transient)?)
}

/// Chronological train/test split of an existing ground-truth trajectory.
pub fn split_ks_data(cfg: &KsExperimentConfig, full: &Trajectory) -> Result<KsData, SystemsError> {
    cfg.validate()?;
    if full.state_dim() != cfg.ks.grid_points {
        return Err(SystemsError::InvalidConfig(format!(
            "dataset has {} points per snapshot, config expects {}",
            full.state_dim(),
            cfg.ks.grid_points
        )));
    }
    let n_train = (full.len() as f64 * cfg.train_fraction).round() as usize;
    if n_train < cfg.piece_len || full.len() - n_train < 2 {
        return Err(SystemsError::LengthExceedsData {
            length: cfg.piece_len,
            available: n_train,
        });
    }
    let train = full.slice(0, n_train);
    let (times, states) = full.slice(n_train, full.len()).into_parts();
    let t0 = times[0];
    let test = Trajectory::new(times.iter().map(|t| t - t0).collect(), states)?;
    let pieces = ergodic_split(&train, cfg.piece_len, cfg.piece_len - 1)?;
    Ok(KsData { train, test, pieces })
}

pub fn ks_problem(cfg: &KsExperimentConfig, data: &KsData, n_windows: usize) -> Result<NodeProblem, SystemsError> {
    let theta0 = cfg.model.init_params(cfg.seed).values().to_vec();
    Ok(NodeProblem::new(
        cfg.model.clone(),
        data.pieces.clone(),
        make_partition(cfg.piece_len, n_windows)?,
        cfg.integrator.clone(),
        theta0,
    )?)
}

pub fn train_ks_arm(
    cfg: &KsExperimentConfig,
    data: &KsData,
    n_windows: usize,
    on_step: Option<&mut dyn FnMut(&HistoryRow)>,
) -> Result<TrainResult, SystemsError> {
    let problem = ks_problem(cfg, data, n_windows)?;
    Ok(train_with_callback(
        &problem,
        Formulation::First,
        &cfg.train_config(),
        on_step,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEvaluation {
    pub kl: f64,
    /// Mean spatial correlation with the truth at each forecast sample.
    pub correlation: Vec<f64>,
    pub correlation_times: Vec<f64>,
    pub return_period_distance: Option<f64>,
    pub return_periods: Vec<(f64, f64)>,
    pub truth_return_periods: Vec<(f64, f64)>,
    pub spectrum_rmse: f64,
    /// Rollouts that left the finite range; they count toward no statistic.
    pub failed_rollouts: usize,
}

impl KsEvaluation {
    pub fn min_correlation(&self) -> f64 {
        self.correlation.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn stack_rows(trajs: &[Trajectory]) -> Result<Trajectory, SystemsError> {
    let views: Vec<_> = trajs.iter().map(|t| t.states().view()).collect();
    let states: Array2<f64> =
        concatenate(Axis(0), &views).map_err(|e| SystemsError::InvalidConfig(format!("cannot stack rollouts: {e}")))?;
    Ok(Trajectory::new(
        (0..states.nrows()).map(|i| i as f64).collect(),
        states,
    )?)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Invariant statistics and short-term skill of a trained network against
/// the held-out part of the ground truth.
pub fn evaluate_ks_model(cfg: &KsExperimentConfig, data: &KsData, theta: &[f64]) -> Result<KsEvaluation, SystemsError> {
    let problem = ks_problem(cfg, data, 1)?;
    let theta = &theta[..problem.n_theta()];
    let dt = cfg.ks.dt_sample;
    let test = &data.test;
    let mut pdf_cfg = cfg.eval.pdf;
    pdf_cfg.domain_length = cfg.ks.domain_length;
    if pdf_cfg.range.is_none() {
        pdf_cfg.range = Some(pdf_range(test, &pdf_cfg)?);
    }
    let truth_pdf = joint_pdf(test, &pdf_cfg)?;

    let roll_steps = (cfg.eval.rollout_time / dt).round() as usize;
    let roll_times: Vec<f64> = (0..=roll_steps).map(|i| i as f64 * dt).collect();
    let stride = (test.len() / cfg.eval.rollouts).max(1);
    let mut rollouts = Vec::new();
    let mut failed = 0;
    for r in 0..cfg.eval.rollouts {
        let q0 = test.state((r * stride).min(test.len() - 1)).to_vec();
        match problem.predict(theta, &q0, &roll_times) {
            Ok(t) => rollouts.push(t),
            Err(_) => failed += 1,
        }
    }
    let kl = if rollouts.is_empty() {
        f64::INFINITY
    } else {
        kl_divergence(&joint_pdf(&stack_rows(&rollouts)?, &pdf_cfg)?, &truth_pdf)?
    };

    // Short-term correlation, averaged over forecasts from spread-out starts.
    let f_steps = (cfg.eval.forecast_time / dt).round() as usize;
    let f_times: Vec<f64> = (0..=f_steps).map(|i| i as f64 * dt).collect();
    let room = test.len().saturating_sub(f_steps + 1);
    let f_stride = (room / cfg.eval.forecasts).max(1);
    let mut corr = vec![0.0; f_steps + 1];
    let mut used = 0usize;
    for r in 0..cfg.eval.forecasts {
        let s = (r * f_stride).min(room);
        let truth = test.slice(s, s + f_steps + 1);
        let truth = Trajectory::new(f_times.clone(), truth.states().clone())?;
        let c = match problem.predict(theta, &truth.state(0).to_vec(), &f_times) {
            Ok(pred) => field_correlation(&pred, &truth)?,
            Err(_) => vec![f64::NAN; f_steps + 1],
        };
        corr.iter_mut()
            .zip(&c)
            .for_each(|(a, b)| *a += if b.is_finite() { *b } else { -1.0 });
        used += 1;
    }
    corr.iter_mut().for_each(|c| *c /= used as f64);

    // Return periods of the spatial maximum.
    let truth_max = spatial_max(test);
    let mut sorted = truth_max.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (quantile(&sorted, 0.5), quantile(&sorted, 0.99));
    let k = cfg.eval.thresholds;
    let thresholds: Vec<f64> = (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k.max(2) - 1) as f64)
        .collect();
    let truth_rp = pooled_return_period(&[(test.times().to_vec(), truth_max)], &thresholds);
    let runs: Vec<(Vec<f64>, Vec<f64>)> = rollouts.iter().map(|t| (t.times().to_vec(), spatial_max(t))).collect();
    let model_rp = pooled_return_period(&runs, &thresholds);
    let rp_distance = curve_distance(&model_rp, &truth_rp);

    let spec_rmse = if rollouts.is_empty() {
        f64::INFINITY
    } else {
        spectrum_rmse(&mean_spectrum(&stack_rows(&rollouts)?)?, &mean_spectrum(test)?)?
    };

    Ok(KsEvaluation {
        kl,
        correlation: corr,
        correlation_times: f_times,
        return_period_distance: rp_distance,
        return_periods: model_rp,
        truth_return_periods: truth_rp,
        spectrum_rmse: spec_rmse,
        failed_rollouts: failed,
    })
}

#[derive(Debug, Clone)]
pub struct KsArm {
    pub result: TrainResult,
    pub evaluation: KsEvaluation,
}

#[derive(Debug, Clone)]
pub struct KsExperiment {
    pub mp: KsArm,
    pub vanilla: KsArm,
}

/// Trains the windowed and the single-window network with the same budget
/// and evaluates both.
pub fn run_ks_experiment(cfg: &KsExperimentConfig) -> Result<KsExperiment, SystemsError> {
    let data = prepare_ks_data(cfg)?;
    let arm = |n_windows: usize| -> Result<KsArm, SystemsError> {
        let result = train_ks_arm(cfg, &data, n_windows, None)?;
        let evaluation = evaluate_ks_model(cfg, &data, &result.theta)?;
        Ok(KsArm { result, evaluation })
    };
    Ok(KsExperiment {
        mp: arm(cfg.n_windows)?,
        vanilla: arm(1)?,
    })
}
