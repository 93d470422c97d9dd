use serde::{Deserialize, Serialize};

use super::{ObjectiveKind, SystemsError};
use crate::autodiff::{Eval, Ops};
use crate::models::{ForcingLayout, LorenzModel, LorenzParams};
use crate::mp::{
    combine, make_partition, penalty_term, train_with_callback, window_rollouts, AdamConfig, Formulation, HistoryRow,
    LossVars, MpError, MpProblem, PenaltySchedule, TrainConfig, TrainResult, WindowPartition,
};
use crate::ode::{self, IntegratorConfig, Method, Trajectory};

/// What the optimizer controls in the Lorenz system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Control {
    /// The scalar ρ, starting from `rho0`.
    Rho { rho0: f64 },
    /// One additive z-forcing value per integration step, starting at zero.
    Forcing,
}

/// Lorenz optimal-control problem in multiple-shooting form. With one window
/// the loss is exactly the plain time-averaged objective.
#[derive(Debug, Clone)]
pub struct LorenzControl {
    pub params: LorenzParams,
    pub control: Control,
    pub objective: ObjectiveKind,
    pub q0: [f64; 3],
    pub horizon: (f64, f64),
    pub n_steps: usize,
    pub method: Method,
    model: LorenzModel,
    times: Vec<f64>,
    partition: WindowPartition,
}

impl LorenzControl {
    pub fn new(
        params: LorenzParams,
        control: Control,
        objective: ObjectiveKind,
        q0: [f64; 3],
        horizon: (f64, f64),
        n_steps: usize,
        method: Method,
        n_windows: usize,
    ) -> Result<Self, SystemsError> {
        let (t0, t1) = horizon;
        if !(t1 > t0) || n_steps == 0 {
            return Err(SystemsError::InvalidConfig(
                "need t_f > t_i and at least one step".into(),
            ));
        }
        let partition = make_partition(n_steps + 1, n_windows)?;
        let h = (t1 - t0) / n_steps as f64;
        let times: Vec<f64> = (0..=n_steps).map(|i| t0 + i as f64 * h).collect();
        let model = match control {
            Control::Rho { .. } => LorenzModel {
                params,
                rho_param: Some(0),
                forcing: None,
            },
            Control::Forcing => LorenzModel {
                params,
                rho_param: None,
                forcing: Some(ForcingLayout {
                    offset: 0,
                    n_steps,
                    t_start: t0,
                    t_end: t1,
                }),
            },
        };
        Ok(Self {
            params,
            control,
            objective,
            q0,
            horizon,
            n_steps,
            method,
            model,
            times,
            partition,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn partition(&self) -> &WindowPartition {
        &self.partition
    }

    pub fn dt(&self) -> f64 {
        (self.horizon.1 - self.horizon.0) / self.n_steps as f64
    }

    /// The same problem with a different number of windows.
    pub fn with_windows(&self, n_windows: usize) -> Result<Self, SystemsError> {
        Self::new(
            self.params,
            self.control,
            self.objective,
            self.q0,
            self.horizon,
            self.n_steps,
            self.method,
            n_windows,
        )
    }

    /// Continuous trajectory under control `theta`.
    pub fn trajectory(&self, theta: &[f64]) -> Result<Trajectory, SystemsError> {
        let mut ops = Eval::new(theta);
        let q = ops.constant(ode::row(&self.q0));
        let states = ode::rollout(&mut ops, &self.model, &q, &self.times, self.method, self.dt())?;
        Ok(ode::stack(
            self.times.clone(),
            states.iter().map(|s| s.row(0).to_owned()),
        )?)
    }

    /// The true objective of control `theta` (one continuous rollout).
    pub fn true_objective(&self, theta: &[f64]) -> Result<f64, SystemsError> {
        self.objective.time_average(&self.trajectory(theta)?)
    }

    /// MP loss at `[θ | q_k]` with the restarts held fixed, for landscape scans.
    pub fn loss_value(&self, params: &[f64], mu: f64) -> Result<f64, MpError> {
        let mut ops = Eval::new(params);
        let v = self.loss(&mut ops, &[0], mu)?;
        Ok(ops.scalar(&v.total))
    }
}

impl MpProblem for LorenzControl {
    fn n_theta(&self) -> usize {
        match self.control {
            Control::Rho { .. } => 1,
            Control::Forcing => self.n_steps,
        }
    }

    fn n_items(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn n_restarts(&self) -> usize {
        self.partition.n_windows() - 1
    }

    fn initial_theta(&self) -> Vec<f64> {
        match self.control {
            Control::Rho { rho0 } => vec![rho0],
            Control::Forcing => vec![0.0; self.n_steps],
        }
    }

    /// Restarts start on the continuous trajectory of the current control.
    fn init_qk(&self, theta: &[f64], _batch: &[usize]) -> Result<Vec<f64>, MpError> {
        let traj = self.trajectory(theta).map_err(|e| match e {
            SystemsError::Ode(o) => MpError::Ode(o),
            other => MpError::InvalidConfig(other.to_string()),
        })?;
        Ok(self
            .partition
            .interior()
            .iter()
            .flat_map(|&b| traj.state(b).to_vec())
            .collect())
    }

    fn loss<O: Ops>(&self, ops: &mut O, _batch: &[usize], mu: f64) -> Result<LossVars<O::Var>, MpError> {
        let n_theta = self.n_theta();
        let mut starts = vec![ops.constant(ode::row(&self.q0))];
        for k in 0..self.n_restarts() {
            starts.push(ops.param(n_theta + 3 * k, 1, 3));
        }
        let windows = window_rollouts(
            ops,
            &self.model,
            &starts,
            &self.times,
            &self.partition,
            self.method,
            self.dt(),
        )?;
        // Trapezoid rule inside each window, on that window's own rollout.
        let h = self.dt() / (self.horizon.1 - self.horizon.0);
        let mut integrands = Vec::with_capacity(self.times.len() + windows.len());
        let mut weights = Vec::with_capacity(integrands.capacity());
        for (k, w) in windows.iter().enumerate() {
            let (a, b) = self.partition.window(k);
            for (i, s) in (a..=b).zip(w) {
                integrands.push(self.objective.integrand_var(ops, s));
                weights.push(if i == a || i == b { 0.5 * h } else { h });
            }
        }
        let terms: Vec<(f64, &O::Var)> = weights.iter().copied().zip(integrands.iter()).collect();
        let j = ops.lincomb(None, &terms);
        let (l_p, jump) = penalty_term(ops, &starts[1..], &windows, 1);
        Ok(combine(ops, j, l_p, mu, jump))
    }

    fn objective(&self, theta: &[f64]) -> Option<f64> {
        self.true_objective(theta).ok()
    }
}

/// Settings shared by the two arms of a control experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlExperimentConfig {
    #[serde(default)]
    pub lorenz: LorenzParams,
    pub control: Control,
    pub objective: ObjectiveKind,
    #[serde(default = "default_q0")]
    pub q0: [f64; 3],
    /// Time integrated from `q0` at the nominal parameters, without control,
    /// to place the initial state on the attractor.
    #[serde(default = "default_spinup")]
    pub spinup: f64,
    #[serde(default = "default_horizon")]
    pub horizon: (f64, f64),
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    pub n_windows: usize,
    pub schedule: PenaltySchedule,
    pub optimizer: AdamConfig,
    pub max_steps: usize,
    #[serde(default = "default_monitor")]
    pub monitor_every: usize,
}

fn default_q0() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_spinup() -> f64 {
    20.0
}
fn default_horizon() -> (f64, f64) {
    (0.0, 20.0)
}
fn default_steps() -> usize {
    2000
}
fn default_method() -> Method {
    Method::Rk4
}
fn default_monitor() -> usize {
    10
}

impl ControlExperimentConfig {
    /// Optimization of ρ for the time-averaged `|z|`.
    pub fn lorenz_rho() -> Self {
        Self {
            lorenz: LorenzParams::default(),
            control: Control::Rho { rho0: 28.0 },
            objective: ObjectiveKind::MeanAbsZ,
            q0: default_q0(),
            spinup: default_spinup(),
            horizon: default_horizon(),
            n_steps: default_steps(),
            method: default_method(),
            n_windows: 20,
            schedule: PenaltySchedule::every_k(1e-5, 170, 1e5),
            optimizer: AdamConfig::with_lr(0.3),
            max_steps: 1700,
            monitor_every: default_monitor(),
        }
    }

    /// Optimization of a per-step z-forcing for the one-sided quadratic.
    pub fn lorenz_forcing() -> Self {
        Self {
            control: Control::Forcing,
            objective: ObjectiveKind::ReluQuadratic,
            n_windows: 20,
            schedule: PenaltySchedule::every_k(1e-5, 100, 1e5),
            max_steps: 2000,
            ..Self::lorenz_rho()
        }
    }

    /// The state the controlled horizon starts from.
    pub fn initial_state(&self) -> Result<[f64; 3], SystemsError> {
        if !(self.spinup >= 0.0) {
            return Err(SystemsError::InvalidConfig("spinup must be non-negative".into()));
        }
        if self.spinup == 0.0 {
            return Ok(self.q0);
        }
        let dt = (self.horizon.1 - self.horizon.0) / self.n_steps as f64;
        let rhs = LorenzModel::fixed(self.lorenz);
        let traj = ode::integrate(
            &rhs,
            &self.q0,
            0.0,
            self.spinup,
            &IntegratorConfig::fixed(self.method, dt),
        )?;
        let f = traj.final_state();
        Ok([f[0], f[1], f[2]])
    }

    pub fn problem(&self, n_windows: usize) -> Result<LorenzControl, SystemsError> {
        LorenzControl::new(
            self.lorenz,
            self.control,
            self.objective,
            self.initial_state()?,
            self.horizon,
            self.n_steps,
            self.method,
            n_windows,
        )
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            monitor_every: self.monitor_every,
            ..TrainConfig::new(self.schedule, self.optimizer, self.max_steps)
        }
    }
}

/// One optimization trace.
#[derive(Debug, Clone)]
pub struct ControlArm {
    pub result: TrainResult,
    pub initial_objective: f64,
    pub final_objective: f64,
}

impl ControlArm {
    /// Percentage by which the true objective was reduced.
    pub fn percent_reduction(&self) -> f64 {
        100.0 * (1.0 - self.final_objective / self.initial_objective)
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.result.history
    }
}

#[derive(Debug, Clone)]
pub struct ControlExperiment {
    pub mp: ControlArm,
    pub vanilla: ControlArm,
}

/// Trains one arm with `n_windows` windows.
pub fn run_control_arm(
    cfg: &ControlExperimentConfig,
    n_windows: usize,
    on_step: Option<&mut dyn FnMut(&HistoryRow)>,
) -> Result<ControlArm, SystemsError> {
    let problem = cfg.problem(n_windows)?;
    let theta0 = problem.initial_theta();
    let initial_objective = problem.true_objective(&theta0)?;
    let tc = cfg.train_config();
    let result = train_with_callback(&problem, Formulation::First, &tc, on_step)?;
    let final_objective = problem.true_objective(&result.theta)?;
    Ok(ControlArm {
        result,
        initial_objective,
        final_objective,
    })
}

/// Trains the windowed (MP) arm and the single-window (vanilla) arm with
/// identical optimizer settings.
pub fn run_control_experiment(cfg: &ControlExperimentConfig) -> Result<ControlExperiment, SystemsError> {
    Ok(ControlExperiment {
        mp: run_control_arm(cfg, cfg.n_windows, None)?,
        vanilla: run_control_arm(cfg, 1, None)?,
    })
}

pub fn run_lorenz_rho_experiment(cfg: &ControlExperimentConfig) -> Result<ControlExperiment, SystemsError> {
    run_control_experiment(cfg)
}

pub fn run_forcing_experiment(cfg: &ControlExperimentConfig) -> Result<ControlExperiment, SystemsError> {
    run_control_experiment(cfg)
}
