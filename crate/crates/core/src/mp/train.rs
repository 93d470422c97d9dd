use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{trigger_fires, AdamConfig, AdamState, LossVars, MpError, PenaltySchedule};
use crate::autodiff::{Eval, Ops, Tape};

/// A multistep-penalty training problem. The backend parameter vector is
/// `[θ | q_k]`: `n_theta` model parameters followed by the restarts of the
/// current batch, window-major with one `batch × state_dim` block per
/// interior boundary.
pub trait MpProblem {
    fn n_theta(&self) -> usize;
    fn n_items(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// Interior boundaries per item.
    fn n_restarts(&self) -> usize;
    fn initial_theta(&self) -> Vec<f64>;
    /// Starting restarts for `batch` under model parameters `theta`.
    fn init_qk(&self, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>, MpError>;
    fn loss<O: Ops>(&self, ops: &mut O, batch: &[usize], mu: f64) -> Result<LossVars<O::Var>, MpError>;
    /// Problem-specific figure of merit for the current `theta`, if any.
    fn objective(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    fn qk_len(&self, batch_len: usize) -> usize {
        self.n_restarts() * batch_len * self.state_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Formulation {
    /// One optimizer step per batch; μ follows the schedule globally.
    First,
    /// `num_iters` steps per batch visit; μ follows the schedule globally.
    Second { num_iters: usize },
    /// The whole μ ladder on every batch visit.
    Third,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: PenaltySchedule,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub max_steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub divergence_patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep restarts (and their optimizer moments) per item across visits
    /// instead of reinitializing them for every new batch.
    #[serde(default)]
    pub global_register: bool,
    /// Evaluate the problem objective every this many steps (0 = never).
    #[serde(default)]
    pub monitor_every: usize,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_batch() -> usize {
    1
}
fn default_patience() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(schedule: PenaltySchedule, optimizer: AdamConfig, max_steps: usize) -> Self {
        Self {
            schedule,
            optimizer,
            max_steps,
            batch_size: default_batch(),
            divergence_patience: default_patience(),
            seed: 0,
            global_register: false,
            monitor_every: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub total: f64,
    pub l_gt: f64,
    pub l_p: f64,
    pub mu: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_qk: f64,
    pub max_jump: f64,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    /// Restarts of the last batch visited.
    pub qk: Vec<f64>,
    pub history: Vec<HistoryRow>,
    pub mu: f64,
    pub steps: usize,
    /// Steps at which μ was increased.
    pub mu_events: Vec<usize>,
    pub rng_word_pos: u128,
}

/// One optimizer step's worth of values and gradients.
pub struct Evaluation {
    pub total: f64,
    pub l_gt: f64,
    pub l_p: f64,
    pub max_jump: f64,
    pub gradient: Vec<f64>,
}

/// Loss and gradient of `problem` at `params = [θ | q_k]`.
pub fn evaluate_with_grad<P: MpProblem>(
    problem: &P,
    params: &[f64],
    batch: &[usize],
    mu: f64,
) -> Result<Evaluation, MpError> {
    let mut tape = Tape::new(params);
    let v = problem.loss(&mut tape, batch, mu)?;
    let total = tape.scalar(&v.total);
    let gradient = tape.backward(v.total.clone(), 1.0);
    Ok(Evaluation {
        total,
        l_gt: tape.scalar(&v.l_gt),
        l_p: tape.scalar(&v.l_p),
        max_jump: v.max_jump,
        gradient,
    })
}

/// Loss value only, on the plain backend.
pub fn evaluate_loss<P: MpProblem>(problem: &P, params: &[f64], batch: &[usize], mu: f64) -> Result<f64, MpError> {
    let mut ops = Eval::new(params);
    let v = problem.loss(&mut ops, batch, mu)?;
    Ok(ops.scalar(&v.total))
}

struct RegisterEntry {
    values: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

struct Trainer<'a, 'c, P: MpProblem> {
    problem: &'a P,
    cfg: &'a TrainConfig,
    theta: Vec<f64>,
    theta_opt: AdamState,
    batch: Vec<usize>,
    qk: Vec<f64>,
    qk_opt: AdamState,
    register: HashMap<usize, RegisterEntry>,
    mu: f64,
    step: usize,
    rung_history: Vec<f64>,
    history: Vec<HistoryRow>,
    mu_events: Vec<usize>,
    bad_streak: usize,
    on_step: Option<&'c mut dyn FnMut(&HistoryRow)>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl<P: MpProblem> Trainer<'_, '_, P> {
    fn done(&self) -> bool {
        self.step >= self.cfg.max_steps
    }

    fn set_batch(&mut self, batch: &[usize]) -> Result<(), MpError> {
        if self.batch == batch {
            return Ok(());
        }
        if self.cfg.global_register {
            self.stash();
        }
        let qk = self.problem.init_qk(&self.theta, batch)?;
        let expected = self.problem.qk_len(batch.len());
        if qk.len() != expected {
            return Err(MpError::InvalidConfig(format!(
                "problem produced {} restart values, expected {expected}",
                qk.len()
            )));
        }
        self.qk = qk;
        self.qk_opt = AdamState::new(expected);
        self.batch = batch.to_vec();
        if self.cfg.global_register {
            self.restore();
        }
        Ok(())
    }

    fn item_slots(&self, pos: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let d = self.problem.state_dim();
        let bd = self.batch.len() * d;
        (0..self.problem.n_restarts()).map(move |k| k * bd + pos * d..k * bd + pos * d + d)
    }

    fn stash(&mut self) {
        for pos in 0..self.batch.len() {
            let slots: Vec<_> = self.item_slots(pos).collect();
            let gather = |src: &[f64]| slots.iter().flat_map(|r| src[r.clone()].to_vec()).collect::<Vec<_>>();
            let entry = RegisterEntry {
                values: gather(&self.qk),
                m: gather(&self.qk_opt.m),
                v: gather(&self.qk_opt.v),
                t: self.qk_opt.t,
            };
            self.register.insert(self.batch[pos], entry);
        }
    }

    fn restore(&mut self) {
        let mut min_t: Option<u64> = None;
        for pos in 0..self.batch.len() {
            let slots: Vec<_> = self.item_slots(pos).collect();
            if let Some(e) = self.register.get(&self.batch[pos]) {
                let d = self.problem.state_dim();
                for (k, r) in slots.iter().enumerate() {
                    self.qk[r.clone()].copy_from_slice(&e.values[k * d..k * d + d]);
                    self.qk_opt.m[r.clone()].copy_from_slice(&e.m[k * d..k * d + d]);
                    self.qk_opt.v[r.clone()].copy_from_slice(&e.v[k * d..k * d + d]);
                }
                min_t = Some(min_t.map_or(e.t, |t| t.min(e.t)));
            } else {
                min_t = Some(0);
            }
        }
        self.qk_opt.t = min_t.unwrap_or(0);
    }

    /// One optimizer step at the current μ; returns the loss value.
    fn step_once(&mut self) -> Result<f64, MpError> {
        let n_theta = self.theta.len();
        let mut params = Vec::with_capacity(n_theta + self.qk.len());
        params.extend_from_slice(&self.theta);
        params.extend_from_slice(&self.qk);
        let eval = match evaluate_with_grad(self.problem, &params, &self.batch, self.mu) {
            Ok(e) => Some(e),
            Err(MpError::NonFiniteWindow { .. }) => None,
            Err(e) => return Err(e),
        };
        self.step += 1;
        let mut row = HistoryRow {
            step: self.step,
            total: f64::NAN,
            l_gt: f64::NAN,
            l_p: f64::NAN,
            mu: self.mu,
            grad_norm_theta: f64::NAN,
            grad_norm_qk: f64::NAN,
            max_jump: f64::NAN,
            objective: None,
        };
        let mut healthy = false;
        if let Some(mut e) = eval {
            let (gt, gq) = e.gradient.split_at(n_theta);
            row.total = e.total;
            row.l_gt = e.l_gt;
            row.l_p = e.l_p;
            row.max_jump = e.max_jump;
            row.grad_norm_theta = norm(gt);
            row.grad_norm_qk = norm(gq);
            healthy = e.total.is_finite() && e.gradient.iter().all(|g| g.is_finite());
            if healthy {
                if let Some(clip) = self.cfg.optimizer.grad_clip {
                    let n = norm(&e.gradient);
                    if n > clip {
                        e.gradient.iter_mut().for_each(|g| *g *= clip / n);
                    }
                }
                let lr = self.cfg.optimizer.lr_at(self.step - 1);
                let (gt, gq) = e.gradient.split_at(n_theta);
                self.theta_opt.update(&self.cfg.optimizer, lr, &mut self.theta, gt);
                self.qk_opt.update(&self.cfg.optimizer, lr, &mut self.qk, gq);
            }
        }
        if healthy {
            self.bad_streak = 0;
        } else {
            self.bad_streak += 1;
            if self.bad_streak >= self.cfg.divergence_patience {
                return Err(MpError::DivergedTraining {
                    step: self.step,
                    consecutive: self.bad_streak,
                });
            }
        }
        let m = self.cfg.monitor_every;
        if m > 0 && (self.step % m == 0 || self.step == 1 || self.step == self.cfg.max_steps) {
            row.objective = self.problem.objective(&self.theta);
        }
        let total = row.total;
        if let Some(cb) = self.on_step.as_mut() {
            cb(&row);
        }
        self.history.push(row);
        Ok(total)
    }

    /// Applies the schedule after a step. `local_step` is the step count the
    /// trigger sees. Returns whether the trigger fired.
    fn advance_mu(&mut self, local_step: usize, loss: f64) -> bool {
        self.rung_history.push(loss);
        if !trigger_fires(&self.cfg.schedule.trigger, local_step, &self.rung_history) {
            return false;
        }
        let next = (self.mu * self.cfg.schedule.growth_factor)
            .min(self.cfg.schedule.mu_max)
            .max(self.mu);
        if next > self.mu {
            self.mu_events.push(self.step);
        }
        self.mu = next;
        self.rung_history.clear();
        true
    }
}

/// Runs one of the three training loops on `problem`.
pub fn train<P: MpProblem>(problem: &P, formulation: Formulation, cfg: &TrainConfig) -> Result<TrainResult, MpError> {
    train_with_callback(problem, formulation, cfg, None)
}

pub fn train_with_callback<P: MpProblem>(
    problem: &P,
    formulation: Formulation,
    cfg: &TrainConfig,
    on_step: Option<&mut dyn FnMut(&HistoryRow)>,
) -> Result<TrainResult, MpError> {
    cfg.schedule.validate()?;
    if problem.n_items() == 0 || cfg.batch_size == 0 {
        return Err(MpError::InvalidConfig(
            "need at least one item and a positive batch size".into(),
        ));
    }
    if cfg.divergence_patience == 0 {
        return Err(MpError::InvalidConfig("divergence_patience must be positive".into()));
    }
    let iters = match formulation {
        Formulation::First | Formulation::Third => 1,
        Formulation::Second { num_iters } if num_iters > 0 => num_iters,
        Formulation::Second { .. } => return Err(MpError::InvalidConfig("num_iters must be positive".into())),
    };
    let theta = problem.initial_theta();
    if theta.len() != problem.n_theta() {
        return Err(MpError::InvalidConfig("initial theta length mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = Trainer {
        problem,
        cfg,
        theta_opt: AdamState::new(theta.len()),
        theta,
        batch: Vec::new(),
        qk: Vec::new(),
        qk_opt: AdamState::new(0),
        register: HashMap::new(),
        mu: cfg.schedule.mu_min,
        step: 0,
        rung_history: Vec::new(),
        history: Vec::new(),
        mu_events: Vec::new(),
        bad_streak: 0,
        on_step,
    };
    let mut order: Vec<usize> = (0..problem.n_items()).collect();
    'outer: while !t.done() {
        if cfg.shuffle && problem.n_items() > 1 {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            if t.done() {
                break 'outer;
            }
            t.set_batch(batch)?;
            match formulation {
                Formulation::First | Formulation::Second { .. } => {
                    for _ in 0..iters {
                        if t.done() {
                            break 'outer;
                        }
                        let loss = t.step_once()?;
                        let s = t.step;
                        t.advance_mu(s, loss);
                    }
                }
                Formulation::Third => {
                    t.mu = cfg.schedule.mu_min;
                    t.rung_history.clear();
                    let mut local = 0;
                    loop {
                        if t.done() {
                            break 'outer;
                        }
                        let at_top = t.mu >= cfg.schedule.mu_max;
                        let loss = t.step_once()?;
                        local += 1;
                        if t.advance_mu(local, loss) && at_top {
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(TrainResult {
        theta: t.theta,
        qk: t.qk,
        history: t.history,
        mu: t.mu,
        steps: t.step,
        mu_events: t.mu_events,
        rng_word_pos: rng.get_word_pos(),
    })
}
