//! Explicit time integration: Euler, classical RK4 and Tsit5.
//!
//! Every scheme is written against [`Ops`], so the same code path computes
//! plain trajectories (with [`Eval`]) and differentiable rollouts (with a
//! [`Tape`](crate::autodiff::Tape)). States are `rows × dim` matrices; the
//! rows are independent batch members.

mod adaptive;
mod convergence;
mod tableau;

pub use adaptive::{integrate_adaptive, AdaptiveSolution};
pub use convergence::{convergence_order, default_dts, LinearDecay};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Eval, Ops};
use tableau::Tableau;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("non-finite state at t = {t} (stage {stage})")]
    NonFiniteState { t: f64, stage: usize },
    #[error("step limit of {max_steps} exceeded at t = {t}")]
    MaxStepsExceeded { max_steps: usize, t: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
    Tsit5,
}

impl Method {
    pub fn order(self) -> u32 {
        match self {
            Method::Euler => 1,
            Method::Rk4 => 4,
            Method::Tsit5 => 5,
        }
    }

    fn tableau(self) -> &'static Tableau {
        match self {
            Method::Euler => &tableau::EULER,
            Method::Rk4 => &tableau::RK4,
            Method::Tsit5 => &tableau::TSIT5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt: f64,
    /// `(abs_tol, rel_tol)`; switches Tsit5 to adaptive stepping.
    #[serde(default)]
    pub adaptive_tolerances: Option<(f64, f64)>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    1_000_000
}

impl IntegratorConfig {
    pub fn fixed(method: Method, dt: f64) -> Self {
        Self {
            method,
            dt,
            adaptive_tolerances: None,
            max_steps: default_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(OdeError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(OdeError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if let Some((a, r)) = self.adaptive_tolerances {
            if !(a > 0.0 && r > 0.0) {
                return Err(OdeError::InvalidConfig(format!(
                    "adaptive tolerances must be positive, got ({a}, {r})"
                )));
            }
            if self.method != Method::Tsit5 {
                return Err(OdeError::InvalidConfig(
                    "adaptive stepping is only available for tsit5".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Time-stamped states, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Array2<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Array2<f64>) -> Result<Self, OdeError> {
        if times.len() != states.nrows() {
            return Err(OdeError::InvalidTrajectory(format!(
                "{} times but {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if states.ncols() == 0 {
            return Err(OdeError::InvalidTrajectory("state_dim must be positive".into()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(OdeError::InvalidTrajectory(format!(
                "times not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some((i, _)) = states
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
        {
            return Err(OdeError::InvalidTrajectory(format!("row {i} is not finite")));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> ArrayView1<'_, f64> {
        self.states.row(i)
    }

    pub fn final_state(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.len() - 1)
    }

    /// Rows `start..end`, with the original time stamps.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            times: self.times[start..end].to_vec(),
            states: self.states.slice(ndarray::s![start..end, ..]).to_owned(),
        }
    }

    pub fn into_parts(self) -> (Vec<f64>, Array2<f64>) {
        (self.times, self.states)
    }
}

/// A right-hand side `dq/dt = R(q, t)` over a backend.
pub trait Rhs<O: Ops> {
    fn eval(&self, ops: &mut O, q: &O::Var, t: f64) -> O::Var;

    /// Stage evaluation inside a step that began at `step_start`. Models
    /// with per-step constant inputs override this; the default ignores it.
    fn eval_in_step(&self, ops: &mut O, q: &O::Var, t: f64, step_start: f64) -> O::Var {
        let _ = step_start;
        self.eval(ops, q, t)
    }
}

/// Adapts a closure on plain arrays to [`Rhs`] for the [`Eval`] backend.
pub struct FnRhs<F>(pub F);

impl<F> Rhs<Eval<'_>> for FnRhs<F>
where
    F: Fn(&Array2<f64>, f64) -> Array2<f64>,
{
    fn eval(&self, ops: &mut Eval<'_>, q: &<Eval<'_> as Ops>::Var, t: f64) -> <Eval<'_> as Ops>::Var {
        let out = (self.0)(ops.value(q), t);
        ops.constant(out)
    }
}

fn checked<O: Ops>(ops: &O, v: O::Var, t: f64, stage: usize) -> Result<O::Var, OdeError> {
    if ops.all_finite(&v) {
        Ok(v)
    } else {
        Err(OdeError::NonFiniteState { t, stage })
    }
}

/// Stage derivatives of one explicit step; `stages` limits how many rows of
/// the tableau are evaluated.
fn stage_derivatives<O: Ops, R: Rhs<O> + ?Sized>(
    ops: &mut O,
    rhs: &R,
    q: &O::Var,
    t: f64,
    dt: f64,
    tab: &Tableau,
    stages: usize,
    first: Option<O::Var>,
) -> Result<Vec<O::Var>, OdeError> {
    let mut k: Vec<O::Var> = Vec::with_capacity(stages);
    for i in 0..stages {
        let ti = t + tab.c[i] * dt;
        let ki = if i == 0 {
            match first.clone() {
                Some(f) => f,
                None => rhs.eval_in_step(ops, q, ti, t),
            }
        } else {
            let terms: Vec<(f64, &O::Var)> = tab.a[i]
                .iter()
                .zip(&k)
                .filter(|(a, _)| **a != 0.0)
                .map(|(a, kj)| (dt * a, kj))
                .collect();
            let qi = ops_lincomb(ops, q, &terms);
            let qi = checked(ops, qi, ti, i)?;
            rhs.eval_in_step(ops, &qi, ti, t)
        };
        k.push(checked(ops, ki, ti, i)?);
    }
    Ok(k)
}

fn ops_lincomb<O: Ops>(ops: &mut O, base: &O::Var, terms: &[(f64, &O::Var)]) -> O::Var {
    if terms.is_empty() {
        base.clone()
    } else {
        ops.lincomb(Some(base), terms)
    }
}

fn combine<O: Ops>(ops: &mut O, q: &O::Var, k: &[O::Var], b: &[f64], dt: f64) -> O::Var {
    let terms: Vec<(f64, &O::Var)> = b
        .iter()
        .zip(k)
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, kj)| (dt * b, kj))
        .collect();
    ops_lincomb(ops, q, &terms)
}

/// One step of `method` from `(q, t)`.
pub fn step<O: Ops, R: Rhs<O> + ?Sized>(
    ops: &mut O,
    rhs: &R,
    q: &O::Var,
    t: f64,
    dt: f64,
    method: Method,
) -> Result<O::Var, OdeError> {
    let tab = method.tableau();
    // Tsit5's last stage has zero weight in the propagated solution.
    let stages = tab.b.iter().rposition(|b| *b != 0.0).map_or(0, |i| i + 1);
    let k = stage_derivatives(ops, rhs, q, t, dt, tab, stages, None)?;
    let next = combine(ops, q, &k, tab.b, dt);
    checked(ops, next, t + dt, stages)
}

/// Sub-step sizes covering `[t0, t1]` with nominal `dt`: uniform steps plus a
/// final partial step when the span is not a multiple of `dt`.
pub fn step_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let span = t1 - t0;
    let ratio = span / dt;
    let nearest = ratio.round();
    let mut times = Vec::new();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        let n = nearest.max(1.0) as usize;
        times.extend((0..n).map(|i| t0 + i as f64 * dt));
    } else {
        let n = ratio.floor() as usize;
        times.extend((0..=n).map(|i| t0 + i as f64 * dt));
    }
    times.push(t1);
    times
}

/// Fixed-step rollout from `q0` that returns the state at every output time.
/// Between consecutive output times the integrator takes uniform steps of
/// at most `dt` (rounded so that each interval is covered exactly).
pub fn rollout<O: Ops, R: Rhs<O> + ?Sized>(
    ops: &mut O,
    rhs: &R,
    q0: &O::Var,
    output_times: &[f64],
    method: Method,
    dt: f64,
) -> Result<Vec<O::Var>, OdeError> {
    let mut out = Vec::with_capacity(output_times.len());
    let mut q = q0.clone();
    out.push(q.clone());
    for w in output_times.windows(2) {
        let n = ((w[1] - w[0]) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for j in 0..n {
            let t = w[0] + j as f64 * h;
            q = step(ops, rhs, &q, t, h, method)?;
        }
        out.push(q.clone());
    }
    Ok(out)
}

/// Fixed-step integration over `[t0, t1]` on an arbitrary backend. Returns
/// the grid times and the state at each of them.
pub fn integrate_ops<O: Ops, R: Rhs<O> + ?Sized>(
    ops: &mut O,
    rhs: &R,
    q0: &O::Var,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<(Vec<f64>, Vec<O::Var>), OdeError> {
    config.validate()?;
    if !(t1 > t0) {
        return Err(OdeError::InvalidConfig(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let times = step_grid(t0, t1, config.dt);
    if times.len() - 1 > config.max_steps {
        return Err(OdeError::MaxStepsExceeded {
            max_steps: config.max_steps,
            t: times[config.max_steps],
        });
    }
    let mut states = Vec::with_capacity(times.len());
    let mut q = checked(ops, q0.clone(), t0, 0)?;
    states.push(q.clone());
    for w in times.windows(2) {
        q = step(ops, rhs, &q, w[0], w[1] - w[0], config.method)?;
        states.push(q.clone());
    }
    Ok((times, states))
}

/// Integrates a single state vector over `[t0, t1]` with parameter values
/// `params` visible to the right-hand side.
pub fn integrate_with<R>(
    params: &[f64],
    rhs: &R,
    q0: &[f64],
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory, OdeError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    if config.adaptive_tolerances.is_some() {
        config.validate()?;
        return integrate_adaptive(params, rhs, q0, t0, t1, config, None).map(|s| s.accepted);
    }
    let mut ops = Eval::new(params);
    let q = ops.constant(row(q0));
    let (times, states) = integrate_ops(&mut ops, rhs, &q, t0, t1, config)?;
    stack(times, states.iter().map(|s| s.row(0).to_owned()))
}

/// [`integrate_with`] for right-hand sides without learnable parameters.
pub fn integrate<R>(rhs: &R, q0: &[f64], t0: f64, t1: f64, config: &IntegratorConfig) -> Result<Trajectory, OdeError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    integrate_with(&[], rhs, q0, t0, t1, config)
}

pub(crate) fn row(q: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, q.len()), q.to_vec()).expect("row vector")
}

pub(crate) fn stack(times: Vec<f64>, rows: impl Iterator<Item = Array1<f64>>) -> Result<Trajectory, OdeError> {
    let rows: Vec<Array1<f64>> = rows.collect();
    let dim = rows.first().map_or(0, |r| r.len());
    let mut states = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in states.axis_iter_mut(Axis(0)).zip(&rows) {
        dst.assign(src);
    }
    Trajectory::new(times, states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> FnRhs<impl Fn(&Array2<f64>, f64) -> Array2<f64>> {
        FnRhs(|q: &Array2<f64>, _t| -q)
    }

    fn one_step(method: Method, q: &[f64], dt: f64) -> Vec<f64> {
        let mut ops = Eval::new(&[]);
        let q = ops.constant(row(q));
        step(&mut ops, &decay(), &q, 0.0, dt, method)
            .unwrap()
            .iter()
            .copied()
            .collect()
    }

    #[test]
    fn zero_field_is_stationary() {
        let zero = FnRhs(|q: &Array2<f64>, _t| Array2::zeros(q.dim()));
        for m in [Method::Euler, Method::Rk4, Method::Tsit5] {
            let mut ops = Eval::new(&[]);
            let q = ops.constant(row(&[3.0, -1.0]));
            let out = step(&mut ops, &zero, &q, 0.0, 0.37, m).unwrap();
            assert_eq!(out.as_slice().unwrap(), &[3.0, -1.0]);
            let traj = integrate(&zero, &[3.0, -1.0], 0.0, 2.0, &IntegratorConfig::fixed(m, 0.1)).unwrap();
            assert!(traj.states().rows().into_iter().all(|r| r[0] == 3.0 && r[1] == -1.0));
        }
    }

    #[test]
    fn single_steps_of_decay() {
        assert_eq!(one_step(Method::Euler, &[1.0], 0.1), vec![0.9]);
        let rk4 = one_step(Method::Rk4, &[1.0], 0.1)[0];
        assert!((rk4 - (-0.1f64).exp()).abs() < 1e-7);
        let ts = one_step(Method::Tsit5, &[1.0], 0.1)[0];
        assert!((ts - (-0.1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rk4_decay_to_one() {
        let traj = integrate(&decay(), &[1.0], 0.0, 1.0, &IntegratorConfig::fixed(Method::Rk4, 0.01)).unwrap();
        assert_eq!(traj.len(), 101);
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(*traj.times().last().unwrap(), 1.0);
    }

    #[test]
    fn partial_final_step() {
        let traj = integrate(&decay(), &[1.0], 0.0, 1.05, &IntegratorConfig::fixed(Method::Rk4, 0.1)).unwrap();
        let t = traj.times();
        assert_eq!(t.len(), 12);
        assert_eq!(t[11], 1.05);
        assert!((t[11] - t[10] - 0.05).abs() < 1e-12);
        for w in t[..11].windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() <= 4.0 * f64::EPSILON);
        }
        assert!((traj.final_state()[0] - (-1.05f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let blow = FnRhs(|q: &Array2<f64>, _t| q.mapv(|x| if x > 10.0 { f64::INFINITY } else { x * x }));
        let err = integrate(&blow, &[1.0], 0.0, 5.0, &IntegratorConfig::fixed(Method::Rk4, 0.1)).unwrap_err();
        assert!(matches!(err, OdeError::NonFiniteState { .. }));
    }

    #[test]
    fn max_steps_is_enforced() {
        let mut cfg = IntegratorConfig::fixed(Method::Euler, 0.1);
        cfg.max_steps = 5;
        let err = integrate(&decay(), &[1.0], 0.0, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, OdeError::MaxStepsExceeded { max_steps: 5, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(IntegratorConfig::fixed(Method::Rk4, -0.1).validate().is_err());
        let mut c = IntegratorConfig::fixed(Method::Rk4, 0.1);
        c.adaptive_tolerances = Some((1e-6, 1e-6));
        assert!(c.validate().is_err());
        let bad = Trajectory::new(vec![0.0, 0.0], Array2::zeros((2, 1)));
        assert!(bad.is_err());
    }

    #[test]
    fn rollout_substeps_match_integrate() {
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.05);
        let full = integrate(&decay(), &[2.0], 0.0, 1.0, &cfg).unwrap();
        let mut ops = Eval::new(&[]);
        let q0 = ops.constant(row(&[2.0]));
        let samples = [0.0, 0.25, 0.5, 0.75, 1.0];
        let out = rollout(&mut ops, &decay(), &q0, &samples, Method::Rk4, 0.05).unwrap();
        assert_eq!(out.len(), 5);
        assert!((out[4][[0, 0]] - full.final_state()[0]).abs() < 1e-13);
    }

    #[test]
    fn rk4_reversal_returns_to_start() {
        let a = [[0.0, 1.0], [-1.0, -0.1]];
        let fwd = FnRhs(move |q: &Array2<f64>, _t| {
            let mut o = Array2::zeros(q.dim());
            o[[0, 0]] = a[0][0] * q[[0, 0]] + a[0][1] * q[[0, 1]];
            o[[0, 1]] = a[1][0] * q[[0, 0]] + a[1][1] * q[[0, 1]];
            o
        });
        let bwd = FnRhs(move |q: &Array2<f64>, _t| {
            let mut o = Array2::zeros(q.dim());
            o[[0, 0]] = -(a[0][0] * q[[0, 0]] + a[0][1] * q[[0, 1]]);
            o[[0, 1]] = -(a[1][0] * q[[0, 0]] + a[1][1] * q[[0, 1]]);
            o
        });
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.01);
        let there = integrate(&fwd, &[1.0, 0.5], 0.0, 5.0, &cfg).unwrap();
        let end: Vec<f64> = there.final_state().to_vec();
        let back = integrate(&bwd, &end, 0.0, 5.0, &cfg).unwrap();
        let steps = 500.0;
        let bound = steps * 0.01f64.powi(5) * 10.0;
        assert!((back.final_state()[0] - 1.0).abs() < bound);
        assert!((back.final_state()[1] - 0.5).abs() < bound);
    }

    #[test]
    fn deterministic_bitwise() {
        let cfg = IntegratorConfig::fixed(Method::Tsit5, 0.013);
        let a = integrate(&decay(), &[1.3, -0.2], 0.0, 3.0, &cfg).unwrap();
        let b = integrate(&decay(), &[1.3, -0.2], 0.0, 3.0, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
