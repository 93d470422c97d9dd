use ndarray::Array2;

use super::{
    combine, mse_term, penalty_term, predictions, window_rollouts, LossVars, MpError, MpProblem, WindowPartition,
};
use crate::autodiff::{Eval, Ops};
use crate::models::MlpSpec;
use crate::ode::{self, IntegratorConfig, Trajectory};

/// Neural-ODE regression on equally long, equally sampled trajectories.
/// With a single-window partition this is the vanilla NODE loss.
pub struct NodeProblem {
    pub spec: MlpSpec,
    pub items: Vec<Trajectory>,
    pub partition: WindowPartition,
    pub integrator: IntegratorConfig,
    pub theta0: Vec<f64>,
}

impl NodeProblem {
    pub fn new(
        spec: MlpSpec,
        items: Vec<Trajectory>,
        partition: WindowPartition,
        integrator: IntegratorConfig,
        theta0: Vec<f64>,
    ) -> Result<Self, MpError> {
        spec.validate()?;
        integrator.validate()?;
        let first = items
            .first()
            .ok_or_else(|| MpError::InvalidConfig("no training trajectories".into()))?;
        if items.iter().any(|t| t.times() != first.times()) {
            return Err(MpError::Alignment(
                "training trajectories must share one time grid".into(),
            ));
        }
        if first.len() != partition.num_samples() {
            return Err(MpError::Alignment(format!(
                "trajectories have {} samples, partition spans {}",
                first.len(),
                partition.num_samples()
            )));
        }
        if first.state_dim() != spec.state_dim() {
            return Err(MpError::Alignment(format!(
                "trajectory dimension {} does not match model dimension {}",
                first.state_dim(),
                spec.state_dim()
            )));
        }
        if theta0.len() != spec.param_count() {
            return Err(MpError::InvalidConfig("theta0 does not match the network".into()));
        }
        Ok(Self {
            spec,
            items,
            partition,
            integrator,
            theta0,
        })
    }

    fn stacked(&self, batch: &[usize], sample: usize) -> Array2<f64> {
        let d = self.spec.state_dim();
        let mut m = Array2::zeros((batch.len(), d));
        for (r, &i) in batch.iter().enumerate() {
            m.row_mut(r).assign(&self.items[i].state(sample));
        }
        m
    }

    /// Free rollout of the trained network from `q0` over `times`.
    pub fn predict(&self, theta: &[f64], q0: &[f64], times: &[f64]) -> Result<Trajectory, MpError> {
        let mut ops = Eval::new(theta);
        let q = ops.constant(ode::row(q0));
        let rhs = self.spec.bind(0);
        let states = ode::rollout(&mut ops, &rhs, &q, times, self.integrator.method, self.integrator.dt)?;
        Ok(ode::stack(times.to_vec(), states.iter().map(|s| s.row(0).to_owned()))?)
    }
}

impl MpProblem for NodeProblem {
    fn n_theta(&self) -> usize {
        self.spec.param_count()
    }

    fn n_items(&self) -> usize {
        self.items.len()
    }

    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn n_restarts(&self) -> usize {
        self.partition.n_windows() - 1
    }

    fn initial_theta(&self) -> Vec<f64> {
        self.theta0.clone()
    }

    fn init_qk(&self, _theta: &[f64], batch: &[usize]) -> Result<Vec<f64>, MpError> {
        let mut out = Vec::with_capacity(self.qk_len(batch.len()));
        for &b in self.partition.interior() {
            out.extend(self.stacked(batch, b).iter());
        }
        Ok(out)
    }

    fn loss<O: Ops>(&self, ops: &mut O, batch: &[usize], mu: f64) -> Result<LossVars<O::Var>, MpError> {
        let bsz = batch.len();
        let d = self.state_dim();
        let n_theta = self.n_theta();
        let mut starts = vec![ops.constant(self.stacked(batch, 0))];
        for k in 0..self.n_restarts() {
            starts.push(ops.param(n_theta + k * bsz * d, bsz, d));
        }
        let rhs = self.spec.bind(0);
        let times = self.items[0].times();
        let windows = window_rollouts(
            ops,
            &rhs,
            &starts,
            times,
            &self.partition,
            self.integrator.method,
            self.integrator.dt,
        )?;
        let preds = predictions(&windows);
        let l_gt = mse_term(ops, &preds, |i| self.stacked(batch, i), bsz);
        let (l_p, jump) = penalty_term(ops, &starts[1..], &windows, bsz);
        Ok(combine(ops, l_gt, l_p, mu, jump))
    }
}
