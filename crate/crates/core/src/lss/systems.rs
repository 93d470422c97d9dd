use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LssError, LssObjective, LssSystem};
use crate::models::{controlled_lorenz_rhs, LorenzParams};
use crate::ode::{self, FnRhs, IntegratorConfig, Method, Trajectory};

/// Lorenz-63 with `ρ` as the single parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzLss {
    pub params: LorenzParams,
}

impl LorenzLss {
    pub fn standard(rho: f64) -> Self {
        Self {
            params: LorenzParams {
                rho,
                ..LorenzParams::default()
            },
        }
    }
}

impl LssSystem for LorenzLss {
    fn dim(&self) -> usize {
        3
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn rhs(&self, q: &[f64]) -> Vec<f64> {
        controlled_lorenz_rhs([q[0], q[1], q[2]], &self.params).to_vec()
    }

    fn jac_q(&self, q: &[f64]) -> DMatrix<f64> {
        let p = &self.params;
        DMatrix::from_row_slice(
            3,
            3,
            &[-p.sigma, p.sigma, 0.0, p.rho - q[2], -1.0, -q[0], q[1], q[0], -p.beta],
        )
    }

    fn jac_theta(&self, q: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[0.0, q[0], 0.0])
    }
}

/// `dq/dt = A q + B Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLss {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    theta: Vec<f64>,
}

impl LinearLss {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, theta: Vec<f64>) -> Result<Self, LssError> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() != theta.len() || theta.is_empty() {
            return Err(LssError::InvalidProblem("inconsistent linear system shapes".into()));
        }
        Ok(Self { a, b, theta })
    }
}

impl LssSystem for LinearLss {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn param_dim(&self) -> usize {
        self.theta.len()
    }

    fn rhs(&self, q: &[f64]) -> Vec<f64> {
        let q = nalgebra::DVector::from_column_slice(q);
        let th = nalgebra::DVector::from_column_slice(&self.theta);
        (&self.a * q + &self.b * th).iter().copied().collect()
    }

    fn jac_q(&self, _q: &[f64]) -> DMatrix<f64> {
        self.a.clone()
    }

    fn jac_theta(&self, _q: &[f64]) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// `I(q) = q[index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanComponent {
    pub index: usize,
    pub param_dim: usize,
}

impl MeanComponent {
    pub fn new(index: usize, param_dim: usize) -> Self {
        Self { index, param_dim }
    }
}

impl LssObjective for MeanComponent {
    fn value(&self, q: &[f64]) -> f64 {
        q[self.index]
    }

    fn grad_q(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; q.len()];
        g[self.index] = 1.0;
        g
    }

    fn grad_theta(&self, _q: &[f64]) -> Vec<f64> {
        vec![0.0; self.param_dim]
    }
}

/// RK4 reference with step `dt`: `transient` steps are discarded and the
/// remaining `n_steps + 1` samples are stamped from zero.
pub fn reference_trajectory<S: LssSystem>(
    system: &S,
    q0: &[f64],
    dt: f64,
    n_steps: usize,
    transient: usize,
) -> Result<Trajectory, LssError> {
    if q0.len() != system.dim() || !(dt > 0.0) || n_steps == 0 {
        return Err(LssError::InvalidProblem("bad reference trajectory request".into()));
    }
    let rhs = FnRhs(|q: &Array2<f64>, _t: f64| {
        let f = system.rhs(q.row(0).as_slice().expect("row"));
        Array2::from_shape_vec((1, f.len()), f).expect("row")
    });
    let cfg = IntegratorConfig::fixed(Method::Rk4, dt);
    let total = (transient + n_steps) as f64 * dt;
    let traj = ode::integrate(&rhs, q0, 0.0, total, &cfg).map_err(|e| LssError::InvalidProblem(e.to_string()))?;
    if traj.len() != transient + n_steps + 1 {
        return Err(LssError::InvalidProblem(
            "integrator returned an unexpected sample count".into(),
        ));
    }
    let (_, states) = traj.slice(transient, traj.len()).into_parts();
    let times = (0..=n_steps).map(|i| i as f64 * dt).collect();
    Trajectory::new(times, states).map_err(|e| LssError::InvalidProblem(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFdConfig {
    pub members: usize,
    pub delta: f64,
    pub averaging_time: f64,
    pub spinup: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for EnsembleFdConfig {
    fn default() -> Self {
        Self {
            members: 20,
            delta: 0.5,
            averaging_time: 2000.0,
            spinup: 20.0,
            dt: 0.01,
            seed: 0,
        }
    }
}

/// Central finite difference of the long-time mean of `z` with respect to
/// `ρ`, averaged over randomly started members. Returns the mean and its
/// standard error.
pub fn lorenz_ensemble_fd(base: LorenzParams, cfg: &EnsembleFdConfig) -> Result<(f64, f64), LssError> {
    if cfg.members == 0 || !(cfg.delta > 0.0) || !(cfg.averaging_time > 0.0) || !(cfg.dt > 0.0) || cfg.spinup < 0.0 {
        return Err(LssError::InvalidProblem("bad ensemble configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = (cfg.averaging_time / cfg.dt).round() as usize;
    let spin = (cfg.spinup / cfg.dt).round() as usize;
    let mean_z = |rho: f64, q0: &[f64]| -> Result<f64, LssError> {
        let sys = LorenzLss {
            params: LorenzParams { rho, ..base },
        };
        let traj = reference_trajectory(&sys, q0, cfg.dt, steps, spin)?;
        let z = traj.states().column(2);
        let inner: f64 = z.iter().sum::<f64>() - 0.5 * (z[0] + z[z.len() - 1]);
        Ok(inner / steps as f64)
    };
    let mut grads = Vec::with_capacity(cfg.members);
    for _ in 0..cfg.members {
        let q0 = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(10.0..40.0),
        ];
        let hi = mean_z(base.rho + cfg.delta, &q0)?;
        let lo = mean_z(base.rho - cfg.delta, &q0)?;
        grads.push((hi - lo) / (2.0 * cfg.delta));
    }
    let n = grads.len() as f64;
    let mean = grads.iter().sum::<f64>() / n;
    let var = if grads.len() > 1 {
        grads.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}
