use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Ops;
use crate::ode::Rhs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzParams {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_sigma() -> f64 {
    10.0
}
fn default_rho() -> f64 {
    28.0
}
fn default_beta() -> f64 {
    8.0 / 3.0
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            rho: default_rho(),
            beta: default_beta(),
        }
    }
}

impl LorenzParams {
    /// The two non-trivial equilibria `(±√(β(ρ−1)), ±√(β(ρ−1)), ρ−1)`.
    pub fn fixed_points(&self) -> [[f64; 3]; 2] {
        let r = (self.beta * (self.rho - 1.0)).sqrt();
        [[r, r, self.rho - 1.0], [-r, -r, self.rho - 1.0]]
    }
}

pub fn controlled_lorenz_rhs(q: [f64; 3], p: &LorenzParams) -> [f64; 3] {
    let [x, y, z] = q;
    [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z]
}

/// One control value per integrator step on `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingVector {
    pub values: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl ForcingVector {
    pub fn zeros(n: usize, t_start: f64, t_end: f64) -> Self {
        Self {
            values: vec![0.0; n],
            t_start,
            t_end,
        }
    }

    pub fn step_width(&self) -> f64 {
        (self.t_end - self.t_start) / self.values.len() as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.values.is_empty() || self.values.iter().any(|v| !v.is_finite()) || !(self.t_end > self.t_start) {
            return Err(ModelError::InvalidSpec(
                "forcing needs ≥ 1 finite value on a non-empty interval".into(),
            ));
        }
        Ok(())
    }

    /// Index of the step enclosing `t`; `t_end` maps to the last step.
    pub fn index(&self, t: f64) -> Result<usize, ModelError> {
        step_index(t, self.t_start, self.t_end, self.values.len())
    }

    pub fn value_at(&self, t: f64) -> Result<f64, ModelError> {
        Ok(self.values[self.index(t)?])
    }
}

fn step_index(t: f64, t_start: f64, t_end: f64, n: usize) -> Result<usize, ModelError> {
    let h = (t_end - t_start) / n as f64;
    let slack = 1e-9 * h;
    if !(t >= t_start - slack && t <= t_end + slack) {
        return Err(ModelError::TimeOutOfRange { t, t_start, t_end });
    }
    let i = ((t - t_start) / h + 1e-9).floor().max(0.0) as usize;
    Ok(i.min(n - 1))
}

pub fn forced_lorenz_rhs(q: [f64; 3], p: &LorenzParams, f: &ForcingVector, t: f64) -> Result<[f64; 3], ModelError> {
    let [dx, dy, dz] = controlled_lorenz_rhs(q, p);
    Ok([dx, dy, dz + f.value_at(t)?])
}

/// Lorenz system on a backend. `rho_param` makes ρ a learnable scalar at
/// that offset; otherwise `params.rho` is a constant. The optional forcing
/// reads one learnable value per step from `forcing_offset`.
#[derive(Debug, Clone, Copy)]
pub struct LorenzModel {
    pub params: LorenzParams,
    pub rho_param: Option<usize>,
    pub forcing: Option<ForcingLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingLayout {
    pub offset: usize,
    pub n_steps: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl LorenzModel {
    pub fn fixed(params: LorenzParams) -> Self {
        Self {
            params,
            rho_param: None,
            forcing: None,
        }
    }

    fn build<O: Ops>(&self, ops: &mut O, q: &O::Var, forcing_time: f64) -> O::Var {
        let p = self.params;
        let x = ops.col(q, 0);
        let y = ops.col(q, 1);
        let z = ops.col(q, 2);
        let dx = ops.lincomb(None, &[(p.sigma, &y), (-p.sigma, &x)]);
        let rho_minus_z = match self.rho_param {
            Some(off) => {
                let rho = ops.param(off, 1, 1);
                let nz = ops.scale(&z, -1.0);
                ops.add_bcast(&nz, &rho)
            }
            None => {
                let rows = ops.value(q).nrows();
                let rho = ops.constant(ndarray::Array2::from_elem((rows, 1), p.rho));
                ops.sub(&rho, &z)
            }
        };
        let xr = ops.mul(&x, &rho_minus_z);
        let dy = ops.sub(&xr, &y);
        let xy = ops.mul(&x, &y);
        let mut dz = ops.lincomb(Some(&xy), &[(-p.beta, &z)]);
        if let Some(f) = self.forcing {
            let i = step_index(forcing_time, f.t_start, f.t_end, f.n_steps).unwrap_or_else(|_| {
                if forcing_time < f.t_start {
                    0
                } else {
                    f.n_steps - 1
                }
            });
            let fv = ops.param(f.offset + i, 1, 1);
            dz = ops.add_bcast(&dz, &fv);
        }
        ops.hcat(&[&dx, &dy, &dz])
    }
}

impl<O: Ops> Rhs<O> for LorenzModel {
    fn eval(&self, ops: &mut O, q: &O::Var, t: f64) -> O::Var {
        self.build(ops, q, t)
    }

    /// Forcing is held at the value of the step being taken, so interior
    /// stages never read the next step's control.
    fn eval_in_step(&self, ops: &mut O, q: &O::Var, _t: f64, step_start: f64) -> O::Var {
        self.build(ops, q, step_start)
    }
}
