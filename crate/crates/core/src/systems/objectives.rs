use serde::{Deserialize, Serialize};

use super::SystemsError;
use crate::autodiff::Ops;
use crate::ode::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Pointwise `|z|`.
    MeanAbsZ,
    /// `½((2x + y)/5)²` where `2x + y ≥ 0`, zero elsewhere.
    ReluQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlObjectiveSpec {
    pub kind: ObjectiveKind,
    pub horizon: (f64, f64),
}

impl ControlObjectiveSpec {
    pub fn validate(&self) -> Result<(), SystemsError> {
        let (a, b) = self.horizon;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(SystemsError::InvalidConfig(format!(
                "horizon ({a}, {b}) must have t_f > t_i"
            )));
        }
        Ok(())
    }
}

impl ObjectiveKind {
    pub fn integrand(self, q: &[f64]) -> f64 {
        match self {
            Self::MeanAbsZ => q[2].abs(),
            Self::ReluQuadratic => {
                let u = 0.4 * q[0] + 0.2 * q[1];
                if u > 0.0 {
                    0.5 * (u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// The integrand on a backend, as a 1×1 value summed over batch rows.
    pub fn integrand_var<O: Ops>(self, ops: &mut O, q: &O::Var) -> O::Var {
        match self {
            Self::MeanAbsZ => {
                let z = ops.col(q, 2);
                let a = ops.abs(&z);
                ops.sum(&a)
            }
            Self::ReluQuadratic => {
                let x = ops.col(q, 0);
                let y = ops.col(q, 1);
                let u = ops.lincomb(None, &[(0.4, &x), (0.2, &y)]);
                let r = ops.relu(&u);
                let s = ops.sum_sq(&r);
                ops.scale(&s, 0.5)
            }
        }
    }

    /// Time average of the integrand over the trajectory by the trapezoid rule.
    pub fn time_average(self, traj: &Trajectory) -> Result<f64, SystemsError> {
        if traj.state_dim() != 3 {
            return Err(SystemsError::InvalidConfig(format!(
                "control objectives need 3-dimensional states, got {}",
                traj.state_dim()
            )));
        }
        let t = traj.times();
        if t.len() < 2 {
            return Err(SystemsError::InvalidConfig("need at least two samples".into()));
        }
        let vals: Vec<f64> = (0..traj.len())
            .map(|i| self.integrand(traj.state(i).as_slice().expect("row")))
            .collect();
        let mut acc = 0.0;
        for i in 0..vals.len() - 1 {
            acc += 0.5 * (t[i + 1] - t[i]) * (vals[i] + vals[i + 1]);
        }
        Ok(acc / (t[t.len() - 1] - t[0]))
    }
}

/// `(1/T) ∫ |z| dt` over the trajectory's time span.
pub fn objective_mean_abs_z(traj: &Trajectory) -> Result<f64, SystemsError> {
    ObjectiveKind::MeanAbsZ.time_average(traj)
}

/// Time average of the one-sided quadratic in `(2x + y)/5`.
pub fn objective_relu_quadratic(traj: &Trajectory) -> Result<f64, SystemsError> {
    ObjectiveKind::ReluQuadratic.time_average(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;
    use ndarray::Array2;

    fn traj(n: usize, t_end: f64, f: impl Fn(f64) -> [f64; 3]) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect();
        let states = Array2::from_shape_fn((n, 3), |(i, j)| f(times[i])[j]);
        Trajectory::new(times, states).unwrap()
    }

    #[test]
    fn zero_and_constant_z() {
        assert_eq!(objective_mean_abs_z(&traj(11, 1.0, |_| [1.0, 2.0, 0.0])).unwrap(), 0.0);
        let c = objective_mean_abs_z(&traj(11, 3.0, |_| [1.0, 2.0, -2.5])).unwrap();
        assert!((c - 2.5).abs() < 1e-14);
    }

    #[test]
    fn sine_average() {
        let v = objective_mean_abs_z(&traj(2001, 2.0 * std::f64::consts::PI, |t| [0.0, 0.0, t.sin()])).unwrap();
        assert!((v - 2.0 / std::f64::consts::PI).abs() < 1e-5, "{v}");
    }

    #[test]
    fn relu_quadratic_cases() {
        assert_eq!(
            objective_relu_quadratic(&traj(5, 1.0, |t| [-1.0 - t, 0.5, 0.0])).unwrap(),
            0.0
        );
        let v = objective_relu_quadratic(&traj(5, 1.0, |_| [2.0, 1.0, 7.0])).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(
            objective_relu_quadratic(&traj(5, 1.0, |_| [-1.0, 2.0, 0.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn refinement_changes_little() {
        let f = |t: f64| [0.0, 0.0, (3.0 * t).sin() + 0.3];
        let a = objective_mean_abs_z(&traj(401, 4.0, f)).unwrap();
        let b = objective_mean_abs_z(&traj(801, 4.0, f)).unwrap();
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn backend_integrand_matches() {
        for kind in [ObjectiveKind::MeanAbsZ, ObjectiveKind::ReluQuadratic] {
            let q = [1.3, -0.4, -2.0];
            let mut ops = Eval::new(&[]);
            let v = ops.constant(Array2::from_shape_vec((1, 3), q.to_vec()).unwrap());
            let i = kind.integrand_var(&mut ops, &v);
            assert_eq!(ops.scalar(&i), kind.integrand(&q));
        }
    }

    #[test]
    fn rejects_wrong_dimension() {
        let t = Trajectory::new(vec![0.0, 1.0], Array2::zeros((2, 2))).unwrap();
        assert!(objective_mean_abs_z(&t).is_err());
        let spec = ControlObjectiveSpec {
            kind: ObjectiveKind::MeanAbsZ,
            horizon: (1.0, 1.0),
        };
        assert!(spec.validate().is_err());
    }
}
