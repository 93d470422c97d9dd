use ndarray::Array2;

use super::{integrate, FnRhs, IntegratorConfig, Method, OdeError};

/// `dq/dt = −λq` on `[0, t_end]`, with solution `q0·e^{−λt}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub lambda: f64,
    pub q0: f64,
    pub t_end: f64,
}

impl Default for LinearDecay {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            q0: 1.0,
            t_end: 1.0,
        }
    }
}

impl LinearDecay {
    pub fn exact(&self, t: f64) -> f64 {
        self.q0 * (-self.lambda * t).exp()
    }

    /// Absolute error of the final state at step size `dt`.
    pub fn final_error(&self, method: Method, dt: f64) -> Result<f64, OdeError> {
        let lambda = self.lambda;
        let rhs = FnRhs(move |q: &Array2<f64>, _t| q * -lambda);
        let traj = integrate(&rhs, &[self.q0], 0.0, self.t_end, &IntegratorConfig::fixed(method, dt))?;
        Ok((traj.final_state()[0] - self.exact(self.t_end)).abs())
    }
}

/// Step sizes that keep the error well above round-off for each scheme.
pub fn default_dts(method: Method) -> Vec<f64> {
    match method {
        Method::Euler | Method::Rk4 => vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
        Method::Tsit5 => vec![0.1, 0.05, 0.04, 0.025, 0.02],
    }
}

/// Least-squares slope of `log(error)` against `log(dt)`.
pub fn convergence_order(method: Method, problem: &LinearDecay, dts: &[f64]) -> Result<f64, OdeError> {
    if dts.len() < 4 {
        return Err(OdeError::InvalidConfig(format!(
            "need at least 4 step sizes, got {}",
            dts.len()
        )));
    }
    let mut xs = Vec::with_capacity(dts.len());
    let mut ys = Vec::with_capacity(dts.len());
    for &dt in dts {
        xs.push(dt.ln());
        ys.push(problem.final_error(method, dt)?.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measured_orders() {
        let p = LinearDecay::default();
        let e = convergence_order(Method::Euler, &p, &default_dts(Method::Euler)).unwrap();
        let r = convergence_order(Method::Rk4, &p, &default_dts(Method::Rk4)).unwrap();
        let t = convergence_order(Method::Tsit5, &p, &default_dts(Method::Tsit5)).unwrap();
        assert!((0.9..=1.1).contains(&e), "euler {e}");
        assert!((3.8..=4.2).contains(&r), "rk4 {r}");
        assert!((4.7..=5.3).contains(&t), "tsit5 {t}");
    }

    #[test]
    fn too_few_step_sizes() {
        assert!(convergence_order(Method::Rk4, &LinearDecay::default(), &[0.1, 0.05]).is_err());
    }
}
