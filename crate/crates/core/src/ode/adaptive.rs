use ndarray::{Array1, Array2, Zip};

use super::tableau::{TSIT5, TSIT5_BTILDE};
use super::{checked, combine, row, stack, stage_derivatives, IntegratorConfig, OdeError, Rhs, Trajectory};
use crate::autodiff::{Eval, Ops};

/// Result of an adaptive solve: the accepted step points and, when sample
/// times were requested, the dense-output values at those times.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSolution {
    pub accepted: Trajectory,
    pub samples: Option<Trajectory>,
    pub rejected_steps: usize,
}

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Adaptive Tsit5 with an elementary controller on the embedded estimate.
/// Dense output uses cubic Hermite interpolation between accepted points.
pub fn integrate_adaptive<R>(
    params: &[f64],
    rhs: &R,
    q0: &[f64],
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
    sample_times: Option<&[f64]>,
) -> Result<AdaptiveSolution, OdeError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    config.validate()?;
    let (atol, rtol) = config
        .adaptive_tolerances
        .ok_or_else(|| OdeError::InvalidConfig("adaptive_tolerances not set".into()))?;
    if !(t1 > t0) {
        return Err(OdeError::InvalidConfig(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if let Some(s) = sample_times {
        if s.iter().any(|&x| x < t0 || x > t1) {
            return Err(OdeError::InvalidConfig("sample times must lie within [t0, t1]".into()));
        }
    }

    let mut ops = Eval::new(params);
    let q_init = ops.constant(row(q0));
    let mut q = checked(&ops, q_init, t0, 0)?;
    let mut f = rhs.eval_in_step(&mut ops, &q, t0, t0);
    let mut t = t0;
    let mut h = config.dt.min(t1 - t0);
    let mut times = vec![t0];
    let mut states: Vec<Array1<f64>> = vec![q.row(0).to_owned()];
    let mut derivs: Vec<Array1<f64>> = vec![f.row(0).to_owned()];
    let mut attempts = 0usize;
    let mut rejected = 0usize;

    while t < t1 {
        if attempts >= config.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                max_steps: config.max_steps,
                t,
            });
        }
        attempts += 1;
        let last = t + h >= t1 - 1e-12 * t1.abs().max(1.0);
        let h_try = if last { t1 - t } else { h };

        let k = stage_derivatives(&mut ops, rhs, &q, t, h_try, &TSIT5, 6, Some(f.clone()))?;
        let next = combine(&mut ops, &q, &k, TSIT5.b, h_try);
        let next = checked(&ops, next, t + h_try, 6)?;
        let f_next = rhs.eval_in_step(&mut ops, &next, t + h_try, t);
        let f_next = checked(&ops, f_next, t + h_try, 6)?;

        let err = error_norm(&q, &next, &k, &f_next, h_try, atol, rtol);
        if err <= 1.0 {
            t = if last { t1 } else { t + h_try };
            q = next;
            f = f_next;
            times.push(t);
            states.push(q.row(0).to_owned());
            derivs.push(f.row(0).to_owned());
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        h = h_try * factor;
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::NonFiniteState { t, stage: 0 });
        }
    }

    let samples = match sample_times {
        Some(s) => Some(interpolate(&times, &states, &derivs, s)?),
        None => None,
    };
    Ok(AdaptiveSolution {
        accepted: stack(times, states.into_iter())?,
        samples,
        rejected_steps: rejected,
    })
}

fn error_norm(
    q: &Array2<f64>,
    next: &Array2<f64>,
    k: &[std::rc::Rc<Array2<f64>>],
    f_next: &Array2<f64>,
    h: f64,
    atol: f64,
    rtol: f64,
) -> f64 {
    let mut est = f_next * (h * TSIT5_BTILDE[6]);
    for (kj, bt) in k.iter().zip(TSIT5_BTILDE.iter()) {
        est.scaled_add(h * bt, &**kj);
    }
    let mut acc = 0.0;
    Zip::from(&est).and(q).and(next).for_each(|&e, &a, &b| {
        let sc = atol + rtol * a.abs().max(b.abs());
        acc += (e / sc) * (e / sc);
    });
    (acc / est.len() as f64).sqrt()
}

fn interpolate(
    times: &[f64],
    states: &[Array1<f64>],
    derivs: &[Array1<f64>],
    at: &[f64],
) -> Result<Trajectory, OdeError> {
    let mut rows = Vec::with_capacity(at.len());
    for &s in at {
        let seg = times.partition_point(|&t| t < s).clamp(1, times.len() - 1) - 1;
        let (ta, tb) = (times[seg], times[seg + 1]);
        let h = tb - ta;
        let th = (s - ta) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        let v = &states[seg] * h00 + &derivs[seg] * (h * h10) + &states[seg + 1] * h01 + &derivs[seg + 1] * (h * h11);
        rows.push(v);
    }
    stack(at.to_vec(), rows.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{FnRhs, Method};

    fn cfg(tol: f64) -> IntegratorConfig {
        IntegratorConfig {
            method: Method::Tsit5,
            dt: 0.1,
            adaptive_tolerances: Some((tol, tol)),
            max_steps: 100_000,
        }
    }

    #[test]
    fn adaptive_decay_meets_tolerance() {
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q);
        for tol in [1e-4, 1e-8] {
            let sol = integrate_adaptive(&[], &rhs, &[1.0], 0.0, 3.0, &cfg(tol), None).unwrap();
            let err = (sol.accepted.final_state()[0] - (-3.0f64).exp()).abs();
            assert!(err < 100.0 * tol, "tol {tol}: err {err}");
            assert_eq!(*sol.accepted.times().last().unwrap(), 3.0);
        }
    }

    #[test]
    fn tighter_tolerance_takes_more_steps() {
        let rhs = FnRhs(|q: &Array2<f64>, t: f64| q.mapv(|x| -x * (1.0 + t.sin())));
        let loose = integrate_adaptive(&[], &rhs, &[1.0], 0.0, 10.0, &cfg(1e-4), None).unwrap();
        let tight = integrate_adaptive(&[], &rhs, &[1.0], 0.0, 10.0, &cfg(1e-9), None).unwrap();
        assert!(tight.accepted.len() > loose.accepted.len());
    }

    #[test]
    fn dense_output_on_requested_times() {
        let rhs = FnRhs(|q: &Array2<f64>, _t| {
            let mut o = Array2::zeros(q.dim());
            o[[0, 0]] = q[[0, 1]];
            o[[0, 1]] = -q[[0, 0]];
            o
        });
        let at: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let sol = integrate_adaptive(&[], &rhs, &[0.0, 1.0], 0.0, 10.0, &cfg(1e-10), Some(&at)).unwrap();
        let s = sol.samples.unwrap();
        for (i, &t) in at.iter().enumerate() {
            assert!((s.state(i)[0] - t.sin()).abs() < 1e-6, "t = {t}");
        }
    }
}
