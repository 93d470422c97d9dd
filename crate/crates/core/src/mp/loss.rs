use ndarray::Array2;

use super::{MpError, PenaltyState, WindowPartition};
use crate::autodiff::{Eval, Ops};
use crate::ode::{self, IntegratorConfig, Method, OdeError, Rhs, Trajectory};

/// Loss components as backend values. `max_jump` is the largest restart
/// discontinuity `|q_k⁺ − q_k⁻|` over boundaries and batch members.
pub struct LossVars<V> {
    pub total: V,
    pub l_gt: V,
    pub l_p: V,
    pub max_jump: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLossBreakdown {
    pub total: f64,
    pub l_gt: f64,
    pub l_p: f64,
    pub mu: f64,
}

impl MpLossBreakdown {
    pub fn from_vars<O: Ops>(ops: &O, v: &LossVars<O::Var>, mu: f64) -> Self {
        Self {
            total: ops.scalar(&v.total),
            l_gt: ops.scalar(&v.l_gt),
            l_p: ops.scalar(&v.l_p),
            mu,
        }
    }
}

/// Integrates every window from its start state. Window `k` yields the
/// states at samples `b_k ..= b_{k+1}`; the last entry is `q_{k+1}⁻`.
pub fn window_rollouts<O: Ops, R: Rhs<O> + ?Sized>(
    ops: &mut O,
    rhs: &R,
    starts: &[O::Var],
    times: &[f64],
    partition: &WindowPartition,
    method: Method,
    dt: f64,
) -> Result<Vec<Vec<O::Var>>, MpError> {
    if starts.len() != partition.n_windows() {
        return Err(MpError::Alignment(format!(
            "{} start states for {} windows",
            starts.len(),
            partition.n_windows()
        )));
    }
    if times.len() != partition.num_samples() {
        return Err(MpError::Alignment(format!(
            "{} sample times but partition spans {} samples",
            times.len(),
            partition.num_samples()
        )));
    }
    let mut out = Vec::with_capacity(starts.len());
    for (k, start) in starts.iter().enumerate() {
        let (a, b) = partition.window(k);
        let states = ode::rollout(ops, rhs, start, &times[a..=b], method, dt)
            .map_err(|source| MpError::NonFiniteWindow { window: k, source })?;
        out.push(states);
    }
    Ok(out)
}

/// Predicted state at every sample: window `k` owns `[b_k, b_{k+1})` and
/// the final sample comes from the end of the last window.
pub fn predictions<V: Clone>(windows: &[Vec<V>]) -> Vec<V> {
    let mut out = Vec::new();
    for w in windows {
        out.extend(w[..w.len() - 1].iter().cloned());
    }
    if let Some(last) = windows.last().and_then(|w| w.last()) {
        out.push(last.clone());
    }
    out
}

/// `Σ_i |q_i − q_i^true|² / (2 N B)` over `N` samples and `B` batch rows.
pub fn mse_term<O: Ops>(ops: &mut O, preds: &[O::Var], truth: impl Fn(usize) -> Array2<f64>, batch: usize) -> O::Var {
    let n = preds.len();
    let mut sq = Vec::with_capacity(n);
    for (i, p) in preds.iter().enumerate() {
        let t = ops.constant(truth(i));
        let d = ops.sub(p, &t);
        sq.push(ops.sum_sq(&d));
    }
    let terms: Vec<(f64, &O::Var)> = sq.iter().map(|s| (1.0, s)).collect();
    let total = ops.lincomb(None, &terms);
    ops.scale(&total, 1.0 / (2.0 * n as f64 * batch as f64))
}

/// `Σ_k |q_k⁺ − q_k⁻|² / ((n − 1) B)`; zero for a single window.
pub fn penalty_term<O: Ops>(ops: &mut O, restarts: &[O::Var], windows: &[Vec<O::Var>], batch: usize) -> (O::Var, f64) {
    let n = windows.len();
    if n < 2 {
        return (ops.constant(Array2::zeros((1, 1))), 0.0);
    }
    let mut sq = Vec::with_capacity(n - 1);
    let mut max_jump: f64 = 0.0;
    for k in 1..n {
        let minus = windows[k - 1].last().expect("non-empty window");
        let d = ops.sub(&restarts[k - 1], minus);
        for r in ops.value(&d).rows() {
            max_jump = max_jump.max(r.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        sq.push(ops.sum_sq(&d));
    }
    let terms: Vec<(f64, &O::Var)> = sq.iter().map(|s| (1.0, s)).collect();
    let total = ops.lincomb(None, &terms);
    (ops.scale(&total, 1.0 / ((n - 1) as f64 * batch as f64)), max_jump)
}

/// `L = L_GT + (μ/2)·L_P`.
pub fn combine<O: Ops>(ops: &mut O, l_gt: O::Var, l_p: O::Var, mu: f64, max_jump: f64) -> LossVars<O::Var> {
    let total = ops.lincomb(Some(&l_gt), &[(mu / 2.0, &l_p)]);
    LossVars {
        total,
        l_gt,
        l_p,
        max_jump,
    }
}

/// Per-window trajectories and the window end states `q_k⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpRollout {
    pub windows: Vec<Trajectory>,
    /// Row `k − 1` holds `q_k⁻` for interior boundary `k`.
    pub endpoints: Array2<f64>,
}

fn starts_eval(ops: &mut Eval<'_>, q0: &[f64], penalty: &PenaltyState) -> Vec<<Eval<'static> as Ops>::Var> {
    let mut starts = vec![ops.constant(ode::row(q0))];
    for r in penalty.qk_plus.rows() {
        starts.push(ops.constant(ode::row(r.as_slice().expect("contiguous row"))));
    }
    starts
}

/// Rolls out each window from `q0` (window 0) or its restart.
pub fn mp_rollout<R>(
    rhs: &R,
    params: &[f64],
    q0: &[f64],
    penalty: &PenaltyState,
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<MpRollout, MpError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    config.validate()?;
    let mut ops = Eval::new(params);
    let starts = starts_eval(&mut ops, q0, penalty);
    let p = &penalty.partition;
    let windows = window_rollouts(&mut ops, rhs, &starts, times, p, config.method, config.dt)?;
    let d = q0.len();
    let mut endpoints = Array2::zeros((p.n_windows() - 1, d));
    for k in 1..p.n_windows() {
        endpoints
            .row_mut(k - 1)
            .assign(&windows[k - 1].last().expect("window").row(0));
    }
    let trajs = windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let (a, b) = p.window(k);
            ode::stack(times[a..=b].to_vec(), w.iter().map(|s| s.row(0).to_owned()))
                .map_err(|source| MpError::NonFiniteWindow { window: k, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MpRollout {
        windows: trajs,
        endpoints,
    })
}

/// Multistep-penalty loss of a single trajectory.
pub fn mp_loss<R>(
    rhs: &R,
    params: &[f64],
    penalty: &PenaltyState,
    data: &Trajectory,
    mu: f64,
    config: &IntegratorConfig,
) -> Result<MpLossBreakdown, MpError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    config.validate()?;
    if data.len() != penalty.partition.num_samples() {
        return Err(MpError::Alignment(format!(
            "data has {} samples, partition spans {}",
            data.len(),
            penalty.partition.num_samples()
        )));
    }
    let mut ops = Eval::new(params);
    let q0 = data.state(0).to_vec();
    let starts = starts_eval(&mut ops, &q0, penalty);
    let windows = window_rollouts(
        &mut ops,
        rhs,
        &starts,
        data.times(),
        &penalty.partition,
        config.method,
        config.dt,
    )?;
    let preds = predictions(&windows);
    let l_gt = mse_term(
        &mut ops,
        &preds,
        |i| ode::row(data.state(i).as_slice().expect("row")),
        1,
    );
    let (l_p, jump) = penalty_term(&mut ops, &starts[1..], &windows, 1);
    let v = combine(&mut ops, l_gt, l_p, mu, jump);
    Ok(MpLossBreakdown::from_vars(&ops, &v, mu))
}

/// Plain rollout MSE `Σ_i |q_i − q_i^true|² / (2N)` without windows.
pub fn vanilla_mse_loss<R>(
    rhs: &R,
    params: &[f64],
    data: &Trajectory,
    config: &IntegratorConfig,
) -> Result<f64, OdeError>
where
    R: for<'p> Rhs<Eval<'p>> + ?Sized,
{
    let mut ops = Eval::new(params);
    let q0 = ops.constant(ode::row(data.state(0).as_slice().expect("row")));
    let states = ode::rollout(&mut ops, rhs, &q0, data.times(), config.method, config.dt)?;
    let mut acc = 0.0;
    for (i, s) in states.iter().enumerate() {
        let mut e = 0.0;
        for (p, t) in s.iter().zip(data.state(i).iter()) {
            let d = p - t;
            e += d * d;
        }
        acc += e;
    }
    Ok(acc * (1.0 / (2.0 * states.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mp::{init_penalty_state, make_partition};
    use crate::ode::FnRhs;

    #[test]
    fn hand_example() {
        // Two samples, one boundary, predictions (1.0, 2.5) vs truth (1.0, 2.0).
        let mut ops = Eval::new(&[]);
        let preds = vec![ops.constant(ode::row(&[1.0])), ops.constant(ode::row(&[2.5]))];
        let truth = [1.0, 2.0];
        let l_gt = mse_term(&mut ops, &preds, |i| ode::row(&[truth[i]]), 1);
        let plus = ops.constant(ode::row(&[1.2]));
        let windows = vec![
            vec![ops.constant(ode::row(&[0.0])), ops.constant(ode::row(&[1.0]))],
            vec![plus.clone()],
        ];
        let (l_p, jump) = penalty_term(&mut ops, &[plus], &windows, 1);
        let v = combine(&mut ops, l_gt, l_p, 2.0, jump);
        let b = MpLossBreakdown::from_vars(&ops, &v, 2.0);
        assert_eq!(b.l_gt, 0.0625);
        assert!((b.l_p - 0.04).abs() < 1e-15);
        assert!((b.total - 0.1025).abs() < 1e-15);
        assert!((jump - 0.2).abs() < 1e-15);
    }

    fn decay_data(n: usize) -> Trajectory {
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q);
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.1);
        ode::integrate(&rhs, &[1.0, 0.5], 0.0, (n - 1) as f64 * 0.1, &cfg).unwrap()
    }

    #[test]
    fn exact_model_gives_zero_loss() {
        let data = decay_data(21);
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q);
        let part = make_partition(21, 4).unwrap();
        let pen = init_penalty_state(&data, &part).unwrap();
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.1);
        let b = mp_loss(&rhs, &[], &pen, &data, 10.0, &cfg).unwrap();
        assert!(b.total < 1e-28, "{b:?}");
    }

    #[test]
    fn zero_field_endpoints_equal_restarts() {
        let zero = FnRhs(|q: &Array2<f64>, _t| Array2::zeros(q.dim()));
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let part = make_partition(10, 3).unwrap();
        let qk = Array2::from_shape_vec((2, 1), vec![4.0, -2.0]).unwrap();
        let pen = PenaltyState::new(qk, part).unwrap();
        let r = mp_rollout(
            &zero,
            &[],
            &[1.0],
            &pen,
            &times,
            &IntegratorConfig::fixed(Method::Euler, 0.5),
        )
        .unwrap();
        assert_eq!(r.endpoints.column(0).to_vec(), vec![1.0, 4.0]);
        assert_eq!(r.windows.len(), 3);
    }

    #[test]
    fn linear_two_window_endpoint() {
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q);
        let times: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let part = make_partition(11, 2).unwrap();
        let pen = PenaltyState::new(Array2::zeros((1, 1)), part).unwrap();
        let r = mp_rollout(
            &rhs,
            &[],
            &[2.0],
            &pen,
            &times,
            &IntegratorConfig::fixed(Method::Rk4, 0.01),
        )
        .unwrap();
        assert!((r.endpoints[[0, 0]] - 2.0 * (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn single_window_matches_plain_integration() {
        let data = decay_data(31);
        let rhs = FnRhs(|q: &Array2<f64>, t: f64| q.mapv(|x| -0.7 * x + 0.1 * t.sin()));
        let part = make_partition(31, 1).unwrap();
        let pen = init_penalty_state(&data, &part).unwrap();
        let cfg = IntegratorConfig::fixed(Method::Rk4, 0.05);
        let r = mp_rollout(&rhs, &[], &[1.0, 0.5], &pen, data.times(), &cfg).unwrap();
        let mut ops = Eval::new(&[]);
        let q0 = ops.constant(ode::row(&[1.0, 0.5]));
        let plain = ode::rollout(&mut ops, &rhs, &q0, data.times(), Method::Rk4, 0.05).unwrap();
        assert_eq!(r.windows[0].states().row(30).to_vec(), plain[30].row(0).to_vec());
        let mp = mp_loss(&rhs, &[], &pen, &data, 3.0, &cfg).unwrap();
        assert_eq!(mp.total, vanilla_mse_loss(&rhs, &[], &data, &cfg).unwrap());
        assert_eq!(mp.l_p, 0.0);
    }

    #[test]
    fn mu_zero_ignores_discontinuities() {
        let data = decay_data(21);
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q * 1.3);
        let part = make_partition(21, 5).unwrap();
        let mut pen = init_penalty_state(&data, &part).unwrap();
        pen.qk_plus.mapv_inplace(|x| x + 0.3);
        let b = mp_loss(&rhs, &[], &pen, &data, 0.0, &IntegratorConfig::fixed(Method::Rk4, 0.1)).unwrap();
        assert_eq!(b.total, b.l_gt);
        assert!(b.l_p > 0.0);
    }

    #[test]
    fn misaligned_data_rejected() {
        let data = decay_data(21);
        let rhs = FnRhs(|q: &Array2<f64>, _t| -q);
        let pen = init_penalty_state(&data, &make_partition(11, 2).unwrap()).unwrap();
        assert!(matches!(
            mp_loss(&rhs, &[], &pen, &data, 1.0, &IntegratorConfig::fixed(Method::Rk4, 0.1)),
            Err(MpError::Alignment(_))
        ));
    }
}
