//! Least-squares shadowing for small systems.
//!
//! The tangent problem `min ½∫(|v|² + α²η²) dt` subject to
//! `v' = (∂R/∂q) v + ∂R/∂Θ + η R` is discretized with the trapezoidal rule.
//! Eliminating `v` and `η` from the optimality conditions leaves a symmetric
//! positive-definite block-tridiagonal system in the adjoint multipliers `w`,
//! one block per time interval. The boundary conditions `w(0) = w(T) = 0`
//! are built in: no multiplier exists outside the interval range.

mod block;
mod systems;

pub use block::BlockTridiagonal;
pub use systems::{lorenz_ensemble_fd, reference_trajectory, EnsembleFdConfig, LinearLss, LorenzLss, MeanComponent};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::Trajectory;

pub const DEFAULT_ALPHA_SQ: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LssError {
    #[error("singular shadowing system: {0}")]
    SingularSystem(String),
    #[error("invalid shadowing problem: {0}")]
    InvalidProblem(String),
}

/// Autonomous right-hand side with its Jacobians at fixed parameter values.
pub trait LssSystem {
    fn dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn rhs(&self, q: &[f64]) -> Vec<f64>;
    /// `∂R/∂q`, `dim × dim`.
    fn jac_q(&self, q: &[f64]) -> DMatrix<f64>;
    /// `∂R/∂Θ`, `dim × param_dim`.
    fn jac_theta(&self, q: &[f64]) -> DMatrix<f64>;
}

/// Instantaneous objective `I(q, Θ)` whose time average is differentiated.
pub trait LssObjective {
    fn value(&self, q: &[f64]) -> f64;
    fn grad_q(&self, q: &[f64]) -> Vec<f64>;
    fn grad_theta(&self, q: &[f64]) -> Vec<f64>;
}

pub struct LssProblem<S> {
    pub reference: Trajectory,
    pub alpha_sq: f64,
    pub system: S,
}

impl<S: LssSystem> LssProblem<S> {
    pub fn new(reference: Trajectory, alpha_sq: f64, system: S) -> Result<Self, LssError> {
        if !(alpha_sq > 0.0 && alpha_sq.is_finite()) {
            return Err(LssError::InvalidProblem(format!(
                "alpha_sq must be positive, got {alpha_sq}"
            )));
        }
        if reference.len() < 2 {
            return Err(LssError::InvalidProblem("reference needs at least two samples".into()));
        }
        if reference.state_dim() != system.dim() {
            return Err(LssError::InvalidProblem(format!(
                "reference dimension {} does not match system dimension {}",
                reference.state_dim(),
                system.dim()
            )));
        }
        let t = reference.times();
        let h = t[1] - t[0];
        if !(h > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
            return Err(LssError::InvalidProblem(
                "reference must be uniformly sampled in time".into(),
            ));
        }
        if reference.states().iter().any(|x| !x.is_finite()) {
            return Err(LssError::InvalidProblem("reference contains non-finite values".into()));
        }
        Ok(Self {
            reference,
            alpha_sq,
            system,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.system.param_dim()
    }

    pub fn num_steps(&self) -> usize {
        self.reference.len() - 1
    }

    fn step(&self) -> f64 {
        let t = self.reference.times();
        (t[t.len() - 1] - t[0]) / self.num_steps() as f64
    }

    fn span(&self) -> f64 {
        let t = self.reference.times();
        t[t.len() - 1] - t[0]
    }

    fn node(&self, j: usize) -> Vec<f64> {
        self.reference.state(j).to_vec()
    }

    /// Trapezoid weight of node `j`.
    fn weight(&self, j: usize) -> f64 {
        let h = self.step();
        if j == 0 || j == self.num_steps() {
            h / 2.0
        } else {
            h
        }
    }

    fn discretize(&self) -> Discretization {
        let (m, n) = (self.num_steps(), self.system.dim());
        let h = self.step();
        let eye = DMatrix::<f64>::identity(n, n);
        let mut jq = Vec::with_capacity(m + 1);
        let mut jt = Vec::with_capacity(m + 1);
        let mut f = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let q = self.node(j);
            jq.push(self.system.jac_q(&q));
            jt.push(self.system.jac_theta(&q));
            f.push(DVector::from_vec(self.system.rhs(&q)));
        }
        let e = jq.iter().map(|a| -(&eye + a * (h / 2.0))).collect::<Vec<_>>();
        let g = jq.iter().map(|a| &eye - a * (h / 2.0)).collect::<Vec<_>>();
        let r = (0..m).map(|i| -(&f[i] + &f[i + 1]) * (h / 2.0)).collect();
        Discretization { h, e, g, r, jt }
    }
}

/// Interval `i` constraint: `E_i v_i + G_i v_{i+1} + r_i η_i = g_i`, with
/// `E_i = −(I + h/2 A_i)`, `G_i = I − h/2 A_{i+1}`, `r_i = −h R_{i+½}` and
/// `g_i = h/2 (b_i + b_{i+1})`. `e` and `g` are indexed by node.
struct Discretization {
    h: f64,
    e: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    r: Vec<DVector<f64>>,
    jt: Vec<DMatrix<f64>>,
}

impl Discretization {
    fn forcing(&self, i: usize, p: usize) -> DVector<f64> {
        (self.jt[i].column(p) + self.jt[i + 1].column(p)) * (self.h / 2.0)
    }
}

/// Schur-complement system `S w = −g` for parameter direction `param`.
pub fn assemble_kkt<S: LssSystem>(problem: &LssProblem<S>, param: usize) -> Result<BlockTridiagonal, LssError> {
    if param >= problem.param_dim() {
        return Err(LssError::InvalidProblem(format!(
            "parameter {param} out of range for {} parameters",
            problem.param_dim()
        )));
    }
    let d = problem.discretize();
    Ok(assemble(problem, &d, param))
}

fn assemble<S: LssSystem>(problem: &LssProblem<S>, d: &Discretization, param: usize) -> BlockTridiagonal {
    let m = problem.num_steps();
    let c = |j: usize| problem.weight(j);
    let eta_scale = 1.0 / (problem.alpha_sq * d.h);
    let mut diag = Vec::with_capacity(m);
    let mut sub = Vec::with_capacity(m.saturating_sub(1));
    let mut rhs = Vec::with_capacity(m);
    for i in 0..m {
        let (ei, gi) = (&d.e[i], &d.g[i + 1]);
        let block =
            ei * ei.transpose() / c(i) + gi * gi.transpose() / c(i + 1) + &d.r[i] * d.r[i].transpose() * eta_scale;
        diag.push(block);
        if i + 1 < m {
            sub.push(&d.e[i + 1] * gi.transpose() / c(i + 1));
        }
        rhs.push(-d.forcing(i, param));
    }
    BlockTridiagonal { diag, sub, rhs }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LssSolution {
    /// Per parameter: tangent at every node, `(m + 1) × n`.
    pub v: Vec<Array2<f64>>,
    /// Per parameter: time-dilation tangent on each of the `m` intervals.
    pub eta: Vec<Vec<f64>>,
    /// Per parameter: `(m + 2) × n`; rows `0` and `m + 1` are the pinned
    /// boundary values, row `i + 1` is the multiplier of interval `i`.
    pub w: Vec<Array2<f64>>,
    pub gradient: Vec<f64>,
    /// Largest relative residual over the Schur system and the recovered
    /// tangent constraints.
    pub kkt_residual: f64,
}

/// Shadowing gradient `(1/T)∫(∂I/∂q·v + ∂I/∂Θ + η(I − J̄)) dt`. `mean_j`
/// defaults to the trapezoidal time average of `I` along the reference.
pub fn lss_gradient<S: LssSystem, J: LssObjective>(
    problem: &LssProblem<S>,
    objective: &J,
    mean_j: Option<f64>,
) -> Result<LssSolution, LssError> {
    let (m, n, p) = (problem.num_steps(), problem.system.dim(), problem.param_dim());
    let d = problem.discretize();
    let span = problem.span();
    let nodes: Vec<Vec<f64>> = (0..=m).map(|j| problem.node(j)).collect();
    let vals: Vec<f64> = nodes.iter().map(|q| objective.value(q)).collect();
    let jbar = mean_j.unwrap_or_else(|| (0..=m).map(|j| problem.weight(j) * vals[j]).sum::<f64>() / span);
    let dq: Vec<Vec<f64>> = nodes.iter().map(|q| objective.grad_q(q)).collect();
    let dth: Vec<Vec<f64>> = nodes.iter().map(|q| objective.grad_theta(q)).collect();

    let mut sol = LssSolution {
        v: Vec::with_capacity(p),
        eta: Vec::with_capacity(p),
        w: Vec::with_capacity(p),
        gradient: Vec::with_capacity(p),
        kkt_residual: 0.0,
    };
    for k in 0..p {
        let sys = assemble(problem, &d, k);
        let w = sys.solve()?;
        let mut resid = sys.relative_residual(&w);

        // Stationarity in v and η.
        let v: Vec<DVector<f64>> = (0..=m)
            .map(|j| {
                let mut acc = DVector::zeros(n);
                if j < m {
                    acc += d.e[j].transpose() * &w[j];
                }
                if j > 0 {
                    acc += d.g[j].transpose() * &w[j - 1];
                }
                -acc / problem.weight(j)
            })
            .collect();
        let eta: Vec<f64> = (0..m).map(|i| -d.r[i].dot(&w[i]) / (problem.alpha_sq * d.h)).collect();

        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..m {
            let g = d.forcing(i, k);
            let lhs = &d.e[i] * &v[i] + &d.g[i + 1] * &v[i + 1] + &d.r[i] * eta[i];
            num += (lhs - &g).norm_squared();
            den += g.norm_squared();
        }
        resid = resid.max(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() });

        let mut grad = 0.0;
        for j in 0..=m {
            let dv: f64 = dq[j].iter().zip(v[j].iter()).map(|(a, b)| a * b).sum();
            grad += problem.weight(j) * (dv + dth[j][k]);
        }
        for (i, &e) in eta.iter().enumerate() {
            grad += d.h * e * (0.5 * (vals[i] + vals[i + 1]) - jbar);
        }
        grad /= span;

        let mut v_arr = Array2::zeros((m + 1, n));
        for (j, x) in v.iter().enumerate() {
            v_arr.row_mut(j).iter_mut().zip(x.iter()).for_each(|(a, b)| *a = *b);
        }
        let mut w_arr = Array2::zeros((m + 2, n));
        for (i, x) in w.iter().enumerate() {
            w_arr.row_mut(i + 1).iter_mut().zip(x.iter()).for_each(|(a, b)| *a = *b);
        }
        if !grad.is_finite() || v_arr.iter().any(|x| !x.is_finite()) || eta.iter().any(|x| !x.is_finite()) {
            return Err(LssError::SingularSystem("solution is not finite".into()));
        }
        sol.v.push(v_arr);
        sol.eta.push(eta);
        sol.w.push(w_arr);
        sol.gradient.push(grad);
        sol.kkt_residual = sol.kkt_residual.max(resid);
    }
    Ok(sol)
}

/// Conventional tangent sensitivity: the same trapezoidal tangent equation
/// without time dilation, started from `v(0) = 0`.
pub fn tangent_gradient<S: LssSystem, J: LssObjective>(
    problem: &LssProblem<S>,
    objective: &J,
) -> Result<Vec<f64>, LssError> {
    let (m, n, p) = (problem.num_steps(), problem.system.dim(), problem.param_dim());
    let d = problem.discretize();
    let span = problem.span();
    let lus: Vec<_> = (1..=m).map(|j| d.g[j].clone().lu()).collect();
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let mut v = DVector::zeros(n);
        let mut grad = 0.0;
        for j in 0..=m {
            let q = problem.node(j);
            let dv: f64 = objective.grad_q(&q).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            grad += problem.weight(j) * (dv + objective.grad_theta(&q)[k]);
            if j < m {
                let b = d.forcing(j, k) - &d.e[j] * &v;
                v = lus[j]
                    .solve(&b)
                    .ok_or_else(|| LssError::SingularSystem(format!("tangent step {j} is singular")))?;
            }
        }
        out.push(grad / span);
    }
    Ok(out)
}

/// Operation-count estimates for one gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// `m · n³`.
    pub lss: u128,
    /// `m + n`.
    pub mp: u128,
}

pub fn cost_report(num_steps: usize, dof: usize) -> CostReport {
    let (m, n) = (num_steps as u128, dof as u128);
    CostReport {
        lss: m * n * n * n,
        mp: m + n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(a: f64, theta: f64, q0: f64, h: f64, m: usize, alpha_sq: f64) -> LssProblem<LinearLss> {
        let sys = LinearLss::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            vec![theta],
        )
        .unwrap();
        let reference = reference_trajectory(&sys, &[q0], h, m, 0).unwrap();
        LssProblem::new(reference, alpha_sq, sys).unwrap()
    }

    #[test]
    fn two_step_scalar_assembly() {
        let (a, h, alpha_sq) = (-0.5, 0.1, 4.0);
        let p = scalar_problem(a, 1.0, 0.3, h, 2, alpha_sq);
        let sys = assemble_kkt(&p, 0).unwrap();
        let dense = sys.to_dense();
        let q: Vec<f64> = (0..3).map(|j| p.reference.state(j)[0]).collect();
        let f: Vec<f64> = q.iter().map(|x| a * x + 1.0).collect();
        let e = -(1.0 + h * a / 2.0);
        let g = 1.0 - h * a / 2.0;
        let c = [h / 2.0, h, h / 2.0];
        let r = |i: usize| -h * (f[i] + f[i + 1]) / 2.0;
        let s00 = e * e / c[0] + g * g / c[1] + r(0) * r(0) / (alpha_sq * h);
        let s11 = e * e / c[1] + g * g / c[2] + r(1) * r(1) / (alpha_sq * h);
        let s10 = e * g / c[1];
        assert_eq!(dense.shape(), (2, 2));
        assert!((dense[(0, 0)] - s00).abs() < 1e-12);
        assert!((dense[(1, 1)] - s11).abs() < 1e-12);
        assert!((dense[(1, 0)] - s10).abs() < 1e-12);
        assert!((dense[(0, 1)] - s10).abs() < 1e-12);
        assert!(sys.rhs.iter().all(|b| (b[0] + h).abs() < 1e-15));
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let sys = LorenzLss::standard(28.0);
        let reference = reference_trajectory(&sys, &[1.0, 1.0, 1.0], 0.01, 300, 500).unwrap();
        let p = LssProblem::new(reference, DEFAULT_ALPHA_SQ, sys).unwrap();
        let a = assemble_kkt(&p, 0).unwrap().to_dense();
        assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
        assert!(a.clone().cholesky().is_some());
    }

    #[test]
    fn large_alpha_suppresses_dilation() {
        let sys = LorenzLss::standard(28.0);
        let reference = reference_trajectory(&sys, &[1.0, 1.0, 1.0], 0.01, 500, 500).unwrap();
        let obj = MeanComponent::new(2, 1);
        let max_eta = |alpha_sq: f64| {
            let p = LssProblem::new(reference.clone(), alpha_sq, LorenzLss::standard(28.0)).unwrap();
            lss_gradient(&p, &obj, None).unwrap().eta[0]
                .iter()
                .fold(0.0f64, |m, e| m.max(e.abs()))
        };
        let (a, b, c) = (max_eta(1e2), max_eta(1e6), max_eta(1e10));
        assert!(b < a && c < b && c < 1e-4 * a, "{a} {b} {c}");
    }

    #[test]
    fn stable_scalar_has_unit_sensitivity() {
        // dq/dt = −q + Θ with J = mean q: dJ/dΘ = 1 up to O(1/T) end effects.
        let p = scalar_problem(-1.0, 2.0, 0.0, 0.05, 20_000, DEFAULT_ALPHA_SQ);
        let obj = MeanComponent::new(0, 1);
        let sol = lss_gradient(&p, &obj, None).unwrap();
        assert!((sol.gradient[0] - 1.0).abs() < 5e-3, "{}", sol.gradient[0]);
        let tan = tangent_gradient(&p, &obj).unwrap();
        assert!((tan[0] - 1.0).abs() < 5e-3);
        assert!(sol.kkt_residual < 1e-10);
        assert_eq!(
            sol.w[0]
                .row(0)
                .iter()
                .chain(sol.w[0].row(20_001).iter())
                .copied()
                .fold(0.0, f64::max),
            0.0
        );
    }

    #[test]
    fn objective_without_dependence_gives_zero() {
        struct Flat;
        impl LssObjective for Flat {
            fn value(&self, _: &[f64]) -> f64 {
                3.0
            }
            fn grad_q(&self, q: &[f64]) -> Vec<f64> {
                vec![0.0; q.len()]
            }
            fn grad_theta(&self, _: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
        }
        let sys = LorenzLss::standard(28.0);
        let reference = reference_trajectory(&sys, &[1.0, 1.0, 1.0], 0.01, 400, 500).unwrap();
        let p = LssProblem::new(reference, DEFAULT_ALPHA_SQ, sys).unwrap();
        assert!(lss_gradient(&p, &Flat, None).unwrap().gradient[0].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_problems() {
        let sys = LorenzLss::standard(28.0);
        let reference = reference_trajectory(&sys, &[1.0, 1.0, 1.0], 0.01, 10, 0).unwrap();
        assert!(LssProblem::new(reference.clone(), 0.0, LorenzLss::standard(28.0)).is_err());
        let mut t = reference.times().to_vec();
        t[5] += 0.003;
        let uneven = Trajectory::new(t, reference.states().clone()).unwrap();
        assert!(LssProblem::new(uneven, 1.0, LorenzLss::standard(28.0)).is_err());
        let p = LssProblem::new(reference, 1.0, sys).unwrap();
        assert!(assemble_kkt(&p, 1).is_err());
    }

    #[test]
    fn cost_formulas() {
        assert_eq!(cost_report(1, 1), CostReport { lss: 1, mp: 2 });
        assert_eq!(cost_report(2000, 3), CostReport { lss: 54_000, mp: 2003 });
        for n in 1..20 {
            assert_eq!(cost_report(17, 2 * n).lss, 8 * cost_report(17, n).lss);
        }
    }
}
