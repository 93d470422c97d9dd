//! Reverse-mode differentiation of scalar objectives over a [`ParamVector`].
//!
//! An objective is anything implementing [`Objective`]: it builds its value
//! through an [`Ops`] backend. [`grad`] runs it on a [`Tape`] and
//! backpropagates; [`evaluate`] runs the same construction on [`Eval`],
//! which yields a bit-identical value. [`finite_diff_grad`] is the
//! independent central-difference reference.

mod eval;
mod ops;
mod params;
mod tape;

pub use eval::Eval;
pub use ops::Ops;
pub use params::{ParamBlock, ParamVector};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("objective output is not a scalar: {0}")]
    UnsupportedPrimitive(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate parameter block `{0}`")]
    DuplicateBlock(String),
    #[error("parameter index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// A scalar function of the parameter vector, expressed against [`Ops`].
pub trait Objective {
    type Error: From<AutodiffError>;

    fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Set when the value or any gradient entry is non-finite. The numbers
    /// are still returned so that exploding magnitudes can be logged.
    pub overflow: bool,
}

impl GradResult {
    pub fn norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn check_scalar<O: Ops>(ops: &O, v: &O::Var) -> Result<f64, AutodiffError> {
    let m = ops.value(v);
    if m.dim() != (1, 1) {
        return Err(AutodiffError::UnsupportedPrimitive(format!(
            "output has shape {:?}",
            m.dim()
        )));
    }
    Ok(m[[0, 0]])
}

/// Plain forward evaluation of `objective` at `params`.
pub fn evaluate<F: Objective>(objective: &F, params: &[f64]) -> Result<f64, F::Error> {
    let mut ops = Eval::new(params);
    let out = objective.build(&mut ops)?;
    Ok(check_scalar(&ops, &out)?)
}

/// Exact reverse-mode gradient of the recorded computation.
pub fn grad<F: Objective>(objective: &F, params: &[f64]) -> Result<GradResult, F::Error> {
    grad_seeded(objective, params, 1.0)
}

/// Gradient of `seed · objective`; linear in `seed`.
pub fn grad_seeded<F: Objective>(objective: &F, params: &[f64], seed: f64) -> Result<GradResult, F::Error> {
    let mut tape = Tape::new(params);
    let out = objective.build(&mut tape)?;
    let value = check_scalar(&tape, &out)?;
    let gradient = tape.backward(out, seed);
    let overflow = !value.is_finite() || gradient.iter().any(|g| !g.is_finite());
    Ok(GradResult {
        value,
        gradient,
        overflow,
    })
}

/// Gradient with entries outside `mask` set to zero.
pub fn grad_wrt_subset<F: Objective>(objective: &F, params: &[f64], mask: &[usize]) -> Result<GradResult, F::Error> {
    let len = params.len();
    if let Some(&index) = mask.iter().find(|&&i| i >= len) {
        return Err(AutodiffError::IndexOutOfRange { index, len }.into());
    }
    let mut full = grad(objective, params)?;
    let mut keep = vec![false; len];
    for &i in mask {
        keep[i] = true;
    }
    for (g, k) in full.gradient.iter_mut().zip(keep) {
        if !k {
            *g = 0.0;
        }
    }
    full.overflow = !full.value.is_finite() || full.gradient.iter().any(|g| !g.is_finite());
    Ok(full)
}

/// Central differences `(f(p + εeᵢ) − f(p − εeᵢ)) / 2ε` for every coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, params: &[f64], epsilon: f64) -> Vec<f64> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + epsilon;
            let up = f(&p);
            p[i] = x - epsilon;
            let down = f(&p);
            p[i] = x;
            (up - down) / (2.0 * epsilon)
        })
        .collect()
}

/// Max per-coordinate mismatch using relative error where `|reference| ≥
/// floor` and absolute error below it. Returns `(max_rel, max_abs_small)`.
pub fn gradient_mismatch(computed: &[f64], reference: &[f64], floor: f64) -> (f64, f64) {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (&c, &r) in computed.iter().zip(reference) {
        let scale = c.abs().max(r.abs());
        if scale < floor {
            max_abs = max_abs.max((c - r).abs());
        } else {
            max_rel = max_rel.max((c - r).abs() / scale);
        }
    }
    (max_rel, max_abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    struct Quadratic;
    impl Objective for Quadratic {
        type Error = AutodiffError;
        fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, AutodiffError> {
            let p = ops.param(0, 1, 2);
            Ok(ops.sum_sq(&p))
        }
    }

    /// Sum of a 2-layer tanh MLP output on a fixed input.
    struct TinyMlp {
        input: Array2<f64>,
        gelu: bool,
    }
    impl Objective for TinyMlp {
        type Error = AutodiffError;
        fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, AutodiffError> {
            let w0 = ops.param(0, 4, 3);
            let b0 = ops.param(12, 1, 4);
            let w1 = ops.param(16, 2, 4);
            let b1 = ops.param(24, 1, 2);
            let x = ops.constant(self.input.clone());
            let h = ops.matmul_t(&x, &w0);
            let h = ops.add_bcast(&h, &b0);
            let h = if self.gelu { ops.gelu(&h) } else { ops.tanh(&h) };
            let y = ops.matmul_t(&h, &w1);
            let y = ops.add_bcast(&y, &b1);
            Ok(ops.sum(&y))
        }
    }

    fn mlp_params() -> Vec<f64> {
        (0..26).map(|i| ((i as f64) * 0.731).sin() * 0.8).collect()
    }

    #[test]
    fn quadratic_gradient() {
        let r = grad(&Quadratic, &[1.0, 2.0]).unwrap();
        assert_eq!(r.value, 5.0);
        assert_eq!(r.gradient, vec![2.0, 4.0]);
        assert!(!r.overflow);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        for gelu in [false, true] {
            let f = TinyMlp {
                input: Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 0.9, -1.1, 0.4, 0.05]).unwrap(),
                gelu,
            };
            let p = mlp_params();
            let g = grad(&f, &p).unwrap();
            let fd = finite_diff_grad(|q| evaluate(&f, q).unwrap(), &p, 1e-5);
            let (rel, abs) = gradient_mismatch(&g.gradient, &fd, 1e-8);
            assert!(rel <= 1e-6, "gelu={gelu} rel={rel}");
            assert!(abs <= 1e-7, "gelu={gelu} abs={abs}");
        }
    }

    #[test]
    fn forward_value_is_bit_identical() {
        let f = TinyMlp {
            input: Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap(),
            gelu: true,
        };
        let p = mlp_params();
        assert_eq!(
            evaluate(&f, &p).unwrap().to_bits(),
            grad(&f, &p).unwrap().value.to_bits()
        );
    }

    #[test]
    fn seed_linearity() {
        let f = TinyMlp {
            input: Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap(),
            gelu: false,
        };
        let p = mlp_params();
        let g1 = grad(&f, &p).unwrap().gradient;
        for c in [4.0, -0.5, 0.125] {
            let gc = grad_seeded(&f, &p, c).unwrap().gradient;
            for (a, b) in gc.iter().zip(&g1) {
                assert_eq!(*a, c * b);
            }
        }
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|p| 3.0 * p[0], &[2.0], 1e-4);
        assert!((g[0] - 3.0).abs() < 1e-8);
        let g = finite_diff_grad(|p| p[0] * p[0], &[1.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn subset_masks() {
        let f = TinyMlp {
            input: Array2::from_shape_vec((1, 3), vec![0.1, 0.2, 0.3]).unwrap(),
            gelu: false,
        };
        let p = mlp_params();
        let full = grad(&f, &p).unwrap();
        let all: Vec<usize> = (0..p.len()).collect();
        assert_eq!(grad_wrt_subset(&f, &p, &all).unwrap(), full);
        let none = grad_wrt_subset(&f, &p, &[]).unwrap();
        assert!(none.gradient.iter().all(|&g| g == 0.0));
        let first = grad_wrt_subset(&f, &p, &[0, 5]).unwrap();
        assert_eq!(first.gradient[0], full.gradient[0]);
        assert_eq!(first.gradient[5], full.gradient[5]);
        assert_eq!(first.gradient[1], 0.0);
        assert!(matches!(
            grad_wrt_subset(&f, &p, &[26]),
            Err(AutodiffError::IndexOutOfRange { index: 26, len: 26 })
        ));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        struct Vector;
        impl Objective for Vector {
            type Error = AutodiffError;
            fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, AutodiffError> {
                Ok(ops.param(0, 1, 2))
            }
        }
        assert!(matches!(
            grad(&Vector, &[1.0, 2.0]),
            Err(AutodiffError::UnsupportedPrimitive(_))
        ));
    }

    #[test]
    fn overflow_is_flagged_not_fatal() {
        struct Blowup;
        impl Objective for Blowup {
            type Error = AutodiffError;
            fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, AutodiffError> {
                let p = ops.param(0, 1, 1);
                let mut x = p.clone();
                for _ in 0..12 {
                    x = ops.mul(&x, &x);
                }
                Ok(ops.sum(&x))
            }
        }
        let r = grad(&Blowup, &[1e3]).unwrap();
        assert!(r.overflow);
    }

    #[test]
    fn broadcast_and_column_ops_differentiate() {
        struct Mixed;
        impl Objective for Mixed {
            type Error = AutodiffError;
            fn build<O: Ops>(&self, ops: &mut O) -> Result<O::Var, AutodiffError> {
                let a = ops.param(0, 2, 3);
                let s = ops.param(6, 1, 1);
                let r = ops.param(7, 1, 3);
                let c = ops.param(10, 2, 1);
                let x = ops.mul_bcast(&a, &s);
                let x = ops.add_bcast(&x, &r);
                let x = ops.mul_bcast(&x, &c);
                let z = ops.col(&x, 2);
                let y = ops.col(&x, 0);
                let q = ops.abs(&z);
                let u = ops.relu(&y);
                let h = ops.hcat(&[&q, &u, &z]);
                let l = ops.lincomb(Some(&h), &[(0.5, &h), (-2.0, &h)]);
                let t = ops.sub(&l, &h);
                Ok(ops.sum_sq(&t))
            }
        }
        let p: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.37).cos() + 0.1).collect();
        let g = grad(&Mixed, &p).unwrap();
        let fd = finite_diff_grad(|q| evaluate(&Mixed, q).unwrap(), &p, 1e-6);
        let (rel, abs) = gradient_mismatch(&g.gradient, &fd, 1e-8);
        assert!(rel < 1e-6 && abs < 1e-7, "rel={rel} abs={abs}");
    }
}
