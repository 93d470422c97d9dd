use std::rc::Rc;

use ndarray::{s, Array2};

use super::ops::{kernels, Ops};

/// Immediate-mode backend: computes values without recording anything.
pub struct Eval<'p> {
    params: &'p [f64],
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self { params }
    }
}

fn wrap(a: Array2<f64>) -> Rc<Array2<f64>> {
    Rc::new(a)
}

impl Ops for Eval<'_> {
    type Var = Rc<Array2<f64>>;

    fn constant(&mut self, value: Array2<f64>) -> Self::Var {
        wrap(value)
    }

    fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Self::Var {
        let data = self.params[offset..offset + rows * cols].to_vec();
        wrap(Array2::from_shape_vec((rows, cols), data).expect("param shape"))
    }

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Array2<f64> {
        v
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        wrap(&**a + &**b)
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        wrap(&**a - &**b)
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        wrap(&**a * &**b)
    }

    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var {
        wrap(a.mapv(|x| c * x))
    }

    fn lincomb(&mut self, base: Option<&Self::Var>, terms: &[(f64, &Self::Var)]) -> Self::Var {
        let t: Vec<(f64, &Array2<f64>)> = terms.iter().map(|(c, v)| (*c, &***v)).collect();
        wrap(kernels::lincomb(base.map(|b| &**b), &t))
    }

    fn add_bcast(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        wrap(kernels::bcast_map(a, b, |x, y| x + y))
    }

    fn mul_bcast(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        wrap(kernels::bcast_map(a, b, |x, y| x * y))
    }

    fn matmul_t(&mut self, x: &Self::Var, w: &Self::Var) -> Self::Var {
        wrap(kernels::matmul_t(x, w))
    }

    fn tanh(&mut self, a: &Self::Var) -> Self::Var {
        wrap(a.mapv(f64::tanh))
    }

    fn gelu(&mut self, a: &Self::Var) -> Self::Var {
        wrap(a.mapv(kernels::gelu))
    }

    fn abs(&mut self, a: &Self::Var) -> Self::Var {
        wrap(a.mapv(f64::abs))
    }

    fn relu(&mut self, a: &Self::Var) -> Self::Var {
        wrap(a.mapv(|x| if x > 0.0 { x } else { 0.0 }))
    }

    fn col(&mut self, a: &Self::Var, j: usize) -> Self::Var {
        wrap(a.slice(s![.., j..j + 1]).to_owned())
    }

    fn hcat(&mut self, parts: &[&Self::Var]) -> Self::Var {
        let p: Vec<&Array2<f64>> = parts.iter().map(|v| &***v).collect();
        wrap(kernels::hcat(&p))
    }

    fn sum(&mut self, a: &Self::Var) -> Self::Var {
        wrap(Array2::from_elem((1, 1), kernels::sum(a)))
    }

    fn sum_sq(&mut self, a: &Self::Var) -> Self::Var {
        wrap(Array2::from_elem((1, 1), kernels::sum_sq(a)))
    }
}
