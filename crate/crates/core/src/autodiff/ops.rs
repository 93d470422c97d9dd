//! Backend-agnostic matrix operations.
//!
//! Models, integrators and losses are written once against [`Ops`]. The
//! [`Eval`](super::Eval) backend computes values immediately; the
//! [`Tape`](super::Tape) backend computes the same values through the same
//! kernels and records each operation for reverse-mode differentiation.

use ndarray::Array2;

/// Matrix-valued primitive operations. Every value is a 2-D array; scalars
/// are 1×1 and states are `rows × state_dim` (one row per batch member).
pub trait Ops {
    type Var: Clone;

    /// A value that does not depend on the parameters.
    fn constant(&mut self, value: Array2<f64>) -> Self::Var;
    /// A `rows × cols` view of the parameter vector starting at `offset`.
    fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Array2<f64>;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    /// Elementwise product.
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    /// `base + Σ coef·term`, evaluated left to right.
    fn lincomb(&mut self, base: Option<&Self::Var>, terms: &[(f64, &Self::Var)]) -> Self::Var;
    /// `a + b` where `b` is 1×1, 1×cols or rows×1 and is broadcast.
    fn add_bcast(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    /// `a ∘ b` where `b` is broadcast as in [`Ops::add_bcast`].
    fn mul_bcast(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    /// `x · wᵀ` with `x: rows × k` and `w: out × k`.
    fn matmul_t(&mut self, x: &Self::Var, w: &Self::Var) -> Self::Var;

    fn tanh(&mut self, a: &Self::Var) -> Self::Var;
    fn gelu(&mut self, a: &Self::Var) -> Self::Var;
    fn abs(&mut self, a: &Self::Var) -> Self::Var;
    fn relu(&mut self, a: &Self::Var) -> Self::Var;

    /// Column `j` as a `rows × 1` value.
    fn col(&mut self, a: &Self::Var, j: usize) -> Self::Var;
    /// Horizontal concatenation of equally tall parts.
    fn hcat(&mut self, parts: &[&Self::Var]) -> Self::Var;

    /// Sum of all entries, as 1×1.
    fn sum(&mut self, a: &Self::Var) -> Self::Var;
    /// Sum of squared entries, as 1×1.
    fn sum_sq(&mut self, a: &Self::Var) -> Self::Var;

    fn scalar(&self, v: &Self::Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn all_finite(&self, v: &Self::Var) -> bool {
        self.value(v).iter().all(|x| x.is_finite())
    }
}

/// Forward kernels shared by both backends, so values agree bit for bit.
pub(crate) mod kernels {
    use ndarray::{linalg::general_mat_mul, Array2, Zip};

    pub fn lincomb(base: Option<&Array2<f64>>, terms: &[(f64, &Array2<f64>)]) -> Array2<f64> {
        let mut out = match base {
            Some(b) => b.clone(),
            None => {
                let (c, t) = terms[0];
                let mut o = t.clone();
                o.mapv_inplace(|x| c * x);
                return accumulate(o, &terms[1..]);
            }
        };
        for &(c, t) in terms {
            assert_eq!(out.dim(), t.dim(), "lincomb shape mismatch");
            Zip::from(&mut out).and(t).for_each(|o, &x| *o += c * x);
        }
        out
    }

    fn accumulate(mut out: Array2<f64>, terms: &[(f64, &Array2<f64>)]) -> Array2<f64> {
        for &(c, t) in terms {
            assert_eq!(out.dim(), t.dim(), "lincomb shape mismatch");
            Zip::from(&mut out).and(t).for_each(|o, &x| *o += c * x);
        }
        out
    }

    pub fn bcast_map(a: &Array2<f64>, b: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        let (r, c) = a.dim();
        match b.dim() {
            (1, 1) => {
                let s = b[[0, 0]];
                a.mapv(|x| f(x, s))
            }
            (1, bc) if bc == c => {
                let mut out = a.clone();
                for mut row in out.rows_mut() {
                    Zip::from(&mut row).and(b.row(0)).for_each(|o, &s| *o = f(*o, s));
                }
                out
            }
            (br, 1) if br == r => {
                let mut out = a.clone();
                for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                    let s = b[[i, 0]];
                    row.mapv_inplace(|x| f(x, s));
                }
                out
            }
            d => panic!("cannot broadcast {d:?} onto {:?}", a.dim()),
        }
    }

    pub fn matmul_t(x: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), w.ncols(), "matmul_t inner dimension mismatch");
        let mut out = Array2::zeros((x.nrows(), w.nrows()));
        general_mat_mul(1.0, x, &w.t(), 0.0, &mut out);
        out
    }

    pub fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
    }

    pub fn gelu_grad(x: f64) -> f64 {
        let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        cdf + x * pdf
    }

    pub fn hcat(parts: &[&Array2<f64>]) -> Array2<f64> {
        let rows = parts[0].nrows();
        let cols: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut c0 = 0;
        for p in parts {
            assert_eq!(p.nrows(), rows, "hcat row mismatch");
            out.slice_mut(ndarray::s![.., c0..c0 + p.ncols()]).assign(*p);
            c0 += p.ncols();
        }
        out
    }

    pub fn sum(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |acc, &x| acc + x)
    }

    pub fn sum_sq(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |acc, &x| acc + x * x)
    }
}
