//! Recording backend for reverse-mode differentiation.
//!
//! Every [`Ops`] call appends one node holding its forward value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints, scattering parameter adjoints into a flat gradient
//! laid out like the parameter vector. Memory grows linearly with the
//! number of recorded operations.

use ndarray::{linalg::general_mat_mul, s, Array2, Axis, Zip};

use super::ops::{kernels, Ops};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param { offset: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LinComb(Option<usize>, Vec<(f64, usize)>),
    AddBcast(usize, usize),
    MulBcast(usize, usize),
    MatMulT(usize, usize),
    Tanh(usize),
    Gelu(usize),
    Abs(usize),
    Relu(usize),
    Col(usize, usize),
    HCat(Vec<usize>),
    Sum(usize),
    SumSq(usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of f64 values held by recorded nodes.
    pub fn stored_values(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Array2<f64> {
        &self.nodes[i].value
    }

    /// Backpropagates `seed · d(output)/d(params)` and returns the flat
    /// parameter gradient. `output` must be 1×1.
    pub fn backward(&self, output: NodeId, seed: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let n = output.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = Vec::with_capacity(n);
        adj.resize_with(n, || None);
        adj[output.0] = Some(Array2::from_elem((1, 1), seed));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (dst, &x) in grad[*offset..*offset + g.len()].iter_mut().zip(g.iter()) {
                        *dst += x;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc_scaled(&mut adj, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.val(*b);
                    let gb = &g * self.val(*a);
                    acc_owned(&mut adj, *a, ga);
                    acc_owned(&mut adj, *b, gb);
                }
                Op::Scale(a, c) => acc_scaled(&mut adj, *a, &g, *c),
                Op::LinComb(base, terms) => {
                    if let Some(b) = base {
                        acc(&mut adj, *b, &g);
                    }
                    for &(c, t) in terms {
                        acc_scaled(&mut adj, t, &g, c);
                    }
                }
                Op::AddBcast(a, b) => {
                    acc(&mut adj, *a, &g);
                    let gb = reduce_to(&g, self.val(*b).dim());
                    acc_owned(&mut adj, *b, gb);
                }
                Op::MulBcast(a, b) => {
                    let bv = self.val(*b);
                    let ga = kernels::bcast_map(&g, bv, |x, y| x * y);
                    let prod = &g * self.val(*a);
                    let gb = reduce_to(&prod, bv.dim());
                    acc_owned(&mut adj, *a, ga);
                    acc_owned(&mut adj, *b, gb);
                }
                Op::MatMulT(x, w) => {
                    let xv = self.val(*x);
                    let wv = self.val(*w);
                    let mut gx = Array2::zeros(xv.dim());
                    general_mat_mul(1.0, &g, wv, 0.0, &mut gx);
                    let mut gw = Array2::zeros(wv.dim());
                    general_mat_mul(1.0, &g.t(), xv, 0.0, &mut gw);
                    acc_owned(&mut adj, *x, gx);
                    acc_owned(&mut adj, *w, gw);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc_owned(&mut adj, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.val(*a))
                        .for_each(|d, &x| *d *= kernels::gelu_grad(x));
                    acc_owned(&mut adj, *a, ga);
                }
                Op::Abs(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.val(*a)).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc_owned(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.val(*a))
                        .for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else { 0.0 });
                    acc_owned(&mut adj, *a, ga);
                }
                Op::Col(a, j) => {
                    let mut ga = Array2::zeros(self.val(*a).dim());
                    ga.slice_mut(s![.., *j..*j + 1]).assign(&g);
                    acc_owned(&mut adj, *a, ga);
                }
                Op::HCat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.val(p).ncols();
                        let gp = g.slice(s![.., c0..c0 + w]).to_owned();
                        acc_owned(&mut adj, p, gp);
                        c0 += w;
                    }
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.val(*a).dim(), g[[0, 0]]);
                    acc_owned(&mut adj, *a, ga);
                }
                Op::SumSq(a) => {
                    let s = 2.0 * g[[0, 0]];
                    let ga = self.val(*a).mapv(|x| s * x);
                    acc_owned(&mut adj, *a, ga);
                }
            }
        }
        grad
    }
}

fn acc(adj: &mut [Option<Array2<f64>>], i: usize, g: &Array2<f64>) {
    match &mut adj[i] {
        Some(a) => *a += g,
        slot @ None => *slot = Some(g.clone()),
    }
}

fn acc_owned(adj: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
    match &mut adj[i] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

fn acc_scaled(adj: &mut [Option<Array2<f64>>], i: usize, g: &Array2<f64>, c: f64) {
    match &mut adj[i] {
        Some(a) => Zip::from(a).and(g).for_each(|d, &x| *d += c * x),
        slot @ None => *slot = Some(g.mapv(|x| c * x)),
    }
}

/// Sums `g` down to the broadcast shape `dim`.
fn reduce_to(g: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    match dim {
        (1, 1) => Array2::from_elem((1, 1), kernels::sum(g)),
        (1, c) if c == g.ncols() => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
        (r, 1) if r == g.nrows() => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        d => panic!("cannot reduce {:?} to {d:?}", g.dim()),
    }
}

impl Ops for Tape<'_> {
    type Var = NodeId;

    fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Const, value)
    }

    fn param(&mut self, offset: usize, rows: usize, cols: usize) -> NodeId {
        let data = self.params[offset..offset + rows * cols].to_vec();
        let value = Array2::from_shape_vec((rows, cols), data).expect("param shape");
        self.push(Op::Param { offset }, value)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Array2<f64> {
        &self.nodes[v.0].value
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(a.0) + self.val(b.0);
        self.push(Op::Add(a.0, b.0), v)
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(a.0) - self.val(b.0);
        self.push(Op::Sub(a.0, b.0), v)
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(a.0) * self.val(b.0);
        self.push(Op::Mul(a.0, b.0), v)
    }

    fn scale(&mut self, a: &NodeId, c: f64) -> NodeId {
        let v = self.val(a.0).mapv(|x| c * x);
        self.push(Op::Scale(a.0, c), v)
    }

    fn lincomb(&mut self, base: Option<&NodeId>, terms: &[(f64, &NodeId)]) -> NodeId {
        let t: Vec<(f64, &Array2<f64>)> = terms.iter().map(|(c, v)| (*c, self.val(v.0))).collect();
        let v = kernels::lincomb(base.map(|b| self.val(b.0)), &t);
        let op = Op::LinComb(base.map(|b| b.0), terms.iter().map(|(c, v)| (*c, v.0)).collect());
        self.push(op, v)
    }

    fn add_bcast(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = kernels::bcast_map(self.val(a.0), self.val(b.0), |x, y| x + y);
        self.push(Op::AddBcast(a.0, b.0), v)
    }

    fn mul_bcast(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = kernels::bcast_map(self.val(a.0), self.val(b.0), |x, y| x * y);
        self.push(Op::MulBcast(a.0, b.0), v)
    }

    fn matmul_t(&mut self, x: &NodeId, w: &NodeId) -> NodeId {
        let v = kernels::matmul_t(self.val(x.0), self.val(w.0));
        self.push(Op::MatMulT(x.0, w.0), v)
    }

    fn tanh(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(a.0).mapv(f64::tanh);
        self.push(Op::Tanh(a.0), v)
    }

    fn gelu(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(a.0).mapv(kernels::gelu);
        self.push(Op::Gelu(a.0), v)
    }

    fn abs(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(a.0).mapv(f64::abs);
        self.push(Op::Abs(a.0), v)
    }

    fn relu(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(a.0).mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a.0), v)
    }

    fn col(&mut self, a: &NodeId, j: usize) -> NodeId {
        let v = self.val(a.0).slice(s![.., j..j + 1]).to_owned();
        self.push(Op::Col(a.0, j), v)
    }

    fn hcat(&mut self, parts: &[&NodeId]) -> NodeId {
        let p: Vec<&Array2<f64>> = parts.iter().map(|v| self.val(v.0)).collect();
        let v = kernels::hcat(&p);
        self.push(Op::HCat(parts.iter().map(|v| v.0).collect()), v)
    }

    fn sum(&mut self, a: &NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), kernels::sum(self.val(a.0)));
        self.push(Op::Sum(a.0), v)
    }

    fn sum_sq(&mut self, a: &NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), kernels::sum_sq(self.val(a.0)));
        self.push(Op::SumSq(a.0), v)
    }
}
