use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{Eval, Ops, ParamVector};
use crate::ode::Rhs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
}

/// Feed-forward vector field. `layer_widths` runs from the input width
/// (state_dim, plus one when time-conditioned) to the output width
/// (state_dim). The output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub time_conditioned: bool,
}

impl MlpSpec {
    pub fn new(state_dim: usize, hidden: &[usize], activation: Activation, time_conditioned: bool) -> Self {
        let mut layer_widths = vec![state_dim + usize::from(time_conditioned)];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(state_dim);
        Self {
            layer_widths,
            activation,
            time_conditioned,
        }
    }

    pub fn state_dim(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let w = &self.layer_widths;
        if w.len() < 2 || w.iter().any(|&x| x == 0) {
            return Err(ModelError::InvalidSpec(format!(
                "layer_widths must list at least input and output widths, all positive; got {w:?}"
            )));
        }
        let expected_in = self.state_dim() + usize::from(self.time_conditioned);
        if w[0] != expected_in {
            return Err(ModelError::InvalidSpec(format!(
                "input width {} does not match state_dim {} (time_conditioned = {})",
                w[0],
                self.state_dim(),
                self.time_conditioned
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }

    /// Block layout `w0, b0, w1, b1, …` with weights shaped `(out, in)`.
    pub fn zero_params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            p.push(format!("w{i}"), &[w[1], w[0]], &vec![0.0; w[0] * w[1]])
                .expect("fresh layout");
            p.push(format!("b{i}"), &[w[1]], &vec![0.0; w[1]])
                .expect("fresh layout");
        }
        p
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamVector::new();
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let weights: Vec<f64> = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            p.push(format!("w{i}"), &[w[1], w[0]], &weights).expect("fresh layout");
            p.push(format!("b{i}"), &[w[1]], &vec![0.0; w[1]])
                .expect("fresh layout");
        }
        p
    }

    /// Binds the network to parameters starting at `offset` in the flat
    /// vector seen by the backend.
    pub fn bind(&self, offset: usize) -> BoundMlp<'_> {
        BoundMlp { spec: self, offset }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp<'s> {
    spec: &'s MlpSpec,
    offset: usize,
}

impl BoundMlp<'_> {
    pub fn forward<O: Ops>(&self, ops: &mut O, q: &O::Var, t: f64) -> O::Var {
        let rows = ops.value(q).nrows();
        let mut x = if self.spec.time_conditioned {
            let tc = ops.constant(Array2::from_elem((rows, 1), t));
            ops.hcat(&[q, &tc])
        } else {
            q.clone()
        };
        let mut off = self.offset;
        let n = self.spec.n_layers();
        for (i, w) in self.spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wv = ops.param(off, fan_out, fan_in);
            off += fan_in * fan_out;
            let bv = ops.param(off, 1, fan_out);
            off += fan_out;
            let z = ops.matmul_t(&x, &wv);
            let z = ops.add_bcast(&z, &bv);
            x = if i + 1 == n {
                z
            } else {
                match self.spec.activation {
                    Activation::Tanh => ops.tanh(&z),
                    Activation::Gelu => ops.gelu(&z),
                }
            };
        }
        x
    }
}

impl<O: Ops> Rhs<O> for BoundMlp<'_> {
    fn eval(&self, ops: &mut O, q: &O::Var, t: f64) -> O::Var {
        self.forward(ops, q, t)
    }
}

/// Evaluates the network vector field at a single state.
pub fn mlp_rhs(spec: &MlpSpec, params: &ParamVector, q: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(ModelError::DimensionMismatch(format!(
            "spec needs {} parameters, vector holds {}",
            spec.param_count(),
            params.len()
        )));
    }
    if q.len() != spec.state_dim() {
        return Err(ModelError::DimensionMismatch(format!(
            "state has length {}, spec expects {}",
            q.len(),
            spec.state_dim()
        )));
    }
    let mut ops = Eval::new(params.values());
    let x = ops.constant(crate::ode::row(q));
    let y = spec.bind(0).forward(&mut ops, &x, t);
    Ok(y.iter().copied().collect())
}

/// Upper bound on the output change per unit change of any single weight
/// at input `q`: the product of downstream layer norms times the largest
/// activation magnitude feeding that weight. Activations are 1-Lipschitz.
pub fn single_weight_lipschitz(spec: &MlpSpec, params: &ParamVector, q: &[f64], t: f64) -> f64 {
    let mut input: Vec<f64> = q.to_vec();
    if spec.time_conditioned {
        input.push(t);
    }
    let mut max_in = input.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut bound: f64 = 0.0;
    let norms: Vec<f64> = (0..spec.n_layers())
        .map(|i| {
            let w = params.block_values(&format!("w{i}")).unwrap_or(&[]);
            w.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    // Input magnitudes grow at most by ‖W‖·|x| + |b| per layer.
    let mut mags = vec![max_in];
    for i in 0..spec.n_layers() {
        let b = params.block_values(&format!("b{i}")).unwrap_or(&[]);
        let bmax = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        max_in = norms[i] * max_in + bmax;
        mags.push(max_in.max(1.0));
    }
    for layer in 0..spec.n_layers() {
        let downstream: f64 = norms[layer + 1..].iter().product();
        bound = bound.max(mags[layer] * downstream);
    }
    bound
}
