//! Dense multi-layer perceptrons with hand-written reverse-mode gradients.
//!
//! Rows of a batch are independent samples, so one call runs an MLP over every
//! edge (or node) of a graph at once.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation and the activated value.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `y = W x + b`, `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| rng.gen_range(-limit..limit));
        Linear {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    /// Apply the activation after the last layer as well.
    pub activate_output: bool,
    /// Add the input to the output; needs equal input and output widths.
    pub residual: bool,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>, activation: Activation, activate_output: bool, residual: bool) -> Result<Self> {
        let mlp = Mlp {
            layers,
            activation,
            activate_output,
            residual,
        };
        mlp.validate()?;
        Ok(mlp)
    }

    /// Randomly initialized MLP through the widths in `dims`.
    pub fn init<R: Rng>(dims: &[usize], activation: Activation, activate_output: bool, rng: &mut R) -> Self {
        let layers = dims.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect();
        Mlp {
            layers,
            activation,
            activate_output,
            residual: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch(format!("layer {k} bias length")));
            }
        }
        if self.residual && self.input_dim() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "residual MLP maps {} to {}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        let mut finite = true;
        self.visit(&mut |xs| finite &= xs.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "MLP expects input of width {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector shape");
        Ok(self.forward_batch(batch.view())?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "MLP expects input of width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(self.run(x, None))
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let y = self.run(x, Some(&mut cache));
        (y, cache)
    }

    fn run(&self, x: ArrayView2<f64>, mut cache: Option<&mut MlpCache>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = h.dot(&layer.weight.t()) + &layer.bias;
            let post = if self.activated(k) {
                let act = self.activation;
                pre.mapv(|v| act.apply(v))
            } else {
                pre.clone()
            };
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
                c.pre.push(pre);
                c.post.push(post.clone());
            }
            h = post;
        }
        if self.residual {
            h += &x;
        }
        h
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input rows.
    pub(crate) fn backward(&self, cache: &MlpCache, dy: ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy.to_owned();
        for k in (0..self.layers.len()).rev() {
            if self.activated(k) {
                let act = self.activation;
                ndarray::Zip::from(&mut d)
                    .and(&cache.pre[k])
                    .and(&cache.post[k])
                    .for_each(|g, &pre, &post| *g *= act.derivative(pre, post));
            }
            let g = &mut grad.layers[k];
            g.weight += &d.t().dot(&cache.inputs[k]);
            g.bias += &d.sum_axis(Axis(0));
            d = d.dot(&self.layers[k].weight);
        }
        if self.residual {
            d += &dy;
        }
        d
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activation: self.activation,
            activate_output: self.activate_output,
            residual: self.residual,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Visits every parameter tensor as a flat slice, weights before biases,
    /// layer by layer.
    pub fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            f(l.weight.as_slice().expect("standard layout"));
            f(l.bias.as_slice().expect("standard layout"));
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            f(l.weight.as_slice_mut().expect("standard layout"));
            f(l.bias.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Applies `params` to a single input vector.
pub fn mlp_forward(params: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    params.forward(x)
}
