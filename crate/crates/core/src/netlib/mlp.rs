use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Manifest, ModelParameters};
use super::NetError;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    Identity,
}

impl OutputActivation {
    pub fn name(&self) -> &'static str {
        match self {
            OutputActivation::Tanh => "tanh",
            OutputActivation::Identity => "identity",
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully connected network: relu on hidden layers, `output` on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    output: OutputActivation,
}

/// Activations kept from a batched forward pass for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Mlp {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of weights and biases.
    pub fn new(widths: &[usize], output: OutputActivation, rng: &mut Stream) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                d.weights.mapv_inplace(|_| rng.random_range(-bound..=bound));
                d.bias.mapv_inplace(|_| rng.random_range(-bound..=bound));
                d
            })
            .collect();
        Self { layers, output }
    }

    pub fn zeros(widths: &[usize], output: OutputActivation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        }
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation) -> Self {
        Self { layers, output }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.bias.len()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            widths: self.widths(),
            output: self.output,
        }
    }

    /// Single-sample forward pass with a fixed left-to-right summation order.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::Shape {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.bias.len());
            for (row, b) in layer.weights.rows().into_iter().zip(layer.bias.iter()) {
                let mut acc = *b;
                for (w, xi) in row.iter().zip(&x) {
                    acc += w * xi;
                }
                y.push(if li == last { self.activate_output(acc) } else { acc.max(0.0) });
            }
            x = y;
        }
        Ok(x)
    }

    fn activate_output(&self, v: f64) -> f64 {
        match self.output {
            OutputActivation::Tanh => v.tanh(),
            OutputActivation::Identity => v,
        }
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardCache, NetError> {
        if input.ncols() != self.input_dim() {
            return Err(NetError::Shape {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weights.t()) + &layer.bias;
            let a = if li == last {
                z.mapv(|v| self.activate_output(v))
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Gradients of `sum(output * upstream)` with respect to all parameters
    /// and to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Vec<Dense>, Array2<f64>), NetError> {
        if upstream.dim() != cache.output.dim() {
            return Err(NetError::Shape {
                expected: cache.output.len(),
                got: upstream.len(),
            });
        }
        let mut delta = match self.output {
            OutputActivation::Tanh => &upstream * &cache.output.mapv(|y| 1.0 - y * y),
            OutputActivation::Identity => upstream.to_owned(),
        };
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut input_grad = Array2::zeros((0, 0));
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let weights = delta.t().dot(&cache.inputs[li]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Dense { weights, bias });
            let d_input = delta.dot(&layer.weights);
            if li > 0 {
                let mask = cache.pre[li - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                delta = d_input * mask;
            } else {
                input_grad = d_input;
            }
        }
        grads.reverse();
        Ok((grads, input_grad))
    }

    /// Flat parameter vector: per layer, row-major weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.param_count() {
            return Err(NetError::Shape {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = values[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> ModelParameters {
        ModelParameters {
            manifest: self.manifest(),
            values: self.flatten(),
        }
    }

    pub fn from_parameters(p: &ModelParameters) -> Result<Self, NetError> {
        let mut net = Self::zeros(&p.manifest.widths, p.manifest.output);
        net.set_flat(&p.values)?;
        Ok(net)
    }
}

/// Flattens gradients in the same order as [`Mlp::flatten`].
pub(crate) fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let n = layers.iter().map(Dense::param_count).sum();
    let mut out = Vec::with_capacity(n);
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}
