use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// ELU with unit scale: `u` for `u >= 0`, `exp(u) - 1` otherwise.
#[inline]
pub fn elu(u: f64) -> f64 {
    if u >= 0.0 {
        u
    } else {
        u.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        u.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Elu => elu(u),
            Activation::Identity => u,
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Elu => elu_derivative(u),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "dense layer wants 2-D weights and 1-D bias, got {:?} / {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        if weights.shape()[0] != bias.shape()[0] {
            return Err(Error::Shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.shape()[0],
                bias.shape()[0]
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Tensor::new(vec![output, input], data).expect("glorot shape"),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.input_dim();
        let w = self.weights.data();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Gradients for one dense layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Recorded activations of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    dims: Vec<(usize, usize)>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    /// Input vector the pass started from.
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// A sequence of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Parameter gradients for every layer of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_for(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Tensor::zeros_like(&l.weights),
                    bias: Tensor::zeros_like(&l.bias),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Gradients returned by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: MlpGrads,
    pub input: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds a randomly initialised network with the given layer widths.
    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "network widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            let act = layer.activation;
            h = layer
                .pre_activation(&h)
                .into_iter()
                .map(|u| act.apply(u))
                .collect();
        }
        Ok(h)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_trace(&self, x: &[f64]) -> Result<(Vec<f64>, Trace)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let u = layer.pre_activation(&h);
            let act = layer.activation;
            let out = u.iter().map(|&v| act.apply(v)).collect();
            inputs.push(h);
            pre.push(u);
            h = out;
        }
        let trace = Trace {
            dims: self.dims(),
            inputs,
            pre,
        };
        Ok((h, trace))
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.input_dim(), l.output_dim()))
            .collect()
    }

    /// Backpropagates `upstream` (dL/d output) through a recorded pass and
    /// returns the parameter and input gradients.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Gradients> {
        let mut params = MlpGrads::zeros_for(self);
        let input = self.backward_into(trace, upstream, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Like [`Mlp::backward`] but accumulates parameter gradients into `acc`.
    /// Returns the input gradient.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        acc: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        self.check_trace(trace)?;
        if acc.layers.len() != self.layers.len() {
            return Err(Error::Shape(
                "gradient accumulator belongs to a different network".into(),
            ));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut g = upstream.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let delta: Vec<f64> = g
                .iter()
                .zip(&trace.pre[idx])
                .map(|(gi, &u)| gi * act.derivative(u))
                .collect();
            let x = &trace.inputs[idx];
            let n_in = layer.input_dim();
            let w = layer.weights.data();
            let grads = &mut acc.layers[idx];
            let gw = grads.weights.data_mut();
            let mut gx = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * x[i];
                    gx[i] += d * row[i];
                }
            }
            for (gb, d) in grads.bias.data_mut().iter_mut().zip(&delta) {
                *gb += d;
            }
            g = gx;
        }
        Ok(g)
    }

    fn check_trace(&self, trace: &Trace) -> Result<()> {
        if trace.dims != self.dims() {
            return Err(Error::Usage(
                "backward called with a trace recorded on a different network".into(),
            ));
        }
        Ok(())
    }
}
