//! Fully connected feedforward networks with hand-written backpropagation.
//!
//! Layer `l` computes `z = a·Wᵀ + b` followed by the hidden activation, except
//! the last layer which uses the output activation. Weights are stored
//! `(out_dim × in_dim)`, batches are `(rows × features)`.

use rand::Rng;

use super::matrix::{gemm_into, Matrix, Transpose};
use crate::error::{Error, Result};

/// Pre-activations are clamped to this magnitude before `exp` in the sigmoid.
pub const SIGMOID_CLAMP: f64 = 40.0;

/// Largest `f64` below one; `1/(1+e^-z)` rounds to exactly 1 for `z ≳ 37`.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    (1.0 / (1.0 + (-z).exp())).min(BELOW_ONE)
}

impl HiddenActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::Tanh => 1.0 - a * a,
        }
    }
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Linear => z,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            OutputActivation::Linear => 1.0,
            OutputActivation::Sigmoid => {
                if z.abs() >= SIGMOID_CLAMP {
                    0.0
                } else {
                    a * (1.0 - a)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(out_dim × in_dim)`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    layers: Vec<DenseLayer>,
    hidden: HiddenActivation,
    output: OutputActivation,
}

/// Per-layer pre-activations and activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input batch; `activations[l + 1]` is the output of layer `l`.
    activations: Vec<Matrix>,
    preactivations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }

    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace holds the input")
    }

    /// Pre-activation of the output layer (the logits of a sigmoid head).
    pub fn output_preactivation(&self) -> &Matrix {
        self.preactivations.last().expect("network has a layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    /// Gradient with respect to the input batch.
    pub input: Matrix,
}

impl Gradients {
    /// Flat views in the same order as [`FeedforwardNet::parameters_mut`].
    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

impl FeedforwardNet {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config(
                "a network needs at least input and output dimensions",
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config(format!("zero-width layer in {layer_dims:?}")));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..=limit))
                    .collect();
                DenseLayer {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(FeedforwardNet {
            layers,
            hidden,
            output,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(
        layers: Vec<DenseLayer>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(format!(
                    "layer {l}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if l > 0 && layers[l - 1].out_dim() != layer.in_dim() {
                return Err(Error::shape(format!(
                    "layer {l} expects {} inputs but layer {} emits {}",
                    layer.in_dim(),
                    l - 1,
                    layers[l - 1].out_dim()
                )));
            }
        }
        Ok(FeedforwardNet {
            layers,
            hidden,
            output,
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat mutable views of weights and biases, layer by layer.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut act = batch.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, &act);
            if l == last {
                z.map_inplace(|v| self.output.apply(v));
            } else {
                z.map_inplace(|v| self.hidden.apply(v));
            }
            act = z;
        }
        Ok(act)
    }

    /// Forward pass that keeps what [`backward_from_trace`](Self::backward_from_trace) needs.
    pub fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preactivations = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = self.affine(layer, activations.last().expect("non-empty"));
            let a = if l == last {
                z.map(|v| self.output.apply(v))
            } else {
                z.map(|v| self.hidden.apply(v))
            };
            preactivations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            activations,
            preactivations,
        })
    }

    /// Gradients of `sum(upstream ⊙ forward(batch))` with respect to every
    /// parameter and to the batch.
    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let trace = self.forward_trace(batch)?;
        self.backward_from_trace(&trace, upstream)
    }

    pub fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &Matrix,
    ) -> Result<Gradients> {
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::shape(format!(
                "upstream gradient is {:?}, network output is {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let z = trace.output_preactivation();
        let mut delta = upstream.clone();
        for ((d, &zv), &av) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice())
            .zip(out.as_slice())
        {
            *d *= self.output.derivative(zv, av);
        }
        self.backward_output_delta(trace, delta)
    }

    /// Backpropagates a gradient already taken with respect to the output
    /// layer's pre-activation. For a sigmoid head under log-loss this is
    /// simply `p − label`, which avoids dividing by saturated probabilities.
    pub fn backward_output_delta(&self, trace: &ForwardTrace, delta: Matrix) -> Result<Gradients> {
        let z = trace.output_preactivation();
        if delta.shape() != z.shape() {
            return Err(Error::shape(format!(
                "output delta is {:?}, network output is {:?}",
                delta.shape(),
                z.shape()
            )));
        }
        let mut delta = delta;
        let mut grads: Vec<LayerGradient> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let mut gw = Matrix::zeros(layer.out_dim(), layer.in_dim());
            gemm_into(&delta, Transpose::Yes, input, Transpose::No, &mut gw, 0.0);
            let gb = delta.column_sums();
            let mut upstream = Matrix::zeros(delta.rows(), layer.in_dim());
            gemm_into(
                &delta,
                Transpose::No,
                &layer.weights,
                Transpose::No,
                &mut upstream,
                0.0,
            );
            if l > 0 {
                let zp = &trace.preactivations[l - 1];
                let ap = &trace.activations[l];
                for ((u, &zv), &av) in upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(zp.as_slice())
                    .zip(ap.as_slice())
                {
                    *u *= self.hidden.derivative(zv, av);
                }
            }
            grads.push(LayerGradient {
                weights: gw,
                bias: gb,
            });
            delta = upstream;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }

    fn affine(&self, layer: &DenseLayer, input: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(input.rows(), layer.out_dim());
        gemm_into(
            input,
            Transpose::No,
            &layer.weights,
            Transpose::Yes,
            &mut z,
            0.0,
        );
        z.add_row_broadcast(&layer.bias)
            .expect("bias sized to layer");
        z
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}
