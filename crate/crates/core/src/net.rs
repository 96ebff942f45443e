//! Binary stochastic feed-forward network.
//!
//! Hidden layer `l` (1-based) draws `z_l ~ Bernoulli(sigmoid(W z_{l-1} + b))`
//! from the previous layer's state; `z_0` is the (possibly real-valued) input.
//! Each hidden layer also carries the logits of a factorized Bernoulli
//! marginal `r_l`, used by the compression bound. A softmax head maps `z_L`
//! to class probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::math::{sigmoid, softmax_into, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(n_out, n_in),
            bias: vec![0.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticLayer {
    pub encoder: DenseLayer,
    /// Unconstrained logits of the mean-field marginal `r_l`.
    pub marginal_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub layers: Vec<StochasticLayer>,
    pub head: DenseLayer,
}

/// Gradient record with the same shape as [`NetworkParams`].
pub type Gradients = NetworkParams;

/// Per-unit Bernoulli parameters of one layer together with their logits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BernoulliVector {
    pub probs: Vec<f64>,
    pub pre_activations: Vec<f64>,
}

impl BernoulliVector {
    pub fn from_pre_activations(pre_activations: Vec<f64>) -> Self {
        let probs = pre_activations.iter().map(|&a| sigmoid(a)).collect();
        BernoulliVector {
            probs,
            pre_activations,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl NetworkParams {
    /// All-zero parameters: every unit fires with probability 1/2, marginals are 1/2.
    pub fn zeros(input_dim: usize, hidden: &[usize], n_classes: usize) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = input_dim;
        for &w in hidden {
            layers.push(StochasticLayer {
                encoder: DenseLayer::zeros(w, prev),
                marginal_logits: vec![0.0; w],
            });
            prev = w;
        }
        NetworkParams {
            input_dim,
            layers,
            head: DenseLayer::zeros(n_classes, prev),
        }
    }

    /// Fan-scaled uniform weights in `±sqrt(6 / (n_in + n_out))`, zero biases,
    /// marginals at 1/2.
    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], n_classes: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(input_dim, hidden, n_classes);
        let fill = |layer: &mut DenseLayer, rng: &mut R| {
            let limit = (6.0 / (layer.n_in() + layer.n_out()) as f64).sqrt();
            for w in layer.weights.data.iter_mut() {
                *w = rng.gen_range(-limit..=limit);
            }
        };
        for layer in params.layers.iter_mut() {
            fill(&mut layer.encoder, rng);
        }
        fill(&mut params.head, rng);
        params
    }

    /// Number of stochastic hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.encoder.n_out()).collect()
    }

    /// Width of layer `l`, with layer 0 the input.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].encoder.n_out()
        }
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_out()
    }

    /// Checks that widths chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            let e = &layer.encoder;
            ensure!(
                e.n_in() == prev,
                Contract,
                "layer {} expects {} inputs but previous width is {}",
                i + 1,
                e.n_in(),
                prev
            );
            ensure!(
                e.weights.data.len() == e.n_out() * e.n_in() && e.bias.len() == e.n_out(),
                Contract,
                "layer {} has inconsistent tensor sizes",
                i + 1
            );
            ensure!(
                layer.marginal_logits.len() == e.n_out(),
                Contract,
                "layer {} marginal has {} entries, expected {}",
                i + 1,
                layer.marginal_logits.len(),
                e.n_out()
            );
            prev = e.n_out();
        }
        ensure!(
            self.head.n_in() == prev && self.head.bias.len() == self.head.n_out(),
            Contract,
            "head expects {} inputs but last width is {}",
            self.head.n_in(),
            prev
        );
        ensure!(self.n_classes() >= 1, Contract, "head has no classes");
        if let Some(name) = self.first_non_finite() {
            return Err(ImbError::Numeric(format!("non-finite value in {name}")));
        }
        Ok(())
    }

    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .zip(self.tensor_names())
            .find(|(t, _)| t.iter().any(|v| !v.is_finite()))
            .map(|(_, n)| n)
    }

    /// Marginal probabilities `r_l` of hidden layer `l` (1-based).
    pub fn marginal(&self, l: usize) -> Vec<f64> {
        self.layers[l - 1].marginal_logits.iter().map(|&a| sigmoid(a)).collect()
    }

    /// `sigmoid(W_{l-1} z_prev + b_{l-1})` for hidden layer `l` in `1..=L`.
    pub fn layer_forward(&self, l: usize, z_prev: &[f64]) -> Result<BernoulliVector> {
        ensure!(
            l >= 1 && l <= self.depth(),
            Contract,
            "layer index {} outside 1..={}",
            l,
            self.depth()
        );
        let enc = &self.layers[l - 1].encoder;
        ensure!(
            z_prev.len() == enc.n_in(),
            Contract,
            "layer {} input has length {}, expected {}",
            l,
            z_prev.len(),
            enc.n_in()
        );
        if enc.weights.data.iter().chain(&enc.bias).any(|v| !v.is_finite()) {
            return Err(ImbError::Numeric(format!("non-finite parameter in layer {l}")));
        }
        Ok(self.layer_forward_unchecked(l, z_prev))
    }

    pub(crate) fn layer_forward_unchecked(&self, l: usize, z_prev: &[f64]) -> BernoulliVector {
        let enc = &self.layers[l - 1].encoder;
        let mut pre = vec![0.0; enc.n_out()];
        enc.weights.affine_into(z_prev, &enc.bias, &mut pre);
        BernoulliVector::from_pre_activations(pre)
    }

    /// Head logits `W_out z_L + b_out`.
    pub(crate) fn head_logits(&self, z_last: &[f64]) -> Vec<f64> {
        let mut logits = vec![0.0; self.n_classes()];
        self.head.weights.affine_into(z_last, &self.head.bias, &mut logits);
        logits
    }

    /// Class probabilities `softmax(W_out z_L + b_out)`.
    pub fn head_forward(&self, z_last: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            z_last.len() == self.head.n_in(),
            Contract,
            "head input has length {}, expected {}",
            z_last.len(),
            self.head.n_in()
        );
        let logits = self.head_logits(z_last);
        let mut probs = vec![0.0; logits.len()];
        softmax_into(&logits, &mut probs);
        Ok(probs)
    }

    /// Deterministic mean-field pass: every layer's state is its firing probability.
    pub fn expectation_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.input_dim,
            Contract,
            "input has length {}, expected {}",
            x.len(),
            self.input_dim
        );
        let mut z = x.to_vec();
        for l in 1..=self.depth() {
            z = self.layer_forward_unchecked(l, &z).probs;
        }
        self.head_forward(&z)
    }

    /// Parameter tensors in canonical order: per layer (W, b, r-logits), then head (W, b).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.depth() + 2);
        for layer in &self.layers {
            out.push(&layer.encoder.weights.data);
            out.push(&layer.encoder.bias);
            out.push(&layer.marginal_logits);
        }
        out.push(&self.head.weights.data);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.encoder.weights.data);
            out.push(&mut layer.encoder.bias);
            out.push(&mut layer.marginal_logits);
        }
        out.push(&mut self.head.weights.data);
        out.push(&mut self.head.bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 1..=self.depth() {
            names.push(format!("layer{l}.weights"));
            names.push(format!("layer{l}.bias"));
            names.push(format!("layer{l}.marginal_logits"));
        }
        names.push("head.weights".into());
        names.push("head.bias".into());
        names
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        NetworkParams::zeros(self.input_dim, &self.hidden_widths(), self.n_classes())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.input_dim == other.input_dim
            && self.hidden_widths() == other.hidden_widths()
            && self.n_classes() == other.n_classes()
    }
}

/// Draws `z_i = 1` with probability `probs_i`, independently per unit.
pub fn sample_layer<R: Rng + ?Sized>(bv: &BernoulliVector, rng: &mut R) -> Vec<f64> {
    bv.probs
        .iter()
        .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}
