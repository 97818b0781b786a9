//! Fully connected feature extractor + label predictor with manual
//! backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense layer `y = W x + b` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-a..=a)).collect();
        Self { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Batch forward over `n` row-major inputs.
    fn forward(&self, x: &[f64], n: usize, relu: bool) -> Vec<f64> {
        let mut out = vec![0.0; n * self.outputs];
        for (xrow, orow) in x.chunks_exact(self.inputs).zip(out.chunks_exact_mut(self.outputs)).take(n) {
            for (o, (wrow, b)) in orow.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
                let mut acc = *b;
                for (w, xi) in wrow.iter().zip(xrow) {
                    acc += w * xi;
                }
                *o = if relu { acc.max(0.0) } else { acc };
            }
        }
        out
    }

    /// Accumulate parameter gradients for upstream `delta` (`n × outputs`) at
    /// layer input `x`, returning the gradient w.r.t. `x`.
    fn backward(&self, x: &[f64], delta: &[f64], grad: &mut Layer, need_input_grad: bool) -> Vec<f64> {
        let n = delta.len() / self.outputs;
        let mut dx = if need_input_grad { vec![0.0; n * self.inputs] } else { Vec::new() };
        for s in 0..n {
            let xrow = &x[s * self.inputs..(s + 1) * self.inputs];
            let drow = &delta[s * self.outputs..(s + 1) * self.outputs];
            for (o, &d) in drow.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.bias[o] += d;
                let gw = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
                for (g, xi) in gw.iter_mut().zip(xrow) {
                    *g += d * xi;
                }
                if need_input_grad {
                    let wrow = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                    let dxrow = &mut dx[s * self.inputs..(s + 1) * self.inputs];
                    for (g, w) in dxrow.iter_mut().zip(wrow) {
                        *g += d * w;
                    }
                }
            }
        }
        dx
    }
}

/// Layer widths of one device's model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Hidden widths of the extractor before the feature layer.
    pub extractor_hidden: Vec<usize>,
    /// `p`; identical across devices.
    pub feature_dim: usize,
    /// Hidden widths of the predictor before the output layer.
    pub predictor_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    fn extractor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.extractor_hidden);
        dims.push(self.feature_dim);
        dims
    }

    fn predictor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.feature_dim];
        dims.extend(&self.predictor_hidden);
        dims.push(self.num_classes);
        dims
    }

    pub fn param_count(&self) -> usize {
        let count = |dims: Vec<usize>| dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        count(self.extractor_dims()) + count(self.predictor_dims())
    }
}

/// Personal model of one device: a ReLU feature extractor `h(x; u)` and a
/// softmax label predictor `g(z; v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub spec: ModelSpec,
    pub extractor: Vec<Layer>,
    pub predictor: Vec<Layer>,
    /// Momentum buffers, same shape as the parameters.
    pub(crate) velocity: Option<Gradients>,
}

/// Gradients (or any other per-parameter buffer) of a [`LocalModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<Layer>,
    pub predictor: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(model: &LocalModel) -> Self {
        let z = |ls: &[Layer]| ls.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        Self { extractor: z(&model.extractor), predictor: z(&model.predictor) }
    }

    pub fn extractor_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.extractor.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).copied()
    }

    pub fn predictor_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.predictor.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).copied()
    }

    /// Extractor values followed by predictor values, in
    /// [`LocalModel::params_mut`] order.
    pub fn values(&self) -> Vec<f64> {
        self.extractor_values().chain(self.predictor_values()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Activations kept from a batch forward pass.
pub(crate) struct ForwardCache {
    /// Inputs to every extractor layer, then the features.
    pub extractor_acts: Vec<Vec<f64>>,
    /// Inputs to every predictor layer (first is the features), then logits.
    pub predictor_acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn features(&self) -> &[f64] {
        self.extractor_acts.last().expect("extractor has layers")
    }

    pub fn logits(&self) -> &[f64] {
        self.predictor_acts.last().expect("predictor has layers")
    }
}

impl LocalModel {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Self {
        let build = |dims: Vec<usize>, rng: &mut R| dims.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect();
        let extractor = build(spec.extractor_dims(), rng);
        let predictor = build(spec.predictor_dims(), rng);
        Self { spec, extractor, predictor, velocity: None }
    }

    /// All weights and biases set to zero.
    pub fn zeroed(spec: ModelSpec) -> Self {
        let build = |dims: Vec<usize>| dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        let extractor = build(spec.extractor_dims());
        let predictor = build(spec.predictor_dims());
        Self { spec, extractor, predictor, velocity: None }
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.extractor.iter().chain(&self.predictor).map(Layer::param_count).sum()
    }

    /// Mutable view of every parameter, extractor first.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.extractor
            .iter_mut()
            .chain(self.predictor.iter_mut())
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> Vec<f64> {
        self.extractor.iter().chain(&self.predictor).flat_map(|l| l.weights.iter().chain(&l.bias)).copied().collect()
    }

    /// Feature `h(x)` and class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: x.len() });
        }
        let cache = self.forward_batch(x, 1);
        let mut probs = cache.logits().to_vec();
        softmax_in_place(&mut probs);
        Ok((cache.features().to_vec(), probs))
    }

    /// Features of `n` row-major inputs.
    pub fn extract(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &self.extractor {
            a = layer.forward(&a, n, true);
        }
        a
    }

    pub(crate) fn forward_batch(&self, x: &[f64], n: usize) -> ForwardCache {
        let mut extractor_acts = Vec::with_capacity(self.extractor.len() + 1);
        extractor_acts.push(x.to_vec());
        for layer in &self.extractor {
            let next = layer.forward(extractor_acts.last().unwrap(), n, true);
            extractor_acts.push(next);
        }
        let mut predictor_acts = Vec::with_capacity(self.predictor.len() + 1);
        predictor_acts.push(extractor_acts.last().unwrap().clone());
        let last = self.predictor.len() - 1;
        for (i, layer) in self.predictor.iter().enumerate() {
            let next = layer.forward(predictor_acts.last().unwrap(), n, i < last);
            predictor_acts.push(next);
        }
        ForwardCache { extractor_acts, predictor_acts }
    }

    /// Backpropagate `d_logits` through the predictor and `d_features_extra`
    /// plus the predictor's feature gradient through the extractor.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: Vec<f64>,
        d_features_extra: Option<&[f64]>,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_logits;
        for i in (0..self.predictor.len()).rev() {
            let input = &cache.predictor_acts[i];
            let mut dx = self.predictor[i].backward(input, &delta, &mut grads.predictor[i], true);
            if i > 0 {
                relu_mask(&mut dx, input);
            }
            delta = dx;
        }
        // delta is now dF/dz at the (post-ReLU) features
        if let Some(extra) = d_features_extra {
            for (d, e) in delta.iter_mut().zip(extra) {
                *d += e;
            }
        }
        for i in (0..self.extractor.len()).rev() {
            // the output of extractor layer i went through ReLU
            relu_mask(&mut delta, &cache.extractor_acts[i + 1]);
            let input = &cache.extractor_acts[i];
            delta = self.extractor[i].backward(input, &delta, &mut grads.extractor[i], i > 0);
        }
        grads
    }
}

fn relu_mask(delta: &mut [f64], activation: &[f64]) {
    for (d, a) in delta.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
