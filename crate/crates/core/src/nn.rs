//! Fixed-architecture multilayer perceptron with exact reverse-mode
//! gradients, Adam, and target-network averaging.
//!
//! Batches are stored column-wise: an input batch is `in × batch`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputHead {
    /// `2σ(k z) − 1 = tanh(k z / 2)`, shrunk by one part in 2⁴⁰ so the image
    /// is strictly inside `(−1, 1)`.
    Saturating { steepness: f64 },
    Identity,
}

const SATURATION_SHRINK: f64 = 1.0 - 1.0 / (1u64 << 40) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self { weight: DMatrix::zeros(self.weight.nrows(), self.weight.ncols()), bias: DVector::zeros(self.bias.len()) }
    }
}

/// Rectifier hidden layers followed by an affine output layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    head: OutputHead,
}

/// Per-layer gradients, shaped like [`Mlp`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.amax().max(l.bias.amax())).fold(0.0, f64::max)
    }
}

/// Activations saved by [`Mlp::forward`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of the output layer.
    output_pre: DMatrix<f64>,
}

impl Mlp {
    /// Uniform fan-in initialization; the output layer is further scaled by
    /// `final_scale`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], head: OutputHead, final_scale: f64, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let scale = if i == last { final_scale } else { 1.0 };
                Layer {
                    weight: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound) * scale),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound) * scale),
                }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn from_layers(layers: Vec<Layer>, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::DimensionMismatch("consecutive layer widths".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch("bias length".into()));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.ncols()];
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch("flat parameter length".into()));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { layers: self.layers.iter().map(Layer::zeros_like).collect() }
    }

    /// Sets every output-layer parameter to zero (the network then outputs
    /// the head's value at 0).
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("nonempty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    fn apply_head(&self, z: f64) -> f64 {
        match self.head {
            OutputHead::Saturating { steepness } => SATURATION_SHRINK * (0.5 * steepness * z).tanh(),
            OutputHead::Identity => z,
        }
    }

    fn head_derivative(&self, z: f64) -> f64 {
        match self.head {
            OutputHead::Saturating { steepness } => {
                let t = (0.5 * steepness * z).tanh();
                SATURATION_SHRINK * 0.5 * steepness * (1.0 - t * t)
            }
            OutputHead::Identity => 1.0,
        }
    }

    /// Batched forward pass; returns `(output, cache)`.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if input.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.nrows()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut act = input.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &act;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(act);
            if i == last {
                let out = z.map(|v| self.apply_head(v));
                return Ok((out, ForwardCache { inputs, output_pre: z }));
            }
            z.apply(|v| *v = v.max(0.0));
            act = z;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Single-sample forward pass without a cache.
    pub fn forward_one(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut act = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            z.gemv(1.0, &layer.weight, &act, 1.0);
            if i == last {
                return Ok(z.map(|v| self.apply_head(v)));
            }
            z.apply(|v| *v = v.max(0.0));
            act = z;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Reverse pass. Parameter gradients are summed over the batch; the
    /// rectifier's subgradient at 0 is taken as 0.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>)> {
        if output_grad.shape() != cache.output_pre.shape() {
            return Err(Error::DimensionMismatch("output gradient shape".into()));
        }
        let mut delta = output_grad.zip_map(&cache.output_pre, |g, z| g * self.head_derivative(z));
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = &delta * input.transpose();
            let bias = delta.column_sum();
            grads.push(Layer { weight, bias });
            let mut back = layer.weight.transpose() * &delta;
            if i > 0 {
                // `input` is the previous rectifier output: positive ⇔ active.
                back.zip_apply(input, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = back;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.num_params();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: vec![0.0; n], second: vec![0.0; n] }
    }
}

/// One bias-corrected Adam step on `net` (descent direction).
pub fn adam_step(state: &mut AdamState, net: &mut Mlp, grads: &Gradients) -> Result<()> {
    if state.first.len() != net.num_params() || grads.layers.len() != net.layers.len() {
        return Err(Error::DimensionMismatch("optimizer state vs. network".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let mut k = 0;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        if layer.weight.shape() != g.weight.shape() || layer.bias.len() != g.bias.len() {
            return Err(Error::DimensionMismatch("gradient shapes".into()));
        }
        for (p, gv) in layer.weight.iter_mut().chain(layer.bias.iter_mut()).zip(g.weight.iter().chain(g.bias.iter())) {
            let m = &mut state.first[k];
            let v = &mut state.second[k];
            *m = b1 * *m + (1.0 - b1) * gv;
            *v = b2 * *v + (1.0 - b2) * gv * gv;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            k += 1;
        }
    }
    Ok(())
}

/// `target ← ρ·online + (1 − ρ)·target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, rho: f64) -> Result<()> {
    if target.widths() != online.widths() {
        return Err(Error::DimensionMismatch("target and online networks differ".into()));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        t.weight.zip_apply(&o.weight, |a, b| *a = rho * b + (1.0 - rho) * *a);
        t.bias.zip_apply(&o.bias, |a, b| *a = rho * b + (1.0 - rho) * *a);
    }
    Ok(())
}

/// Versioned JSON checkpoint: shapes, flat parameters, optional optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub version: u32,
    pub widths: Vec<usize>,
    pub head: OutputHead,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl MlpCheckpoint {
    pub fn new(net: &Mlp, optimizer: Option<&AdamState>, seed: Option<u64>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            widths: net.widths(),
            head: net.head,
            params: net.params_flat(),
            optimizer: optimizer.cloned(),
            seed,
        }
    }

    pub fn to_network(&self) -> Result<Mlp> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.widths.len() < 2 {
            return Err(Error::InvalidInput("checkpoint widths".into()));
        }
        let layers = self
            .widths
            .windows(2)
            .map(|w| Layer { weight: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        let mut net = Mlp::from_layers(layers, self.head)?;
        net.set_params_flat(&self.params)?;
        if net.params_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(net)
    }
}
