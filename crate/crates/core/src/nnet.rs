//! Dense MLPs with tanh hidden layers, a flat parameter vector, hand-written
//! backpropagation, Gaussian policy helpers, Adam and JSON checkpoints.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// `max(0, tanh(x))`, used for muscle excitations.
    Bounded01,
    /// Linear mean plus a state-independent learnable `log_std` per output.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, output_head: OutputHead) -> Result<Self> {
        let spec = Self { layer_sizes, output_head };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Contract(format!("invalid layer sizes {:?}", self.layer_sizes)));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `(weight offset, bias offset, n_in, n_out)` of each layer. Weights are row-major `(out, in)`.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let entry = (off, off + n_in * n_out, n_in, n_out);
                off += n_in * n_out + n_out;
                entry
            })
            .collect()
    }

    fn n_weights(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + if self.output_head == OutputHead::Gaussian { self.n_outputs() } else { 0 }
    }

    /// Offset of the `log_std` block (Gaussian head only).
    pub fn log_std_offset(&self) -> Option<usize> {
        (self.output_head == OutputHead::Gaussian).then(|| self.n_weights())
    }
}

pub fn bounded01(x: f64) -> f64 {
    x.tanh().max(0.0)
}

/// Derivative of [`bounded01`]; the subgradient at zero is taken as 0.
pub fn bounded01_grad(x: f64) -> f64 {
    if x > 0.0 {
        let t = x.tanh();
        1.0 - t * t
    } else {
        0.0
    }
}

/// Layer activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of the output layer.
    output_pre: Vec<f64>,
    pub output: Vec<f64>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} has length {got}, expected {want}")))
    }
}

fn affine(params: &[f64], w_off: usize, b_off: usize, n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    let w = &params[w_off..w_off + n_in * n_out];
    let b = &params[b_off..b_off + n_out];
    (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn head(spec: &MlpSpec, pre: &[f64]) -> Vec<f64> {
    match spec.output_head {
        OutputHead::Bounded01 => pre.iter().map(|&v| bounded01(v)).collect(),
        OutputHead::Linear | OutputHead::Gaussian => pre.to_vec(),
    }
}

pub fn forward_cached(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<ForwardCache> {
    check_len("input", x.len(), spec.n_inputs())?;
    check_len("parameter vector", params.len(), spec.n_params())?;
    let layout = spec.layout();
    let mut inputs = Vec::with_capacity(layout.len());
    let mut h = x.to_vec();
    let last = layout.len() - 1;
    let mut output_pre = Vec::new();
    for (l, &(w, b, n_in, n_out)) in layout.iter().enumerate() {
        let z = affine(params, w, b, n_in, n_out, &h);
        inputs.push(std::mem::take(&mut h));
        if l == last {
            output_pre = z;
        } else {
            h = z.into_iter().map(f64::tanh).collect();
        }
    }
    let output = head(spec, &output_pre);
    Ok(ForwardCache { inputs, output_pre, output })
}

/// Network output: the mean for Gaussian heads.
pub fn forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_cached(spec, params, x)?.output)
}

/// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
/// The `log_std` block of a Gaussian head is left untouched.
pub fn backward_into(spec: &MlpSpec, params: &[f64], cache: &ForwardCache, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
    check_len("upstream gradient", upstream.len(), spec.n_outputs())?;
    check_len("gradient buffer", grad.len(), spec.n_params())?;
    let layout = spec.layout();
    let mut delta: Vec<f64> = match spec.output_head {
        OutputHead::Bounded01 => upstream
            .iter()
            .zip(&cache.output_pre)
            .map(|(g, &z)| g * bounded01_grad(z))
            .collect(),
        OutputHead::Linear | OutputHead::Gaussian => upstream.to_vec(),
    };
    for l in (0..layout.len()).rev() {
        let (w_off, b_off, n_in, n_out) = layout[l];
        let input = &cache.inputs[l];
        for o in 0..n_out {
            let d = delta[o];
            grad[b_off + o] += d;
            if d != 0.0 {
                let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        if l > 0 {
            let w = &params[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wv;
                    }
                }
            }
            // input of layer l is tanh of the previous pre-activation
            for (p, h) in prev.iter_mut().zip(input) {
                *p *= 1.0 - h * h;
            }
            delta = prev;
        }
    }
    Ok(())
}

/// Parameter gradient for a single sample, `d(loss)/d(params)`.
pub fn backward(spec: &MlpSpec, params: &[f64], x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    let cache = forward_cached(spec, params, x)?;
    let mut grad = vec![0.0; spec.n_params()];
    backward_into(spec, params, &cache, upstream, &mut grad)?;
    Ok(grad)
}

/// Diagonal Gaussian log density of `action`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Gradients of [`gaussian_log_prob`] with respect to the mean and `log_std`.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let var = (2.0 * ls).exp();
            let d = a - m;
            (d / var, d * d / var - 1.0)
        })
        .unzip()
}

/// Samples `mean + exp(log_std) * eps` and returns it with its log density.
pub fn gaussian_sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let eps: f64 = StandardNormal.sample(rng);
            m + ls.exp() * eps
        })
        .collect();
    let lp = gaussian_log_prob(mean, log_std, &action);
    (action, lp)
}

/// Orthogonal initialization: each weight matrix is an orthonormal basis scaled
/// by `gain` (hidden layers) or `output_gain` (last layer); biases are zero and a
/// Gaussian head starts at `log_std = initial_log_std`.
pub fn init_params<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R, hidden_gain: f64, output_gain: f64, initial_log_std: f64) -> Vec<f64> {
    let mut params = vec![0.0; spec.n_params()];
    let layout = spec.layout();
    let last = layout.len() - 1;
    for (l, &(w_off, _, n_in, n_out)) in layout.iter().enumerate() {
        let gain = if l == last { output_gain } else { hidden_gain };
        let w = orthogonal(n_out, n_in, rng);
        for o in 0..n_out {
            for i in 0..n_in {
                params[w_off + o * n_in + i] = gain * w[(o, i)];
            }
        }
    }
    if let Some(off) = spec.log_std_offset() {
        params[off..].fill(initial_log_std);
    }
    params
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::from_fn(big, small, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // make the decomposition unique so the draw is uniform over orthogonal matrices
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// A network specification with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, output_gain: f64, initial_log_std: f64) -> Self {
        let params = init_params(&spec, rng, 1.0, output_gain, initial_log_std);
        Self { spec, params }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, x)
    }

    pub fn log_std(&self) -> &[f64] {
        match self.spec.log_std_offset() {
            Some(off) => &self.params[off..],
            None => &[],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// SHA-256 over the exact bit patterns of the parameters.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Named networks saved together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub networks: std::collections::BTreeMap<String, Network>,
    #[serde(default)]
    pub meta: std::collections::BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self { schema_version: CHECKPOINT_SCHEMA_VERSION, networks: Default::default(), meta: Default::default() }
    }

    pub fn with(mut self, name: &str, net: &Network) -> Self {
        self.networks.insert(name.into(), net.clone());
        self
    }

    pub fn get(&self, name: &str) -> Result<&Network> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no network `{name}`")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint schema {}", ck.schema_version)));
        }
        for (name, net) in &ck.networks {
            net.spec.validate()?;
            if net.params.len() != net.spec.n_params() {
                return Err(Error::Config(format!("checkpoint network `{name}` has the wrong parameter count")));
            }
        }
        Ok(ck)
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}
