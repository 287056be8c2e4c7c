//! PPO for the control policy network and regression training of the muscle
//! coordination network.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{self, Adam, Network, OutputHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            clip_eps: 0.2,
            epochs: 10,
            batch_size: 128,
            buffer_size: 2048,
            lr: 1e-4,
            value_lr: 1e-4,
            gae_lambda: 0.95,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && self.clip_eps > 0.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.buffer_size > 0
            && self.lr > 0.0
            && self.value_lr > 0.0
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.max_grad_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PPO configuration {self:?}")))
        }
    }
}

/// Generalized advantage estimation. `values` carries one extra trailing entry,
/// the bootstrap value of the state after the last step. `dones[t]` marks a
/// terminal transition: the next value is zero and the recursion restarts.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Contract(format!(
            "gae needs values of length n + 1 and dones of length n (n = {n}, got {} and {})",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] { (0.0, 0.0) } else { (values[t + 1], acc) };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * carry;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit variance; a constant input becomes all zeros.
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}

pub fn ppo_ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).exp()
}

pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// One policy-gradient sample after advantage estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoSample {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoMetrics {
    pub mean_objective: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub value_loss: f64,
}

fn finite_or_abort(grad: &[f64], what: &str) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what} gradient; update aborted")))
    }
}

/// Runs `epochs` passes of shuffled minibatch Adam steps on the clipped surrogate
/// and on the value MSE. Advantages are used as given (normalize beforehand).
pub fn ppo_update<R: Rng + ?Sized>(
    buffer: &[PpoSample],
    policy: &mut Network,
    value: &mut Network,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoMetrics> {
    if buffer.is_empty() {
        return Err(Error::Contract("empty PPO buffer".into()));
    }
    if policy.spec.output_head != OutputHead::Gaussian {
        return Err(Error::Contract("PPO policy needs a Gaussian head".into()));
    }
    let log_std_off = policy.spec.log_std_offset().unwrap();
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    let mut sums = PpoMetrics::default();
    let mut count = 0usize;
    let mut batches = 0usize;

    let mut staged_policy = policy.params.clone();
    let mut staged_value = value.params.clone();
    let mut staged_popt = policy_opt.clone();
    let mut staged_vopt = value_opt.clone();

    for _ in 0..config.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.batch_size) {
            let mut g_pi = vec![0.0; staged_policy.len()];
            let mut g_v = vec![0.0; staged_value.len()];
            let scale = 1.0 / chunk.len() as f64;
            let mut value_loss = 0.0;
            for &i in chunk {
                let s = &buffer[i];
                let cache = nnet::forward_cached(&policy.spec, &staged_policy, &s.observation)?;
                let log_std = &staged_policy[log_std_off..];
                let lp = nnet::gaussian_log_prob(&cache.output, log_std, &s.action);
                let ratio = ppo_ratio(lp, s.log_prob);
                let obj = clipped_objective(ratio, s.advantage, config.clip_eps);
                sums.mean_objective += obj;
                sums.approx_kl += s.log_prob - lp;
                if (ratio - 1.0).abs() > config.clip_eps {
                    sums.clip_fraction += 1.0;
                }
                count += 1;
                // the surrogate gradient flows only where the unclipped term is the minimum
                if ratio * s.advantage <= obj && s.advantage != 0.0 {
                    let coef = -s.advantage * ratio * scale;
                    let (g_mean, g_ls) = nnet::gaussian_log_prob_grad(&cache.output, log_std, &s.action);
                    let upstream: Vec<f64> = g_mean.iter().map(|g| g * coef).collect();
                    nnet::backward_into(&policy.spec, &staged_policy, &cache, &upstream, &mut g_pi)?;
                    for (k, g) in g_ls.iter().enumerate() {
                        g_pi[log_std_off + k] += g * coef;
                    }
                }
                let vc = nnet::forward_cached(&value.spec, &staged_value, &s.observation)?;
                let err = vc.output[0] - s.ret;
                value_loss += 0.5 * err * err * scale;
                nnet::backward_into(&value.spec, &staged_value, &vc, &[err * scale], &mut g_v)?;
            }
            finite_or_abort(&g_pi, "policy")?;
            finite_or_abort(&g_v, "value")?;
            nnet::clip_grad_norm(&mut g_pi, config.max_grad_norm);
            nnet::clip_grad_norm(&mut g_v, config.max_grad_norm);
            staged_popt.step(&mut staged_policy, &g_pi);
            staged_vopt.step(&mut staged_value, &g_v);
            sums.value_loss += value_loss;
            batches += 1;
        }
    }
    if !staged_policy.iter().chain(&staged_value).all(|p| p.is_finite()) {
        return Err(Error::Numeric("non-finite parameters after PPO update".into()));
    }
    policy.params = staged_policy;
    value.params = staged_value;
    *policy_opt = staged_popt;
    *value_opt = staged_vopt;
    let n = count as f64;
    Ok(PpoMetrics {
        mean_objective: sums.mean_objective / n,
        clip_fraction: sums.clip_fraction / n,
        approx_kl: sums.approx_kl / n,
        value_loss: sums.value_loss / batches as f64,
    })
}

/// One muscle-coordination regression sample: the network input, the desired
/// torques on the actuated coordinates and the affine torque map at that state.
#[derive(Debug, Clone, PartialEq)]
pub struct McnSample {
    pub input: Vec<f64>,
    pub tau_desired: DVector<f64>,
    /// `d tau / d a`, `n_actuated x n_muscles`.
    pub per_activation: DMatrix<f64>,
    /// Passive torques `tau(a = 0)`.
    pub passive: DVector<f64>,
}

/// `|tau_d - (A a + tau_0)|^2 + w_reg |a|^2` for a single sample.
pub fn mcn_sample_loss(sample: &McnSample, activations: &[f64], w_reg: f64) -> f64 {
    let a = DVector::from_column_slice(activations);
    let r = &sample.tau_desired - (&sample.per_activation * &a + &sample.passive);
    r.norm_squared() + w_reg * a.norm_squared()
}

/// Batch mean of [`mcn_sample_loss`] with activations given per sample.
pub fn mcn_loss(samples: &[McnSample], activations: &[Vec<f64>], w_reg: f64) -> Result<f64> {
    if samples.len() != activations.len() || samples.is_empty() {
        return Err(Error::Contract("mcn_loss needs one activation vector per sample".into()));
    }
    Ok(samples.iter().zip(activations).map(|(s, a)| mcn_sample_loss(s, a, w_reg)).sum::<f64>() / samples.len() as f64)
}

/// Batch loss of the network's own outputs and its parameter gradient.
pub fn mcn_loss_and_grad(samples: &[McnSample], net: &Network, w_reg: f64) -> Result<(f64, Vec<f64>)> {
    let refs: Vec<&McnSample> = samples.iter().collect();
    loss_and_grad(&refs, net, w_reg)
}

fn loss_and_grad(samples: &[&McnSample], net: &Network, w_reg: f64) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Contract("empty MCN batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for s in samples {
        let cache = nnet::forward_cached(&net.spec, &net.params, &s.input)?;
        let a = DVector::from_column_slice(&cache.output);
        let r = &s.tau_desired - (&s.per_activation * &a + &s.passive);
        loss += (r.norm_squared() + w_reg * a.norm_squared()) * scale;
        let g = (s.per_activation.transpose() * &r) * (-2.0 * scale) + a * (2.0 * w_reg * scale);
        nnet::backward_into(&net.spec, &net.params, &cache, g.as_slice(), &mut grad)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McnConfig {
    pub w_reg: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_grad_norm: f64,
}

impl Default for McnConfig {
    fn default() -> Self {
        Self { w_reg: 0.01, lr: 1e-4, batch_size: 128, epochs: 1, max_grad_norm: 1.0 }
    }
}

/// One full-batch Adam step; returns the loss before the step.
pub fn mcn_step(samples: &[McnSample], net: &mut Network, opt: &mut Adam, config: &McnConfig) -> Result<f64> {
    let refs: Vec<&McnSample> = samples.iter().collect();
    step_refs(&refs, net, opt, config)
}

fn step_refs(samples: &[&McnSample], net: &mut Network, opt: &mut Adam, config: &McnConfig) -> Result<f64> {
    let (loss, mut grad) = loss_and_grad(samples, net, config.w_reg)?;
    finite_or_abort(&grad, "muscle network")?;
    nnet::clip_grad_norm(&mut grad, config.max_grad_norm);
    opt.step(&mut net.params, &grad);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct McnMetrics {
    pub loss: f64,
}

/// Shuffled minibatch passes over `samples`; reports the mean pre-step loss.
pub fn mcn_update<R: Rng + ?Sized>(
    samples: &[McnSample],
    net: &mut Network,
    opt: &mut Adam,
    config: &McnConfig,
    rng: &mut R,
) -> Result<McnMetrics> {
    if samples.is_empty() {
        return Err(Error::Contract("empty MCN batch".into()));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut total = 0.0;
    let mut steps = 0;
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.batch_size) {
            let batch: Vec<&McnSample> = chunk.iter().map(|&i| &samples[i]).collect();
            total += step_refs(&batch, net, opt, config)?;
            steps += 1;
        }
    }
    Ok(McnMetrics { loss: total / steps as f64 })
}
