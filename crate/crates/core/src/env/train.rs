//! Alternating rollout / update training loop for the three methods.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{EpisodeRecord, Policy, RolloutOptions};
use super::{Env, RsiConfig};
use crate::error::{Error, Result};
use crate::nnet::{Adam, Checkpoint, MlpSpec, Network, OutputHead};
use crate::rl::{self, McnConfig, McnSample, PpoConfig, PpoSample};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Random ankle angle, zero initial velocity.
    M1,
    /// Random ankle angle and velocity.
    M2,
    /// M1, then M2 starting from the best M1 networks.
    M3,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" | "1" => Ok(Method::M1),
            "M2" | "2" => Ok(Method::M2),
            "M3" | "3" => Ok(Method::M3),
            other => Err(Error::Config(format!("unknown method `{other}` (expected M1, M2 or M3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub cpn_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub mcn_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub cpn_output_gain: f64,
    /// Initial output bias of the muscle network, keeping every output active.
    pub mcn_output_bias: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            cpn_hidden: vec![256, 256],
            value_hidden: vec![256, 256],
            mcn_hidden: vec![512, 256, 256],
            init_log_std: 0.05f64.ln(),
            cpn_output_gain: 0.01,
            mcn_output_bias: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    /// PPO iterations per training stage.
    pub iterations: usize,
    pub seed: u64,
    pub env: super::EnvConfig,
    pub rsi: RsiConfig,
    pub ppo: PpoConfig,
    pub mcn: McnConfig,
    pub networks: NetworkConfig,
    /// Velocity spread used by the random-velocity stage, rad/s.
    pub m2_sigma_v: f64,
    /// Episodes launched together; fixed so results do not depend on the worker count.
    pub episodes_per_batch: usize,
    pub mcn_stride: usize,
    /// Cap on muscle-network samples per iteration (uniform subsample).
    pub mcn_max_samples: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::M1,
            iterations: 1000,
            seed: 0,
            env: super::EnvConfig::default(),
            rsi: RsiConfig::default(),
            ppo: PpoConfig::default(),
            mcn: McnConfig::default(),
            networks: NetworkConfig::default(),
            m2_sigma_v: 0.1,
            episodes_per_batch: 8,
            mcn_stride: 1,
            mcn_max_samples: 8192,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.rsi.validate()?;
        self.ppo.validate()?;
        if self.iterations == 0 || self.episodes_per_batch == 0 || self.workers == 0 || self.mcn_max_samples == 0 {
            return Err(Error::Config("iterations, episodes_per_batch, workers and mcn_max_samples must be positive".into()));
        }
        if !(self.m2_sigma_v >= 0.0) {
            return Err(Error::Config("m2_sigma_v must be non-negative".into()));
        }
        Ok(())
    }

    /// Randomization used by a stage of `method`.
    pub fn stage_rsi(&self, method: Method, omega: f64) -> RsiConfig {
        let mut rsi = self.rsi.clone();
        match method {
            Method::M1 => {
                rsi.slope = 0.0;
                rsi.sigma_v = 0.0;
            }
            Method::M2 | Method::M3 => {
                rsi.slope = -omega;
                rsi.sigma_v = self.m2_sigma_v;
            }
        }
        rsi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub reward: f64,
    pub smoothed_reward_5pt: f64,
    pub mcn_loss: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

/// Starting point of a stage.
#[derive(Debug, Clone)]
pub enum TrainSeed {
    Fresh,
    From(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub method: Method,
    pub log: Vec<TrainLogRow>,
    pub best: Checkpoint,
    pub best_reward: f64,
    pub best_iteration: usize,
    pub last: Checkpoint,
    /// Control-network parameter hash before the first update.
    pub initial_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub stages: Vec<StageResult>,
}

impl TrainResult {
    pub fn best(&self) -> &Checkpoint {
        &self.stages.last().expect("at least one stage").best
    }
}

/// Trailing moving average over up to five values.
pub fn smooth_5pt(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(4);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Freshly initialized policy and value networks for `stage`.
pub fn fresh_networks(env: &Env, nets: &NetworkConfig, seed: u64, stage: u64) -> Result<(Policy, Network)> {
    let mut rng = rng::stream(seed, domain::INIT, stage, 0);
    let sizes = |inp: usize, hidden: &[usize], out: usize| {
        let mut s = vec![inp];
        s.extend_from_slice(hidden);
        s.push(out);
        s
    };
    let obs = env.observation_dim();
    let cpn_spec = MlpSpec::new(sizes(obs, &nets.cpn_hidden, env.n_actions()), OutputHead::Gaussian)?;
    let value_spec = MlpSpec::new(sizes(obs, &nets.value_hidden, 1), OutputHead::Linear)?;
    let mcn_spec = MlpSpec::new(sizes(env.mcn_input_dim(), &nets.mcn_hidden, env.model.n_muscles()), OutputHead::Bounded01)?;
    let cpn = Network::new(cpn_spec, &mut rng, nets.cpn_output_gain, nets.init_log_std);
    let value = Network::new(value_spec, &mut rng, 1.0, 0.0);
    let mut mcn = Network::new(mcn_spec, &mut rng, 1.0, 0.0);
    let (_, b_off, _, n_out) = *mcn.spec.layout().last().unwrap();
    mcn.params[b_off..b_off + n_out].fill(nets.mcn_output_bias);
    Ok((Policy { cpn, mcn }, value))
}

pub fn make_checkpoint(policy: &Policy, value: &Network, method: Method, iteration: usize, reward: f64) -> Checkpoint {
    let mut ck = Checkpoint::new().with("cpn", &policy.cpn).with("mcn", &policy.mcn).with("value", value);
    ck.meta.insert("method".into(), serde_json::json!(format!("{method:?}")));
    ck.meta.insert("iteration".into(), serde_json::json!(iteration));
    ck.meta.insert("reward".into(), serde_json::json!(reward));
    ck
}

/// Splits a checkpoint into the policy pair and value network.
pub fn networks_from(ck: &Checkpoint) -> Result<(Policy, Network)> {
    Ok((
        Policy { cpn: ck.get("cpn")?.clone(), mcn: ck.get("mcn")?.clone() },
        ck.get("value")?.clone(),
    ))
}

/// Runs one episode per index in `range`, in parallel, preserving order.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    env: &Env,
    policy: &Policy,
    rsi: &RsiConfig,
    options: RolloutOptions,
    seed: u64,
    dom: u64,
    iteration: u64,
    range: std::ops::Range<u64>,
) -> Result<Vec<EpisodeRecord>> {
    range
        .into_par_iter()
        .map(|e| {
            let mut rng = rng::stream(seed, dom, iteration, e);
            let sample = env.randomize_initial_state(rsi, &mut rng)?;
            env.run_episode(policy, &sample.state, options, &mut rng)
        })
        .collect()
}

/// One training stage: `config.iterations` rounds of rollouts, PPO update and
/// muscle-network regression.
pub fn train_stage(
    env: &Env,
    config: &TrainConfig,
    method: Method,
    stage: u64,
    seed_from: TrainSeed,
    on_iteration: &mut dyn FnMut(&TrainLogRow),
) -> Result<StageResult> {
    config.validate()?;
    let rsi = config.stage_rsi(method, env.omega());
    let (mut policy, mut value) = match seed_from {
        TrainSeed::Fresh => fresh_networks(env, &config.networks, config.seed, stage)?,
        TrainSeed::From(ck) => networks_from(&ck)?,
    };
    let initial_hash = policy.cpn.param_hash();
    let ppo = &config.ppo;
    let mut popt = Adam::new(policy.cpn.params.len(), ppo.lr);
    let mut vopt = Adam::new(value.params.len(), ppo.value_lr);
    let mut mopt = Adam::new(policy.mcn.params.len(), config.mcn.lr);
    let options = RolloutOptions { explore: true, mcn_stride: config.mcn_stride };
    let rollout_dom = domain::ROLLOUT + 16 * stage;
    let pool = worker_pool(config.workers)?;

    let mut log: Vec<TrainLogRow> = Vec::with_capacity(config.iterations);
    let mut rewards = Vec::with_capacity(config.iterations);
    let mut best = (f64::NEG_INFINITY, 0usize, make_checkpoint(&policy, &value, method, 0, f64::NEG_INFINITY));

    for it in 0..config.iterations {
        let mut episodes: Vec<EpisodeRecord> = Vec::new();
        let mut n_transitions = 0;
        let mut next = 0u64;
        while n_transitions < ppo.buffer_size {
            let k = config.episodes_per_batch as u64;
            let batch =
                pool.install(|| run_batch(env, &policy, &rsi, options, config.seed, rollout_dom, it as u64, next..next + k))?;
            next += k;
            n_transitions += batch.iter().map(|e| e.transitions.len()).sum::<usize>();
            episodes.extend(batch);
        }

        let mut buffer: Vec<PpoSample> = Vec::with_capacity(n_transitions);
        for ep in &episodes {
            let mut values = Vec::with_capacity(ep.transitions.len() + 1);
            for tr in &ep.transitions {
                values.push(value.forward(&tr.observation)?[0]);
            }
            values.push(if ep.terminal { 0.0 } else { value.forward(&ep.final_observation)?[0] });
            let r: Vec<f64> = ep.transitions.iter().map(|t| t.reward).collect();
            let dones = vec![false; r.len()];
            let (adv, ret) = rl::compute_gae(&r, &values, &dones, ppo.gamma, ppo.gae_lambda)?;
            for ((tr, a), g) in ep.transitions.iter().zip(adv).zip(ret) {
                buffer.push(PpoSample {
                    observation: tr.observation.clone(),
                    action: tr.action.clone(),
                    log_prob: tr.log_prob,
                    advantage: a,
                    ret: g,
                });
            }
        }
        buffer.truncate(ppo.buffer_size);
        let mut adv: Vec<f64> = buffer.iter().map(|s| s.advantage).collect();
        rl::normalize(&mut adv);
        for (s, a) in buffer.iter_mut().zip(adv) {
            s.advantage = a;
        }
        let mut ppo_rng = rng::stream(config.seed, domain::PPO_UPDATE + 16 * stage, it as u64, 0);
        let metrics = rl::ppo_update(&buffer, &mut policy.cpn, &mut value, &mut popt, &mut vopt, ppo, &mut ppo_rng)?;

        let mut mcn_rng = rng::stream(config.seed, domain::MCN_UPDATE + 16 * stage, it as u64, 0);
        let all: Vec<McnSample> = episodes.iter_mut().flat_map(|e| std::mem::take(&mut e.mcn_samples)).collect();
        let mcn_loss = if all.is_empty() {
            f64::NAN
        } else {
            let batch: Vec<McnSample> = if all.len() > config.mcn_max_samples {
                let mut picks = index::sample(&mut mcn_rng, all.len(), config.mcn_max_samples).into_vec();
                picks.sort_unstable();
                let mut all = all;
                picks.iter().map(|&i| std::mem::replace(&mut all[i], placeholder())).collect()
            } else {
                all
            };
            rl::mcn_update(&batch, &mut policy.mcn, &mut mopt, &config.mcn, &mut mcn_rng)?.loss
        };

        let reward = episodes.iter().map(|e| e.outcome.total_reward).sum::<f64>() / episodes.len() as f64;
        rewards.push(reward);
        let smoothed = *smooth_5pt(&rewards).last().unwrap();
        let row = TrainLogRow {
            iteration: it,
            reward,
            smoothed_reward_5pt: smoothed,
            mcn_loss,
            clip_fraction: metrics.clip_fraction,
            kl: metrics.approx_kl,
        };
        on_iteration(&row);
        log.push(row);
        if reward > best.0 {
            best = (reward, it, make_checkpoint(&policy, &value, method, it, reward));
        }
    }

    let last_reward = rewards.last().copied().unwrap_or(f64::NAN);
    Ok(StageResult {
        method,
        log,
        best: best.2,
        best_reward: best.0,
        best_iteration: best.1,
        last: make_checkpoint(&policy, &value, method, config.iterations - 1, last_reward),
        initial_hash,
    })
}

fn placeholder() -> McnSample {
    McnSample {
        input: Vec::new(),
        tau_desired: nalgebra::DVector::zeros(0),
        per_activation: nalgebra::DMatrix::zeros(0, 0),
        passive: nalgebra::DVector::zeros(0),
    }
}

/// Trains with `config.method`. M3 runs an M1 stage, then an M2 stage seeded
/// with the best M1 networks.
pub fn train(env: &Env, config: &TrainConfig, on_iteration: &mut dyn FnMut(usize, &TrainLogRow)) -> Result<TrainResult> {
    config.validate()?;
    let mut stages = Vec::new();
    match config.method {
        Method::M1 | Method::M2 => {
            stages.push(train_stage(env, config, config.method, 0, TrainSeed::Fresh, &mut |r| on_iteration(0, r))?);
        }
        Method::M3 => {
            let first = train_stage(env, config, Method::M1, 0, TrainSeed::Fresh, &mut |r| on_iteration(0, r))?;
            let seed = TrainSeed::From(first.best.clone());
            stages.push(first);
            stages.push(train_stage(env, config, Method::M2, 1, seed, &mut |r| on_iteration(1, r))?);
        }
    }
    Ok(TrainResult { stages })
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

pub fn write_log(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
