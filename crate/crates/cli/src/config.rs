//! Run configuration: one JSON document holding every parameter of a run.
//!
//! Unspecified fields take their defaults, and every command writes the fully
//! resolved document back out as `config_snapshot.json`.

use std::path::{Path, PathBuf};

use msk_balance::env::{Env, Method, RsiConfig, TrainConfig};
use msk_balance::plant::{presets, ModelDef, SkeletonModel};
use msk_balance::region::DEFAULT_ALPHA;
use msk_balance::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::scenario::{apply_scenario, Scenario};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Built-in model names accepted in place of a model file path.
pub const PRESET_HUMAN: &str = "preset:human";
pub const PRESET_ANKLE_PENDULUM: &str = "preset:ankle_pendulum";

/// Extra success condition on top of surviving the episode: the ankle stays
/// within `tolerance_deg` of its target from `after` seconds on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldCriterion {
    pub tolerance_deg: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub episodes: usize,
    pub alpha: f64,
    /// Random interior successes whose trajectories join the trajectory-based region.
    pub n_internal: usize,
    /// Initial-state sampling; `None` uses the random-velocity training stage settings.
    pub rsi: Option<RsiConfig>,
    /// Episode length override for test episodes, s.
    pub episode_len: Option<f64>,
    pub hold: Option<HoldCriterion>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { episodes: 10_000, alpha: DEFAULT_ALPHA, n_internal: 100, rsi: None, episode_len: None, hold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeanConfig {
    pub successes: usize,
    /// Attempts allowed before reporting a partial result.
    pub max_episodes: usize,
    pub sigma_deg: f64,
}

impl Default for LeanConfig {
    fn default() -> Self {
        Self { successes: 100, max_episodes: 2000, sigma_deg: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Model file path or a built-in preset name.
    pub model: String,
    pub scenario: Scenario,
    pub train: TrainConfig,
    pub test: TestConfig,
    pub lean: LeanConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: PRESET_HUMAN.into(),
            scenario: Scenario::Baseline,
            train: TrainConfig::default(),
            test: TestConfig::default(),
            lean: LeanConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// An environment built from a configuration, with notes on any forced
/// deviations.
pub struct Prepared {
    pub env: Env,
    pub notes: Vec<String>,
}

impl RunConfig {
    /// Small, fast settings for the reduced ankle plant.
    pub fn toy() -> Self {
        let mut c = Self { model: PRESET_ANKLE_PENDULUM.into(), output_dir: PathBuf::from("runs/toy"), ..Self::default() };
        c.train.method = Method::M1;
        c.train.iterations = 200;
        c.train.env.episode_len = 5.0;
        c.train.rsi.sigma_p = 0.035;
        c.train.networks.cpn_hidden = vec![32, 32];
        c.train.networks.value_hidden = vec![32, 32];
        c.train.networks.mcn_hidden = vec![32, 32];
        c.train.ppo.buffer_size = 1024;
        c.train.ppo.lr = 3e-4;
        c.train.ppo.value_lr = 1e-3;
        c.train.mcn.lr = 1e-3;
        c.train.mcn_stride = 4;
        c.train.mcn_max_samples = 4096;
        c.test.episodes = 500;
        c.test.episode_len = Some(6.0);
        c.test.hold = Some(HoldCriterion { tolerance_deg: 2.0, after: 1.0 });
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config file {}: {e}", path.display())))?;
        if !config.model.starts_with("preset:") && Path::new(&config.model).is_relative() {
            if let Some(dir) = path.parent() {
                config.model = dir.join(&config.model).to_string_lossy().into_owned();
            }
        }
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario.validate()?;
        self.train.validate()?;
        if self.test.episodes == 0 {
            return Err(Error::Config("test.episodes must be positive".into()));
        }
        if !(self.test.alpha >= 0.0 && self.test.alpha.is_finite()) {
            return Err(Error::Config("test.alpha must be finite and non-negative".into()));
        }
        if let Some(rsi) = &self.test.rsi {
            rsi.validate()?;
        }
        if self.test.episode_len.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("test.episode_len must be positive".into()));
        }
        if self.lean.successes == 0 || self.lean.max_episodes == 0 || !(self.lean.sigma_deg >= 0.0) {
            return Err(Error::Config("lean.successes and lean.max_episodes must be positive, lean.sigma_deg >= 0".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// The nominal model definition, before the scenario is applied.
    pub fn base_model(&self) -> Result<ModelDef> {
        match self.model.as_str() {
            PRESET_HUMAN => Ok(presets::default_human()),
            PRESET_ANKLE_PENDULUM => Ok(presets::ankle_pendulum()),
            other if other.starts_with("preset:") => {
                Err(Error::Config(format!("unknown model preset `{other}` (expected {PRESET_HUMAN} or {PRESET_ANKLE_PENDULUM})")))
            }
            path => {
                if !Path::new(path).is_file() {
                    return Err(Error::Config(format!("model file {path} does not exist")));
                }
                Ok(SkeletonModel::load(path)?.into_def())
            }
        }
    }

    /// Training environment with the scenario applied.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let def = apply_scenario(&self.base_model()?, &self.scenario)?;
        let mut env_config = self.train.env.clone();
        let mut notes = Vec::new();
        if self.scenario.is_unilateral() && env_config.symmetric_action {
            env_config.symmetric_action = false;
            notes.push(format!(
                "DEVIATION: scenario {} breaks left/right symmetry; the planar model runs with symmetric_action disabled, \
                 so left and right joints receive independent actions",
                self.scenario
            ));
        }
        let env = Env::new(SkeletonModel::new(def)?, env_config)?;
        Ok(Prepared { env, notes })
    }

    /// The training environment with the test episode length.
    pub fn test_env(&self, train_env: &Env) -> Result<Env> {
        let mut c = train_env.config.clone();
        if let Some(t) = self.test.episode_len {
            c.episode_len = t;
        }
        Env::new(train_env.model.clone(), c)
    }

    /// Initial-state sampling for test episodes.
    pub fn test_rsi(&self, env: &Env) -> RsiConfig {
        self.test.rsi.clone().unwrap_or_else(|| self.train.stage_rsi(Method::M2, env.omega()))
    }
}
