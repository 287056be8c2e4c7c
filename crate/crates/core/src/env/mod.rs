//! Balance-recovery environment: observations, reward, termination, initial
//! state randomization, dual-rate episodes and the training loop.

mod episode;
mod rsi;
mod train;

pub use episode::{write_trace, EpisodeOutcome, EpisodeRecord, Policy, RolloutOptions, Transition};
pub use rsi::{RsiConfig, RsiSample};
pub use train::{
    fresh_networks, make_checkpoint, networks_from, run_batch, smooth_5pt, train, train_stage, worker_pool, write_log, Method, NetworkConfig, StageResult, TrainConfig,
    TrainLogRow, TrainResult, TrainSeed,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{self, Kinematics, SkeletonModel, SkeletonState, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub posture: f64,
    pub torque: f64,
    pub upright: f64,
    pub xcom: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { posture: 1.0, torque: 0.1, upright: 0.1, xcom: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Policy ticks per second.
    pub policy_rate: u32,
    /// Simulation steps per second.
    pub sim_rate: u32,
    /// Episode length, s.
    pub episode_len: f64,
    pub weights: RewardWeights,
    pub sigma_posture: f64,
    pub sigma_torque: f64,
    pub sigma_upright: f64,
    pub sigma_xcom: f64,
    pub target_hip: f64,
    pub target_knee: f64,
    /// Fixed target ankle angle, rad; computed from the model geometry when absent.
    pub target_ankle: Option<f64>,
    /// Pendulum length for the extrapolated COM; upright COM height when absent.
    pub lip_height: Option<f64>,
    pub fall_pelvis_height: f64,
    pub foot_slide_max: f64,
    pub foot_lift_max: f64,
    /// One action per joint group, mirrored to both legs.
    pub symmetric_action: bool,
    /// Desired torques are divided by this before entering the muscle network, N m.
    pub mcn_torque_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            policy_rate: 30,
            sim_rate: 600,
            episode_len: 10.0,
            weights: RewardWeights::default(),
            sigma_posture: 2.0,
            sigma_torque: 0.001,
            sigma_upright: 5.0,
            sigma_xcom: 5.0,
            target_hip: 0.0,
            target_knee: 0.0,
            target_ankle: None,
            lip_height: None,
            fall_pelvis_height: 0.8,
            foot_slide_max: 0.01,
            foot_lift_max: 0.01,
            symmetric_action: true,
            mcn_torque_scale: 100.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.policy_rate == 0 || self.sim_rate == 0 || self.sim_rate % self.policy_rate != 0 {
            return bad(format!(
                "sim_rate ({}) must be a positive multiple of policy_rate ({})",
                self.sim_rate, self.policy_rate
            ));
        }
        let w = &self.weights;
        if [w.posture, w.torque, w.upright, w.xcom].iter().any(|v| !(*v >= 0.0)) {
            return bad("reward weights must be non-negative".into());
        }
        let positive = [
            ("episode_len", self.episode_len),
            ("sigma_posture", self.sigma_posture),
            ("sigma_torque", self.sigma_torque),
            ("sigma_upright", self.sigma_upright),
            ("sigma_xcom", self.sigma_xcom),
            ("fall_pelvis_height", self.fall_pelvis_height),
            ("foot_slide_max", self.foot_slide_max),
            ("foot_lift_max", self.foot_lift_max),
            ("mcn_torque_scale", self.mcn_torque_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(h) = self.lip_height {
            if !(h > 0.0) {
                return bad(format!("lip_height must be positive, got {h}"));
            }
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.sim_rate / self.policy_rate) as usize
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / self.sim_rate as f64
    }

    /// Number of simulation steps in a full episode.
    pub fn episode_steps(&self) -> usize {
        (self.episode_len * self.sim_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Success,
    Fall,
    FootSlide,
    FootLift,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::Fall => "fall",
            Status::FootSlide => "foot_slide",
            Status::FootLift => "foot_lift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub posture: f64,
    pub torque: f64,
    pub upright: f64,
    pub xcom: f64,
    pub total: f64,
}

/// Extrapolated center of mass `x + v / omega`.
pub fn xcom(x: f64, v: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    Ok(x + v / omega)
}

/// Horizontal COM position relative to the first ankle and COM velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComState {
    pub x: f64,
    pub v: f64,
}

/// A model bundled with its environment configuration and the quantities
/// derived from both (target posture, pendulum frequency, action layout).
#[derive(Debug, Clone)]
pub struct Env {
    pub model: SkeletonModel,
    pub config: EnvConfig,
    target_ankle: f64,
    com_height: f64,
    omega: f64,
    /// Target angle per actuated coordinate.
    target_q: Vec<f64>,
    /// Action index per actuated coordinate.
    action_of: Vec<usize>,
    n_actions: usize,
    ankles: Vec<usize>,
}

impl Env {
    pub fn new(model: SkeletonModel, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if model.feet().is_empty() {
            return Err(Error::ModelConfig("environment needs at least one foot".into()));
        }
        let ankles = model.coords_in_group("ankle");
        if ankles.is_empty() {
            return Err(Error::ModelConfig("environment needs an unlocked coordinate in group `ankle`".into()));
        }
        let target_ankle = match config.target_ankle {
            Some(a) => a,
            None => compute_target_ankle(&model, &ankles)?,
        };
        let upright = standing_pose(&model, &ankles, target_ankle);
        let kin = Kinematics::compute(&model, &upright, &vec![0.0; model.n_coords()]);
        let com_height = kin.whole_body_com(&model).0[1] - lowest_contact(&model, &kin).unwrap_or(0.0);
        let l = config.lip_height.unwrap_or(com_height);
        let omega = (model.gravity() / l).sqrt();

        let actuated = model.actuated_coords();
        let target_q = actuated
            .iter()
            .map(|&c| match model.coords()[c].group.as_deref() {
                Some("hip") => config.target_hip,
                Some("knee") => config.target_knee,
                Some("ankle") => target_ankle,
                _ => 0.0,
            })
            .collect();
        let mut keys: Vec<String> = Vec::new();
        let action_of = actuated
            .iter()
            .map(|&c| {
                let coord = &model.coords()[c];
                let key = match (&coord.group, config.symmetric_action) {
                    (Some(g), true) => g.clone(),
                    _ => coord.name.clone(),
                };
                match keys.iter().position(|k| *k == key) {
                    Some(i) => i,
                    None => {
                        keys.push(key);
                        keys.len() - 1
                    }
                }
            })
            .collect();
        Ok(Self {
            model,
            config,
            target_ankle,
            com_height,
            omega,
            target_q,
            action_of,
            n_actions: keys.len(),
            ankles,
        })
    }

    pub fn target_ankle(&self) -> f64 {
        self.target_ankle
    }

    /// Whole-body COM height above the ground at the target posture.
    pub fn upright_com_height(&self) -> f64 {
        self.com_height
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn target_q(&self) -> &[f64] {
        &self.target_q
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn ankle_coords(&self) -> &[usize] {
        &self.ankles
    }

    pub fn observation_dim(&self) -> usize {
        4 * self.model.n_bodies()
    }

    /// Muscle network input: scaled desired torques plus `(l, v, a)` per muscle.
    pub fn mcn_input_dim(&self) -> usize {
        self.model.actuated_coords().len() + 3 * self.model.n_muscles()
    }

    /// Desired joint angles for the actuated coordinates: target plus the
    /// (possibly mirrored) action offsets, clamped to the joint limits.
    pub fn desired_angles(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.n_actions {
            return Err(Error::Contract(format!("expected {} actions, got {}", self.n_actions, action.len())));
        }
        Ok(self
            .model
            .actuated_coords()
            .iter()
            .zip(&self.target_q)
            .zip(&self.action_of)
            .map(|((&c, &t), &k)| {
                let q = t + action[k];
                match self.model.coords()[c].limits {
                    Some([lo, hi]) => q.clamp(lo, hi),
                    None => q,
                }
            })
            .collect())
    }

    /// Per-body planar COM position and velocity, with horizontal positions
    /// measured from the pelvis origin.
    pub fn observe(&self, kin: &Kinematics) -> Vec<f64> {
        let px = kin.origin[self.model.pelvis_body()][0];
        let mut obs = Vec::with_capacity(self.observation_dim());
        for b in 0..self.model.n_bodies() {
            let p = kin.body_com(&self.model, b);
            let v = kin.body_com_velocity(&self.model, b);
            obs.extend_from_slice(&[p[0] - px, p[1], v[0], v[1]]);
        }
        obs
    }

    /// Mean horizontal position of the foot COMs.
    pub fn foot_com_x(&self, kin: &Kinematics) -> f64 {
        let feet = self.model.feet();
        feet.iter().map(|&f| kin.body_com(&self.model, f)[0]).sum::<f64>() / feet.len() as f64
    }

    pub fn foot_coms(&self, kin: &Kinematics) -> Vec<Vec2> {
        self.model.feet().iter().map(|&f| kin.body_com(&self.model, f)).collect()
    }

    pub fn com_state(&self, kin: &Kinematics) -> ComState {
        let (p, v) = kin.whole_body_com(&self.model);
        let ankle = kin.origin[self.model.feet()[0]][0];
        ComState { x: p[0] - ankle, v: v[0] }
    }

    /// Reward terms for the state in `kin` with desired torques `tau` on the
    /// actuated coordinates.
    pub fn reward(&self, kin: &Kinematics, q: &[f64], tau: &[f64]) -> RewardComponents {
        let c = &self.config;
        let w = &c.weights;
        let posture_err: f64 = self
            .model
            .actuated_coords()
            .iter()
            .zip(&self.target_q)
            .map(|(&i, &t)| (t - q[i]).powi(2))
            .sum();
        let torque_sq: f64 = tau.iter().map(|t| t * t).sum();
        let head = self.model.head_point(kin);
        let pelvis = self.model.pelvis_point(kin);
        let (p, v) = kin.whole_body_com(&self.model);
        let m = p[0] + v[0] / self.omega;
        let target = self.foot_com_x(kin);
        let posture = w.posture * (-c.sigma_posture * posture_err).exp();
        let torque = w.torque * (-c.sigma_torque * torque_sq).exp();
        let upright = w.upright * (-c.sigma_upright * (head[0] - pelvis[0]).powi(2)).exp();
        let xcom = w.xcom * (-c.sigma_xcom * (m - target).powi(2)).exp();
        RewardComponents { posture, torque, upright, xcom, total: posture + torque + upright + xcom }
    }

    /// First triggered condition in the order fall, foot slide, foot lift; success
    /// once `step` reaches the episode length.
    pub fn check_termination(&self, kin: &Kinematics, initial_feet: &[Vec2], step: usize) -> Option<Status> {
        let c = &self.config;
        if self.model.pelvis_point(kin)[1] < c.fall_pelvis_height {
            return Some(Status::Fall);
        }
        let feet = self.foot_coms(kin);
        if feet.iter().zip(initial_feet).any(|(f, f0)| (f[0] - f0[0]).abs() > c.foot_slide_max) {
            return Some(Status::FootSlide);
        }
        if feet.iter().zip(initial_feet).any(|(f, f0)| f[1] - f0[1] > c.foot_lift_max) {
            return Some(Status::FootLift);
        }
        if step >= c.episode_steps() {
            return Some(Status::Success);
        }
        None
    }

    /// Standing posture with both ankles at `ankle`, pelvis tilt opposite, feet
    /// on the ground and no motion.
    pub fn standing_state(&self, ankle: f64) -> SkeletonState {
        let q = standing_pose(&self.model, &self.ankles, ankle);
        SkeletonState { qdot: vec![0.0; q.len()], q, t: 0.0 }
    }
}

/// Lowest contact point height (sphere bottom).
fn lowest_contact(model: &SkeletonModel, kin: &Kinematics) -> Option<f64> {
    model
        .contact_spheres()
        .iter()
        .filter_map(|s| {
            let b = model.body_index(&s.body)?;
            Some(kin.point(b, s.offset)[1] - s.radius)
        })
        .reduce(f64::min)
}

/// Ankles at `ankle`, pelvis tilt `-ankle`, every other coordinate zero, root
/// placed so the feet rest on the ground. Floating models are lowered by the
/// static penetration of the touching spheres so the first step starts near
/// equilibrium.
fn standing_pose(model: &SkeletonModel, ankles: &[usize], ankle: f64) -> Vec<f64> {
    let mut q = vec![0.0; model.n_coords()];
    for &a in ankles {
        q[a] = ankle;
    }
    let Some([_, ty, tilt]) = model.planar_root() else {
        return q;
    };
    q[tilt] = -ankle;
    let mut q = plant::grounded(model, &q);
    let kin = Kinematics::compute(model, &q, &vec![0.0; q.len()]);
    if let Some(low) = lowest_contact(model, &kin) {
        let touching = model
            .contact_spheres()
            .iter()
            .filter(|s| {
                model
                    .body_index(&s.body)
                    .is_some_and(|b| kin.point(b, s.offset)[1] - s.radius < low + 1e-9)
            })
            .count();
        if touching > 0 {
            q[ty] -= model.total_mass() * model.gravity() / (model.contact_params().k_n * touching as f64);
        }
    }
    q
}

/// Ankle angle at which the whole-body COM sits above the mean foot COM with
/// straight legs, found by bracketing and bisection.
fn compute_target_ankle(model: &SkeletonModel, ankles: &[usize]) -> Result<f64> {
    let offset = |a: f64| {
        let q = standing_pose(model, ankles, a);
        let kin = Kinematics::compute(model, &q, &vec![0.0; q.len()]);
        let com = kin.whole_body_com(model).0[0];
        let feet = model.feet();
        com - feet.iter().map(|&f| kin.body_com(model, f)[0]).sum::<f64>() / feet.len() as f64
    };
    let (mut lo, mut hi) = (-0.5, 0.5);
    let (mut flo, fhi) = (offset(lo), offset(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::ModelConfig("no ankle angle in [-0.5, 0.5] rad places the COM over the feet".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = offset(mid);
        if fm == 0.0 || hi - lo < 1e-15 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Horizontal and vertical root coordinates, if any.
pub(crate) fn root_translation(model: &SkeletonModel) -> Option<[usize; 2]> {
    model.planar_root().map(|[x, y, _]| [x, y])
}
