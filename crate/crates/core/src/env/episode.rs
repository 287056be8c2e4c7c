//! Dual-rate episode execution and episode traces.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ComState, Env, RewardComponents, Status};
use crate::error::{Error, Result};
use crate::muscle;
use crate::nnet::{self, Network};
use crate::plant::{self, SkeletonState};
use crate::rl::McnSample;

/// Control policy network plus muscle coordination network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub cpn: Network,
    pub mcn: Network,
}

/// What to collect while running an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    /// Sample actions from the Gaussian policy; otherwise use its mean.
    pub explore: bool,
    /// Keep every n-th simulation step as a muscle-network sample (0 disables).
    pub mcn_stride: usize,
}

impl RolloutOptions {
    pub const EVALUATE: Self = Self { explore: false, mcn_stride: 0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: Status,
    /// The episode ended because the integrator produced a non-finite state.
    pub numeric_failure: bool,
    pub initial: ComState,
    /// Policy-tick times, s.
    pub times: Vec<f64>,
    /// COM state at each policy tick.
    pub com: Vec<ComState>,
    /// Actuated joint angles at each policy tick.
    pub joint_angles: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    /// Reward earned over each policy tick.
    pub rewards: Vec<RewardComponents>,
    pub final_q: Vec<f64>,
    pub total_reward: f64,
    /// Simulated time at termination, s.
    pub duration: f64,
}

impl EpisodeOutcome {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }
}

/// Full result of one episode: outcome plus training data.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub outcome: EpisodeOutcome,
    pub transitions: Vec<Transition>,
    /// Observation after the last transition.
    pub final_observation: Vec<f64>,
    /// True when the episode ended on a failure (no bootstrap value).
    pub terminal: bool,
    pub mcn_samples: Vec<McnSample>,
}

impl Env {
    /// Runs one episode from `initial`. Every policy tick observes the state and
    /// picks desired joint angles; every simulation step turns them into stable
    /// PD torques, asks the muscle network for excitations, advances activation
    /// dynamics and steps the plant. The first excitation is used directly as
    /// the initial activation.
    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        policy: &Policy,
        initial: &SkeletonState,
        options: RolloutOptions,
        rng: &mut R,
    ) -> Result<EpisodeRecord> {
        let model = &self.model;
        if policy.cpn.spec.n_inputs() != self.observation_dim() || policy.cpn.spec.n_outputs() != self.n_actions() {
            return Err(Error::Contract("control network does not match the environment".into()));
        }
        if policy.mcn.spec.n_inputs() != self.mcn_input_dim() || policy.mcn.spec.n_outputs() != model.n_muscles() {
            return Err(Error::Contract("muscle network does not match the environment".into()));
        }
        let actuated = model.actuated_coords();
        let n_act = actuated.len();
        let dt = self.config.sim_dt();
        let substeps = self.config.substeps();
        let scale = self.config.mcn_torque_scale;
        let contact = model.contact_params().clone();

        let mut state = initial.clone();
        state.t = 0.0;
        let kin0 = state.kinematics(model);
        let initial_feet = self.foot_coms(&kin0);
        let initial_com = self.com_state(&kin0);

        let mut out = EpisodeOutcome {
            status: Status::Success,
            numeric_failure: false,
            initial: initial_com,
            times: Vec::new(),
            com: Vec::new(),
            joint_angles: Vec::new(),
            activations: Vec::new(),
            rewards: Vec::new(),
            final_q: Vec::new(),
            total_reward: 0.0,
            duration: 0.0,
        };
        let mut transitions = Vec::new();
        let mut mcn_samples = Vec::new();
        let mut activation = vec![0.0; model.n_muscles()];
        let mut started = false;
        let mut sim_step = 0usize;
        let mut status = None;
        let mut observation;

        loop {
            let kin = state.kinematics(model);
            observation = self.observe(&kin);
            if status.is_some() {
                break;
            }
            out.times.push(sim_step as f64 * dt);
            out.com.push(self.com_state(&kin));
            out.joint_angles.push(actuated.iter().map(|&c| state.q[c]).collect());
            out.activations.push(activation.clone());

            let mean = policy.cpn.forward(&observation)?;
            let (action, log_prob) = if options.explore {
                nnet::gaussian_sample(&mean, policy.cpn.log_std(), rng)
            } else {
                let lp = nnet::gaussian_log_prob(&mean, policy.cpn.log_std(), &mean);
                (mean, lp)
            };
            let desired = self.desired_angles(&action)?;
            let mut tau = vec![0.0; n_act];

            for _ in 0..substeps {
                let q_act: Vec<f64> = actuated.iter().map(|&c| state.q[c]).collect();
                let qd_act: Vec<f64> = actuated.iter().map(|&c| state.qdot[c]).collect();
                tau = plant::stable_pd_torque(&q_act, &qd_act, &desired, dt);
                let affine = plant::torque_affine(model, &state.q, &state.qdot)?;
                let mut input: Vec<f64> = tau.iter().map(|t| t / scale).collect();
                for (f, a) in affine.fibers.iter().zip(&activation) {
                    input.extend_from_slice(&[f.l_norm, f.v_norm, *a]);
                }
                let excitation = policy.mcn.forward(&input)?;
                if started {
                    for ((a, &u), p) in activation.iter_mut().zip(&excitation).zip(model.muscles()) {
                        *a = muscle::step_activation(p, *a, u, dt);
                    }
                } else {
                    for (a, &u) in activation.iter_mut().zip(&excitation) {
                        *a = u.clamp(0.0, 1.0);
                    }
                    started = true;
                }
                if options.mcn_stride > 0 && sim_step % options.mcn_stride == 0 {
                    mcn_samples.push(McnSample {
                        input,
                        tau_desired: DVector::from_vec(tau.clone()),
                        per_activation: affine.per_activation.select_rows(actuated),
                        passive: affine.passive.select_rows(actuated),
                    });
                }
                match plant::step(model, &state, &activation, &contact, dt) {
                    Ok(next) => state = next,
                    Err(Error::Numeric(_)) => {
                        out.numeric_failure = true;
                        status = Some(Status::Fall);
                        break;
                    }
                    Err(e) => return Err(e),
                }
                sim_step += 1;
                let kin = state.kinematics(model);
                status = self.check_termination(&kin, &initial_feet, sim_step);
                if status.is_some() {
                    break;
                }
            }

            let reward = if out.numeric_failure {
                RewardComponents::default()
            } else {
                self.reward(&state.kinematics(model), &state.q, &tau)
            };
            out.total_reward += reward.total;
            out.rewards.push(reward);
            transitions.push(Transition { observation: observation.clone(), action, log_prob, reward: reward.total });
        }

        let status = status.unwrap_or(Status::Success);
        out.status = status;
        out.final_q = state.q.clone();
        out.duration = sim_step as f64 * dt;
        Ok(EpisodeRecord {
            outcome: out,
            transitions,
            final_observation: observation,
            terminal: status != Status::Success,
            mcn_samples,
        })
    }
}

/// Writes one row per policy tick: time, COM state, joint angles, activations,
/// reward terms and the final status.
pub fn write_trace(path: impl AsRef<Path>, env: &Env, outcome: &EpisodeOutcome) -> Result<()> {
    let model = &env.model;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "com_x".into(), "com_vx".into()];
    header.extend(model.actuated_coords().iter().map(|&c| model.coords()[c].name.clone()));
    header.extend(model.muscles().map(|m| format!("a_{}", m.name)));
    header.extend(["r_posture", "r_torque", "r_upright", "r_xcom", "r_total", "status"].map(String::from));
    w.write_record(&header)?;
    for k in 0..outcome.times.len() {
        let r = outcome.rewards.get(k).copied().unwrap_or_default();
        let mut row = vec![outcome.times[k].to_string(), outcome.com[k].x.to_string(), outcome.com[k].v.to_string()];
        row.extend(outcome.joint_angles[k].iter().map(|v| v.to_string()));
        row.extend(outcome.activations[k].iter().map(|v| v.to_string()));
        row.extend([r.posture, r.torque, r.upright, r.xcom, r.total].map(|v| v.to_string()));
        row.push(if k + 1 == outcome.times.len() { outcome.status.as_str().into() } else { "running".into() });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
