//! Reference state initialization: random ankle angle and velocity with the
//! feet held level and motionless.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{root_translation, Env};
use crate::error::{Error, Result};
use crate::plant::SkeletonState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsiConfig {
    /// Mean ankle angle, rad; the target ankle angle when absent.
    pub mu_p: Option<f64>,
    pub sigma_p: f64,
    /// Velocity mean is `slope * mu_p`, rad/s.
    pub slope: f64,
    pub sigma_v: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub gd_step: f64,
    /// Draws allowed before giving up on a non-converging sample.
    pub max_attempts: usize,
}

impl Default for RsiConfig {
    fn default() -> Self {
        Self {
            mu_p: None,
            sigma_p: 0.1,
            slope: 0.0,
            sigma_v: 0.0,
            tolerance: 1e-8,
            max_iter: 100,
            gd_step: 0.25,
            max_attempts: 10,
        }
    }
}

impl RsiConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_p >= 0.0
            && self.sigma_v >= 0.0
            && self.tolerance > 0.0
            && self.max_iter > 0
            && self.gd_step > 0.0
            && self.max_attempts > 0
            && self.slope.is_finite()
            && self.mu_p.is_none_or(f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid initial-state randomization {self:?}")))
        }
    }
}

/// One initial state with its sampling diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RsiSample {
    pub state: SkeletonState,
    pub ankle: f64,
    pub ankle_velocity: f64,
    /// Gradient-descent iterations performed (0 when already converged).
    pub iterations: usize,
    /// Final `sum |v_footCOM|^2`.
    pub residual: f64,
    pub converged: bool,
}

impl Env {
    /// Draws ankle angle and velocity, then builds the consistent whole-body
    /// state. Non-converging draws are rejected and redrawn.
    pub fn randomize_initial_state<R: Rng + ?Sized>(&self, rsi: &RsiConfig, rng: &mut R) -> Result<RsiSample> {
        rsi.validate()?;
        let mu_p = rsi.mu_p.unwrap_or(self.target_ankle);
        let pos = Normal::new(mu_p, rsi.sigma_p).map_err(|e| Error::Config(e.to_string()))?;
        let vel = Normal::new(rsi.slope * mu_p, rsi.sigma_v).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..rsi.max_attempts {
            let ankle = pos.sample(rng);
            let ankle_velocity = vel.sample(rng);
            let sample = self.initial_state(ankle, ankle_velocity, rsi)?;
            if sample.converged {
                return Ok(sample);
            }
        }
        Err(Error::Numeric(format!(
            "initial state randomization did not converge in {} attempts",
            rsi.max_attempts
        )))
    }

    /// Deterministic part of the randomization for a given ankle angle and
    /// velocity. The pelvis translational velocity is found by gradient descent
    /// on the squared foot-COM speeds.
    pub fn initial_state(&self, ankle: f64, ankle_velocity: f64, rsi: &RsiConfig) -> Result<RsiSample> {
        if !(ankle.is_finite() && ankle_velocity.is_finite()) {
            return Err(Error::Domain("initial ankle state must be finite".into()));
        }
        let mut state = self.standing_state(ankle);
        for &a in &self.ankles {
            state.qdot[a] = ankle_velocity;
        }
        let Some([tx, ty]) = root_translation(&self.model) else {
            return Ok(RsiSample { state, ankle, ankle_velocity, iterations: 0, residual: 0.0, converged: true });
        };
        let [_, _, tilt] = self.model.planar_root().unwrap();
        state.qdot[tilt] = -ankle_velocity;

        let feet = self.model.feet();
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        for _ in 0..rsi.max_iter {
            let kin = state.kinematics(&self.model);
            let mut error = 0.0;
            let mut delta = [0.0, 0.0];
            for &f in feet {
                let com = self.model.bodies()[f].com;
                let v = kin.point_velocity(f, com);
                error += v[0] * v[0] + v[1] * v[1];
                let jac = kin.point_jacobian(&self.model, f, com);
                for (k, &c) in [tx, ty].iter().enumerate() {
                    delta[k] -= 2.0 * rsi.gd_step * (jac[(0, c)] * v[0] + jac[(1, c)] * v[1]);
                }
            }
            residual = error;
            if error < rsi.tolerance {
                break;
            }
            state.qdot[tx] += delta[0];
            state.qdot[ty] += delta[1];
            iterations += 1;
        }
        if residual >= rsi.tolerance {
            let kin = state.kinematics(&self.model);
            residual = feet
                .iter()
                .map(|&f| {
                    let v = kin.point_velocity(f, self.model.bodies()[f].com);
                    v[0] * v[0] + v[1] * v[1]
                })
                .sum();
        }
        let converged = residual < rsi.tolerance;
        Ok(RsiSample { state, ankle, ankle_velocity, iterations, residual, converged })
    }
}
