//! Hill-type muscle with a rigid tendon.
//!
//! Fiber force is `F = s * f_max * (a * F_L(l) * F_V(v) + F_p(l)) * cos(pennation)` where `l`
//! is fiber length over optimal length, `v` the lengthening rate in optimal lengths per
//! `v_max` seconds, and `s` a strength multiplier used by the weakness scenarios.
//! Activation follows first-order excitation dynamics with asymmetric time constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the Gaussian active force-length curve.
pub const FL_WIDTH: f64 = 0.45;
/// Eccentric force plateau of the force-velocity curve.
pub const FV_ECCENTRIC_PLATEAU: f64 = 1.4;
/// Hill curvature of the concentric branch.
pub const FV_CURVATURE: f64 = 0.25;
/// Passive strain at which the passive force equals the isometric maximum.
pub const PASSIVE_STRAIN: f64 = 0.6;
/// Exponential shape factor of the passive curve.
pub const PASSIVE_SHAPE: f64 = 4.0;

/// Slope of F_V at zero velocity, shared by both branches.
const FV_SLOPE_AT_ZERO: f64 = 1.0 + 1.0 / FV_CURVATURE;
/// Eccentric hyperbola rate chosen so the two branches meet with matching slope.
const FV_ECCENTRIC_RATE: f64 = FV_SLOPE_AT_ZERO / (FV_ECCENTRIC_PLATEAU - 1.0);

pub const DEFAULT_TAU_ACT: f64 = 0.01;
pub const DEFAULT_TAU_DEACT: f64 = 0.04;
pub const DEFAULT_V_MAX: f64 = 10.0;

fn default_v_max() -> f64 {
    DEFAULT_V_MAX
}
fn default_tau_act() -> f64 {
    DEFAULT_TAU_ACT
}
fn default_tau_deact() -> f64 {
    DEFAULT_TAU_DEACT
}
fn default_strength() -> f64 {
    1.0
}

/// Per-muscle constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleParams {
    pub name: String,
    /// Maximum isometric fiber force, N.
    pub f_max: f64,
    /// Optimal fiber length, m.
    pub l_opt: f64,
    /// Pennation angle at optimal length, rad.
    pub pennation: f64,
    /// Maximum contraction velocity, optimal lengths per second.
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_tau_act")]
    pub tau_act: f64,
    #[serde(default = "default_tau_deact")]
    pub tau_deact: f64,
    #[serde(default = "default_strength")]
    pub strength_scale: f64,
}

impl MuscleParams {
    pub fn new(name: impl Into<String>, f_max: f64, l_opt: f64, pennation: f64) -> Self {
        Self {
            name: name.into(),
            f_max,
            l_opt,
            pennation,
            v_max: DEFAULT_V_MAX,
            tau_act: DEFAULT_TAU_ACT,
            tau_deact: DEFAULT_TAU_DEACT,
            strength_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ModelConfig(format!("muscle {}: {what}", self.name)));
        if !(self.f_max > 0.0) {
            return bad("f_max must be positive");
        }
        if !(self.l_opt > 0.0) {
            return bad("l_opt must be positive");
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.pennation) {
            return bad("pennation must lie in [0, pi/2)");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        if !(self.tau_act > 0.0 && self.tau_deact > 0.0) {
            return bad("time constants must be positive");
        }
        if !(0.0..=1.0).contains(&self.strength_scale) {
            return bad("strength_scale must lie in [0, 1]");
        }
        Ok(())
    }

    /// `strength_scale * f_max * cos(pennation)`, the force scale applied to both curves.
    pub fn effective_max_force(&self) -> f64 {
        self.strength_scale * self.f_max * self.pennation.cos()
    }
}

/// Dynamic state of one muscle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleState {
    pub activation: f64,
    pub excitation: f64,
    pub l_norm: f64,
    pub v_norm: f64,
}

impl MuscleState {
    pub fn at_rest(l_norm: f64) -> Self {
        Self {
            activation: 0.0,
            excitation: 0.0,
            l_norm,
            v_norm: 0.0,
        }
    }
}

fn check_length(l_norm: f64) -> Result<()> {
    if l_norm > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("normalized fiber length must be positive, got {l_norm}")))
    }
}

/// Gaussian active force-length multiplier, peaking at 1 for `l_norm = 1`.
pub fn active_force_length(l_norm: f64) -> Result<f64> {
    check_length(l_norm)?;
    let x = (l_norm - 1.0) / FL_WIDTH;
    Ok((-x * x).exp())
}

/// Derivative of [`active_force_length`] with respect to `l_norm`.
pub fn active_force_length_slope(l_norm: f64) -> f64 {
    let x = (l_norm - 1.0) / FL_WIDTH;
    -2.0 * x / FL_WIDTH * (-x * x).exp()
}

/// Force-velocity multiplier.
///
/// Concentric branch (`-1 <= v <= 0`) is the Hill hyperbola `(1 + v) / (1 - v / k)`;
/// the eccentric branch rises toward the plateau as `p - (p - 1) / (1 + c v)` with `c`
/// fixed by slope continuity at zero. Shortening faster than `v_max` gives zero force.
pub fn force_velocity(v_norm: f64) -> f64 {
    if v_norm <= -1.0 {
        0.0
    } else if v_norm <= 0.0 {
        (1.0 + v_norm) / (1.0 - v_norm / FV_CURVATURE)
    } else {
        FV_ECCENTRIC_PLATEAU - (FV_ECCENTRIC_PLATEAU - 1.0) / (1.0 + FV_ECCENTRIC_RATE * v_norm)
    }
}

/// Derivative of [`force_velocity`] with respect to `v_norm`.
pub fn force_velocity_slope(v_norm: f64) -> f64 {
    if v_norm <= -1.0 {
        0.0
    } else if v_norm <= 0.0 {
        let den = 1.0 - v_norm / FV_CURVATURE;
        (den + (1.0 + v_norm) / FV_CURVATURE) / (den * den)
    } else {
        let den = 1.0 + FV_ECCENTRIC_RATE * v_norm;
        (FV_ECCENTRIC_PLATEAU - 1.0) * FV_ECCENTRIC_RATE / (den * den)
    }
}

/// Exponential passive force-length multiplier; zero at or below optimal length.
pub fn passive_force(l_norm: f64) -> Result<f64> {
    check_length(l_norm)?;
    if l_norm <= 1.0 {
        return Ok(0.0);
    }
    let strain = (l_norm - 1.0) / PASSIVE_STRAIN;
    Ok(((PASSIVE_SHAPE * strain).exp() - 1.0) / (PASSIVE_SHAPE.exp() - 1.0))
}

/// Derivative of [`passive_force`] with respect to `l_norm`.
pub fn passive_force_slope(l_norm: f64) -> f64 {
    if l_norm <= 1.0 {
        return 0.0;
    }
    let strain = (l_norm - 1.0) / PASSIVE_STRAIN;
    PASSIVE_SHAPE / PASSIVE_STRAIN * (PASSIVE_SHAPE * strain).exp() / (PASSIVE_SHAPE.exp() - 1.0)
}

/// Affine decomposition of the fiber force at a fixed length and velocity:
/// `F(a) = per_activation * a + passive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceCoefficients {
    pub per_activation: f64,
    pub passive: f64,
    /// `dF / dv_norm` per unit activation.
    pub velocity_slope: f64,
    /// `dF / dl_norm` per unit activation and of the passive part.
    pub length_slope_active: f64,
    pub length_slope_passive: f64,
}

pub fn force_coefficients(params: &MuscleParams, l_norm: f64, v_norm: f64) -> Result<ForceCoefficients> {
    let fl = active_force_length(l_norm)?;
    let fp = passive_force(l_norm)?;
    let scale = params.effective_max_force();
    let fv = force_velocity(v_norm);
    Ok(ForceCoefficients {
        per_activation: scale * fl * fv,
        passive: scale * fp,
        velocity_slope: scale * fl * force_velocity_slope(v_norm),
        length_slope_active: scale * active_force_length_slope(l_norm) * fv,
        length_slope_passive: scale * passive_force_slope(l_norm),
    })
}

/// Fiber force along the tendon, N.
pub fn muscle_force(params: &MuscleParams, state: &MuscleState) -> Result<f64> {
    let c = force_coefficients(params, state.l_norm, state.v_norm)?;
    Ok(c.per_activation * state.activation + c.passive)
}

/// Activation/deactivation time constant for excitation `u` at activation `a`.
pub fn time_constant(u: f64, a: f64, tau_act: f64, tau_deact: f64) -> f64 {
    if u - a > 0.0 {
        tau_act * (0.5 + 1.5 * a)
    } else {
        tau_deact / (0.5 + 1.5 * a)
    }
}

/// One explicit Euler step of the excitation-activation dynamics; both inputs and
/// output are clamped to `[0, 1]`.
pub fn step_activation(params: &MuscleParams, a: f64, u: f64, dt: f64) -> f64 {
    let a = a.clamp(0.0, 1.0);
    let u = u.clamp(0.0, 1.0);
    let tau = time_constant(u, a, params.tau_act, params.tau_deact);
    (a + dt * (u - a) / tau).clamp(0.0, 1.0)
}
