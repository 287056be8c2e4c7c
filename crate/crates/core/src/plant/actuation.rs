//! Muscle path geometry, muscle-to-joint torque mapping and the stable PD law.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::muscle::{self, ForceCoefficients, MuscleState};

use super::model::SkeletonModel;

/// Stable PD gains used to turn desired joint angles into desired torques.
pub const PD_KP: f64 = 300.0;
pub const PD_KV: f64 = std::f64::consts::SQRT_2 * 300.0;

/// Normalized fiber length and lengthening rate of one muscle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberKinematics {
    pub l_norm: f64,
    pub v_norm: f64,
}

/// Path lengths are linear in the coordinates: `L = l0 - R (q - q_neutral)` with
/// `q_neutral = 0`, so `dL/dq = -R` exactly.
pub fn muscle_lengths(model: &SkeletonModel, q: &[f64], qdot: &[f64]) -> Result<Vec<FiberKinematics>> {
    let r = model.moment_arms();
    model
        .muscle_defs()
        .iter()
        .enumerate()
        .map(|(i, md)| {
            let row = r.row(i);
            let mut length = md.rest_length;
            let mut rate = 0.0;
            for (c, arm) in row.iter().enumerate() {
                if *arm != 0.0 {
                    length -= arm * q[c];
                    rate -= arm * qdot[c];
                }
            }
            let p = &md.params;
            let l_norm = length / p.l_opt;
            if !(l_norm > 0.0) {
                return Err(Error::ModelConfig(format!(
                    "muscle `{}` path length {length:.4} m is non-positive at this posture",
                    p.name
                )));
            }
            Ok(FiberKinematics { l_norm, v_norm: rate / (p.v_max * p.l_opt) })
        })
        .collect()
}

/// Affine map from activations to generalized torques at a fixed state:
/// `tau(a) = per_activation * a + passive`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueAffine {
    /// `R^T diag(dF/da)`, `n_coords x n_muscles`.
    pub per_activation: DMatrix<f64>,
    /// `R^T F(0)`.
    pub passive: DVector<f64>,
    /// Per-muscle force decomposition.
    pub coefficients: Vec<ForceCoefficients>,
    pub fibers: Vec<FiberKinematics>,
}

impl TorqueAffine {
    pub fn torques(&self, activations: &[f64]) -> DVector<f64> {
        &self.per_activation * DVector::from_column_slice(activations) + &self.passive
    }

    /// Per-muscle `dF/da` values.
    pub fn force_gains(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.per_activation).collect()
    }
}

pub fn torque_affine(model: &SkeletonModel, q: &[f64], qdot: &[f64]) -> Result<TorqueAffine> {
    let fibers = muscle_lengths(model, q, qdot)?;
    let coefficients = model
        .muscles()
        .zip(&fibers)
        .map(|(p, f)| muscle::force_coefficients(p, f.l_norm, f.v_norm))
        .collect::<Result<Vec<_>>>()?;
    let rt = model.moment_arms().transpose();
    let gains = DVector::from_iterator(coefficients.len(), coefficients.iter().map(|c| c.per_activation));
    let passive = DVector::from_iterator(coefficients.len(), coefficients.iter().map(|c| c.passive));
    let per_activation = &rt * DMatrix::from_diagonal(&gains);
    let passive = &rt * passive;
    Ok(TorqueAffine { per_activation, passive, coefficients, fibers })
}

/// Generalized torques `R^T F_M(a, q, qdot)`.
pub fn muscle_joint_torques(model: &SkeletonModel, activations: &[f64], q: &[f64], qdot: &[f64]) -> Result<DVector<f64>> {
    if activations.len() != model.n_muscles() {
        return Err(Error::Contract(format!(
            "expected {} activations, got {}",
            model.n_muscles(),
            activations.len()
        )));
    }
    Ok(torque_affine(model, q, qdot)?.torques(activations))
}

/// Muscle states (length, velocity, activation) in model muscle order.
pub fn muscle_states(model: &SkeletonModel, q: &[f64], qdot: &[f64], activations: &[f64], excitations: &[f64]) -> Result<Vec<MuscleState>> {
    Ok(muscle_lengths(model, q, qdot)?
        .into_iter()
        .zip(activations.iter().zip(excitations))
        .map(|(f, (&a, &u))| MuscleState { activation: a, excitation: u, l_norm: f.l_norm, v_norm: f.v_norm })
        .collect())
}

/// Stable PD: `-kp (q + dt qdot - q_desired) - kv qdot`, evaluated per actuated DOF.
pub fn stable_pd_torque(q: &[f64], qdot: &[f64], q_desired: &[f64], dt: f64) -> Vec<f64> {
    stable_pd_torque_with_gains(q, qdot, q_desired, dt, PD_KP, PD_KV)
}

pub fn stable_pd_torque_with_gains(q: &[f64], qdot: &[f64], q_desired: &[f64], dt: f64, kp: f64, kv: f64) -> Vec<f64> {
    q.iter()
        .zip(qdot)
        .zip(q_desired)
        .map(|((&q, &qd), &target)| -kp * (q + dt * qd - target) - kv * qd)
        .collect()
}
