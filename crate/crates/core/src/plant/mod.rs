//! Planar articulated skeleton: model definition, kinematics, joint-space
//! dynamics, penalty ground contact and muscle actuation.

mod actuation;
mod contact;
mod dynamics;
mod kinematics;
mod model;
pub mod presets;

pub use actuation::{
    muscle_joint_torques, muscle_lengths, muscle_states, stable_pd_torque, stable_pd_torque_with_gains, torque_affine,
    FiberKinematics, TorqueAffine, PD_KP, PD_KV,
};
pub use contact::{contact_forces, ContactForces, ContactParams};
pub use dynamics::{bias_forces, mass_matrix, step, step_with, total_energy, StepExtras, StepReport};
pub use kinematics::Kinematics;
pub use model::{
    BodyDef, ContactSphere, CoordKind, Coordinate, JointDef, JointKind, ModelDef, ModelRoles, MuscleDef, PointRef,
    Side, SkeletonModel, Vec2, MODEL_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

/// Generalized coordinates and velocities in model coordinate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub t: f64,
}

impl SkeletonState {
    pub fn zeros(model: &SkeletonModel) -> Self {
        let n = model.n_coords();
        Self { q: vec![0.0; n], qdot: vec![0.0; n], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.qdot).all(|x| x.is_finite())
    }

    pub fn kinematics(&self, model: &SkeletonModel) -> Kinematics {
        Kinematics::compute(model, &self.q, &self.qdot)
    }
}

impl SkeletonModel {
    /// World position of the pelvis reference point.
    pub fn pelvis_point(&self, kin: &Kinematics) -> Vec2 {
        kin.point(self.pelvis_point.body, self.pelvis_point.offset)
    }

    pub fn head_point(&self, kin: &Kinematics) -> Vec2 {
        kin.point(self.head_point.body, self.head_point.offset)
    }

    /// Ankle (foot origin) positions.
    pub fn ankle_points(&self, kin: &Kinematics) -> Vec<Vec2> {
        self.feet.iter().map(|&f| kin.origin[f]).collect()
    }

    /// Horizontal extent `[min, max]` of the contact spheres relative to the
    /// ankle of the first foot, along the foot's local x axis.
    pub fn support_range(&self) -> Option<[f64; 2]> {
        let foot = *self.feet.first()?;
        let xs: Vec<f64> = self.spheres.iter().filter(|s| s.body == foot).map(|s| s.offset[0]).collect();
        if xs.is_empty() {
            return None;
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some([lo, hi])
    }
}

/// Shifts the planar root of `q` so the first foot's ankle sits at `x = 0` and
/// the lowest contact sphere just touches the ground. Fixed-base models are
/// returned unchanged.
pub fn grounded(model: &SkeletonModel, q: &[f64]) -> Vec<f64> {
    let mut q = q.to_vec();
    let Some([tx, ty, _]) = model.planar_root() else {
        return q;
    };
    let zeros = vec![0.0; q.len()];
    let kin = Kinematics::compute(model, &q, &zeros);
    let ankle = kin.origin[model.feet[0]];
    let lowest = model
        .spheres
        .iter()
        .map(|s| kin.point(s.body, s.offset)[1] - s.radius)
        .fold(f64::INFINITY, f64::min);
    q[tx] -= ankle[0];
    if lowest.is_finite() {
        q[ty] -= lowest;
    }
    q
}
