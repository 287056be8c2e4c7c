//! Penalty ground contact (ground plane at y = 0) with regularized Coulomb friction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kinematics::Kinematics;
use super::model::{SkeletonModel, Vec2};
use super::SkeletonState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub k_n: f64,
    /// Normal damping, N s/m.
    pub k_d: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Slip speed at which friction saturates, m/s.
    #[serde(default = "default_slip")]
    pub slip_velocity: f64,
}

fn default_slip() -> f64 {
    1e-3
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { k_n: 3e4, k_d: 1e3, mu: 0.8, slip_velocity: default_slip() }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_n > 0.0 && self.k_d >= 0.0 && self.mu > 0.0 && self.slip_velocity > 0.0 {
            Ok(())
        } else {
            Err(Error::ModelConfig(format!("invalid contact parameters {self:?}")))
        }
    }
}

/// Per-sphere ground reaction and center of pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForces {
    /// World-frame force on each sphere, in model sphere order.
    pub forces: Vec<Vec2>,
    /// Contact point (lowest point of each sphere).
    pub points: Vec<Vec2>,
    pub total_normal: f64,
    /// Force-weighted mean contact x; `None` when nothing touches the ground.
    pub cop_x: Option<f64>,
}

/// Contact forces plus their generalized-coordinate linearization for the
/// implicit integrator.
pub(crate) struct ContactEval {
    pub forces: ContactForces,
    pub generalized: DVector<f64>,
    /// `-d(generalized)/d(qdot)`.
    pub damping: DMatrix<f64>,
    /// `-d(generalized)/d(q)`, normal springs only.
    pub stiffness: DMatrix<f64>,
}

pub(crate) fn evaluate(model: &SkeletonModel, kin: &Kinematics, params: &ContactParams) -> ContactEval {
    let n = model.n_coords();
    let mut generalized = DVector::zeros(n);
    let mut damping = DMatrix::zeros(n, n);
    let mut stiffness = DMatrix::zeros(n, n);
    let mut forces = Vec::with_capacity(model.spheres.len());
    let mut points = Vec::with_capacity(model.spheres.len());
    let mut total_normal = 0.0;
    let mut cop_moment = 0.0;

    for s in &model.spheres {
        let center = kin.point(s.body, s.offset);
        let contact = [center[0], center[1] - s.radius];
        points.push(contact);
        let penetration = -contact[1];
        if penetration <= 0.0 {
            forces.push([0.0, 0.0]);
            continue;
        }
        let jac = kin.world_point_jacobian(model, s.body, contact);
        let vel = kin.point_velocity(s.body, rotate_back(kin, s.body, contact));
        let normal = params.k_n * penetration - params.k_d * vel[1];
        if normal <= 0.0 {
            forces.push([0.0, 0.0]);
            continue;
        }
        let ratio = vel[0] / params.slip_velocity;
        let tangential = -params.mu * normal * ratio.clamp(-1.0, 1.0);
        let f = [tangential, normal];
        forces.push(f);
        total_normal += normal;
        cop_moment += normal * contact[0];

        let jx = jac.row(0);
        let jy = jac.row(1);
        generalized += jx.transpose() * f[0] + jy.transpose() * f[1];
        damping += jy.transpose() * jy * params.k_d;
        stiffness += jy.transpose() * jy * params.k_n;
        if ratio.abs() < 1.0 {
            damping += jx.transpose() * jx * (params.mu * normal / params.slip_velocity);
        }
    }

    let cop_x = (total_normal > 0.0).then(|| cop_moment / total_normal);
    ContactEval {
        forces: ContactForces { forces, points, total_normal, cop_x },
        generalized,
        damping,
        stiffness,
    }
}

/// Body-frame coordinates of a world point attached to `body`.
fn rotate_back(kin: &Kinematics, body: usize, p: Vec2) -> Vec2 {
    let d = [p[0] - kin.origin[body][0], p[1] - kin.origin[body][1]];
    super::kinematics::rotate(d, -kin.angle[body])
}

pub fn contact_forces(model: &SkeletonModel, state: &SkeletonState, params: &ContactParams) -> ContactForces {
    let kin = Kinematics::compute(model, &state.q, &state.qdot);
    evaluate(model, &kin, params).forces
}
