//! Forward kinematics, point Jacobians and velocity-product accelerations.

use nalgebra::{DMatrix, DVector};

use super::model::{Attachment, ChainEntry, SkeletonModel, Vec2};

#[inline]
pub(crate) fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

#[inline]
fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

/// Poses and velocities of every body frame at a given `(q, qdot)`.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub origin: Vec<Vec2>,
    pub angle: Vec<f64>,
    pub origin_vel: Vec<Vec2>,
    pub omega: Vec<f64>,
    /// Origin acceleration with zero generalized acceleration (the `Jdot * qdot` term).
    pub origin_bias_acc: Vec<Vec2>,
}

impl Kinematics {
    pub fn compute(model: &SkeletonModel, q: &[f64], qdot: &[f64]) -> Self {
        let n = model.n_bodies();
        let mut k = Kinematics {
            origin: Vec::with_capacity(n),
            angle: Vec::with_capacity(n),
            origin_vel: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            origin_bias_acc: Vec::with_capacity(n),
        };
        for b in 0..n {
            let anchor = model.bodies()[b].joint.anchor;
            let (p_origin, p_angle, p_vel, p_omega, p_acc) = match model.parent[b] {
                Some(p) => (k.origin[p], k.angle[p], k.origin_vel[p], k.omega[p], k.origin_bias_acc[p]),
                None => ([0.0, 0.0], 0.0, [0.0, 0.0], 0.0, [0.0, 0.0]),
            };
            let arm = rotate(anchor, p_angle);
            let joint_pos = add(p_origin, arm);
            let joint_vel = add(p_vel, scale(perp(arm), p_omega));
            let joint_acc = sub(p_acc, scale(arm, p_omega * p_omega));
            let (origin, angle, vel, omega, acc) = match model.attachment[b] {
                Attachment::Planar { x, y, tilt } => {
                    ([q[x], q[y]], q[tilt], [qdot[x], qdot[y]], qdot[tilt], [0.0, 0.0])
                }
                Attachment::Revolute { coord, direction } => (
                    joint_pos,
                    p_angle + direction * q[coord],
                    joint_vel,
                    p_omega + direction * qdot[coord],
                    joint_acc,
                ),
                Attachment::Fixed { angle } => (joint_pos, p_angle + angle, joint_vel, p_omega, joint_acc),
            };
            k.origin.push(origin);
            k.angle.push(angle);
            k.origin_vel.push(vel);
            k.omega.push(omega);
            k.origin_bias_acc.push(acc);
        }
        k
    }

    /// World position of a body-fixed point.
    pub fn point(&self, body: usize, local: Vec2) -> Vec2 {
        add(self.origin[body], rotate(local, self.angle[body]))
    }

    pub fn point_velocity(&self, body: usize, local: Vec2) -> Vec2 {
        let r = rotate(local, self.angle[body]);
        add(self.origin_vel[body], scale(perp(r), self.omega[body]))
    }

    pub fn point_bias_acc(&self, body: usize, local: Vec2) -> Vec2 {
        let r = rotate(local, self.angle[body]);
        let w = self.omega[body];
        sub(self.origin_bias_acc[body], scale(r, w * w))
    }

    /// Linear Jacobian (2 x n_coords) of a point given in world coordinates but
    /// rigidly attached to `body`.
    pub fn world_point_jacobian(&self, model: &SkeletonModel, body: usize, p: Vec2) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, model.n_coords());
        for entry in &model.chains[body] {
            match *entry {
                ChainEntry::Tx(c) => j[(0, c)] += 1.0,
                ChainEntry::Ty(c) => j[(1, c)] += 1.0,
                ChainEntry::Rot { coord, pivot, direction } => {
                    let d = perp(sub(p, self.origin[pivot]));
                    j[(0, coord)] += direction * d[0];
                    j[(1, coord)] += direction * d[1];
                }
            }
        }
        j
    }

    pub fn point_jacobian(&self, model: &SkeletonModel, body: usize, local: Vec2) -> DMatrix<f64> {
        self.world_point_jacobian(model, body, self.point(body, local))
    }

    /// Angular-velocity Jacobian (1 x n_coords); constant for planar chains.
    pub fn angular_jacobian(&self, model: &SkeletonModel, body: usize) -> DVector<f64> {
        let mut j = DVector::zeros(model.n_coords());
        for entry in &model.chains[body] {
            if let ChainEntry::Rot { coord, direction, .. } = *entry {
                j[coord] += direction;
            }
        }
        j
    }

    pub fn body_com(&self, model: &SkeletonModel, body: usize) -> Vec2 {
        self.point(body, model.bodies()[body].com)
    }

    pub fn body_com_velocity(&self, model: &SkeletonModel, body: usize) -> Vec2 {
        self.point_velocity(body, model.bodies()[body].com)
    }

    /// Whole-body center of mass and its velocity.
    pub fn whole_body_com(&self, model: &SkeletonModel) -> (Vec2, Vec2) {
        let mut m = 0.0;
        let mut p = [0.0, 0.0];
        let mut v = [0.0, 0.0];
        for (b, body) in model.bodies().iter().enumerate() {
            let c = self.point(b, body.com);
            let cv = self.point_velocity(b, body.com);
            m += body.mass;
            p = add(p, scale(c, body.mass));
            v = add(v, scale(cv, body.mass));
        }
        (scale(p, 1.0 / m), scale(v, 1.0 / m))
    }
}

#[inline]
fn scale(v: Vec2, s: f64) -> Vec2 {
    [v[0] * s, v[1] * s]
}
