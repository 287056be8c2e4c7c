//! Joint-space equations of motion `M(q) qdd + c(q, qd) = tau` and the integrator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::actuation::torque_affine;
use super::contact::{self, ContactParams};
use super::kinematics::Kinematics;
use super::model::SkeletonModel;
use super::SkeletonState;

pub fn mass_matrix(model: &SkeletonModel, q: &[f64]) -> DMatrix<f64> {
    let zeros = vec![0.0; q.len()];
    let kin = Kinematics::compute(model, q, &zeros);
    mass_matrix_from(model, &kin)
}

pub(crate) fn mass_matrix_from(model: &SkeletonModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.n_coords();
    let mut m = DMatrix::zeros(n, n);
    for (b, body) in model.bodies().iter().enumerate() {
        let jv = kin.point_jacobian(model, b, body.com);
        let jw = kin.angular_jacobian(model, b);
        m += jv.transpose() * &jv * body.mass;
        m += &jw * jw.transpose() * body.inertia;
    }
    m
}

/// Coriolis/centrifugal plus gravity generalized forces.
pub fn bias_forces(model: &SkeletonModel, q: &[f64], qdot: &[f64]) -> DVector<f64> {
    let kin = Kinematics::compute(model, q, qdot);
    bias_forces_from(model, &kin)
}

pub(crate) fn bias_forces_from(model: &SkeletonModel, kin: &Kinematics) -> DVector<f64> {
    let n = model.n_coords();
    let g = model.gravity();
    let mut c = DVector::zeros(n);
    for (b, body) in model.bodies().iter().enumerate() {
        let jv = kin.point_jacobian(model, b, body.com);
        let acc = kin.point_bias_acc(b, body.com);
        // angular velocity-product term vanishes in the plane
        let f = nalgebra::Vector2::new(body.mass * acc[0], body.mass * (acc[1] + g));
        c += jv.transpose() * f;
    }
    c
}

/// Optional inputs beyond muscle activations, mainly for tests and analysis.
#[derive(Debug, Clone, Default)]
pub struct StepExtras {
    /// Additional generalized forces applied directly to the coordinates.
    pub generalized_force: Option<DVector<f64>>,
    /// Disable ground contact entirely.
    pub no_contact: bool,
}

/// Diagnostics from one integration step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: SkeletonState,
    pub contact: contact::ContactForces,
    pub muscle_forces: Vec<f64>,
}

/// Advances one step of length `dt` with the given muscle activations.
pub fn step(model: &SkeletonModel, state: &SkeletonState, activations: &[f64], params: &ContactParams, dt: f64) -> Result<SkeletonState> {
    Ok(step_with(model, state, activations, params, dt, &StepExtras::default())?.state)
}

/// Linearly implicit Euler: contact springs, contact damping, friction, muscle
/// path stiffness and force-velocity damping are treated implicitly, everything
/// else explicitly; velocities are updated first and positions use the new
/// velocities.
pub fn step_with(
    model: &SkeletonModel,
    state: &SkeletonState,
    activations: &[f64],
    params: &ContactParams,
    dt: f64,
    extras: &StepExtras,
) -> Result<StepReport> {
    let n = model.n_coords();
    if state.q.len() != n || state.qdot.len() != n {
        return Err(Error::Contract(format!("state has wrong dimension (expected {n})")));
    }
    if activations.len() != model.n_muscles() {
        return Err(Error::Contract(format!("expected {} activations", model.n_muscles())));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let kin = Kinematics::compute(model, &state.q, &state.qdot);
    let mass = mass_matrix_from(model, &kin);
    let bias = bias_forces_from(model, &kin);

    let mut force = -bias;
    let mut damping = DMatrix::zeros(n, n);
    let mut stiffness = DMatrix::zeros(n, n);

    let mut muscle_forces = Vec::new();
    if model.n_muscles() > 0 {
        let affine = torque_affine(model, &state.q, &state.qdot)?;
        force += affine.torques(activations);
        let arms = model.moment_arms();
        for (i, (c, p)) in affine.coefficients.iter().zip(model.muscles()).enumerate() {
            let a = activations[i].clamp(0.0, 1.0);
            muscle_forces.push(c.per_activation * a + c.passive);
            let row = arms.row(i);
            let slope = c.velocity_slope * a / (p.v_max * p.l_opt);
            if slope > 0.0 {
                damping += row.transpose() * row * slope;
            }
            // only the stabilizing part of the path stiffness goes into the implicit solve
            let k = (c.length_slope_active * a + c.length_slope_passive) / p.l_opt;
            if k > 0.0 {
                stiffness += row.transpose() * row * k;
            }
        }
    }

    let contact = if extras.no_contact {
        contact::ContactForces { forces: vec![], points: vec![], total_normal: 0.0, cop_x: None }
    } else {
        let eval = contact::evaluate(model, &kin, params);
        force += &eval.generalized;
        damping += &eval.damping;
        stiffness += &eval.stiffness;
        eval.forces
    };
    if let Some(extra) = &extras.generalized_force {
        force += extra;
    }

    let free = model.free_coords();
    let nf = free.len();
    let qd = DVector::from_iterator(nf, free.iter().map(|&i| state.qdot[i]));
    let mut lhs = DMatrix::zeros(nf, nf);
    let mut k_free = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        rhs[a] = force[i];
        for (b, &j) in free.iter().enumerate() {
            lhs[(a, b)] = mass[(i, j)] + dt * damping[(i, j)] + dt * dt * stiffness[(i, j)];
            k_free[(a, b)] = stiffness[(i, j)];
        }
    }
    let rhs = (rhs - k_free * &qd * dt) * dt;
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::Numeric("system matrix is not positive definite".into()))?;
    let dv = chol.solve(&rhs);

    let mut v: Vec<f64> = free.iter().enumerate().map(|(a, &i)| state.qdot[i] + dv[a]).collect();
    // Joint limits act as impulsive constraints: for every coordinate that would
    // leave its range, an impulse on that coordinate alone cancels the outward
    // velocity. The impulse goes through the same system matrix, so it is internal
    // and leaves the root momentum untouched.
    let limits: Vec<Option<[f64; 2]>> = free.iter().map(|&i| model.coords()[i].limits).collect();
    let mut clamped: Vec<Option<f64>> = vec![None; nf];
    for _ in 0..nf {
        let mut changed = false;
        for a in 0..nf {
            if clamped[a].is_some() {
                continue;
            }
            if let Some([lo, hi]) = limits[a] {
                let q_new = state.q[free[a]] + dt * v[a];
                if (q_new < lo && v[a] < 0.0) || (q_new > hi && v[a] > 0.0) {
                    clamped[a] = Some(if q_new < lo { lo } else { hi });
                    changed = true;
                } else if q_new < lo || q_new > hi {
                    clamped[a] = Some(q_new.clamp(lo, hi));
                }
            }
        }
        if !changed {
            break;
        }
        let active: Vec<usize> = (0..nf).filter(|&a| clamped[a].is_some()).collect();
        let inv_cols: Vec<DVector<f64>> = active
            .iter()
            .map(|&a| {
                let mut e = DVector::zeros(nf);
                e[a] = 1.0;
                chol.solve(&e)
            })
            .collect();
        let k = active.len();
        let schur = DMatrix::from_fn(k, k, |r, c| inv_cols[c][active[r]]);
        let target = DVector::from_iterator(
            k,
            active.iter().map(|&a| {
                let [lo, hi] = limits[a].unwrap();
                let q_new = state.q[free[a]] + dt * v[a];
                // only cancel motion that points out of the range
                if (q_new <= lo && v[a] < 0.0) || (q_new >= hi && v[a] > 0.0) {
                    -v[a]
                } else {
                    0.0
                }
            }),
        );
        let Some(lambda) = schur.cholesky().map(|c| c.solve(&target)) else {
            break;
        };
        for (col, l) in inv_cols.iter().zip(lambda.iter()) {
            for a in 0..nf {
                v[a] += col[a] * l;
            }
        }
    }

    let mut next = state.clone();
    for (a, &i) in free.iter().enumerate() {
        next.qdot[i] = v[a];
        next.q[i] = clamped[a].unwrap_or(state.q[i] + dt * v[a]);
        if let (Some([lo, hi]), Some(_)) = (limits[a], clamped[a]) {
            if next.q[i] <= lo {
                next.qdot[i] = next.qdot[i].max(0.0);
            } else if next.q[i] >= hi {
                next.qdot[i] = next.qdot[i].min(0.0);
            }
        }
    }
    for (i, c) in model.coords().iter().enumerate() {
        if c.locked {
            next.qdot[i] = 0.0;
        }
    }
    next.t = state.t + dt;
    if !next.is_finite() {
        return Err(Error::Numeric(format!("non-finite state at t = {:.4}", next.t)));
    }
    Ok(StepReport { state: next, contact, muscle_forces })
}

/// Kinetic plus gravitational potential energy.
pub fn total_energy(model: &SkeletonModel, state: &SkeletonState) -> f64 {
    let kin = Kinematics::compute(model, &state.q, &state.qdot);
    let mut e = 0.0;
    for (b, body) in model.bodies().iter().enumerate() {
        let c = kin.point(b, body.com);
        let v = kin.point_velocity(b, body.com);
        e += 0.5 * body.mass * (v[0] * v[0] + v[1] * v[1]);
        e += 0.5 * body.inertia * kin.omega[b] * kin.omega[b];
        e += body.mass * model.gravity() * c[1];
    }
    e
}
