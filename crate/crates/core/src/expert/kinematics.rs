//! Forward kinematics, analytic Jacobian and damped-least-squares IK.

use nalgebra::{Matrix3, Matrix3x4, Vector4};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::sim::robot::{
    clamp_joints, tip_position, BasePose, Joints, JOINT_LOWER, JOINT_UPPER, LINKS, MAX_REACH,
    SHOULDER_FORWARD, SHOULDER_HEIGHT, TORSO,
};

/// Gripper tip in world coordinates.
pub fn fk(joints: &Joints, base: &BasePose) -> Vec3 {
    tip_position(joints, base)
}

/// d(tip)/d(torso, q1, q2, q3).
pub fn jacobian(joints: &Joints, base: &BasePose) -> Matrix3x4<f64> {
    let heading = base.heading();
    let mut phi = [0.0; 3];
    let mut acc = 0.0;
    for k in 0..3 {
        acc += joints[1 + k];
        phi[k] = acc;
    }
    let mut j = Matrix3x4::zeros();
    j[(2, 0)] = 1.0;
    for col in 0..3 {
        let mut dr = 0.0;
        let mut dz = 0.0;
        for k in col..3 {
            dr -= LINKS[k] * phi[k].sin();
            dz += LINKS[k] * phi[k].cos();
        }
        j[(0, col + 1)] = heading.x * dr;
        j[(1, col + 1)] = heading.y * dr;
        j[(2, col + 1)] = dz;
    }
    j
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkParams {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Extra distance allowed beyond the fully stretched chain before a
    /// target is declared unreachable.
    pub reach_slack: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            tol: 1e-3,
            max_iter: 100,
            damping: 0.1,
            reach_slack: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkSolution {
    pub joints: Joints,
    pub iterations: usize,
    pub residual: f64,
}

/// Distance from `target` to the nearest shoulder position the lift can reach.
pub fn shoulder_distance(target: &Vec3, base: &BasePose) -> f64 {
    let sx = base.x + SHOULDER_FORWARD * base.yaw.cos();
    let sy = base.y + SHOULDER_FORWARD * base.yaw.sin();
    let lo = SHOULDER_HEIGHT + JOINT_LOWER[TORSO];
    let hi = SHOULDER_HEIGHT + JOINT_UPPER[TORSO];
    let dz = if target.z < lo {
        lo - target.z
    } else if target.z > hi {
        target.z - hi
    } else {
        0.0
    };
    (target.x - sx).hypot(target.y - sy).hypot(dz)
}

/// Damped least-squares update. Joints sitting on a limit whose update would
/// push further out are dropped from the Jacobian and the step recomputed,
/// so the free joints absorb the motion instead of losing it to the clamp.
fn dls_step(mut j: Matrix3x4<f64>, q: &Joints, e: &Vec3, damp: &Matrix3<f64>) -> Vector4<f64> {
    let mut dq = Vector4::zeros();
    for _ in 0..4 {
        let Some(a_inv) = (j * j.transpose() + damp).try_inverse() else {
            break;
        };
        dq = j.transpose() * (a_inv * e);
        let mut dropped = false;
        for k in 0..4 {
            let pushes_out = (q[k] <= JOINT_LOWER[k] && dq[k] < 0.0)
                || (q[k] >= JOINT_UPPER[k] && dq[k] > 0.0);
            if pushes_out && j.column(k).iter().any(|v| *v != 0.0) {
                j.column_mut(k).fill(0.0);
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }
    dq
}

/// The middle of every joint range; a neutral IK seed.
pub fn neutral_joints() -> Joints {
    let mut q = [0.0; 5];
    for k in 0..5 {
        q[k] = 0.5 * (JOINT_LOWER[k] + JOINT_UPPER[k]);
    }
    q
}

/// Iterates `q += J^T (J J^T + lambda^2 I)^-1 e` over (torso, q1, q2, q3),
/// clamping to joint limits, until the tip error drops below `tol`. The
/// gripper joint is carried through unchanged.
pub fn ik(target: &Vec3, seed: &Joints, base: &BasePose, params: &IkParams) -> Result<IkSolution> {
    if target.z < 0.0 || shoulder_distance(target, base) > MAX_REACH + params.reach_slack {
        return Err(Error::UnreachableTarget);
    }
    let damp = Matrix3::identity() * (params.damping * params.damping);
    let mut q = clamp_joints(seed);
    for it in 0..=params.max_iter {
        let e = target - fk(&q, base);
        let residual = e.norm();
        if residual < params.tol {
            return Ok(IkSolution {
                joints: q,
                iterations: it,
                residual,
            });
        }
        if it == params.max_iter {
            break;
        }
        let dq = dls_step(jacobian(&q, base), &q, &e, &damp);
        for k in 0..4 {
            q[k] += dq[k];
        }
        q = clamp_joints(&q);
    }
    Err(Error::IkFailed)
}
