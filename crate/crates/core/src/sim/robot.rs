//! Kinematic description of the mobile manipulator.
//!
//! Joint vector layout: `[torso_lift, q1, q2, q3, gripper]`. The three pitch
//! joints drive a planar chain in the vertical plane selected by the base yaw.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Joints = [f64; 5];

pub const TORSO: usize = 0;
pub const GRIPPER: usize = 4;

pub const JOINT_LOWER: Joints = [0.0, -2.0, -2.0, -2.0, 0.0];
pub const JOINT_UPPER: Joints = [0.35, 2.0, 2.0, 2.0, 1.0];
/// Per-joint speed limits (m/s for the lift, rad/s for pitches, 1/s for the gripper).
pub const JOINT_RATE: Joints = [0.1, 0.5, 0.5, 0.5, 2.0];

pub const SHOULDER_FORWARD: f64 = 0.10;
pub const SHOULDER_HEIGHT: f64 = 0.60;
pub const LINKS: [f64; 3] = [0.30, 0.30, 0.15];
pub const MAX_REACH: f64 = 0.75;

pub const MAX_V: f64 = 0.5;
pub const MAX_OMEGA: f64 = 1.0;

/// Radius of the base footprint used for base/obstacle collision.
pub const BASE_RADIUS: f64 = 0.2;

/// Planar base pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl BasePose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        BasePose {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        BasePose::new(0.0, 0.0, 0.0)
    }

    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseCommand {
    pub v: f64,
    pub omega: f64,
}

impl BaseCommand {
    pub const ZERO: BaseCommand = BaseCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        BaseCommand { v, omega }
    }

    pub fn clamped(self) -> Self {
        BaseCommand {
            v: self.v.clamp(-MAX_V, MAX_V),
            omega: self.omega.clamp(-MAX_OMEGA, MAX_OMEGA),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v == 0.0 && self.omega == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base: BasePose,
    pub joints: Joints,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_object: Option<String>,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

pub fn clamp_joints(q: &Joints) -> Joints {
    let mut out = *q;
    for i in 0..5 {
        out[i] = q[i].clamp(JOINT_LOWER[i], JOINT_UPPER[i]);
    }
    out
}

pub fn within_limits(q: &Joints) -> bool {
    (0..5).all(|i| q[i] >= JOINT_LOWER[i] && q[i] <= JOINT_UPPER[i])
}

pub fn shoulder(torso: f64, base: &BasePose) -> Vector3<f64> {
    Vector3::new(
        base.x + SHOULDER_FORWARD * base.yaw.cos(),
        base.y + SHOULDER_FORWARD * base.yaw.sin(),
        SHOULDER_HEIGHT + torso,
    )
}

/// Elbow, wrist and tip positions in world coordinates.
pub fn arm_points(q: &Joints, base: &BasePose) -> [Vector3<f64>; 3] {
    let s = shoulder(q[TORSO], base);
    let heading = base.heading();
    let mut pitch = 0.0;
    let mut r = 0.0;
    let mut z = 0.0;
    let mut pts = [s; 3];
    for (k, len) in LINKS.iter().enumerate() {
        pitch += q[1 + k];
        r += len * pitch.cos();
        z += len * pitch.sin();
        pts[k] = s + heading * r + Vector3::new(0.0, 0.0, z);
    }
    pts
}

/// Gripper tip position (closed form).
pub fn tip_position(q: &Joints, base: &BasePose) -> Vector3<f64> {
    arm_points(q, base)[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
        assert!((wrap_angle(-0.5 - 2.0 * PI) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn straight_chain_tip() {
        let tip = tip_position(&[0.0; 5], &BasePose::origin());
        assert!((tip - Vector3::new(0.85, 0.0, 0.60)).norm() < 1e-12);
    }

    #[test]
    fn command_clamp() {
        let c = BaseCommand::new(3.0, -7.0).clamped();
        assert_eq!(c, BaseCommand::new(0.5, -1.0));
    }
}
