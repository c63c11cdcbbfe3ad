//! Joint-space arm planning with point collision checks.

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::sim::robot::{arm_points, within_limits, BasePose, Joints, TORSO};
use crate::sim::World;

/// Largest per-waypoint change for pitch and gripper joints.
pub const MAX_JOINT_STEP: f64 = 0.05;
/// Largest per-waypoint change for the lift.
pub const MAX_LIFT_STEP: f64 = 0.01;
/// Depth of the table-top slab ignored by collision checks, so the hand can
/// work on objects resting on the table.
pub const TABLE_TOP_CLEARANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ArmPlan {
    pub joint_waypoints: Vec<Joints>,
    pub collision_free: Vec<bool>,
}

impl ArmPlan {
    pub fn len(&self) -> usize {
        self.joint_waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_waypoints.is_empty()
    }
}

/// Boxes the elbow, wrist and tip must stay out of.
pub fn collision_boxes(world: &World) -> Vec<Aabb> {
    let cfg = world.config();
    let t = cfg.table;
    let mut trimmed = t;
    trimmed.half_extents[2] = t.half_extents[2] - TABLE_TOP_CLEARANCE / 2.0;
    trimmed.center[2] = t.center[2] - TABLE_TOP_CLEARANCE / 2.0;
    let mut boxes = vec![trimmed];
    boxes.extend(cfg.obstacle_boxes.iter().copied());
    boxes
}

pub fn arm_in_collision(q: &Joints, base: &BasePose, boxes: &[Aabb]) -> bool {
    arm_points(q, base)
        .iter()
        .any(|p: &Vec3| p.z < 0.0 || boxes.iter().any(|b| b.contains(p)))
}

fn steps_needed(start: &Joints, goal: &Joints) -> usize {
    (0..5)
        .map(|k| {
            let limit = if k == TORSO { MAX_LIFT_STEP } else { MAX_JOINT_STEP };
            // Slack keeps exact multiples (1.0 / 0.05) from rounding up.
            ((goal[k] - start[k]).abs() / limit - 1e-9).ceil().max(0.0) as usize
        })
        .max()
        .unwrap_or(0)
}

/// Linear joint-space interpolation, collision-checked at every waypoint.
pub fn plan_arm(start: &Joints, goal: &Joints, world: &World) -> Result<ArmPlan> {
    if !within_limits(start) || !within_limits(goal) {
        return Err(Error::InvalidConfig("arm plan endpoints outside joint limits".into()));
    }
    let base = world.state().base;
    let boxes = collision_boxes(world);
    let n = steps_needed(start, goal);
    let mut waypoints = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let q = if i == n {
            *goal
        } else {
            let s = i as f64 / n as f64;
            let mut q = *start;
            for k in 0..5 {
                q[k] = start[k] + (goal[k] - start[k]) * s;
            }
            q
        };
        if arm_in_collision(&q, &base, &boxes) {
            return Err(Error::ArmPlanInCollision);
        }
        waypoints.push(q);
    }
    let collision_free = vec![true; waypoints.len()];
    Ok(ArmPlan {
        joint_waypoints: waypoints,
        collision_free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{reference_scene, TUCKED};

    #[test]
    fn identical_endpoints() {
        let w = World::new(reference_scene()).unwrap();
        let p = plan_arm(&TUCKED, &TUCKED, &w).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn unit_q1_move_gives_21_waypoints() {
        let w = World::new(reference_scene()).unwrap();
        let start = [0.1, 0.3, -0.5, -0.5, 1.0];
        let mut goal = start;
        goal[1] += 1.0;
        let p = plan_arm(&start, &goal, &w).unwrap();
        assert_eq!(p.len(), 21);
        assert!(p.joint_waypoints.windows(2).all(|w| w[1][1] > w[0][1]));
        for w in p.joint_waypoints.windows(2) {
            for k in 0..5 {
                let lim = if k == 0 { MAX_LIFT_STEP } else { MAX_JOINT_STEP };
                assert!((w[1][k] - w[0][k]).abs() <= lim + 1e-12);
            }
        }
        assert!(p.collision_free.iter().all(|c| *c));
    }

    #[test]
    fn path_through_table_rejected() {
        let w = World::new(reference_scene()).unwrap();
        // Tip at x ~ 0.7, z ~ 0.2: inside the table body.
        let goal = [0.0, -0.4, -0.2, -0.6, 1.0];
        let tip = crate::expert::kinematics::fk(&goal, &w.state().base);
        assert!(w.config().table.contains(&tip), "{tip:?}");
        assert!(matches!(
            plan_arm(&TUCKED, &goal, &w),
            Err(Error::ArmPlanInCollision)
        ));
    }
}
