//! Deterministic kinematic world: mobile base, lift, three-pitch arm and
//! gripper, colored boxes on a table, and a raycast RGB/depth camera.

pub mod image;
pub mod render;
pub mod robot;
pub mod scene;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use robot::{
    arm_points, clamp_joints, tip_position, wrap_angle, BaseCommand, BasePose, Joints, RobotState,
    BASE_RADIUS, JOINT_RATE,
};

pub use render::{CameraIntrinsics, CameraPose, HitLabel, SensorFrame};

/// Inflation applied to the target box by the touch predicate.
pub const TOUCH_EPS: f64 = 0.02;
/// Gripper aperture below which a touching gripper holds the object.
pub const GRASP_APERTURE: f64 = 0.3;

pub const FLOOR_COLOR: [f64; 3] = [0.5, 0.5, 0.5];
pub const TABLE_COLOR: [f64; 3] = [0.6, 0.45, 0.3];
pub const OBSTACLE_COLOR: [f64; 3] = [0.3, 0.3, 0.35];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    pub color: [f64; 3],
}

impl ObjectSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.center, self.half_extents)
    }
}

fn default_dt() -> f64 {
    0.1
}

fn default_depth_noise() -> f64 {
    0.002
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub rng_seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Standard deviation of the additive depth noise, meters.
    #[serde(default = "default_depth_noise")]
    pub depth_noise: f64,
    /// Id of the object the touch/grasp predicates refer to.
    pub target: String,
    pub table: Aabb,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub obstacle_boxes: Vec<Aabb>,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    pub start: RobotState,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.depth_noise >= 0.0) {
            return bad("depth_noise must be non-negative".into());
        }
        if self.objects.is_empty() {
            return bad("at least one object is required".into());
        }
        if !self.table.is_valid() {
            return bad("table extents must be strictly positive".into());
        }
        for (i, b) in self.obstacle_boxes.iter().enumerate() {
            if !b.is_valid() {
                return bad(format!("obstacle box {i} has non-positive extents"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.aabb().is_valid() {
                return bad(format!("object '{}' has non-positive extents", o.id));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("object '{}' color outside [0,1]", o.id));
            }
            for other in &self.objects[i + 1..] {
                if other.id == o.id {
                    return bad(format!("duplicate object id '{}'", o.id));
                }
                if color_distance(&o.color, &other.color) < 0.3 {
                    return bad(format!(
                        "objects '{}' and '{}' have colors closer than 0.3",
                        o.id, other.id
                    ));
                }
            }
        }
        if !self.objects.iter().any(|o| o.id == self.target) {
            return bad(format!("target '{}' is not a scene object", self.target));
        }
        self.camera.validate()?;
        if !robot::within_limits(&self.start.joints) {
            return bad("start joints outside limits".into());
        }
        Ok(())
    }

    pub fn target_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.id == self.target)
            .expect("validated target")
    }

    pub fn target_spec(&self) -> &ObjectSpec {
        &self.objects[self.target_index()]
    }
}

pub fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// A running simulation. Exclusively owned; clone it to branch.
#[derive(Clone, Debug)]
pub struct World {
    config: WorldConfig,
    state: RobotState,
    object_centers: Vec<Vec3>,
    attach_offset: Option<Vec3>,
    target: usize,
    tick: u64,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let mut state = config.start.clone();
        state.base = BasePose::new(state.base.x, state.base.y, state.base.yaw);
        state.attached_object = None;
        let object_centers = config.objects.iter().map(|o| Vec3::from(o.center)).collect();
        let target = config.target_index();
        Ok(World {
            config,
            state,
            object_centers,
            attach_offset: None,
            target,
            tick: 0,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn tip(&self) -> Vec3 {
        tip_position(&self.state.joints, &self.state.base)
    }

    pub fn arm_points(&self) -> [Vec3; 3] {
        arm_points(&self.state.joints, &self.state.base)
    }

    /// Current box of object `i` (moves once attached).
    pub fn object_box(&self, i: usize) -> Aabb {
        let c = self.object_centers[i];
        Aabb::new([c.x, c.y, c.z], self.config.objects[i].half_extents)
    }

    pub fn target_box(&self) -> Aabb {
        self.object_box(self.target)
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    /// Boxes the base and arm must avoid: the table followed by the obstacles.
    pub fn static_obstacles(&self) -> Vec<Aabb> {
        std::iter::once(self.config.table)
            .chain(self.config.obstacle_boxes.iter().copied())
            .collect()
    }

    fn base_collides(&self, x: f64, y: f64) -> bool {
        self.static_obstacles()
            .iter()
            .any(|b| b.distance_xy(x, y) < BASE_RADIUS)
    }

    /// Advances one tick. Commands and targets are clamped; never fails.
    pub fn step(&mut self, cmd: BaseCommand, joint_target: Joints) -> RobotState {
        let dt = self.config.dt;
        let cmd = cmd.clamped();
        let target = clamp_joints(&joint_target);

        let b = self.state.base;
        let nx = b.x + cmd.v * b.yaw.cos() * dt;
        let ny = b.y + cmd.v * b.yaw.sin() * dt;
        let nyaw = wrap_angle(b.yaw + cmd.omega * dt);
        if !self.base_collides(nx, ny) {
            self.state.base = BasePose {
                x: nx,
                y: ny,
                yaw: nyaw,
            };
        }

        let mut q = self.state.joints;
        for i in 0..5 {
            let max_step = JOINT_RATE[i] * dt;
            let delta = target[i] - q[i];
            if delta.abs() <= max_step {
                q[i] = target[i];
            } else {
                q[i] += max_step.copysign(delta);
            }
        }
        self.state.joints = clamp_joints(&q);

        if let Some(off) = self.attach_offset {
            self.object_centers[self.target] = self.tip() + off;
        }
        self.tick += 1;
        self.state.clone()
    }

    /// Gripper tip within the target box inflated by [`TOUCH_EPS`].
    pub fn touching(&self) -> bool {
        self.target_box().inflated(TOUCH_EPS).contains(&self.tip())
    }

    pub fn grasped(&self) -> bool {
        self.state.attached_object.is_some()
    }

    /// Attaches the target when the gripper is closed enough while touching.
    pub fn attach_if_grasping(&mut self) -> bool {
        if self.grasped() {
            return true;
        }
        if self.state.joints[robot::GRIPPER] < GRASP_APERTURE && self.touching() {
            self.attach_offset = Some(self.object_centers[self.target] - self.tip());
            self.state.attached_object = Some(self.config.objects[self.target].id.clone());
            return true;
        }
        false
    }

    pub fn camera_pose(&self) -> CameraPose {
        CameraPose::mounted(&self.config.camera, &self.state.base)
    }

    pub fn render(&self) -> SensorFrame {
        self.render_labeled().0
    }

    pub fn render_labeled(&self) -> (SensorFrame, Vec<HitLabel>) {
        render::render(self)
    }

    /// Test/replay hook: overwrite the robot state without simulation.
    pub fn set_state(&mut self, state: RobotState) {
        self.state = state;
        self.state.joints = clamp_joints(&self.state.joints);
        self.state.base.yaw = wrap_angle(self.state.base.yaw);
    }

    pub fn object_centers(&self) -> &[Vec3] {
        &self.object_centers
    }
}
