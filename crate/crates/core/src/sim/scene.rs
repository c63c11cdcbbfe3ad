//! Scene files and the seeded scenario families used for collection.
//!
//! Scene files are TOML documents whose keys mirror [`WorldConfig`]:
//!
//! ```toml
//! rng_seed = 7
//! dt = 0.1
//! depth_noise = 0.002
//! target = "obj0"
//! table = { center = [0.8, 0.0, 0.2], half_extents = [0.35, 0.6, 0.2] }
//! [[objects]]
//! id = "obj0"
//! center = [0.65, 0.0, 0.44]
//! half_extents = [0.04, 0.04, 0.04]
//! color = [0.9, 0.1, 0.1]
//! [[obstacle_boxes]]
//! center = [1.5, 0.5, 0.3]
//! half_extents = [0.15, 0.3, 0.3]
//! [camera]
//! width = 64
//! height = 64
//! [start]
//! base = { x = 0.0, y = 0.0, yaw = 0.0 }
//! joints = [0.05, 1.4, -2.0, -1.0, 1.0]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::robot::{BasePose, Joints, RobotState};
use super::{CameraIntrinsics, ObjectSpec, WorldConfig};
use crate::error::{Error, Result};
use crate::geom::Aabb;

/// Which of the two collection procedures a scene/episode belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Base navigation followed by the arm grasp.
    Long,
    /// Grasp only, base fixed in front of the table.
    Short,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Long => "long",
            Variant::Short => "short",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Variant::Long),
            "short" => Ok(Variant::Short),
            other => Err(Error::InvalidConfig(format!(
                "invalid variant '{other}' (expected long|short)"
            ))),
        }
    }
}

/// Arm posture every episode starts from: folded above the front table edge, gripper open.
pub const TUCKED: Joints = [0.05, 1.4, -2.0, -1.0, 1.0];

pub const TABLE_HEIGHT: f64 = 0.4;

/// Object colors, pairwise at least 0.3 apart and far from floor/table gray-browns.
pub const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.75, 0.2],
    [0.15, 0.25, 0.9],
    [0.95, 0.85, 0.1],
    [0.85, 0.1, 0.85],
    [0.1, 0.85, 0.85],
];

/// Deterministic single-object scene straight ahead of the robot.
pub fn reference_scene() -> WorldConfig {
    WorldConfig {
        rng_seed: 1,
        dt: 0.1,
        depth_noise: 0.002,
        target: "obj0".into(),
        table: Aabb::new([0.8, 0.0, TABLE_HEIGHT / 2.0], [0.35, 0.6, TABLE_HEIGHT / 2.0]),
        objects: vec![ObjectSpec {
            id: "obj0".into(),
            center: [0.65, 0.0, TABLE_HEIGHT + 0.04],
            half_extents: [0.04, 0.04, 0.04],
            color: PALETTE[0],
        }],
        obstacle_boxes: Vec::new(),
        camera: CameraIntrinsics::default(),
        start: RobotState {
            base: BasePose::origin(),
            joints: TUCKED,
            attached_object: None,
        },
    }
}

fn random_object(rng: &mut ChaCha8Rng, center_xy: (f64, f64)) -> ObjectSpec {
    let hxy = rng.gen_range(0.035..0.045);
    let hz = rng.gen_range(0.035..0.05);
    let color = PALETTE[rng.gen_range(0..PALETTE.len())];
    ObjectSpec {
        id: "obj0".into(),
        center: [center_xy.0, center_xy.1, TABLE_HEIGHT + hz],
        half_extents: [hxy, hxy, hz],
        color,
    }
}

/// Grasp-only scene: the robot faces an object placed 0.58-0.70 m ahead on
/// the table, at a seeded bearing.
pub fn short_scene(seed: u64) -> WorldConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = rng.gen_range(0.58..0.70);
    let bearing: f64 = rng.gen_range(-0.35..0.35);
    let obj = random_object(&mut rng, (dist * bearing.cos(), dist * bearing.sin()));
    let mut cfg = reference_scene();
    cfg.rng_seed = seed;
    cfg.objects = vec![obj];
    cfg.start.base = BasePose::new(0.0, 0.0, bearing);
    cfg
}

/// Navigation scene: table about 3 m ahead with the object near its front
/// edge, optionally an obstacle block between robot and table.
pub fn long_scene(seed: u64) -> WorldConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4C4F_4E47);
    let table_y = rng.gen_range(-0.4..0.4);
    let table = Aabb::new([3.05, table_y, TABLE_HEIGHT / 2.0], [0.35, 0.6, TABLE_HEIGHT / 2.0]);
    let front = table.center[0] - table.half_extents[0];
    let ox = front + rng.gen_range(0.08..0.15);
    let oy = table_y + rng.gen_range(-0.3..0.3);
    let obj = random_object(&mut rng, (ox, oy));
    let mut obstacles = Vec::new();
    if rng.gen_bool(0.5) {
        let side: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        obstacles.push(Aabb::new(
            [rng.gen_range(1.2..1.6), side * rng.gen_range(0.2..0.5), 0.3],
            [0.15, 0.3, 0.3],
        ));
    }
    let yaw = (oy.atan2(ox) + rng.gen_range(-0.15..0.15)).clamp(-0.3, 0.3);
    let mut cfg = reference_scene();
    cfg.rng_seed = seed;
    cfg.table = table;
    cfg.objects = vec![obj];
    cfg.obstacle_boxes = obstacles;
    cfg.start.base = BasePose::new(0.0, 0.0, yaw);
    cfg
}

pub fn scene_for(variant: Variant, seed: u64) -> WorldConfig {
    match variant {
        Variant::Long => long_scene(seed),
        Variant::Short => short_scene(seed),
    }
}

pub fn parse_scene(text: &str) -> Result<WorldConfig> {
    let cfg: WorldConfig =
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("scene: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn scene_to_string(cfg: &WorldConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidConfig(format!("scene: {e}")))
}

pub fn load_scene(path: &Path) -> Result<WorldConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

pub fn save_scene(cfg: &WorldConfig, path: &Path) -> Result<()> {
    std::fs::write(path, scene_to_string(cfg)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_example_parses() {
        let text = r#"
rng_seed = 7
dt = 0.1
depth_noise = 0.002
target = "obj0"
table = { center = [0.8, 0.0, 0.2], half_extents = [0.35, 0.6, 0.2] }
[[objects]]
id = "obj0"
center = [0.65, 0.0, 0.44]
half_extents = [0.04, 0.04, 0.04]
color = [0.9, 0.1, 0.1]
[[obstacle_boxes]]
center = [1.5, 0.5, 0.3]
half_extents = [0.15, 0.3, 0.3]
[camera]
width = 64
height = 64
[start]
base = { x = 0.0, y = 0.0, yaw = 0.0 }
joints = [0.05, 1.4, -2.0, -1.0, 1.0]
"#;
        let cfg = parse_scene(text).unwrap();
        assert_eq!(cfg.camera, CameraIntrinsics::default());
        assert_eq!(cfg.obstacle_boxes.len(), 1);
    }

    #[test]
    fn scene_text_round_trip() {
        for seed in 0..5 {
            for v in [Variant::Short, Variant::Long] {
                let cfg = scene_for(v, seed);
                let back = parse_scene(&scene_to_string(&cfg).unwrap()).unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn rejects_bad_scenes() {
        let mut cfg = reference_scene();
        cfg.objects[0].half_extents[1] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = reference_scene();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = reference_scene();
        cfg.objects.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = reference_scene();
        let mut twin = cfg.objects[0].clone();
        twin.id = "twin".into();
        twin.color[0] -= 0.1;
        cfg.objects.push(twin);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_scene_key_rejected_by_validation_of_variant() {
        assert!("sideways".parse::<Variant>().is_err());
        assert_eq!("long".parse::<Variant>().unwrap(), Variant::Long);
    }

    #[test]
    fn palette_is_separable() {
        for i in 0..PALETTE.len() {
            for j in i + 1..PALETTE.len() {
                assert!(super::super::color_distance(&PALETTE[i], &PALETTE[j]) >= 0.3);
            }
            assert!(super::super::color_distance(&PALETTE[i], &super::super::TABLE_COLOR) > 0.3);
            assert!(super::super::color_distance(&PALETTE[i], &super::super::FLOOR_COLOR) > 0.3);
        }
    }
}
