//! Pinhole raycaster. One primary ray per pixel, nearest hit among floor,
//! table, objects and obstacle boxes, flat shading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::robot::BasePose;
use super::{World, FLOOR_COLOR, OBSTACLE_COLOR, TABLE_COLOR};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::perception::{CloudPoint, PointCloud};

fn default_width() -> usize {
    64
}
fn default_height() -> usize {
    64
}
fn default_focal() -> f64 {
    60.0
}
fn default_baseline() -> f64 {
    0.08
}
fn default_mount_height() -> f64 {
    1.1
}
fn default_mount_pitch() -> f64 {
    0.6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_focal")]
    pub focal_px: f64,
    #[serde(default = "default_baseline")]
    pub baseline_m: f64,
    /// Height of the optical center above the base origin.
    #[serde(default = "default_mount_height")]
    pub mount_height: f64,
    /// Downward pitch of the optical axis, radians.
    #[serde(default = "default_mount_pitch")]
    pub mount_pitch: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            width: default_width(),
            height: default_height(),
            focal_px: default_focal(),
            baseline_m: default_baseline(),
            mount_height: default_mount_height(),
            mount_pitch: default_mount_pitch(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) || !(self.baseline_m > 0.0) || self.width * self.height == 0 {
            return Err(Error::InvalidConfig(
                "camera needs focal_px > 0, baseline_m > 0 and a non-empty image".into(),
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Disparity (pixels) for a depth (meters); 0 for no hit.
    pub fn disparity(&self, depth: f64) -> f64 {
        if depth > 0.0 {
            self.focal_px * self.baseline_m / depth
        } else {
            0.0
        }
    }
}

/// World-frame camera pose: optical center plus forward/right/down axes.
#[derive(Clone, Copy, Debug)]
pub struct CameraPose {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraPose {
    pub fn mounted(cam: &CameraIntrinsics, base: &BasePose) -> Self {
        let (sy, cy) = base.yaw.sin_cos();
        let (sp, cp) = cam.mount_pitch.sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, -sp);
        let right = Vec3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        CameraPose {
            origin: Vec3::new(base.x, base.y, cam.mount_height),
            forward,
            right,
            down,
            focal: cam.focal_px,
            cx: cam.width as f64 / 2.0,
            cy: cam.height as f64 / 2.0,
        }
    }

    /// Ray direction through the center of pixel (u, v), scaled so that the
    /// ray parameter equals depth along the optical axis.
    pub fn ray(&self, u: usize, v: usize) -> Vec3 {
        let a = (u as f64 + 0.5 - self.cx) / self.focal;
        let b = (v as f64 + 0.5 - self.cy) / self.focal;
        self.forward + self.right * a + self.down * b
    }

    /// Continuous image coordinates and depth of a world point.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let rel = p - self.origin;
        let z = rel.dot(&self.forward);
        if z <= 0.0 {
            return None;
        }
        let u = rel.dot(&self.right) / z * self.focal + self.cx;
        let v = rel.dot(&self.down) / z * self.focal + self.cy;
        Some((u, v, z))
    }
}

/// What a pixel's primary ray hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitLabel {
    Nothing,
    Floor,
    Table,
    Object(usize),
    Obstacle(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 bytes per pixel.
    pub rgb: Vec<u8>,
    /// Meters along the optical axis; 0 encodes no hit.
    pub depth: Vec<f64>,
    /// `f * B / depth` where depth > 0, else 0.
    pub disparity: Vec<f64>,
    /// One point per pixel with positive depth, row-major order.
    pub cloud: PointCloud,
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_rng(seed: u64, tick: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tick.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(super) fn render(world: &World) -> (SensorFrame, Vec<HitLabel>) {
    let cfg = world.config();
    let cam = &cfg.camera;
    let pose = world.camera_pose();
    let n = cam.pixels();

    let mut boxes = Vec::with_capacity(2 + cfg.objects.len() + cfg.obstacle_boxes.len());
    boxes.push((cfg.table, HitLabel::Table, TABLE_COLOR));
    for (i, o) in cfg.objects.iter().enumerate() {
        boxes.push((world.object_box(i), HitLabel::Object(i), o.color));
    }
    for (i, b) in cfg.obstacle_boxes.iter().enumerate() {
        boxes.push((*b, HitLabel::Obstacle(i), OBSTACLE_COLOR));
    }

    let mut rgb = vec![0u8; n * 3];
    let mut depth = vec![0.0; n];
    let mut labels = vec![HitLabel::Nothing; n];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir = pose.ray(u, v);
            let mut best = f64::INFINITY;
            let mut label = HitLabel::Nothing;
            let mut color = [0.0; 3];
            if dir.z < 0.0 {
                let t = -pose.origin.z / dir.z;
                if t > 0.0 {
                    best = t;
                    label = HitLabel::Floor;
                    color = FLOOR_COLOR;
                }
            }
            for (b, l, c) in &boxes {
                if let Some(t) = b.ray_entry(&pose.origin, &dir) {
                    if t < best {
                        best = t;
                        label = *l;
                        color = *c;
                    }
                }
            }
            let i = v * cam.width + u;
            if label != HitLabel::Nothing {
                depth[i] = best;
                rgb[3 * i] = to_byte(color[0]);
                rgb[3 * i + 1] = to_byte(color[1]);
                rgb[3 * i + 2] = to_byte(color[2]);
            }
            labels[i] = label;
        }
    }

    if cfg.depth_noise > 0.0 {
        let mut rng = frame_rng(cfg.rng_seed, world.tick());
        let normal = Normal::new(0.0, cfg.depth_noise).expect("finite sigma");
        for d in depth.iter_mut() {
            if *d > 0.0 {
                *d = (*d + normal.sample(&mut rng)).max(1e-3);
            }
        }
    }

    let disparity: Vec<f64> = depth.iter().map(|&d| cam.disparity(d)).collect();
    let mut points = Vec::new();
    for v in 0..cam.height {
        for u in 0..cam.width {
            let i = v * cam.width + u;
            if depth[i] > 0.0 {
                let p = pose.origin + pose.ray(u, v) * depth[i];
                points.push(CloudPoint {
                    position: [p.x, p.y, p.z],
                    color: [
                        rgb[3 * i] as f64 / 255.0,
                        rgb[3 * i + 1] as f64 / 255.0,
                        rgb[3 * i + 2] as f64 / 255.0,
                    ],
                });
            }
        }
    }

    (
        SensorFrame {
            width: cam.width,
            height: cam.height,
            rgb,
            depth,
            disparity,
            cloud: PointCloud { points },
        },
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::reference_scene;
    use crate::sim::{ObjectSpec, WorldConfig};

    fn floor_only() -> WorldConfig {
        let mut cfg = reference_scene();
        // Push the table and object far behind the camera.
        cfg.table.center = [-50.0, 0.0, 0.2];
        cfg.objects[0].center = [-50.0, 0.0, 0.45];
        cfg.depth_noise = 0.0;
        cfg
    }

    #[test]
    fn floor_only_scene() {
        let w = World::new(floor_only()).unwrap();
        let (f, labels) = w.render_labeled();
        let pose = w.camera_pose();
        for v in 0..f.height {
            for u in 0..f.width {
                let i = v * f.width + u;
                let down = pose.ray(u, v).z < 0.0;
                if down {
                    assert_eq!(labels[i], HitLabel::Floor);
                    assert!(f.depth[i] > 0.0 && f.depth[i].is_finite());
                    assert_eq!(&f.rgb[3 * i..3 * i + 3], &[128, 128, 128]);
                } else {
                    assert_eq!(f.depth[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn disparity_identity() {
        let cam = CameraIntrinsics::default();
        assert!((cam.disparity(1.0) - 4.8).abs() < 1e-12);
        let w = World::new(reference_scene()).unwrap();
        let f = w.render();
        for (d, disp) in f.depth.iter().zip(&f.disparity) {
            if *d > 0.0 {
                assert_eq!(*disp, cam.focal_px * cam.baseline_m / d);
            } else {
                assert_eq!(*disp, 0.0);
            }
        }
        assert_eq!(f.cloud.len(), f.depth.iter().filter(|d| **d > 0.0).count());
    }

    #[test]
    fn back_projection_lands_in_source_pixel() {
        let mut cfg = reference_scene();
        cfg.depth_noise = 0.0;
        let w = World::new(cfg).unwrap();
        let f = w.render();
        let pose = w.camera_pose();
        let mut k = 0;
        for v in 0..f.height {
            for u in 0..f.width {
                let i = v * f.width + u;
                if f.depth[i] > 0.0 {
                    let p = Vec3::from(f.cloud.points[k].position);
                    let (pu, pv, _) = pose.project(&p).unwrap();
                    assert_eq!(pu.floor() as usize, u);
                    assert_eq!(pv.floor() as usize, v);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn red_cube_blob_centroid() {
        let mut cfg = reference_scene();
        cfg.depth_noise = 0.0;
        cfg.objects = vec![ObjectSpec {
            id: "cube".into(),
            center: [1.2, 0.0, 0.45],
            half_extents: [0.025, 0.025, 0.025],
            color: [0.9, 0.1, 0.1],
        }];
        cfg.target = "cube".into();
        cfg.table = crate::geom::Aabb::new([1.2, 0.0, 0.2125], [0.3, 0.4, 0.2125]);
        let w = World::new(cfg).unwrap();
        let (f, labels) = w.render_labeled();
        let pix: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == HitLabel::Object(0))
            .collect();
        assert!(!pix.is_empty());
        // 4-connectivity of the blob.
        let mut seen = vec![false; labels.len()];
        let mut stack = vec![pix[0]];
        seen[pix[0]] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (u, v) = ((i % f.width) as i64, (i / f.width) as i64);
            for (du, dv) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nu, nv) = (u + du, v + dv);
                if nu < 0 || nv < 0 || nu >= f.width as i64 || nv >= f.height as i64 {
                    continue;
                }
                let j = nv as usize * f.width + nu as usize;
                if !seen[j] && labels[j] == HitLabel::Object(0) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        assert_eq!(count, pix.len());
        let pose = w.camera_pose();
        let mut c = Vec3::zeros();
        for &i in &pix {
            c += pose.origin + pose.ray(i % f.width, i / f.width) * f.depth[i];
        }
        c /= pix.len() as f64;
        assert!((c - Vec3::new(1.2, 0.0, 0.45)).norm() < 0.02, "{c:?}");
        assert!(pix.iter().all(|&i| f.rgb[3 * i] == 230));
    }

    #[test]
    fn noise_is_seeded() {
        let w = World::new(reference_scene()).unwrap();
        assert_eq!(w.render(), w.render());
        let mut cfg = reference_scene();
        cfg.rng_seed += 1;
        let w2 = World::new(cfg).unwrap();
        assert_ne!(w.render().depth, w2.render().depth);
    }
}
