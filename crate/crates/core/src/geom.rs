use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned box given by center and half extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Aabb {
    pub fn new(center: [f64; 3], half_extents: [f64; 3]) -> Self {
        Aabb {
            center,
            half_extents,
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn min(&self) -> Vec3 {
        Vec3::from(self.center) - Vec3::from(self.half_extents)
    }

    pub fn max(&self) -> Vec3 {
        Vec3::from(self.center) + Vec3::from(self.half_extents)
    }

    pub fn is_valid(&self) -> bool {
        self.half_extents.iter().all(|h| *h > 0.0 && h.is_finite())
            && self.center.iter().all(|c| c.is_finite())
    }

    pub fn inflated(&self, eps: f64) -> Aabb {
        Aabb {
            center: self.center,
            half_extents: self.half_extents.map(|h| h + eps),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extents[i])
    }

    /// Distance from the box to a point in the xy plane (0 inside).
    pub fn distance_xy(&self, x: f64, y: f64) -> f64 {
        let dx = ((x - self.center[0]).abs() - self.half_extents[0]).max(0.0);
        let dy = ((y - self.center[1]).abs() - self.half_extents[1]).max(0.0);
        dx.hypot(dy)
    }

    /// Slab test. Returns the entry distance along `dir` for rays starting
    /// outside the box; rays starting inside report no hit.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let lo = self.min();
        let hi = self.max();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < lo[i] || origin[i] > hi[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (lo[i] - origin[i]) * inv;
            let mut t1 = (hi[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_near > 1e-9 {
            Some(t_near)
        } else {
            None
        }
    }
}
