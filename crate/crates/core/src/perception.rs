//! Object localization on point clouds: voxel-grid downsampling, statistical
//! outlier removal, color segmentation and centroid extraction.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::sim::SensorFrame;

pub const CLOUD_MAGIC: &[u8; 8] = b"PCLD0001";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

impl CloudPoint {
    pub fn new(position: [f64; 3], color: [f64; 3]) -> Self {
        CloudPoint { position, color }
    }

    fn dist(&self, other: &CloudPoint) -> f64 {
        let d0 = self.position[0] - other.position[0];
        let d1 = self.position[1] - other.position[1];
        let d2 = self.position[2] - other.position[2];
        (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
    }

    fn total_cmp(&self, other: &CloudPoint) -> std::cmp::Ordering {
        self.position
            .iter()
            .chain(&self.color)
            .zip(other.position.iter().chain(&other.color))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Little-endian `PCLD0001`, u32 count, then `x y z r g b` as f32 per point.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * 24);
        out.extend_from_slice(CLOUD_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for p in &self.points {
            for v in p.position.iter().chain(&p.color) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<PointCloud> {
        let corrupt = |offset: u64, reason: &str| Error::Corrupt {
            path: origin.to_path_buf(),
            offset,
            reason: reason.to_string(),
        };
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                path: origin.to_path_buf(),
                expected: 12,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..8] != CLOUD_MAGIC {
            return Err(corrupt(0, "bad magic, expected PCLD0001"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + n as u64 * 24;
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: origin.to_path_buf(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let mut points = Vec::with_capacity(n);
        for (i, rec) in bytes[12..].chunks_exact(24).enumerate() {
            let mut v = [0.0f64; 6];
            for (k, c) in rec.chunks_exact(4).enumerate() {
                let f = f32::from_le_bytes(c.try_into().unwrap());
                if !f.is_finite() {
                    return Err(corrupt((12 + i * 24 + k * 4) as u64, "non-finite value"));
                }
                v[k] = f as f64;
            }
            points.push(CloudPoint::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]));
        }
        Ok(PointCloud { points })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PointCloud> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        PointCloud::from_bytes(&buf, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionParams {
    pub leaf: f64,
    pub k_neighbors: usize,
    pub alpha: f64,
    pub color_threshold: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        PerceptionParams {
            leaf: 0.01,
            k_neighbors: 8,
            alpha: 1.0,
            color_threshold: 0.25,
        }
    }
}

impl PerceptionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.leaf > 0.0
            && self.k_neighbors >= 1
            && self.alpha >= 0.0
            && self.color_threshold > 0.0
            && self.color_threshold <= 3f64.sqrt();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "perception parameters out of range: {self:?}"
            )))
        }
    }
}

pub fn voxel_index(p: &[f64; 3], leaf: f64) -> (i64, i64, i64) {
    (
        (p[0] / leaf).floor() as i64,
        (p[1] / leaf).floor() as i64,
        (p[2] / leaf).floor() as i64,
    )
}

/// One point per occupied voxel: the mean position and color of its members,
/// emitted in (ix, iy, iz) order. Members are summed in a canonical order so
/// the result does not depend on input order.
pub fn voxel_grid_filter(cloud: &PointCloud, leaf: f64) -> PointCloud {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), Vec<CloudPoint>> = BTreeMap::new();
    for p in &cloud.points {
        cells.entry(voxel_index(&p.position, leaf)).or_default().push(*p);
    }
    let points = cells
        .into_values()
        .map(|mut members| {
            members.sort_by(|a, b| a.total_cmp(b));
            let n = members.len() as f64;
            let mut acc = [0.0f64; 6];
            for m in &members {
                for k in 0..3 {
                    acc[k] += m.position[k];
                    acc[k + 3] += m.color[k];
                }
            }
            CloudPoint::new(
                [acc[0] / n, acc[1] / n, acc[2] / n],
                [acc[3] / n, acc[4] / n, acc[5] / n],
            )
        })
        .collect();
    PointCloud { points }
}

/// Mean distance from every point to its `k` nearest neighbours (exact,
/// ties broken by index), summed in ascending (distance, index) order.
pub fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    let n = cloud.len();
    if n <= k || k == 0 {
        return Err(Error::InsufficientPoints { points: n, k });
    }
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let mut out = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        scratch.clear();
        scratch.extend(
            cloud
                .points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (p.dist(q), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let nearest = &mut scratch[..k];
        nearest.sort_by(cmp);
        let sum: f64 = nearest.iter().map(|(d, _)| *d).sum();
        out.push(sum / k as f64);
    }
    Ok(out)
}

/// Keeps points whose mean k-NN distance is at most `mean + alpha * stddev`
/// (population statistics over the whole cloud). Order is preserved.
pub fn statistical_outlier_removal(cloud: &PointCloud, k: usize, alpha: f64) -> Result<PointCloud> {
    let d = mean_knn_distances(cloud, k)?;
    let threshold = sor_threshold(&d, alpha);
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(&d)
            .filter(|(_, di)| **di <= threshold)
            .map(|(p, _)| *p)
            .collect(),
    })
}

fn sor_threshold(d: &[f64], alpha: f64) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    mean + alpha * var.sqrt()
}

pub fn color_segment(cloud: &PointCloud, target: [f64; 3], threshold: f64) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| crate::sim::color_distance(&p.color, &target) <= threshold)
            .copied()
            .collect(),
    }
}

pub fn centroid(cloud: &PointCloud) -> Result<Vec3> {
    if cloud.is_empty() {
        return Err(Error::ObjectNotFound);
    }
    let mut acc = Vec3::zeros();
    for p in &cloud.points {
        acc += Vec3::from(p.position);
    }
    Ok(acc / cloud.len() as f64)
}

/// Full localization pipeline on a rendered frame.
pub fn locate_object(
    frame: &SensorFrame,
    target_color: [f64; 3],
    params: &PerceptionParams,
) -> Result<Vec3> {
    locate_in_cloud(&frame.cloud, target_color, params)
}

pub fn locate_in_cloud(
    cloud: &PointCloud,
    target_color: [f64; 3],
    params: &PerceptionParams,
) -> Result<Vec3> {
    let down = voxel_grid_filter(cloud, params.leaf);
    let clean = statistical_outlier_removal(&down, params.k_neighbors, params.alpha)?;
    let seg = color_segment(&clean, target_color, params.color_threshold);
    centroid(&seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, z: f64) -> CloudPoint {
        CloudPoint::new([x, y, z], [0.5, 0.5, 0.5])
    }

    #[test]
    fn voxel_merges_same_cell() {
        let c = PointCloud::new(vec![pt(0.001, 0.0, 0.0), pt(0.009, 0.0, 0.0)]);
        let out = voxel_grid_filter(&c, 0.01);
        assert_eq!(out.len(), 1);
        assert!((out.points[0].position[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn voxel_distinct_cells_preserved() {
        let c = PointCloud::new(vec![pt(0.5, 0.5, 0.5), pt(0.005, 0.005, 0.005), pt(-0.3, 0.2, 0.1)]);
        let mut a = voxel_grid_filter(&c, 0.01).points;
        let mut b = c.points.clone();
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        assert_eq!(a, b);
        assert!(voxel_grid_filter(&PointCloud::default(), 0.1).is_empty());
    }

    #[test]
    fn sor_error_on_small_cloud() {
        let c = PointCloud::new(vec![pt(0.0, 0.0, 0.0); 4]);
        assert!(matches!(
            statistical_outlier_removal(&c, 4, 1.0),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn huge_alpha_keeps_everything() {
        let mut pts: Vec<CloudPoint> = (0..30).map(|i| pt(i as f64 * 0.01, 0.0, 0.0)).collect();
        pts.push(pt(5.0, 5.0, 5.0));
        let c = PointCloud::new(pts);
        assert_eq!(statistical_outlier_removal(&c, 3, 1e6).unwrap(), c);
    }

    #[test]
    fn color_segment_cases() {
        let red = [0.9, 0.1, 0.1];
        let c = PointCloud::new(vec![CloudPoint::new([0.0; 3], red); 3]);
        assert_eq!(color_segment(&c, red, 0.25), c);
        assert!(color_segment(&c, [0.0, 0.0, 1.0], 0.25).is_empty());
    }

    #[test]
    fn centroid_cases() {
        let c = PointCloud::new(vec![pt(1.0, 0.0, 0.0), pt(-1.0, 0.0, 0.0)]);
        assert_eq!(centroid(&c).unwrap(), Vec3::zeros());
        let p = PointCloud::new(vec![pt(0.3, -0.2, 7.0)]);
        assert_eq!(centroid(&p).unwrap(), Vec3::new(0.3, -0.2, 7.0));
        assert!(matches!(
            centroid(&PointCloud::default()),
            Err(Error::ObjectNotFound)
        ));
    }

    #[test]
    fn cloud_file_errors() {
        let c = PointCloud::new(vec![pt(1.0, 2.0, 3.0)]);
        let bytes = c.to_bytes();
        let p = Path::new("mem.pcld");
        assert_eq!(PointCloud::from_bytes(&bytes, p).unwrap(), c);
        assert!(matches!(
            PointCloud::from_bytes(&bytes[..bytes.len() - 1], p),
            Err(Error::Truncated { expected: 36, actual: 35, .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            PointCloud::from_bytes(&bad, p),
            Err(Error::Corrupt { offset: 0, .. })
        ));
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(
            (
                -1.0f64..1.0,
                -1.0f64..1.0,
                -1.0f64..1.0,
                0.0f64..1.0,
                0.0f64..1.0,
                0.0f64..1.0,
            ),
            0..max,
        )
        .prop_map(|v| {
            PointCloud::new(
                v.into_iter()
                    .map(|(x, y, z, r, g, b)| CloudPoint::new([x, y, z], [r, g, b]))
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn voxel_invariants(cloud in arb_cloud(200), leaf in 0.05f64..0.5, seed in any::<u64>()) {
            let out = voxel_grid_filter(&cloud, leaf);
            prop_assert!(out.len() <= cloud.len());
            for p in &out.points {
                let (ix, iy, iz) = voxel_index(&p.position, leaf);
                let idx = [ix, iy, iz];
                for k in 0..3 {
                    let lo = idx[k] as f64 * leaf;
                    prop_assert!(p.position[k] >= lo - 1e-12 && p.position[k] <= lo + leaf + 1e-12);
                }
            }
            // Permutation invariance.
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = cloud.clone();
            shuffled.points.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(voxel_grid_filter(&shuffled, leaf), out);
        }

        #[test]
        fn sor_subset_and_monotone(cloud in arb_cloud(120), a1 in 0.0f64..2.0, extra in 0.0f64..2.0) {
            prop_assume!(cloud.len() > 4);
            let s1 = statistical_outlier_removal(&cloud, 4, a1).unwrap();
            let s2 = statistical_outlier_removal(&cloud, 4, a1 + extra).unwrap();
            for p in &s1.points {
                prop_assert!(s2.points.contains(p));
                prop_assert!(cloud.points.contains(p));
            }
        }

        #[test]
        fn color_segment_idempotent(cloud in arb_cloud(100), r in 0.0f64..1.0, t in 0.05f64..1.0) {
            let target = [r, 1.0 - r, 0.5];
            let once = color_segment(&cloud, target, t);
            prop_assert!(once.points.iter().all(|p| cloud.points.contains(p)));
            prop_assert_eq!(color_segment(&once, target, t), once);
        }

        #[test]
        fn centroid_translation_equivariant(cloud in arb_cloud(100), tx in -10.0f64..10.0, ty in -10.0f64..10.0, tz in -10.0f64..10.0) {
            prop_assume!(!cloud.is_empty());
            let t = Vec3::new(tx, ty, tz);
            let moved = PointCloud::new(cloud.points.iter().map(|p| {
                CloudPoint::new([p.position[0] + tx, p.position[1] + ty, p.position[2] + tz], p.color)
            }).collect());
            let d = centroid(&moved).unwrap() - (centroid(&cloud).unwrap() + t);
            prop_assert!(d.norm() < 1e-9);
        }

        #[test]
        fn cloud_bytes_round_trip(cloud in arb_cloud(50)) {
            // f32 storage: round trip is exact once values are f32-representable.
            let c32 = PointCloud::new(cloud.points.iter().map(|p| CloudPoint::new(
                p.position.map(|v| v as f32 as f64), p.color.map(|v| v as f32 as f64))).collect());
            let back = PointCloud::from_bytes(&c32.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, c32);
        }
    }
}
