use serde::{Deserialize, Serialize};

use super::Episode;
use crate::error::{Error, Result};

/// Per-dimension normalization derived from a training split.
///
/// State (and command) dims are min-max scaled to [0, 1]; dims with zero
/// range are flagged and map to 0.5. Image channels are standardized with
/// population mean/std, disparity excludes zero (no-return) pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub cmd_min: Vec<f64>,
    pub cmd_max: Vec<f64>,
    /// Zero-range flags over the concatenated state and command dims.
    pub flagged: Vec<bool>,
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    pub disparity_mean: f64,
    pub disparity_std: f64,
}

fn mean_std(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Computes stats over every step of `episodes` (callers pass the training
/// split, normally successful episodes only). Episodes are folded in order.
pub fn compute_norm_stats(episodes: &[Episode]) -> Result<NormStats> {
    let first = episodes
        .iter()
        .find(|e| !e.steps.is_empty())
        .ok_or_else(|| Error::Empty("no episode with steps to compute stats from".into()))?;
    let dim = first.state_dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut rgb_sum = [0f64; 3];
    let mut rgb_sq = [0f64; 3];
    let mut rgb_n = 0f64;
    let (mut d_sum, mut d_sq, mut d_n) = (0f64, 0f64, 0f64);
    for ep in episodes {
        if ep.variant != first.variant {
            return Err(Error::DimensionMismatch(format!(
                "mixed variants in stats input: {} and {}",
                first.variant, ep.variant
            )));
        }
        for s in &ep.steps {
            for (k, v) in s.x().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            for px in s.rgb.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    rgb_sum[c] += v;
                    rgb_sq[c] += v * v;
                }
            }
            rgb_n += (s.rgb.len() / 3) as f64;
            for &d in &s.disparity {
                if d != 0.0 {
                    let d = d as f64;
                    d_sum += d;
                    d_sq += d * d;
                    d_n += 1.0;
                }
            }
        }
    }
    let flagged: Vec<bool> = lo.iter().zip(&hi).map(|(a, b)| b - a <= 1e-12).collect();
    let mut rgb_mean = [0.0; 3];
    let mut rgb_std = [1.0; 3];
    for c in 0..3 {
        (rgb_mean[c], rgb_std[c]) = mean_std(rgb_sum[c], rgb_sq[c], rgb_n);
    }
    let (disparity_mean, disparity_std) = mean_std(d_sum, d_sq, d_n);
    let split = super::STATE_DIM.min(dim);
    Ok(NormStats {
        state_min: lo[..split].to_vec(),
        state_max: hi[..split].to_vec(),
        cmd_min: lo[split..].to_vec(),
        cmd_max: hi[split..].to_vec(),
        flagged,
        rgb_mean,
        rgb_std,
        disparity_mean,
        disparity_std,
    })
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.state_min.len() + self.cmd_min.len()
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        let s = self.state_min.len();
        if k < s {
            (self.state_min[k], self.state_max[k])
        } else {
            (self.cmd_min[k - s], self.cmd_max[k - s])
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} dims, stats have {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, v)| {
                if self.flagged[k] {
                    0.5
                } else {
                    let (lo, hi) = self.bounds(k);
                    (v - lo) / (hi - lo)
                }
            })
            .collect())
    }

    pub fn denormalize(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        Ok(y.iter()
            .enumerate()
            .map(|(k, v)| {
                let (lo, hi) = self.bounds(k);
                if self.flagged[k] {
                    lo
                } else {
                    lo + v * (hi - lo)
                }
            })
            .collect())
    }

    /// Standardized RGB in planar channel-major layout (3 x h x w).
    pub fn standardize_rgb(&self, rgb: &[u8]) -> Vec<f64> {
        let n = rgb.len() / 3;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = (px[c] as f64 / 255.0 - self.rgb_mean[c]) / self.rgb_std[c];
            }
        }
        out
    }

    pub fn standardize_disparity(&self, disparity: &[f32]) -> Vec<f64> {
        disparity
            .iter()
            .map(|d| (*d as f64 - self.disparity_mean) / self.disparity_std)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Step;
    use crate::expert::Outcome;
    use crate::sim::scene::{reference_scene, Variant};
    use proptest::prelude::*;

    fn episode(variant: Variant, states: Vec<[f32; 5]>, pixels: Vec<(Vec<u8>, Vec<f32>)>) -> Episode {
        let steps = states
            .into_iter()
            .zip(pixels)
            .enumerate()
            .map(|(t, (state, (rgb, disparity)))| Step {
                t: t as u32,
                state,
                base_cmd: (variant == Variant::Long).then(|| [state[0] * 0.5, -state[1]]),
                rgb,
                disparity,
            })
            .collect();
        Episode {
            variant,
            seed: 0,
            outcome: Outcome::Done,
            scene: reference_scene(),
            dt: 0.1,
            width: 2,
            height: 1,
            steps,
        }
    }

    // Two-pass reference over fully materialized samples.
    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    #[test]
    fn constant_dim_is_flagged() {
        let ep = episode(
            Variant::Short,
            vec![[0.1, 1.0, 0.0, 0.0, 1.0], [0.2, -1.0, 0.0, 0.0, 1.0]],
            vec![(vec![0; 6], vec![0.0; 2]), (vec![255; 6], vec![2.0, 0.0])],
        );
        let s = compute_norm_stats(&[ep]).unwrap();
        assert_eq!(s.flagged, vec![false, false, true, true, true]);
        let n = s.normalize(&[0.15, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((n[0] - 0.5).abs() < 1e-6 && n[1] == 0.5 && n[4] == 0.5);
        assert_eq!(s.denormalize(&n).unwrap()[4], 1.0);
        // Zero disparity excluded: only one nonzero sample.
        assert_eq!(s.disparity_mean, 2.0);
        assert_eq!(s.disparity_std, 1.0);
        assert!(s.normalize(&[0.0; 4]).is_err());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(compute_norm_stats(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_two_pass_oracle(
            long in any::<bool>(),
            rows in prop::collection::vec((prop::array::uniform5(-2.0f32..2.0), prop::collection::vec(any::<u8>(), 6), prop::collection::vec(0.0f32..30.0, 2)), 2..12),
        ) {
            let v = if long { Variant::Long } else { Variant::Short };
            let states: Vec<_> = rows.iter().map(|r| r.0).collect();
            let pix: Vec<_> = rows.iter().map(|r| (r.1.clone(), r.2.clone())).collect();
            let ep = episode(v, states, pix);
            let s = compute_norm_stats(std::slice::from_ref(&ep)).unwrap();
            for c in 0..3 {
                let xs: Vec<f64> = ep.steps.iter().flat_map(|st| st.rgb.chunks(3).map(move |p| p[c] as f64 / 255.0)).collect();
                let (m, sd) = two_pass(&xs);
                prop_assert!((s.rgb_mean[c] - m).abs() < 1e-6);
                if sd > 1e-6 { prop_assert!((s.rgb_std[c] - sd).abs() < 1e-6); }
            }
            let ds: Vec<f64> = ep.steps.iter().flat_map(|st| st.disparity.iter().filter(|d| **d != 0.0).map(|d| *d as f64)).collect();
            if !ds.is_empty() {
                let (m, sd) = two_pass(&ds);
                prop_assert!((s.disparity_mean - m).abs() < 1e-6);
                if sd > 1e-6 { prop_assert!((s.disparity_std - sd).abs() < 1e-6); }
            }
            for st in &ep.steps {
                let x = st.x();
                let n = s.normalize(&x).unwrap();
                prop_assert!(n.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
                let back = s.denormalize(&n).unwrap();
                for k in 0..x.len() {
                    prop_assert!((back[k] - x[k]).abs() < 1e-6);
                }
            }
        }
    }
}
