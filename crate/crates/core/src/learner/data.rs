//! Conversion of recorded episodes into learner inputs.

use crate::dataset::{Episode, NormStats};
use crate::error::{Error, Result};

/// Average-pools `channels` planes of `h x w` by `factor`.
pub fn downscale(values: &[f64], channels: usize, h: usize, w: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 || values.len() != channels * h * w {
        return Err(Error::ShapeMismatch(format!(
            "cannot downscale {channels}x{h}x{w} ({} values) by {factor}",
            values.len()
        )));
    }
    if factor == 1 {
        return Ok(values.to_vec());
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        for y in 0..h {
            for x in 0..w {
                out[(c * oh + y / factor) * ow + x / factor] += values[(c * h + y) * w + x];
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    Ok(out)
}

/// Standardized, downscaled network inputs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub rgb: Vec<f64>,
    pub disparity: Vec<f64>,
}

pub fn frame_input(
    stats: &NormStats,
    rgb: &[u8],
    disparity: &[f32],
    width: usize,
    height: usize,
    factor: usize,
) -> Result<FrameInput> {
    if rgb.len() != 3 * width * height || disparity.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "frame buffers do not match {width}x{height}"
        )));
    }
    Ok(FrameInput {
        rgb: downscale(&stats.standardize_rgb(rgb), 3, height, width, factor)?,
        disparity: downscale(&stats.standardize_disparity(disparity), 1, height, width, factor)?,
    })
}

/// Up to `per_episode` evenly spaced frames from each episode, in order.
pub fn sample_frames(
    episodes: &[Episode],
    stats: &NormStats,
    per_episode: usize,
    factor: usize,
) -> Result<Vec<FrameInput>> {
    let mut out = Vec::new();
    for ep in episodes {
        let n = ep.steps.len();
        let k = per_episode.min(n);
        for j in 0..k {
            let i = if k <= 1 { 0 } else { j * (n - 1) / (k - 1) };
            let s = &ep.steps[i];
            out.push(frame_input(stats, &s.rgb, &s.disparity, ep.width, ep.height, factor)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downscale_averages_blocks() {
        let v: Vec<f64> = (0..16).map(f64::from).collect();
        let d = downscale(&v, 1, 4, 4, 2).unwrap();
        assert_eq!(d, vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(downscale(&v, 1, 4, 4, 1).unwrap(), v);
        assert!(downscale(&v, 1, 4, 4, 3).is_err());
    }
}
