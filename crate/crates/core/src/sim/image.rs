//! Binary PPM (P6) and 16-bit PGM (P5) dumps of rendered frames.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Disparity values are written as `round(disparity * DISPARITY_PGM_SCALE)`,
/// saturating at 65535.
pub const DISPARITY_PGM_SCALE: f64 = 1000.0;

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_disparity_pgm(width: usize, height: usize, disparity: &[f64]) -> Vec<u8> {
    assert_eq!(disparity.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for d in disparity {
        let v = (d * DISPARITY_PGM_SCALE).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
