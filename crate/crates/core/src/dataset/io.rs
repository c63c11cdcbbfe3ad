//! Episode directory layout:
//!
//! * `manifest.json`: schema version, variant, dims, dt, seed, outcome, scene.
//! * `steps.bin`: `SKLDSET1`, u32 step count, then per step `5 x f32` state,
//!   `[2 x f32]` command (long variant only), `w*h*3` RGB bytes and `w*h x f32`
//!   disparity. Little-endian, row-major.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{state_dim, Episode, Step, CMD_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::expert::Outcome;
use crate::sim::scene::Variant;
use crate::sim::WorldConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const STEPS_MAGIC: &[u8; 8] = b"SKLDSET1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STEPS_FILE: &str = "steps.bin";

#[derive(Serialize, Deserialize)]
struct Dims {
    state: usize,
    cmd: usize,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    variant: Variant,
    dims: Dims,
    dt: f64,
    seed: u64,
    outcome: Outcome,
    steps: usize,
    scene: WorldConfig,
}

fn step_stride(cmd: bool, pixels: usize) -> usize {
    4 * STATE_DIM + if cmd { 4 * CMD_DIM } else { 0 } + 3 * pixels + 4 * pixels
}

pub fn save(episode: &Episode, dir: &Path) -> Result<()> {
    episode.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        variant: episode.variant,
        dims: Dims {
            state: STATE_DIM,
            cmd: if episode.variant == Variant::Long { CMD_DIM } else { 0 },
            width: episode.width,
            height: episode.height,
        },
        dt: episode.dt,
        seed: episode.seed,
        outcome: episode.outcome.clone(),
        steps: episode.steps.len(),
        scene: episode.scene.clone(),
    };
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest: {e}")))?;
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;

    let pixels = episode.width * episode.height;
    let has_cmd = episode.variant == Variant::Long;
    let mut buf = Vec::with_capacity(12 + episode.steps.len() * step_stride(has_cmd, pixels));
    buf.extend_from_slice(STEPS_MAGIC);
    buf.extend_from_slice(&(episode.steps.len() as u32).to_le_bytes());
    for s in &episode.steps {
        for v in &s.state {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(c) = &s.base_cmd {
            for v in c {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&s.rgb);
        for d in &s.disparity {
            buf.extend_from_slice(&d.to_le_bytes());
        }
    }
    let spath = dir.join(STEPS_FILE);
    std::fs::write(&spath, buf).map_err(|e| Error::io(&spath, e))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Manifest fields of a stored episode, read without the step data.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInfo {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub width: usize,
    pub height: usize,
    pub dt: f64,
    pub scene: WorldConfig,
}

pub fn read_info(dir: &Path) -> Result<EpisodeInfo> {
    let m = read_manifest(dir)?;
    Ok(EpisodeInfo {
        variant: m.variant,
        seed: m.seed,
        outcome: m.outcome,
        steps: m.steps,
        width: m.dims.width,
        height: m.dims.height,
        dt: m.dt,
        scene: m.scene,
    })
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: mpath.clone(),
        offset: 0,
        reason: e.to_string(),
    })?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt {
            path: mpath.clone(),
            offset: 0,
            reason: "missing schema_version".into(),
        })?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| Error::Corrupt {
        path: mpath.clone(),
        offset: 0,
        reason: e.to_string(),
    })?;
    let has_cmd = m.variant == Variant::Long;
    if m.dims.state != STATE_DIM || m.dims.cmd != if has_cmd { CMD_DIM } else { 0 } {
        return Err(Error::Corrupt {
            path: mpath,
            offset: 0,
            reason: format!(
                "dims do not match variant {} (state {}, cmd {})",
                m.variant, m.dims.state, m.dims.cmd
            ),
        });
    }
    debug_assert_eq!(state_dim(m.variant), m.dims.state + m.dims.cmd);
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Episode> {
    let m = read_manifest(dir)?;
    let has_cmd = m.variant == Variant::Long;
    let spath = dir.join(STEPS_FILE);
    let bytes = std::fs::read(&spath).map_err(|e| Error::io(&spath, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: spath,
            expected: 12,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..8] != STEPS_MAGIC {
        return Err(Error::Corrupt {
            path: spath,
            offset: 0,
            reason: "bad magic, expected SKLDSET1".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if count != m.steps {
        return Err(Error::Corrupt {
            path: spath,
            offset: 8,
            reason: format!("step count {count} disagrees with manifest ({})", m.steps),
        });
    }
    let pixels = m.dims.width * m.dims.height;
    let stride = step_stride(has_cmd, pixels);
    let expected = 12 + (count * stride) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: spath,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut steps = Vec::with_capacity(count);
    let mut at = 12;
    for t in 0..count {
        let start = at;
        let mut state = [0f32; STATE_DIM];
        for v in state.iter_mut() {
            *v = read_f32(&bytes, at);
            at += 4;
        }
        let base_cmd = if has_cmd {
            let c = [read_f32(&bytes, at), read_f32(&bytes, at + 4)];
            at += 8;
            Some(c)
        } else {
            None
        };
        let rgb = bytes[at..at + 3 * pixels].to_vec();
        at += 3 * pixels;
        let disparity: Vec<f32> = (0..pixels).map(|i| read_f32(&bytes, at + 4 * i)).collect();
        at += 4 * pixels;
        if state.iter().chain(base_cmd.iter().flatten()).chain(&disparity).any(|v| !v.is_finite()) {
            return Err(Error::Corrupt {
                path: spath,
                offset: start as u64,
                reason: format!("non-finite value in step {t}"),
            });
        }
        steps.push(Step {
            t: t as u32,
            state,
            base_cmd,
            rgb,
            disparity,
        });
    }
    Ok(Episode {
        variant: m.variant,
        seed: m.seed,
        outcome: m.outcome,
        scene: m.scene,
        dt: m.dt,
        width: m.dims.width,
        height: m.dims.height,
        steps,
    })
}

/// Episode directories under `root` (those containing a manifest), sorted by name.
pub fn list_episode_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if p.is_dir() && p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_all(root: &Path) -> Result<Vec<Episode>> {
    list_episode_dirs(root)?.iter().map(|d| load(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{reference_scene, short_scene};
    use proptest::prelude::*;

    fn synthetic(variant: Variant, n: usize, w: usize, h: usize, salt: u32) -> Episode {
        let mut scene = reference_scene();
        scene.camera.width = w;
        scene.camera.height = h;
        let steps = (0..n)
            .map(|t| Step {
                t: t as u32,
                state: [0.1 * t as f32, -1.5, 0.25, 1.0e-7 * salt as f32, 1.0],
                base_cmd: (variant == Variant::Long).then(|| [0.5, -0.3 * t as f32]),
                rgb: (0..w * h * 3).map(|i| (i as u32 * 7 + salt) as u8).collect(),
                disparity: (0..w * h).map(|i| i as f32 * 0.37 + salt as f32).collect(),
            })
            .collect();
        Episode {
            variant,
            seed: 99,
            outcome: Outcome::Done,
            scene,
            dt: 0.1,
            width: w,
            height: h,
            steps,
        }
    }

    #[test]
    fn round_trip_real_episode() {
        let dir = tempfile::tempdir().unwrap();
        let (ep, _) = super::super::collect_episode(
            &short_scene(4),
            Variant::Short,
            &crate::expert::ExpertParams::for_variant(Variant::Short),
        )
        .unwrap();
        save(&ep, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), ep);
    }

    #[test]
    fn truncated_steps_file() {
        let dir = tempfile::tempdir().unwrap();
        let ep = synthetic(Variant::Short, 3, 4, 4, 1);
        save(&ep, dir.path()).unwrap();
        let p = dir.path().join(STEPS_FILE);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        let err = load(dir.path()).unwrap_err();
        let stride = 20 + 48 + 64;
        match &err {
            Error::Truncated { expected, actual, path } => {
                assert_eq!(*expected, 12 + 3 * stride as u64);
                assert_eq!(*actual, 12 + 3 * stride as u64 - 10);
                assert!(path.ends_with(STEPS_FILE));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("steps.bin"));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save(&synthetic(Variant::Short, 1, 2, 2, 0), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, .. }));
        assert!(err.to_string().starts_with("unsupported dataset version"));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(err.to_string().contains(MANIFEST_FILE));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn randomized_round_trip(long in any::<bool>(), n in 0usize..6, w in 1usize..6, h in 1usize..6, salt in any::<u32>()) {
            let v = if long { Variant::Long } else { Variant::Short };
            let ep = synthetic(v, n, w, h, salt);
            let dir = tempfile::tempdir().unwrap();
            save(&ep, dir.path()).unwrap();
            let back = load(dir.path()).unwrap();
            prop_assert_eq!(&back, &ep);
            // Byte-level: saving the loaded episode reproduces the files.
            let dir2 = tempfile::tempdir().unwrap();
            save(&back, dir2.path()).unwrap();
            for f in [MANIFEST_FILE, STEPS_FILE] {
                prop_assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
            }
        }
    }
}
