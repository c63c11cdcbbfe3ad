//! Recorded expert episodes, their on-disk format and normalization stats.

mod io;
mod stats;

pub use io::{list_episode_dirs, load, load_all, read_info, save, EpisodeInfo, MANIFEST_FILE, SCHEMA_VERSION, STEPS_FILE, STEPS_MAGIC};
pub use stats::{compute_norm_stats, NormStats};


use crate::error::{Error, Result};
use crate::expert::runner::apply_tick;
use crate::expert::{ExpertTranscript, Outcome};
use crate::sim::robot::within_limits;
use crate::sim::scene::Variant;
use crate::sim::{World, WorldConfig};

pub const STATE_DIM: usize = 5;
pub const CMD_DIM: usize = 2;

/// One recorded tick: the state before the tick's command, the command, and
/// the frame rendered at that state.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub t: u32,
    pub state: [f32; STATE_DIM],
    pub base_cmd: Option<[f32; CMD_DIM]>,
    pub rgb: Vec<u8>,
    pub disparity: Vec<f32>,
}

impl Step {
    /// Learner state vector: joints, plus (v, omega) for the long variant.
    pub fn x(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.state.iter().map(|v| *v as f64).collect();
        if let Some(c) = self.base_cmd {
            x.extend(c.iter().map(|v| *v as f64));
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: Outcome,
    pub scene: WorldConfig,
    pub dt: f64,
    pub width: usize,
    pub height: usize,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn state_dim(&self) -> usize {
        state_dim(self.variant)
    }

    pub fn is_success(&self) -> bool {
        self.outcome.is_done()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        for (i, s) in self.steps.iter().enumerate() {
            if s.t as usize != i {
                return Err(Error::InvalidConfig(format!(
                    "step {i} has tick index {}",
                    s.t
                )));
            }
            if s.base_cmd.is_some() != (self.variant == Variant::Long) {
                return Err(Error::InvalidConfig(format!(
                    "step {i}: base_cmd presence does not match variant {}",
                    self.variant
                )));
            }
            if s.rgb.len() != 3 * n || s.disparity.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "step {i}: image size does not match {}x{}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

pub fn state_dim(variant: Variant) -> usize {
    match variant {
        Variant::Long => STATE_DIM + CMD_DIM,
        Variant::Short => STATE_DIM,
    }
}

/// Replays an expert transcript on a fresh world built from `scene`,
/// rendering a frame at every tick.
pub fn record(transcript: &ExpertTranscript, scene: &WorldConfig) -> Result<Episode> {
    let mut world = World::new(scene.clone())?;
    let cam = &scene.camera;
    let mut steps = Vec::with_capacity(transcript.ticks.len());
    for (i, rec) in transcript.ticks.iter().enumerate() {
        if *world.state() != rec.state {
            return Err(Error::InvalidConfig(format!(
                "replay diverged from transcript at tick {i}"
            )));
        }
        let frame = world.render();
        let q = world.state().joints;
        debug_assert!(within_limits(&q));
        steps.push(Step {
            t: i as u32,
            state: q.map(|v| v as f32),
            base_cmd: match transcript.variant {
                Variant::Long => Some([rec.cmd.v as f32, rec.cmd.omega as f32]),
                Variant::Short => None,
            },
            rgb: frame.rgb,
            disparity: frame.disparity.iter().map(|d| *d as f32).collect(),
        });
        apply_tick(&mut world, rec.cmd, rec.joint_target);
    }
    Ok(Episode {
        variant: transcript.variant,
        seed: scene.rng_seed,
        outcome: transcript.outcome.clone(),
        scene: scene.clone(),
        dt: scene.dt,
        width: cam.width,
        height: cam.height,
        steps,
    })
}

/// Runs the expert on `scene` and records the episode.
pub fn collect_episode(
    scene: &WorldConfig,
    variant: Variant,
    params: &crate::expert::ExpertParams,
) -> Result<(Episode, ExpertTranscript)> {
    let mut world = World::new(scene.clone())?;
    let transcript = crate::expert::run_expert(&mut world, variant, params);
    let episode = record(&transcript, scene)?;
    Ok((episode, transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::ExpertParams;
    use crate::sim::scene::{long_scene, reference_scene, short_scene};

    #[test]
    fn short_episode_matches_transcript() {
        let (ep, tr) = collect_episode(&short_scene(2), Variant::Short, &ExpertParams::for_variant(Variant::Short)).unwrap();
        assert!(ep.is_success());
        assert_eq!(ep.steps.len(), tr.ticks.len());
        assert!(ep.steps.iter().all(|s| s.base_cmd.is_none()));
        assert!(ep.steps.iter().all(|s| s.rgb.len() == 64 * 64 * 3 && s.disparity.len() == 4096));
        ep.validate().unwrap();
    }

    #[test]
    fn long_episode_carries_commands() {
        let (ep, _) = collect_episode(&long_scene(1), Variant::Long, &ExpertParams::for_variant(Variant::Long)).unwrap();
        assert!(ep.steps.iter().all(|s| s.base_cmd.is_some()));
        assert!(ep.steps.iter().any(|s| s.base_cmd.unwrap() != [0.0, 0.0]));
        ep.validate().unwrap();
    }

    #[test]
    fn failed_run_is_recorded() {
        let mut scene = reference_scene();
        scene.objects[0].center[0] = 1.1;
        let (ep, _) = collect_episode(&scene, Variant::Short, &ExpertParams::for_variant(Variant::Short)).unwrap();
        assert!(!ep.is_success());
        assert!(matches!(ep.outcome, Outcome::Failed(_)));
    }
}
