//! Closed-loop evaluation of a trained policy in the simulator.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::runner::apply_tick;
use crate::geom::{Aabb, Vec3};
use crate::learner::Policy;
use crate::sim::robot::{BaseCommand, Joints, JOINT_LOWER};
use crate::sim::scene::Variant;
use crate::sim::{SensorFrame, World, WorldConfig};

pub const DEFAULT_MAX_STEPS: usize = 300;
pub const CSV_HEADER: &str = "scenario,seed,touched,grasped,ticks_to_touch,final_tip_distance_m,steps";

/// Margin around the start pose and table that bounds the tip.
const WORKSPACE_MARGIN: f64 = 1.0;
const WORKSPACE_TOP: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_steps: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Grasped,
    LeftWorkspace,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub scenario: String,
    pub seed: u64,
    pub touched: bool,
    pub grasped: bool,
    pub ticks_to_touch: Option<u64>,
    pub final_tip_distance_m: f64,
    pub steps: usize,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: WorldConfig,
}

impl Scenario {
    pub fn new(name: impl Into<String>, scene: WorldConfig) -> Self {
        Scenario {
            name: name.into(),
            scene,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub episodes: usize,
    pub touched: usize,
    pub grasped: usize,
    pub touch_rate: f64,
    pub mean_ticks_to_touch: Option<f64>,
    pub mean_final_tip_distance_m: f64,
}

/// Distance from `p` to the box surface, zero inside.
pub fn box_distance(b: &Aabb, p: &Vec3) -> f64 {
    let (lo, hi) = (b.min(), b.max());
    let mut s = 0.0;
    for k in 0..3 {
        let d = (lo[k] - p[k]).max(p[k] - hi[k]).max(0.0);
        s += d * d;
    }
    s.sqrt()
}

fn workspace(scene: &WorldConfig) -> Aabb {
    let b = &scene.start.base;
    let (tmin, tmax) = (scene.table.min(), scene.table.max());
    let lo = [b.x.min(tmin[0]) - WORKSPACE_MARGIN, b.y.min(tmin[1]) - WORKSPACE_MARGIN, 0.0];
    let hi = [b.x.max(tmax[0]) + WORKSPACE_MARGIN, b.y.max(tmax[1]) + WORKSPACE_MARGIN, WORKSPACE_TOP];
    Aabb::new(
        [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0],
        [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0, (hi[2] - lo[2]) / 2.0],
    )
}

/// Runs the policy closed-loop on one scene. The predicted next joint
/// vector becomes the position target; the long variant also drives the base
/// with the predicted command.
pub fn rollout(policy: &Policy, scenario: &Scenario, variant: Variant, cfg: &RolloutConfig) -> Result<RolloutResult> {
    rollout_observed(policy, scenario, variant, cfg, &mut |_, _| Ok(()))
}

/// [`rollout`] that hands every rendered frame (with its tick) to `observe`.
pub fn rollout_observed(
    policy: &Policy,
    scenario: &Scenario,
    variant: Variant,
    cfg: &RolloutConfig,
    observe: &mut dyn FnMut(u64, &SensorFrame) -> Result<()>,
) -> Result<RolloutResult> {
    if policy.variant() != variant {
        return Err(Error::DimensionMismatch(format!(
            "policy was trained on {} episodes, scenario is {}",
            policy.variant(),
            variant
        )));
    }
    let mut world = World::new(scenario.scene.clone())?;
    let bounds = workspace(&scenario.scene);
    let mut hidden = policy.initial_state();
    let mut cmd = BaseCommand::ZERO;
    let mut ticks_to_touch = None;
    let mut stop = StopReason::MaxSteps;
    let mut steps = 0;
    for _ in 0..cfg.max_steps {
        let frame = world.render();
        observe(world.tick(), &frame)?;
        let mut x: Vec<f64> = world.state().joints.to_vec();
        if variant == Variant::Long {
            x.extend([cmd.v, cmd.omega]);
        }
        let disparity: Vec<f32> = frame.disparity.iter().map(|d| *d as f32).collect();
        let next = policy.predict_next(&frame.rgb, &disparity, &x, &mut hidden)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("policy output at step {steps} of {}", scenario.name)));
        }
        let mut target: Joints = JOINT_LOWER;
        target.copy_from_slice(&next[..5]);
        let applied = if variant == Variant::Long { cmd } else { BaseCommand::ZERO };
        apply_tick(&mut world, applied, target);
        if variant == Variant::Long {
            cmd = BaseCommand::new(next[5], next[6]).clamped();
        }
        steps += 1;
        if ticks_to_touch.is_none() && world.touching() {
            ticks_to_touch = Some(world.tick());
        }
        if world.touching() && world.grasped() {
            stop = StopReason::Grasped;
            break;
        }
        if !bounds.contains(&world.tip()) {
            stop = StopReason::LeftWorkspace;
            break;
        }
    }
    Ok(RolloutResult {
        scenario: scenario.name.clone(),
        seed: scenario.scene.rng_seed,
        touched: ticks_to_touch.is_some(),
        grasped: world.grasped(),
        ticks_to_touch,
        final_tip_distance_m: box_distance(&world.target_box(), &world.tip()),
        steps,
        stop,
    })
}

pub fn evaluate_suite(
    policy: &Policy,
    scenarios: &[Scenario],
    variant: Variant,
    cfg: &RolloutConfig,
) -> Result<(Vec<RolloutResult>, SuiteSummary)> {
    let rows = scenarios
        .iter()
        .map(|s| rollout(policy, s, variant, cfg))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok((rows, summary))
}

pub fn summarize(rows: &[RolloutResult]) -> SuiteSummary {
    let n = rows.len();
    let touched = rows.iter().filter(|r| r.touched).count();
    let ticks: Vec<f64> = rows.iter().filter_map(|r| r.ticks_to_touch.map(|t| t as f64)).collect();
    SuiteSummary {
        episodes: n,
        touched,
        grasped: rows.iter().filter(|r| r.grasped).count(),
        touch_rate: if n == 0 { 0.0 } else { touched as f64 / n as f64 },
        mean_ticks_to_touch: (!ticks.is_empty()).then(|| ticks.iter().sum::<f64>() / ticks.len() as f64),
        mean_final_tip_distance_m: if n == 0 {
            0.0
        } else {
            rows.iter().map(|r| r.final_tip_distance_m).sum::<f64>() / n as f64
        },
    }
}

pub fn to_csv(rows: &[RolloutResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let ticks = r.ticks_to_touch.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{}",
            r.scenario, r.seed, r.touched, r.grasped, ticks, r.final_tip_distance_m, r.steps
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[RolloutResult]) -> Result<()> {
    std::fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e))
}
