//! Action state machine: LOCATE -> NAVIGATE -> REACH -> GRASP -> LIFT -> DONE.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arm::plan_arm;
use super::grid::{astar, OccupancyGrid};
use super::kinematics::{ik, IkParams};
use super::pursuit::{follow_path, heading_command, Follow, DEFAULT_GOAL_TOL, DEFAULT_LOOKAHEAD};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::perception::{locate_object, PerceptionParams};
use crate::sim::robot::{shoulder, wrap_angle, BaseCommand, Joints, RobotState, GRIPPER};
use crate::sim::scene::Variant;
use crate::sim::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExpertPhase {
    Locate,
    Navigate,
    Reach,
    Grasp,
    Lift,
    Done,
    Failed,
}

impl ExpertPhase {
    pub const CANONICAL: [ExpertPhase; 6] = [
        ExpertPhase::Locate,
        ExpertPhase::Navigate,
        ExpertPhase::Reach,
        ExpertPhase::Grasp,
        ExpertPhase::Lift,
        ExpertPhase::Done,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExpertPhase::Locate => "LOCATE",
            ExpertPhase::Navigate => "NAVIGATE",
            ExpertPhase::Reach => "REACH",
            ExpertPhase::Grasp => "GRASP",
            ExpertPhase::Lift => "LIFT",
            ExpertPhase::Done => "DONE",
            ExpertPhase::Failed => "FAILED",
        }
    }
}

impl fmt::Display for ExpertPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "cause", rename_all = "UPPERCASE")]
pub enum Outcome {
    Done,
    Failed(String),
}

impl Outcome {
    pub fn is_done(&self) -> bool {
        matches!(self, Outcome::Done)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub perception: PerceptionParams,
    pub ik: IkParamsConfig,
    pub lookahead: f64,
    pub goal_tol: f64,
    pub standoff: f64,
    pub pregrasp_offset: f64,
    pub lift_height: f64,
    /// Std-dev of the simulated marker pose error (short variant).
    pub marker_noise: f64,
    /// Half-width of the uniform approach-direction jitter; `None` disables it.
    pub approach_jitter: Option<f64>,
    pub grid_resolution: f64,
    pub robot_radius: f64,
    pub max_nav_ticks: usize,
    pub max_grasp_ticks: usize,
    pub face_tolerance: f64,
}

/// Serializable mirror of [`IkParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkParamsConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl From<IkParamsConfig> for IkParams {
    fn from(c: IkParamsConfig) -> Self {
        IkParams {
            tol: c.tol,
            max_iter: c.max_iter,
            damping: c.damping,
            ..IkParams::default()
        }
    }
}

impl ExpertParams {
    pub fn for_variant(variant: Variant) -> Self {
        let d = IkParams::default();
        ExpertParams {
            perception: PerceptionParams::default(),
            ik: IkParamsConfig {
                tol: d.tol,
                max_iter: d.max_iter,
                damping: d.damping,
            },
            lookahead: DEFAULT_LOOKAHEAD,
            goal_tol: DEFAULT_GOAL_TOL,
            standoff: 0.55,
            pregrasp_offset: 0.10,
            lift_height: 0.15,
            marker_noise: 0.005,
            approach_jitter: match variant {
                Variant::Long => Some(0.2),
                Variant::Short => None,
            },
            grid_resolution: 0.05,
            robot_radius: 0.3,
            max_nav_ticks: 1500,
            max_grasp_ticks: 20,
            face_tolerance: 0.005,
        }
    }
}

/// One simulator tick as issued by the expert. `state` is the state before
/// the command is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub phase: ExpertPhase,
    pub cmd: BaseCommand,
    pub joint_target: Joints,
    pub state: RobotState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertTranscript {
    pub variant: Variant,
    /// Phases entered, in order, with the tick at which each began.
    pub phases: Vec<(ExpertPhase, u64)>,
    pub ticks: Vec<TickRecord>,
    pub outcome: Outcome,
    pub located: Option<[f64; 3]>,
}

impl ExpertTranscript {
    pub fn phase_sequence(&self) -> Vec<ExpertPhase> {
        self.phases.iter().map(|(p, _)| *p).collect()
    }

    /// Debug log: one line per tick.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.ticks {
            let q = t.state.joints;
            let _ = writeln!(
                s,
                "{:5} {:8} v={:+.4} w={:+.4} target=[{:.4} {:.4} {:.4} {:.4} {:.4}] base=({:.4},{:.4},{:+.4}) q=[{:.4} {:.4} {:.4} {:.4} {:.4}]",
                t.tick, t.phase, t.cmd.v, t.cmd.omega,
                t.joint_target[0], t.joint_target[1], t.joint_target[2], t.joint_target[3], t.joint_target[4],
                t.state.base.x, t.state.base.y, t.state.base.yaw,
                q[0], q[1], q[2], q[3], q[4],
            );
        }
        let _ = match &self.outcome {
            Outcome::Done => writeln!(s, "outcome DONE"),
            Outcome::Failed(c) => writeln!(s, "outcome FAILED {c}"),
        };
        s
    }
}

/// Applies one command and the grasp check. Recording replays ticks through
/// this same function so the replayed world matches the expert's exactly.
pub fn apply_tick(world: &mut World, cmd: BaseCommand, joint_target: Joints) -> RobotState {
    world.step(cmd, joint_target);
    world.attach_if_grasping();
    world.state().clone()
}

struct Runner<'w> {
    world: &'w mut World,
    params: ExpertParams,
    phase: ExpertPhase,
    transcript: ExpertTranscript,
    rng: ChaCha8Rng,
}

impl<'w> Runner<'w> {
    fn enter(&mut self, phase: ExpertPhase) {
        self.phase = phase;
        self.transcript.phases.push((phase, self.world.tick()));
    }

    fn tick(&mut self, cmd: BaseCommand, joint_target: Joints) {
        self.transcript.ticks.push(TickRecord {
            tick: self.world.tick(),
            phase: self.phase,
            cmd,
            joint_target,
            state: self.world.state().clone(),
        });
        apply_tick(self.world, cmd, joint_target);
    }

    fn hold(&mut self) {
        let q = self.world.state().joints;
        self.tick(BaseCommand::ZERO, q);
    }

    fn execute_to(&mut self, goal: &Joints) -> Result<()> {
        let start = self.world.state().joints;
        let plan = plan_arm(&start, goal, self.world)?;
        for wp in plan.joint_waypoints.iter().skip(1) {
            self.tick(BaseCommand::ZERO, *wp);
        }
        Ok(())
    }

    fn locate(&mut self) -> Result<Vec3> {
        let cfg = self.world.config();
        match self.transcript.variant {
            Variant::Short => {
                let truth = self.world.target_box().center();
                let normal = Normal::new(0.0, self.params.marker_noise.max(0.0))
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(truth
                    + Vec3::new(
                        normal.sample(&mut self.rng),
                        normal.sample(&mut self.rng),
                        normal.sample(&mut self.rng),
                    ))
            }
            Variant::Long => {
                let color = cfg.target_spec().color;
                let frame = self.world.render();
                locate_object(&frame, color, &self.params.perception)
            }
        }
    }

    fn standoff_goal(&mut self, grid: &OccupancyGrid, object: &Vec3) -> Result<[f64; 2]> {
        let s = self.world.state().base;
        let mut heading = (object.y - s.y).atan2(object.x - s.x);
        if let Some(j) = self.params.approach_jitter {
            if j > 0.0 {
                heading += self.rng.gen_range(-j..=j);
            }
        }
        for k in 0..13 {
            let offset = if k % 2 == 1 { 1.0 } else { -1.0 } * ((k + 1) / 2) as f64 * 0.1;
            let a = heading + offset;
            let p = [
                object.x - self.params.standoff * a.cos(),
                object.y - self.params.standoff * a.sin(),
            ];
            if grid.is_free_point(p) {
                return Ok(p);
            }
        }
        Err(Error::PoseInCollision)
    }

    fn navigate(&mut self, object: &Vec3) -> Result<()> {
        let s = self.world.state().base;
        let boxes = self.world.static_obstacles();
        let margin = 1.5;
        let min = [s.x.min(object.x) - margin, s.y.min(object.y) - margin];
        let max = [s.x.max(object.x) + margin, s.y.max(object.y) + margin];
        let grid = OccupancyGrid::from_boxes(
            &boxes,
            min,
            max,
            self.params.grid_resolution,
            self.params.robot_radius,
        )?;
        let goal = self.standoff_goal(&grid, object)?;
        let path = astar(&grid, [s.x, s.y], goal)?;
        let q = self.world.state().joints;
        let mut ticks = 0;
        loop {
            if ticks >= self.params.max_nav_ticks {
                return Err(Error::NavigationTimeout);
            }
            match follow_path(
                self.world.state(),
                &path,
                self.params.lookahead,
                self.params.goal_tol,
            ) {
                Follow::Arrived => break,
                Follow::Command(cmd) => self.tick(cmd, q),
            }
            ticks += 1;
        }
        // Turn in place until the arm plane points at the object.
        loop {
            let b = self.world.state().base;
            let err = wrap_angle((object.y - b.y).atan2(object.x - b.x) - b.yaw);
            if err.abs() < self.params.face_tolerance {
                break;
            }
            if ticks >= self.params.max_nav_ticks {
                return Err(Error::NavigationTimeout);
            }
            let cmd = BaseCommand::new(0.0, heading_command(err).omega);
            self.tick(cmd, q);
            ticks += 1;
        }
        Ok(())
    }

    /// The arm only moves in the vertical plane through the base heading;
    /// grasp at the point of that plane nearest the estimate.
    fn project_to_arm_plane(&self, p: &Vec3) -> Vec3 {
        let b = self.world.state().base;
        let s = shoulder(0.0, &b);
        let h = b.heading();
        let along = (p - s).dot(&h);
        Vec3::new(s.x + along * h.x, s.y + along * h.y, p.z)
    }

    fn run(&mut self) -> Result<()> {
        let ik_params: IkParams = self.params.ik.into();

        self.enter(ExpertPhase::Locate);
        let mut object = self.locate()?;
        self.transcript.located = Some([object.x, object.y, object.z]);
        self.hold();

        if self.transcript.variant == Variant::Long {
            self.enter(ExpertPhase::Navigate);
            self.navigate(&object)?;
        }

        self.enter(ExpertPhase::Reach);
        if self.transcript.variant == Variant::Long {
            // Close-range estimate from the grasp standoff.
            object = self.locate()?;
            self.transcript.located = Some([object.x, object.y, object.z]);
        }
        let grasp = self.project_to_arm_plane(&object);
        let base = self.world.state().base;
        let pre = grasp + Vec3::new(0.0, 0.0, self.params.pregrasp_offset);
        let q_pre = ik(&pre, &self.world.state().joints, &base, &ik_params)?.joints;
        self.execute_to(&q_pre)?;
        let q_grasp = ik(&grasp, &q_pre, &base, &ik_params)?.joints;
        self.execute_to(&q_grasp)?;

        self.enter(ExpertPhase::Grasp);
        let mut closed = q_grasp;
        closed[GRIPPER] = 0.0;
        let mut held = false;
        for _ in 0..self.params.max_grasp_ticks {
            self.tick(BaseCommand::ZERO, closed);
            if self.world.grasped() {
                held = true;
                break;
            }
        }
        if !held {
            return Err(Error::GraspFailed);
        }

        self.enter(ExpertPhase::Lift);
        let lift = self.world.tip() + Vec3::new(0.0, 0.0, self.params.lift_height);
        let mut q_lift = ik(&lift, &self.world.state().joints, &base, &ik_params)?.joints;
        q_lift[GRIPPER] = 0.0;
        self.execute_to(&q_lift)?;

        self.enter(ExpertPhase::Done);
        self.hold();
        Ok(())
    }
}

/// Runs the scripted expert on `world` until DONE or FAILED. Never panics on
/// planning errors; they end the transcript with a FAILED outcome.
pub fn run_expert(world: &mut World, variant: Variant, params: &ExpertParams) -> ExpertTranscript {
    let seed = world.config().rng_seed ^ 0x0E3E_E7A1_5EED;
    let mut runner = Runner {
        world,
        params: params.clone(),
        phase: ExpertPhase::Locate,
        transcript: ExpertTranscript {
            variant,
            phases: Vec::new(),
            ticks: Vec::new(),
            outcome: Outcome::Done,
            located: None,
        },
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    if let Err(e) = runner.run() {
        runner.enter(ExpertPhase::Failed);
        runner.transcript.outcome = Outcome::Failed(e.to_string());
    }
    runner.transcript
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{long_scene, reference_scene, short_scene};

    fn run(cfg: crate::sim::WorldConfig, v: Variant) -> (ExpertTranscript, World) {
        let mut w = World::new(cfg).unwrap();
        let t = run_expert(&mut w, v, &ExpertParams::for_variant(v));
        (t, w)
    }

    fn is_canonical_prefix(seq: &[ExpertPhase]) -> bool {
        let body: Vec<_> = seq
            .iter()
            .copied()
            .filter(|p| *p != ExpertPhase::Failed)
            .collect();
        let mut it = ExpertPhase::CANONICAL.iter();
        body.iter().all(|p| it.any(|c| c == p))
            && seq.iter().filter(|p| **p == ExpertPhase::Failed).count() <= 1
            && (seq.last() == Some(&ExpertPhase::Failed)
                || !seq.contains(&ExpertPhase::Failed))
    }

    #[test]
    fn short_reference_scene_succeeds() {
        let (t, w) = run(reference_scene(), Variant::Short);
        assert_eq!(t.outcome, Outcome::Done, "{}", t.to_text());
        assert!(w.grasped());
        assert_eq!(
            t.phase_sequence(),
            vec![
                ExpertPhase::Locate,
                ExpertPhase::Reach,
                ExpertPhase::Grasp,
                ExpertPhase::Lift,
                ExpertPhase::Done
            ]
        );
        assert!(t.ticks.iter().all(|r| r.cmd.is_zero()));
    }

    #[test]
    fn short_family_gate() {
        for seed in 0..10 {
            let (t, w) = run(short_scene(seed), Variant::Short);
            assert!(t.outcome.is_done(), "seed {seed}: {:?}", t.outcome);
            assert!(w.grasped());
            assert!(is_canonical_prefix(&t.phase_sequence()));
        }
    }

    #[test]
    fn out_of_reach_short_fails() {
        let mut cfg = reference_scene();
        cfg.objects[0].center[0] = 1.1;
        let (t, _) = run(cfg, Variant::Short);
        assert_eq!(t.outcome, Outcome::Failed("unreachable target".into()));
        assert_eq!(t.phase_sequence().last(), Some(&ExpertPhase::Failed));
        assert!(is_canonical_prefix(&t.phase_sequence()));
    }

    #[test]
    fn long_variant_navigates_first() {
        let cfg = long_scene(3);
        let start = cfg.start.base;
        let obj = cfg.target_spec().center;
        assert!((obj[0] - start.x).hypot(obj[1] - start.y) > 2.5);
        let (t, w) = run(cfg, Variant::Long);
        assert!(t.outcome.is_done(), "{:?}", t.outcome);
        assert!(w.grasped());
        let first_arm = t
            .ticks
            .iter()
            .position(|r| r.joint_target != r.state.joints)
            .unwrap();
        let nav: Vec<_> = t.ticks[..first_arm]
            .iter()
            .filter(|r| r.phase == ExpertPhase::Navigate && !r.cmd.is_zero())
            .collect();
        assert!(!nav.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, _) = run(long_scene(8), Variant::Long);
        let (b, _) = run(long_scene(8), Variant::Long);
        assert_eq!(a, b);
    }
}
