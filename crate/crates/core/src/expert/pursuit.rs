//! Pure-pursuit path follower.

use super::grid::Path;
use crate::sim::robot::{wrap_angle, BaseCommand, RobotState, MAX_V};

pub const DEFAULT_LOOKAHEAD: f64 = 0.3;
pub const DEFAULT_GOAL_TOL: f64 = 0.05;
pub const HEADING_GAIN: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Follow {
    Command(BaseCommand),
    Arrived,
}

/// One control step toward the lookahead point of `path`.
pub fn follow_path(state: &RobotState, path: &Path, lookahead: f64, goal_tol: f64) -> Follow {
    let wp = &path.waypoints;
    assert!(!wp.is_empty(), "follow_path needs a non-empty path");
    let pos = [state.base.x, state.base.y];
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let last = *wp.last().unwrap();
    if dist(pos, last) <= goal_tol {
        return Follow::Arrived;
    }
    let closest = (0..wp.len())
        .min_by(|&a, &b| dist(pos, wp[a]).total_cmp(&dist(pos, wp[b])))
        .unwrap();
    let mut target = last;
    let mut along = 0.0;
    for j in closest + 1..wp.len() {
        along += dist(wp[j - 1], wp[j]);
        if along >= lookahead {
            target = wp[j];
            break;
        }
    }
    let bearing = (target[1] - pos[1]).atan2(target[0] - pos[0]);
    let err = wrap_angle(bearing - state.base.yaw);
    Follow::Command(heading_command(err))
}

/// Maps a heading error to the clamped (v, omega) command.
pub fn heading_command(err: f64) -> BaseCommand {
    let v = MAX_V * (1.0 - err.abs() / std::f64::consts::PI).clamp(0.0, 1.0);
    BaseCommand::new(v, HEADING_GAIN * err).clamped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::robot::BasePose;

    fn state(x: f64, y: f64, yaw: f64) -> RobotState {
        RobotState {
            base: BasePose::new(x, y, yaw),
            joints: [0.0; 5],
            attached_object: None,
        }
    }

    fn line() -> Path {
        Path {
            waypoints: (0..20).map(|i| [i as f64 * 0.1, 0.0]).collect(),
            cells: vec![],
            cost: 0.0,
        }
    }

    #[test]
    fn arrived_at_goal() {
        assert_eq!(
            follow_path(&state(1.9, 0.0, 0.0), &line(), 0.3, 0.05),
            Follow::Arrived
        );
    }

    #[test]
    fn straight_ahead() {
        match follow_path(&state(0.0, 0.0, 0.0), &line(), 0.3, 0.05) {
            Follow::Command(c) => {
                assert_eq!(c.omega, 0.0);
                assert_eq!(c.v, 0.5);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn target_behind() {
        let c = heading_command(std::f64::consts::PI);
        assert_eq!(c.v, 0.0);
        assert_eq!(c.omega.abs(), 1.0);
        let p = Path {
            waypoints: vec![[-1.0, 0.0]],
            cells: vec![],
            cost: 0.0,
        };
        match follow_path(&state(0.0, 0.0, 0.0), &p, 0.3, 0.05) {
            Follow::Command(c) => {
                assert_eq!(c.v, 0.0);
                assert_eq!(c.omega.abs(), 1.0);
            }
            _ => panic!(),
        }
    }
}
