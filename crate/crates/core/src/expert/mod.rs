//! The scripted teacher: grid planner and path follower for the base,
//! kinematics and joint-space planning for the arm, and the state machine
//! that strings them into a grasp.

pub mod arm;
pub mod grid;
pub mod kinematics;
pub mod pursuit;
pub mod runner;

pub use arm::{plan_arm, ArmPlan};
pub use grid::{astar, OccupancyGrid, Path};
pub use kinematics::{fk, ik, IkParams, IkSolution};
pub use pursuit::{follow_path, Follow};
pub use runner::{run_expert, ExpertParams, ExpertPhase, ExpertTranscript, Outcome, TickRecord};
