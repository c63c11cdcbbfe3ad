//! Scripted-expert trajectory collection for a simulated mobile manipulator,
//! and an imitation-learning stack trained on the collected episodes.
//!
//! Pipeline: [`sim`] renders and steps the world, [`perception`] localizes the
//! target object, [`expert`] plans and executes the grasp, [`dataset`] records
//! and persists episodes, [`learner`] trains autoencoders and the recurrent
//! state predictor, and [`eval`] rolls the learned policy out in closed loop.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod expert;
pub mod geom;
pub mod learner;
pub mod num;
pub mod perception;
pub mod sim;

pub use error::{Error, Result};
pub use num::Scalar;

/// Default training precision.
pub type Tensor32 = learner::Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = learner::Tensor<f64>;
pub type Autoencoder32 = learner::Autoencoder<f32>;
pub type Autoencoder64 = learner::Autoencoder<f64>;
pub type Predictor32 = learner::Predictor<f32>;
pub type Predictor64 = learner::Predictor<f64>;
pub type LstmCell32 = learner::LstmCell<f32>;
pub type LstmCell64 = learner::LstmCell<f64>;
