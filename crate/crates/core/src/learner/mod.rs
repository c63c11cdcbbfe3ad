//! Hand-written neural network stack: tensors, layers with explicit backward
//! passes, the image autoencoders, the recurrent predictor and training loops.

pub mod autoencoder;
pub mod data;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod lstm;
pub mod optim;
pub mod policy;
pub mod predictor;
pub mod tensor;
pub mod train;

pub use autoencoder::{AeConfig, Autoencoder};
pub use layers::{Conv2d, Dense, ParamView, Parameters};
pub use lstm::{LstmCell, LstmState};
pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use predictor::{Predictor, PredictorConfig};
pub use tensor::{mse, Tensor};
pub use io::ModelFile;
pub use policy::{AeReport, EncoderPair, FrameSpec, Modality, Policy, PredictorReport, TrainedAutoencoder, MIN_AE_FRAMES};
pub use train::{write_loss_csv, AeTrainConfig, PredictorTrainConfig, Sequence};
