//! Training loops. Everything runs single-threaded with a seeded RNG, so a
//! given input and config always produce bit-identical weights and losses.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autoencoder::Autoencoder;
use super::data::FrameInput;
use super::layers::Parameters;
use super::lstm::LstmState;
use super::optim::{clip_grad_norm, Adam};
use super::predictor::Predictor;
use super::tensor::{mse, Tensor};
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub frames_per_episode: usize,
    pub clip: f64,
    pub seed: u64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

impl AeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epochs", self.epochs as f64)?;
        positive("lr", self.lr)?;
        positive("batch_size", self.batch_size as f64)?;
        positive("frames_per_episode", self.frames_per_episode as f64)?;
        positive("clip", self.clip)
    }
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            epochs: 200,
            lr: 1e-3,
            batch_size: 16,
            frames_per_episode: 10,
            clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub tbptt: usize,
    pub clip: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Backpropagate into the encoders as well (decoders stay fixed).
    #[serde(default)]
    pub fine_tune_encoders: bool,
}

impl PredictorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epochs", self.epochs as f64)?;
        positive("lr", self.lr)?;
        positive("tbptt", self.tbptt as f64)?;
        positive("clip", self.clip)?;
        positive("hidden", self.hidden as f64)
    }
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            epochs: 1000,
            lr: 1e-3,
            tbptt: 32,
            clip: 5.0,
            hidden: 64,
            seed: 0,
            fine_tune_encoders: false,
        }
    }
}

fn stack<T: Scalar>(rows: &[&[f64]], tail: &[usize]) -> Result<Tensor<T>> {
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(tail);
    let data: Vec<T> = rows.iter().flat_map(|r| r.iter().map(|v| T::cast(*v))).collect();
    Tensor::from_vec(&shape, data)
}

pub(crate) fn non_finite(what: &str, epoch: usize, batch: usize, loss: f64) -> Error {
    Error::NonFinite(format!("{what}: loss {loss} at epoch {epoch}, batch {batch}"))
}

/// Trains one autoencoder to reconstruct `frames` (selected by `pick`).
/// Returns the mean training loss of every epoch.
pub fn train_autoencoder<T: Scalar>(
    ae: &mut Autoencoder<T>,
    frames: &[FrameInput],
    pick: fn(&FrameInput) -> &[f64],
    cfg: &AeTrainConfig,
    label: &str,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("no frames to train the autoencoder on".into()));
    }
    let c = &ae.config;
    let tail = [c.in_channels, c.height, c.width];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut grad = ae.clone();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let rows: Vec<&[f64]> = chunk.iter().map(|i| pick(&frames[*i])).collect();
            let x = stack::<T>(&rows, &tail)?;
            let (y, cache) = ae.forward(&x)?;
            let (loss, dy) = mse(&y, &x)?;
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(non_finite(label, epoch, bi, loss));
            }
            grad.zero_grad();
            ae.backward(&cache, &dy, &mut grad)?;
            clip_grad_norm(&mut grad, cfg.clip)
                .map_err(|e| Error::NonFinite(format!("{label}: {e} at epoch {epoch}, batch {bi}")))?;
            opt.step(ae, &grad);
            total += loss * chunk.len() as f64;
        }
        let mean = total / frames.len() as f64;
        debug!("{label} epoch {epoch}: loss {mean:.6}");
        if (epoch + 1) % 50 == 0 || epoch + 1 == cfg.epochs {
            info!("{label} epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.epochs);
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Reconstruction MSE over all frames without updating the model.
pub fn autoencoder_loss<T: Scalar>(ae: &Autoencoder<T>, frames: &[FrameInput], pick: fn(&FrameInput) -> &[f64]) -> Result<f64> {
    let c = &ae.config;
    let tail = [c.in_channels, c.height, c.width];
    let mut total = 0.0;
    for chunk in frames.chunks(32) {
        let rows: Vec<&[f64]> = chunk.iter().map(|f| pick(f)).collect();
        let x = stack::<T>(&rows, &tail)?;
        let (y, _) = ae.forward(&x)?;
        total += mse(&y, &x)?.0.to_f64_lossy() * chunk.len() as f64;
    }
    Ok(total / frames.len().max(1) as f64)
}

/// One training sequence: `inputs[t]` predicts `targets[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Runs every sequence in lockstep through `[start, end)`, padding finished
/// ones with zeros. Returns per-step inputs, targets and element masks.
pub(crate) fn window_batch<T: Scalar>(
    seqs: &[Sequence],
    start: usize,
    end: usize,
    in_dim: usize,
    out_dim: usize,
) -> Result<(Vec<Tensor<T>>, Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    let b = seqs.len();
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut masks = Vec::new();
    for t in start..end {
        let mut x = vec![0.0; b * in_dim];
        let mut y = vec![0.0; b * out_dim];
        let mut m = vec![false; b];
        for (n, s) in seqs.iter().enumerate() {
            if t < s.len() {
                x[n * in_dim..(n + 1) * in_dim].copy_from_slice(&s.inputs[t]);
                y[n * out_dim..(n + 1) * out_dim].copy_from_slice(&s.targets[t]);
                m[n] = true;
            }
        }
        xs.push(Tensor::from_f64(&[b, in_dim], &x)?);
        ts.push(y);
        masks.push(m);
    }
    Ok((xs, ts, masks))
}

fn check_sequences(seqs: &[Sequence], in_dim: usize, out_dim: usize) -> Result<usize> {
    if seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("no predictor training steps".into()));
    }
    for s in seqs {
        if s.inputs.len() != s.targets.len()
            || s.inputs.iter().any(|x| x.len() != in_dim)
            || s.targets.iter().any(|y| y.len() != out_dim)
        {
            return Err(Error::DimensionMismatch(format!(
                "sequence dims do not match predictor ({in_dim} -> {out_dim})"
            )));
        }
    }
    Ok(seqs.iter().map(|s| s.len()).max().unwrap_or(0))
}

/// Squared error and gradient restricted to live sequences.
pub(crate) fn masked_error<T: Scalar>(y: &Tensor<T>, target: &[f64], mask: &[bool], out_dim: usize, denom: f64) -> (f64, Tensor<T>) {
    let mut sq = 0.0;
    let mut dy = Tensor::zeros(y.shape());
    for (n, live) in mask.iter().enumerate() {
        if !live {
            continue;
        }
        for k in 0..out_dim {
            let i = n * out_dim + k;
            let d = y.data()[i].to_f64_lossy() - target[i];
            sq += d * d;
            dy.data_mut()[i] = T::cast(2.0 * d / denom);
        }
    }
    (sq, dy)
}

/// TBPTT training over all sequences batched together, one Adam step per
/// window. Returns the mean squared error of every epoch.
pub fn train_predictor<T: Scalar>(predictor: &mut Predictor<T>, seqs: &[Sequence], cfg: &PredictorTrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (in_dim, out_dim) = (predictor.config.input, predictor.config.output);
    let max_len = check_sequences(seqs, in_dim, out_dim)?;
    let window = cfg.tbptt;
    let total_elems: usize = seqs.iter().map(|s| s.len() * out_dim).sum();
    let mut opt = Adam::new(cfg.lr);
    let mut grad = predictor.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut state: LstmState<T> = predictor.initial_state(seqs.len());
        let mut epoch_sq = 0.0;
        for (wi, start) in (0..max_len).step_by(window).enumerate() {
            let end = (start + window).min(max_len);
            let (xs, ts, masks) = window_batch::<T>(seqs, start, end, in_dim, out_dim)?;
            let live: usize = masks.iter().map(|m| m.iter().filter(|v| **v).count()).sum();
            let denom = (live * out_dim) as f64;
            let (ys, caches, next) = predictor.forward_window(&xs, &state)?;
            let mut dys = Vec::with_capacity(ys.len());
            let mut sq = 0.0;
            for ((y, t), m) in ys.iter().zip(&ts).zip(&masks) {
                let (s, dy) = masked_error(y, t, m, out_dim, denom);
                sq += s;
                dys.push(dy);
            }
            if !sq.is_finite() {
                return Err(non_finite("predictor", epoch, wi, sq / denom));
            }
            grad.zero_grad();
            predictor.backward_window(&caches, &dys, &mut grad);
            clip_grad_norm(&mut grad, cfg.clip)
                .map_err(|e| Error::NonFinite(format!("predictor: {e} at epoch {epoch}, window {wi}")))?;
            opt.step(predictor, &grad);
            epoch_sq += sq;
            state = next;
        }
        let mean = epoch_sq / total_elems as f64;
        debug!("predictor epoch {epoch}: loss {mean:.6}");
        if (epoch + 1) % 100 == 0 || epoch + 1 == cfg.epochs {
            info!("predictor epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.epochs);
        }
        losses.push(mean);
    }
    Ok(losses)
}

/// Mean squared error of full-length teacher-forced runs, no updates.
pub fn predictor_loss<T: Scalar>(predictor: &Predictor<T>, seqs: &[Sequence]) -> Result<f64> {
    let (in_dim, out_dim) = (predictor.config.input, predictor.config.output);
    let max_len = check_sequences(seqs, in_dim, out_dim)?;
    let total_elems: usize = seqs.iter().map(|s| s.len() * out_dim).sum();
    let (xs, ts, masks) = window_batch::<T>(seqs, 0, max_len, in_dim, out_dim)?;
    let (ys, _, _) = predictor.forward_window(&xs, &predictor.initial_state(seqs.len()))?;
    let sq: f64 = ys
        .iter()
        .zip(&ts)
        .zip(&masks)
        .map(|((y, t), m)| masked_error(y, t, m, out_dim, 1.0).0)
        .sum();
    Ok(sq / total_elems as f64)
}

/// Writes `epoch,loss` rows.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", e + 1, l));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::autoencoder::AeConfig;
    use crate::learner::predictor::PredictorConfig;

    fn toy_sequences() -> Vec<Sequence> {
        // x_{t+1} = x_t + 0.05, two sequences of different lengths.
        (0..2)
            .map(|k| {
                let n = 10 + 5 * k;
                let xs: Vec<f64> = (0..=n).map(|t| 0.1 * k as f64 + 0.05 * t as f64).collect();
                Sequence {
                    inputs: xs[..n].iter().map(|x| vec![*x]).collect(),
                    targets: xs[1..].iter().map(|x| vec![*x]).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn predictor_learns_ramp_deterministically() {
        let seqs = toy_sequences();
        let cfg = PredictorTrainConfig {
            epochs: 300,
            lr: 1e-2,
            tbptt: 4,
            hidden: 8,
            ..Default::default()
        };
        let pc = PredictorConfig { input: 1, hidden: 8, output: 1 };
        let mut p = Predictor::<f32>::new(pc.clone(), 3);
        let losses = train_predictor(&mut p, &seqs, &cfg).unwrap();
        assert!(losses.last().unwrap() < &(losses[0] * 0.05), "{:?}", &losses[losses.len() - 3..]);
        assert!(predictor_loss(&p, &seqs).unwrap() < 1e-3);
        let mut q = Predictor::<f32>::new(pc, 3);
        assert_eq!(train_predictor(&mut q, &seqs, &cfg).unwrap(), losses);
        assert_eq!(p, q);
    }

    #[test]
    fn predictor_rejects_bad_dims() {
        let mut p = Predictor::<f32>::new(PredictorConfig { input: 2, hidden: 4, output: 1 }, 0);
        assert!(train_predictor(&mut p, &toy_sequences(), &PredictorTrainConfig::default()).is_err());
        assert!(train_predictor(&mut p, &[], &PredictorTrainConfig::default()).is_err());
    }

    #[test]
    fn nan_input_aborts_with_diagnostic() {
        let mut seqs = toy_sequences();
        seqs[0].inputs[3][0] = f64::NAN;
        let mut p = Predictor::<f32>::new(PredictorConfig { input: 1, hidden: 4, output: 1 }, 0);
        let err = train_predictor(&mut p, &seqs, &PredictorTrainConfig { epochs: 2, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(err.to_string().contains("epoch 0"));
    }

    #[test]
    fn autoencoder_loss_decreases() {
        let cfg = AeConfig {
            in_channels: 1,
            height: 8,
            width: 8,
            channels: vec![4, 8],
            latent: 8,
        };
        let frames: Vec<FrameInput> = (0..8)
            .map(|k| FrameInput {
                rgb: vec![],
                disparity: (0..64).map(|i| ((i % 8) as f64 * 0.3 + k as f64 * 0.1).sin()).collect(),
            })
            .collect();
        let mut ae = Autoencoder::<f32>::new(cfg, 1).unwrap();
        let before = autoencoder_loss(&ae, &frames, |f| &f.disparity).unwrap();
        let tc = AeTrainConfig {
            epochs: 100,
            lr: 3e-3,
            batch_size: 4,
            ..Default::default()
        };
        let losses = train_autoencoder(&mut ae, &frames, |f| &f.disparity, &tc, "disparity").unwrap();
        assert_eq!(losses.len(), 100);
        assert!(autoencoder_loss(&ae, &frames, |f| &f.disparity).unwrap() < before * 0.2);
    }

    #[test]
    fn loss_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &[0.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
