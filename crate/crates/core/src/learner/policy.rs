use std::path::Path;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::autoencoder::{AeConfig, Autoencoder};
use super::data::{frame_input, sample_frames, FrameInput};
use super::io::ModelFile;
use super::layers::Parameters;
use super::lstm::LstmState;
use super::optim::{clip_grad_norm, Adam};
use super::predictor::{Predictor, PredictorConfig};
use super::tensor::Tensor;
use super::train::{
    autoencoder_loss, masked_error, non_finite, predictor_loss, train_autoencoder, train_predictor, AeTrainConfig,
    PredictorTrainConfig, Sequence,
};
use crate::dataset::{compute_norm_stats, state_dim, Episode, NormStats};
use crate::error::{Error, Result};
use crate::sim::scene::Variant;

const AUTOENCODER_KIND: &str = "autoencoder";
const POLICY_KIND: &str = "policy";

/// Smallest frame set the autoencoders are trained on.
pub const MIN_AE_FRAMES: usize = 100;

/// Which image stream an autoencoder models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Disparity,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Disparity => "disparity",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Disparity => 1,
        }
    }

    fn pick(&self) -> fn(&FrameInput) -> &[f64] {
        match self {
            Modality::Rgb => |f| &f.rgb,
            Modality::Disparity => |f| &f.disparity,
        }
    }

    fn seed_offset(&self) -> u64 {
        match self {
            Modality::Rgb => 0,
            Modality::Disparity => 1,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "disparity" => Ok(Modality::Disparity),
            other => Err(Error::InvalidConfig(format!("invalid modality {other:?} (expected rgb or disparity)"))),
        }
    }
}

/// Preprocessing shared by both encoders: which data they were fitted on and
/// how frames are normalized and downscaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub variant: Variant,
    pub frame_width: usize,
    pub frame_height: usize,
    pub downscale: usize,
    pub stats: NormStats,
}

impl FrameSpec {
    pub fn input(&self, rgb: &[u8], disparity: &[f32]) -> Result<FrameInput> {
        frame_input(&self.stats, rgb, disparity, self.frame_width, self.frame_height, self.downscale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AutoencoderMeta {
    kind: String,
    modality: Modality,
    #[serde(flatten)]
    frames: FrameSpec,
    config: AeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PolicyMeta {
    kind: String,
    #[serde(flatten)]
    frames: FrameSpec,
    rgb: AeConfig,
    disparity: AeConfig,
    predictor: PredictorConfig,
    latent_mean: Vec<f64>,
    latent_std: Vec<f64>,
}

/// One trained autoencoder with the preprocessing it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedAutoencoder {
    pub modality: Modality,
    pub frames: FrameSpec,
    pub model: Autoencoder<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeReport {
    pub losses: Vec<f64>,
    /// Reconstruction loss of the freshly initialized model.
    pub initial_loss: f64,
    /// Reconstruction loss after training, measured without updates.
    pub final_loss: f64,
    pub frames: usize,
}

fn training_split(episodes: &[Episode], variant: Variant) -> Result<Vec<&Episode>> {
    if let Some(e) = episodes.iter().find(|e| e.variant != variant) {
        return Err(Error::DimensionMismatch(format!(
            "episode seed {} is {} but training {}",
            e.seed, e.variant, variant
        )));
    }
    let ok: Vec<&Episode> = episodes.iter().filter(|e| e.is_success() && !e.steps.is_empty()).collect();
    if ok.is_empty() {
        return Err(Error::Empty("no successful episodes to train on".into()));
    }
    Ok(ok)
}

fn frame_spec(split: &[Episode], variant: Variant, downscale: usize) -> Result<FrameSpec> {
    let (w, h) = (split[0].width, split[0].height);
    if split.iter().any(|e| e.width != w || e.height != h) {
        return Err(Error::DimensionMismatch("episodes have different image sizes".into()));
    }
    if downscale == 0 || w % downscale != 0 || h % downscale != 0 {
        return Err(Error::InvalidConfig(format!("downscale {downscale} does not divide {w}x{h}")));
    }
    Ok(FrameSpec {
        variant,
        frame_width: w,
        frame_height: h,
        downscale,
        stats: compute_norm_stats(split)?,
    })
}

impl TrainedAutoencoder {
    /// Trains on frames sampled from the successful episodes of one variant.
    pub fn train(
        episodes: &[Episode],
        variant: Variant,
        modality: Modality,
        downscale: usize,
        cfg: &AeTrainConfig,
    ) -> Result<(Self, AeReport)> {
        cfg.validate()?;
        let split: Vec<Episode> = training_split(episodes, variant)?.into_iter().cloned().collect();
        let frames_spec = frame_spec(&split, variant, downscale)?;
        let frames = sample_frames(&split, &frames_spec.stats, cfg.frames_per_episode, downscale)?;
        if frames.len() < MIN_AE_FRAMES {
            return Err(Error::Empty(format!(
                "autoencoder training needs at least {MIN_AE_FRAMES} frames, got {} (raise frames_per_episode or add episodes)",
                frames.len()
            )));
        }
        let mut config = AeConfig::standard(modality.channels(), frames_spec.frame_width / downscale);
        config.height = frames_spec.frame_height / downscale;
        let seed = cfg.seed.wrapping_add(modality.seed_offset());
        let mut model = Autoencoder::new(config, seed)?;
        let pick = modality.pick();
        let initial_loss = autoencoder_loss(&model, &frames, pick)?;
        let run_cfg = AeTrainConfig { seed, ..cfg.clone() };
        let label = format!("{modality} autoencoder");
        let losses = train_autoencoder(&mut model, &frames, pick, &run_cfg, &label)?;
        let report = AeReport {
            losses,
            initial_loss,
            final_loss: autoencoder_loss(&model, &frames, pick)?,
            frames: frames.len(),
        };
        Ok((
            TrainedAutoencoder {
                modality,
                frames: frames_spec,
                model,
            },
            report,
        ))
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = AutoencoderMeta {
            kind: AUTOENCODER_KIND.to_string(),
            modality: self.modality,
            frames: self.frames.clone(),
            config: self.model.config.clone(),
        };
        let mut f = ModelFile::new(serde_json::to_value(meta).expect("metadata serializes"));
        f.push(param_prefix(self.modality), &self.model);
        f
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = ModelFile::load(path)?;
        let meta: AutoencoderMeta = serde_json::from_value(f.metadata.clone()).map_err(|e| bad_meta(path, e))?;
        if meta.kind != AUTOENCODER_KIND {
            return Err(wrong_kind(path, AUTOENCODER_KIND, &meta.kind));
        }
        let mut model = Autoencoder::new(meta.config, 0)?;
        f.restore(param_prefix(meta.modality), &mut model)?;
        Ok(TrainedAutoencoder {
            modality: meta.modality,
            frames: meta.frames,
            model,
        })
    }
}

fn param_prefix(m: Modality) -> &'static str {
    match m {
        Modality::Rgb => "rgb_ae",
        Modality::Disparity => "disparity_ae",
    }
}

fn wrong_kind(path: &Path, expected: &str, found: &str) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        offset: 12,
        reason: format!("expected a {expected} model, found {found}"),
    }
}

/// RGB and disparity autoencoders sharing one preprocessing setup.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair {
    pub frames: FrameSpec,
    pub rgb: Autoencoder<f32>,
    pub disparity: Autoencoder<f32>,
}

impl EncoderPair {
    /// Combines separately trained encoders; they must come from the same data.
    pub fn from_parts(rgb: TrainedAutoencoder, disparity: TrainedAutoencoder) -> Result<Self> {
        if rgb.modality != Modality::Rgb || disparity.modality != Modality::Disparity {
            return Err(Error::InvalidConfig(format!(
                "expected rgb and disparity autoencoders, got {} and {}",
                rgb.modality, disparity.modality
            )));
        }
        if rgb.frames != disparity.frames {
            return Err(Error::DimensionMismatch(
                "rgb and disparity autoencoders were trained on different data or preprocessing".into(),
            ));
        }
        Ok(EncoderPair {
            frames: rgb.frames,
            rgb: rgb.model,
            disparity: disparity.model,
        })
    }

    /// Trains both autoencoders with the same config.
    pub fn train(episodes: &[Episode], variant: Variant, downscale: usize, cfg: &AeTrainConfig) -> Result<(Self, AeReport, AeReport)> {
        let (r, rr) = TrainedAutoencoder::train(episodes, variant, Modality::Rgb, downscale, cfg)?;
        let (d, dr) = TrainedAutoencoder::train(episodes, variant, Modality::Disparity, downscale, cfg)?;
        Ok((Self::from_parts(r, d)?, rr, dr))
    }

    pub fn variant(&self) -> Variant {
        self.frames.variant
    }

    pub fn frame(&self, rgb: &[u8], disparity: &[f32]) -> Result<FrameInput> {
        self.frames.input(rgb, disparity)
    }

    /// Concatenated raw latents (rgb then disparity) for a batch of frames.
    pub fn encode(&self, frames: &[FrameInput]) -> Result<Vec<Vec<f64>>> {
        let rc = &self.rgb.config;
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(64) {
            let b = chunk.len();
            let xr = Tensor::<f32>::from_f64(&[b, 3, rc.height, rc.width], &chunk.iter().flat_map(|f| f.rgb.iter().copied()).collect::<Vec<_>>())?;
            let xd = Tensor::<f32>::from_f64(&[b, 1, rc.height, rc.width], &chunk.iter().flat_map(|f| f.disparity.iter().copied()).collect::<Vec<_>>())?;
            let zr = self.rgb.encode(&xr)?;
            let zd = self.disparity.encode(&xd)?;
            let (lr, ld) = (self.rgb.config.latent, self.disparity.config.latent);
            for n in 0..b {
                let mut z: Vec<f64> = zr.data()[n * lr..(n + 1) * lr].iter().map(|v| *v as f64).collect();
                z.extend(zd.data()[n * ld..(n + 1) * ld].iter().map(|v| *v as f64));
                out.push(z);
            }
        }
        Ok(out)
    }

    pub fn latent_dim(&self) -> usize {
        self.rgb.config.latent + self.disparity.config.latent
    }
}

fn bad_meta(path: &Path, e: serde_json::Error) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        offset: 12,
        reason: format!("model metadata: {e}"),
    }
}

/// Frozen encoders plus the recurrent predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub encoders: EncoderPair,
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
    pub predictor: Predictor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorReport {
    pub losses: Vec<f64>,
    /// Teacher-forced loss after training, measured without updates.
    pub final_loss: f64,
}

impl Policy {
    pub fn variant(&self) -> Variant {
        self.encoders.variant()
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.variant())
    }

    /// Trains the predictor on successful episodes. Encoders stay frozen
    /// unless `cfg.fine_tune_encoders` is set.
    pub fn train(encoders: EncoderPair, episodes: &[Episode], cfg: &PredictorTrainConfig) -> Result<(Self, PredictorReport)> {
        cfg.validate()?;
        let split: Vec<&Episode> = training_split(episodes, encoders.variant())?
            .into_iter()
            .filter(|e| {
                let keep = e.steps.len() >= 2;
                if !keep {
                    warn!("skipping episode seed {}: fewer than 2 steps", e.seed);
                }
                keep
            })
            .collect();
        if split.len() < 2 {
            return Err(Error::Empty(format!(
                "predictor training needs at least 2 successful episodes, got {}",
                split.len()
            )));
        }
        let mut latents = Vec::new();
        for ep in &split {
            latents.push(encode_episode(&encoders, ep)?);
        }
        let dz = encoders.latent_dim();
        let n: f64 = latents.iter().map(|l| l.len() as f64).sum();
        let mut mean = vec![0.0; dz];
        let mut sq = vec![0.0; dz];
        for z in latents.iter().flatten() {
            for k in 0..dz {
                mean[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        let mut std = vec![1.0; dz];
        for k in 0..dz {
            mean[k] /= n;
            let var = (sq[k] / n - mean[k] * mean[k]).max(0.0);
            std[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        let d_s = state_dim(encoders.variant());
        let pc = PredictorConfig {
            input: dz + d_s,
            hidden: cfg.hidden,
            output: d_s,
        };
        let mut policy = Policy {
            encoders,
            latent_mean: mean,
            latent_std: std,
            predictor: Predictor::new(pc, cfg.seed),
        };
        let losses = if cfg.fine_tune_encoders {
            policy.fine_tune(&split, cfg)?
        } else {
            let mut seqs = Vec::new();
            for (ep, lat) in split.iter().zip(&latents) {
                seqs.push(policy.sequence(ep, lat)?);
            }
            let mut predictor = policy.predictor.clone();
            let losses = train_predictor(&mut predictor, &seqs, cfg)?;
            policy.predictor = predictor;
            losses
        };
        let final_loss = policy.loss_on_split(&split)?;
        Ok((policy, PredictorReport { losses, final_loss }))
    }

    /// Joint training of predictor and encoders through the latent path.
    fn fine_tune(&mut self, split: &[&Episode], cfg: &PredictorTrainConfig) -> Result<Vec<f64>> {
        let stats = self.encoders.frames.stats.clone();
        let d_s = self.state_dim();
        let (lr_dim, ld_dim) = (self.encoders.rgb.config.latent, self.encoders.disparity.config.latent);
        let rc = self.encoders.rgb.config.clone();
        let pixels = rc.height * rc.width;
        let mut frames: Vec<Vec<FrameInput>> = Vec::new();
        let mut xs: Vec<Vec<Vec<f64>>> = Vec::new();
        for ep in split {
            frames.push(ep.steps.iter().map(|s| self.encoders.frame(&s.rgb, &s.disparity)).collect::<Result<_>>()?);
            xs.push(ep.steps.iter().map(|s| stats.normalize(&s.x())).collect::<Result<_>>()?);
        }
        let lens: Vec<usize> = split.iter().map(|e| e.steps.len() - 1).collect();
        let max_len = *lens.iter().max().unwrap();
        let total_elems: usize = lens.iter().sum::<usize>() * d_s;
        let b = split.len();
        let mut opt_p = Adam::new(cfg.lr);
        let mut opt_r = Adam::new(cfg.lr);
        let mut opt_d = Adam::new(cfg.lr);
        let mut g_p = self.predictor.clone();
        let mut g_r = self.encoders.rgb.clone();
        let mut g_d = self.encoders.disparity.clone();
        let mut losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut state = self.predictor.initial_state(b);
            let mut epoch_sq = 0.0;
            for (wi, start) in (0..max_len).step_by(cfg.tbptt).enumerate() {
                let end = (start + cfg.tbptt).min(max_len);
                let mut inputs = Vec::new();
                let mut targets = Vec::new();
                let mut masks = Vec::new();
                let mut caches = Vec::new();
                for t in start..end {
                    let mask: Vec<bool> = lens.iter().map(|l| t < *l).collect();
                    let mut rgb = vec![0.0; b * 3 * pixels];
                    let mut disp = vec![0.0; b * pixels];
                    let mut target = vec![0.0; b * d_s];
                    for n in 0..b {
                        if mask[n] {
                            rgb[n * 3 * pixels..(n + 1) * 3 * pixels].copy_from_slice(&frames[n][t].rgb);
                            disp[n * pixels..(n + 1) * pixels].copy_from_slice(&frames[n][t].disparity);
                            target[n * d_s..(n + 1) * d_s].copy_from_slice(&xs[n][t + 1]);
                        }
                    }
                    let xr = Tensor::<f32>::from_f64(&[b, 3, rc.height, rc.width], &rgb)?;
                    let xd = Tensor::<f32>::from_f64(&[b, 1, rc.height, rc.width], &disp)?;
                    let (zr, cr) = self.encoders.rgb.encode_cached(&xr)?;
                    let (zd, cd) = self.encoders.disparity.encode_cached(&xd)?;
                    let mut u = vec![0.0; b * (lr_dim + ld_dim + d_s)];
                    for n in 0..b {
                        if mask[n] {
                            let mut z: Vec<f64> = zr.data()[n * lr_dim..(n + 1) * lr_dim].iter().map(|v| *v as f64).collect();
                            z.extend(zd.data()[n * ld_dim..(n + 1) * ld_dim].iter().map(|v| *v as f64));
                            let row = self.assemble(&z, &xs[n][t]);
                            u[n * row.len()..(n + 1) * row.len()].copy_from_slice(&row);
                        }
                    }
                    inputs.push(Tensor::<f32>::from_f64(&[b, lr_dim + ld_dim + d_s], &u)?);
                    targets.push(target);
                    masks.push(mask);
                    caches.push((cr, cd));
                }
                let live: usize = masks.iter().map(|m| m.iter().filter(|v| **v).count()).sum();
                let denom = (live * d_s) as f64;
                let (ys, pcaches, next) = self.predictor.forward_window(&inputs, &state)?;
                let mut dys = Vec::new();
                let mut sq = 0.0;
                for ((y, t), m) in ys.iter().zip(&targets).zip(&masks) {
                    let (e, dy) = masked_error(y, t, m, d_s, denom);
                    sq += e;
                    dys.push(dy);
                }
                if !sq.is_finite() {
                    return Err(non_finite("predictor (fine-tune)", epoch, wi, sq / denom));
                }
                g_p.zero_grad();
                g_r.zero_grad();
                g_d.zero_grad();
                let dxs = self.predictor.backward_window(&pcaches, &dys, &mut g_p);
                for (dx, (cr, cd)) in dxs.iter().zip(&caches) {
                    let width = lr_dim + ld_dim + d_s;
                    let mut dzr = vec![0.0; b * lr_dim];
                    let mut dzd = vec![0.0; b * ld_dim];
                    for n in 0..b {
                        for k in 0..lr_dim {
                            dzr[n * lr_dim + k] = dx.data()[n * width + k] as f64 / self.latent_std[k];
                        }
                        for k in 0..ld_dim {
                            dzd[n * ld_dim + k] = dx.data()[n * width + lr_dim + k] as f64 / self.latent_std[lr_dim + k];
                        }
                    }
                    self.encoders.rgb.encode_backward(cr, &Tensor::from_f64(&[b, lr_dim], &dzr)?, &mut g_r)?;
                    self.encoders.disparity.encode_backward(cd, &Tensor::from_f64(&[b, ld_dim], &dzd)?, &mut g_d)?;
                }
                for g in [&mut g_r as &mut dyn GradClip, &mut g_d, &mut g_p] {
                    g.clip(cfg.clip)
                        .map_err(|e| Error::NonFinite(format!("fine-tune: {e} at epoch {epoch}, window {wi}")))?;
                }
                opt_p.step(&mut self.predictor, &g_p);
                opt_r.step(&mut self.encoders.rgb, &g_r);
                opt_d.step(&mut self.encoders.disparity, &g_d);
                epoch_sq += sq;
                state = next;
            }
            let mean = epoch_sq / total_elems as f64;
            debug!("fine-tune epoch {epoch}: loss {mean:.6}");
            if (epoch + 1) % 100 == 0 || epoch + 1 == cfg.epochs {
                info!("fine-tune epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.epochs);
            }
            losses.push(mean);
        }
        Ok(losses)
    }

    fn loss_on_split(&self, split: &[&Episode]) -> Result<f64> {
        let mut seqs = Vec::new();
        for ep in split {
            let lat = encode_episode(&self.encoders, ep)?;
            seqs.push(self.sequence(ep, &lat)?);
        }
        predictor_loss(&self.predictor, &seqs)
    }

    fn sequence(&self, ep: &Episode, latents: &[Vec<f64>]) -> Result<Sequence> {
        let stats = &self.encoders.frames.stats;
        let xs: Vec<Vec<f64>> = ep.steps.iter().map(|s| stats.normalize(&s.x())).collect::<Result<_>>()?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for t in 0..ep.steps.len().saturating_sub(1) {
            inputs.push(self.assemble(&latents[t], &xs[t]));
            targets.push(xs[t + 1].clone());
        }
        Ok(Sequence { inputs, targets })
    }

    fn assemble(&self, latent: &[f64], x_norm: &[f64]) -> Vec<f64> {
        let mut u: Vec<f64> = latent
            .iter()
            .zip(self.latent_mean.iter().zip(&self.latent_std))
            .map(|(z, (m, s))| (z - m) / s)
            .collect();
        u.extend_from_slice(x_norm);
        u
    }

    /// Teacher-forced loss of this policy on `episodes` (successful ones).
    pub fn loss_on(&self, episodes: &[Episode]) -> Result<f64> {
        let split: Vec<&Episode> = training_split(episodes, self.variant())?
            .into_iter()
            .filter(|e| e.steps.len() >= 2)
            .collect();
        self.loss_on_split(&split)
    }

    pub fn initial_state(&self) -> LstmState<f32> {
        self.predictor.initial_state(1)
    }

    /// One closed-loop step: encodes the frame, feeds the normalized state and
    /// returns the predicted next state in raw units.
    pub fn predict_next(&self, rgb: &[u8], disparity: &[f32], x: &[f64], state: &mut LstmState<f32>) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "policy for {} expects state dim {}, got {}",
                self.variant(),
                self.state_dim(),
                x.len()
            )));
        }
        let xn = self.encoders.frames.stats.normalize(x)?;
        let y = self.predict_next_norm(rgb, disparity, &xn, state)?;
        self.encoders.frames.stats.denormalize(&y)
    }

    /// One recurrent step on a normalized state; returns the normalized
    /// prediction and advances `state`.
    pub fn predict_next_norm(&self, rgb: &[u8], disparity: &[f32], x_norm: &[f64], state: &mut LstmState<f32>) -> Result<Vec<f64>> {
        if x_norm.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "policy for {} expects state dim {}, got {}",
                self.variant(),
                self.state_dim(),
                x_norm.len()
            )));
        }
        let frame = self.encoders.frame(rgb, disparity)?;
        let z = self.encoders.encode(std::slice::from_ref(&frame))?.remove(0);
        let u = self.assemble(&z, x_norm);
        let input = Tensor::<f32>::from_f64(&[1, u.len()], &u)?;
        let (y, next, _) = self.predictor.step(&input, state)?;
        *state = next;
        Ok(y.to_f64())
    }

    pub fn to_model_file(&self) -> ModelFile {
        let meta = PolicyMeta {
            kind: POLICY_KIND.to_string(),
            frames: self.encoders.frames.clone(),
            rgb: self.encoders.rgb.config.clone(),
            disparity: self.encoders.disparity.config.clone(),
            predictor: self.predictor.config.clone(),
            latent_mean: self.latent_mean.clone(),
            latent_std: self.latent_std.clone(),
        };
        let mut f = ModelFile::new(serde_json::to_value(meta).expect("metadata serializes"));
        f.push(param_prefix(Modality::Rgb), &self.encoders.rgb);
        f.push(param_prefix(Modality::Disparity), &self.encoders.disparity);
        f.push("predictor", &self.predictor);
        f
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = ModelFile::load(path)?;
        let kind = f.metadata.get("kind").and_then(|k| k.as_str()).unwrap_or("unknown").to_string();
        if kind != POLICY_KIND {
            return Err(wrong_kind(path, POLICY_KIND, &kind));
        }
        let meta: PolicyMeta = serde_json::from_value(f.metadata.clone()).map_err(|e| bad_meta(path, e))?;
        let mut rgb = Autoencoder::new(meta.rgb, 0)?;
        let mut disparity = Autoencoder::new(meta.disparity, 0)?;
        f.restore(param_prefix(Modality::Rgb), &mut rgb)?;
        f.restore(param_prefix(Modality::Disparity), &mut disparity)?;
        let mut predictor = Predictor::new(meta.predictor, 0);
        f.restore("predictor", &mut predictor)?;
        Ok(Policy {
            encoders: EncoderPair {
                frames: meta.frames,
                rgb,
                disparity,
            },
            latent_mean: meta.latent_mean,
            latent_std: meta.latent_std,
            predictor,
        })
    }
}

trait GradClip {
    fn clip(&mut self, max_norm: f64) -> Result<f64>;
}

impl<M: Parameters<f32>> GradClip for M {
    fn clip(&mut self, max_norm: f64) -> Result<f64> {
        clip_grad_norm(self, max_norm)
    }
}

fn encode_episode(encoders: &EncoderPair, ep: &Episode) -> Result<Vec<Vec<f64>>> {
    let fs = &encoders.frames;
    if ep.width != fs.frame_width || ep.height != fs.frame_height {
        return Err(Error::DimensionMismatch(format!(
            "episode frames are {}x{}, encoders expect {}x{}",
            ep.width, ep.height, fs.frame_width, fs.frame_height
        )));
    }
    let frames: Vec<FrameInput> = ep.steps.iter().map(|s| encoders.frame(&s.rgb, &s.disparity)).collect::<Result<_>>()?;
    encoders.encode(&frames)
}
