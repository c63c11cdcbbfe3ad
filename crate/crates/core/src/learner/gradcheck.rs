//! Finite-difference verification of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::autoencoder::{AeConfig, Autoencoder};
use super::layers::{relu, relu_backward, upsample2x, upsample2x_backward, Conv2d, Dense, Parameters};
use super::lstm::{LstmCell, LstmState};
use super::predictor::{Predictor, PredictorConfig};
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// `|a - n| / (|a| + |n|)` over a whole tensor, with L2 norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let denom = na + nn;
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

fn central<F: FnMut(f64) -> f64>(x0: f64, mut f: F) -> f64 {
    (f(x0 + STEP) - f(x0 - STEP)) / (2.0 * STEP)
}

/// Compares analytic parameter gradients against central differences, per
/// named tensor; returns the worst relative error.
fn check_params<M: Parameters<f64> + Clone>(model: &M, analytic: &M, loss: impl Fn(&M) -> f64) -> (usize, f64) {
    let names: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.data.to_vec()).collect();
    let mut worst = 0f64;
    let mut count = 0;
    let mut probe = model.clone();
    for (k, a) in names.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for i in 0..a.len() {
            let x0 = probe.params()[k].data[i];
            numeric[i] = central(x0, |x| {
                probe.params_mut()[k][i] = x;
                loss(&probe)
            });
            probe.params_mut()[k][i] = x0;
        }
        count += a.len();
        worst = worst.max(relative_error(a, &numeric));
    }
    (count, worst)
}

fn check_input(x: &Tensor<f64>, analytic: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    let mut probe = x.clone();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x0 = x.data()[i];
        numeric[i] = central(x0, |v| {
            probe.data_mut()[i] = v;
            loss(&probe)
        });
        probe.data_mut()[i] = x0;
    }
    relative_error(analytic.data(), &numeric)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Inputs bounded away from zero so no ReLU kink sits inside the FD stencil.
fn random_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    random(rng, shape).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn report(name: &str, checked: usize, err: f64) -> GradcheckReport {
    GradcheckReport {
        name: name.to_string(),
        checked,
        max_rel_error: err,
    }
}

fn conv_case(rng: &mut ChaCha8Rng, stride: usize) -> Result<GradcheckReport> {
    let conv = Conv2d::<f64>::new(2, 3, 3, stride, 1, rng);
    let mut conv = conv;
    for b in conv.bias.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = random(rng, &[2, 2, 5, 6]);
    let y = conv.forward(&x)?;
    let r = random(rng, y.shape());
    let mut grad = conv.clone();
    grad.zero_grad();
    let dx = conv.backward(&x, &r, &mut grad);
    let (n, ep) = check_params(&conv, &grad, |m| dot(&m.forward(&x).unwrap(), &r));
    let ex = check_input(&x, &dx, |xp| dot(&conv.forward(xp).unwrap(), &r));
    Ok(report(&format!("conv2d_stride{stride}"), n + x.len(), ep.max(ex)))
}

fn dense_case(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let mut d = Dense::<f64>::new(7, 4, rng);
    for b in d.bias.iter_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let x = random(rng, &[3, 7]);
    let r = random(rng, &[3, 4]);
    let mut grad = d.clone();
    grad.zero_grad();
    let dx = d.backward(&x, &r, &mut grad);
    let (n, ep) = check_params(&d, &grad, |m| dot(&m.forward(&x).unwrap(), &r));
    let ex = check_input(&x, &dx, |xp| dot(&d.forward(xp).unwrap(), &r));
    Ok(report("dense", n + x.len(), ep.max(ex)))
}

fn relu_case(rng: &mut ChaCha8Rng) -> GradcheckReport {
    let x = random_off_zero(rng, &[2, 3, 4]);
    let r = random(rng, x.shape());
    let dx = relu_backward(&relu(&x), &r);
    let e = check_input(&x, &dx, |xp| dot(&relu(xp), &r));
    report("relu", x.len(), e)
}

fn upsample_case(rng: &mut ChaCha8Rng) -> GradcheckReport {
    let x = random(rng, &[2, 2, 3, 3]);
    let r = random(rng, &[2, 2, 6, 6]);
    let dx = upsample2x_backward(&r);
    let e = check_input(&x, &dx, |xp| dot(&upsample2x(xp), &r));
    report("upsample2x", x.len(), e)
}

fn mse_case(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let p = random(rng, &[3, 4]);
    let t = random(rng, &[3, 4]);
    let (_, g) = super::tensor::mse(&p, &t)?;
    let e = check_input(&p, &g, |pp| super::tensor::mse(pp, &t).unwrap().0);
    Ok(report("mse_loss", p.len(), e))
}

/// Five chained LSTM steps from a non-zero state, loss on every `h` and the final `c`.
fn lstm_case(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    const STEPS: usize = 5;
    let mut cell = LstmCell::<f64>::new(3, 4, rng);
    for b in cell.bias.iter_mut() {
        *b += rng.gen_range(-0.5..0.5);
    }
    let xs: Vec<_> = (0..STEPS).map(|_| random(rng, &[2, 3])).collect();
    let s0 = LstmState {
        h: random(rng, &[2, 4]),
        c: random(rng, &[2, 4]),
    };
    let rh: Vec<_> = (0..STEPS).map(|_| random(rng, &[2, 4])).collect();
    let rc = random(rng, &[2, 4]);
    let run = |m: &LstmCell<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut s = s0.clone();
        let mut l = 0.0;
        for (x, r) in xs.iter().zip(&rh) {
            s = m.step(x, &s).unwrap().0;
            l += dot(&s.h, r);
        }
        l + dot(&s.c, &rc)
    };
    let mut caches = Vec::new();
    let mut s = s0.clone();
    for x in &xs {
        let (next, cache) = cell.step(x, &s)?;
        caches.push(cache);
        s = next;
    }
    let mut grad = cell.clone();
    grad.zero_grad();
    let mut dh = vec![0.0; 8];
    let mut dc = rc.data().to_vec();
    let mut dxs = vec![Tensor::zeros(&[0]); STEPS];
    for t in (0..STEPS).rev() {
        for (a, b) in dh.iter_mut().zip(rh[t].data()) {
            *a += b;
        }
        let (dx, dhp, dcp) = cell.backward_step(&caches[t], &dh, &dc, &mut grad);
        dxs[t] = dx;
        dh = dhp;
        dc = dcp;
    }
    let (n, ep) = check_params(&cell, &grad, |m| run(m, &xs));
    let mut ex = 0f64;
    for t in 0..STEPS {
        ex = ex.max(check_input(&xs[t], &dxs[t], |xp| {
            let mut v = xs.clone();
            v[t] = xp.clone();
            run(&cell, &v)
        }));
    }
    Ok(report("lstm_cell", n + STEPS * 6, ep.max(ex)))
}

fn predictor_case(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let p = Predictor::<f64>::new(PredictorConfig { input: 4, hidden: 5, output: 3 }, rng.gen());
    let xs: Vec<_> = (0..4).map(|_| random(rng, &[2, 4])).collect();
    let targets: Vec<_> = (0..4).map(|_| random(rng, &[2, 3])).collect();
    let loss = |m: &Predictor<f64>| -> f64 {
        let (ys, _, _) = m.forward_window(&xs, &m.initial_state(2)).unwrap();
        ys.iter().zip(&targets).map(|(y, t)| super::tensor::mse(y, t).unwrap().0).sum()
    };
    let (ys, caches, _) = p.forward_window(&xs, &p.initial_state(2))?;
    let dys: Vec<_> = ys.iter().zip(&targets).map(|(y, t)| super::tensor::mse(y, t).unwrap().1).collect();
    let mut grad = p.clone();
    grad.zero_grad();
    p.backward_window(&caches, &dys, &mut grad);
    let (n, e) = check_params(&p, &grad, loss);
    Ok(report("predictor_window", n, e))
}

fn autoencoder_case(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let cfg = AeConfig {
        in_channels: 3,
        height: 4,
        width: 4,
        channels: vec![2, 3],
        latent: 5,
    };
    let mut ae = Autoencoder::<f64>::new(cfg, rng.gen())?;
    // Non-zero biases keep ReLU inputs away from exact zero.
    for p in ae.params_mut() {
        if p.len() <= 16 {
            for v in p.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let x = random(rng, &[2, 3, 4, 4]);
    let loss = |m: &Autoencoder<f64>, xi: &Tensor<f64>| m.forward(xi).map(|(y, _)| super::tensor::mse(&y, &x).unwrap().0).unwrap();
    // Target fixed at `x`; for the input check the prediction side varies only.
    let (y, cache) = ae.forward(&x)?;
    let (_, dy) = super::tensor::mse(&y, &x)?;
    let mut grad = ae.clone();
    grad.zero_grad();
    let dx = ae.backward(&cache, &dy, &mut grad)?;
    let (n, ep) = check_params(&ae, &grad, |m| loss(m, &x));
    let ex = check_input(&x, &dx, |xp| loss(&ae, xp));
    Ok(report("autoencoder", n + x.len(), ep.max(ex)))
}

/// Names accepted by [`run`].
pub const KINDS: [&str; 9] = [
    "conv2d_stride1",
    "conv2d_stride2",
    "dense",
    "relu",
    "upsample2x",
    "mse_loss",
    "lstm_cell",
    "predictor_window",
    "autoencoder",
];

/// Runs the checks whose name starts with `kind` (all when `None`).
pub fn run(kind: Option<&str>, seed: u64) -> Result<Vec<GradcheckReport>> {
    if let Some(k) = kind {
        if !KINDS.iter().any(|n| n.starts_with(k)) {
            return Err(crate::error::Error::InvalidConfig(format!(
                "unknown gradcheck kind {k:?}; expected one of {}",
                KINDS.join(", ")
            )));
        }
    }
    Ok(run_all(seed)?
        .into_iter()
        .filter(|r| kind.map_or(true, |k| r.name.starts_with(k)))
        .collect())
}

/// Runs every check in `f64`. Deterministic for a given seed.
pub fn run_all(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        conv_case(&mut rng, 1)?,
        conv_case(&mut rng, 2)?,
        dense_case(&mut rng)?,
        relu_case(&mut rng),
        upsample_case(&mut rng),
        mse_case(&mut rng)?,
        lstm_case(&mut rng)?,
        predictor_case(&mut rng)?,
        autoencoder_case(&mut rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_pass() {
        for r in run_all(7).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn kinds_filter() {
        let r = run(Some("lstm"), 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "lstm_cell");
        assert!(run(Some("transformer"), 1).is_err());
        let names: Vec<String> = run_all(1).unwrap().into_iter().map(|r| r.name).collect();
        assert_eq!(names, KINDS);
    }

    #[test]
    fn mse_gradient_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(mse_case(&mut rng).unwrap().max_rel_error < 1e-10);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::<f64>::new(3, 2, &mut rng);
        let x = random(&mut rng, &[1, 3]);
        let r = random(&mut rng, &[1, 2]);
        let mut grad = d.clone();
        grad.zero_grad();
        d.backward(&x, &r, &mut grad);
        grad.weight[0] *= 1.01;
        let (_, e) = check_params(&d, &grad, |m| dot(&m.forward(&x).unwrap(), &r));
        assert!(e > TOLERANCE);
    }

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[1.0], &[1.0]), 0.0);
        assert!((relative_error(&[1.0], &[3.0]) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
