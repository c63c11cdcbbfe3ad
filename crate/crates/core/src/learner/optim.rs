use super::layers::Parameters;
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<M: Parameters<T>>(&mut self, model: &mut M, grad: &M) {
        let gs = grad.params();
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| vec![T::zero(); g.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::cast(self.beta1), T::cast(self.beta2));
        let c1 = T::cast(1.0 - self.beta1.powi(self.t));
        let c2 = T::cast(1.0 - self.beta2.powi(self.t));
        let lr = T::cast(self.lr);
        let eps = T::cast(self.eps);
        let one = T::one();
        for (((p, g), m), v) in model.params_mut().into_iter().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Scalar, M: Parameters<T>>(grad: &M) -> f64 {
    grad.params()
        .iter()
        .flat_map(|p| p.data.iter())
        .map(|v| {
            let x = v.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients to at most `max_norm`; fails on non-finite gradients.
pub fn clip_grad_norm<T: Scalar, M: Parameters<T>>(grad: &mut M, max_norm: f64) -> Result<f64> {
    let norm = grad_norm(grad);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let s = T::cast(max_norm / norm);
        for p in grad.params_mut() {
            for v in p.iter_mut() {
                *v *= s;
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::layers::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::<f64>::new(2, 1, &mut rng);
        let before = d.weight.clone();
        let mut g = d.clone();
        g.weight = vec![3.0, -0.5];
        g.bias = vec![0.0];
        let mut opt = Adam::new(0.01);
        opt.step(&mut d, &g);
        assert!((d.weight[0] - (before[0] - 0.01)).abs() < 1e-9);
        assert!((d.weight[1] - (before[1] + 0.01)).abs() < 1e-9);
        assert_eq!(d.bias[0], 0.0);
    }

    #[test]
    fn clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Dense::<f64>::new(2, 1, &mut rng);
        g.weight = vec![3.0, 4.0];
        g.bias = vec![0.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 5.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
        g.bias[0] = f64::NAN;
        assert!(clip_grad_norm(&mut g, 1.0).is_err());
    }
}
