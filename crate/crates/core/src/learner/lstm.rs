use rand_chacha::ChaCha8Rng;

use super::layers::{join, uniform, ParamView, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Scalar;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// LSTM cell with gates stacked `[i, f, o, g]` in a single `[4H, I + H]`
/// weight acting on `concat(x, h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<T> {
    pub input: usize,
    pub hidden: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Recurrent state for a batch: `h` and `c`, both `[batch, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Values saved by [`LstmCell::step`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    xh: Vec<T>,
    gates: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
    batch: usize,
}

impl<T: Scalar> LstmCell<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = vec![T::zero(); 4 * hidden];
        for b in &mut bias[hidden..2 * hidden] {
            *b = T::one();
        }
        LstmCell {
            input,
            hidden,
            weight: uniform(rng, 4 * hidden * (input + hidden), bound),
            bias,
        }
    }

    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<(LstmState<T>, LstmCache<T>)> {
        let b = x.shape().first().copied().unwrap_or(0);
        let (i_dim, h_dim) = (self.input, self.hidden);
        if x.len() != b * i_dim || state.h.len() != b * h_dim || state.c.len() != b * h_dim {
            return Err(Error::ShapeMismatch(format!(
                "lstm expects x [batch, {i_dim}] and state [batch, {h_dim}], got {:?} / {:?}",
                x.shape(),
                state.h.shape()
            )));
        }
        let cols = i_dim + h_dim;
        let mut xh = vec![T::zero(); b * cols];
        for n in 0..b {
            xh[n * cols..n * cols + i_dim].copy_from_slice(&x.data()[n * i_dim..(n + 1) * i_dim]);
            xh[n * cols + i_dim..(n + 1) * cols].copy_from_slice(&state.h.data()[n * h_dim..(n + 1) * h_dim]);
        }
        let mut gates = vec![T::zero(); b * 4 * h_dim];
        let mut h = Tensor::zeros(&[b, h_dim]);
        let mut c = Tensor::zeros(&[b, h_dim]);
        let mut tanh_c = vec![T::zero(); b * h_dim];
        for n in 0..b {
            let row = &xh[n * cols..(n + 1) * cols];
            let g = &mut gates[n * 4 * h_dim..(n + 1) * 4 * h_dim];
            for (r, gv) in g.iter_mut().enumerate() {
                let w = &self.weight[r * cols..(r + 1) * cols];
                let mut acc = self.bias[r];
                for (wv, xv) in w.iter().zip(row) {
                    acc += *wv * *xv;
                }
                *gv = if r < 3 * h_dim { sigmoid(acc) } else { acc.tanh() };
            }
            for k in 0..h_dim {
                let (ig, fg, og, gg) = (g[k], g[h_dim + k], g[2 * h_dim + k], g[3 * h_dim + k]);
                let cv = fg * state.c.data()[n * h_dim + k] + ig * gg;
                let tc = cv.tanh();
                c.data_mut()[n * h_dim + k] = cv;
                tanh_c[n * h_dim + k] = tc;
                h.data_mut()[n * h_dim + k] = og * tc;
            }
        }
        let cache = LstmCache {
            xh,
            gates,
            c_prev: state.c.data().to_vec(),
            tanh_c,
            batch: b,
        };
        Ok((LstmState { h, c }, cache))
    }

    /// Given upstream gradients w.r.t. the new `h` and `c`, accumulates
    /// parameter gradients and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &self,
        cache: &LstmCache<T>,
        dh: &[T],
        dc: &[T],
        grad: &mut Self,
    ) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let (b, i_dim, h_dim) = (cache.batch, self.input, self.hidden);
        let cols = i_dim + h_dim;
        let mut dx = Tensor::zeros(&[b, i_dim]);
        let mut dh_prev = vec![T::zero(); b * h_dim];
        let mut dc_prev = vec![T::zero(); b * h_dim];
        let mut dz = vec![T::zero(); 4 * h_dim];
        let one = T::one();
        for n in 0..b {
            let g = &cache.gates[n * 4 * h_dim..(n + 1) * 4 * h_dim];
            for k in 0..h_dim {
                let idx = n * h_dim + k;
                let (ig, fg, og, gg) = (g[k], g[h_dim + k], g[2 * h_dim + k], g[3 * h_dim + k]);
                let tc = cache.tanh_c[idx];
                let d_o = dh[idx] * tc;
                let dct = dc[idx] + dh[idx] * og * (one - tc * tc);
                dz[k] = dct * gg * ig * (one - ig);
                dz[h_dim + k] = dct * cache.c_prev[idx] * fg * (one - fg);
                dz[2 * h_dim + k] = d_o * og * (one - og);
                dz[3 * h_dim + k] = dct * ig * (one - gg * gg);
                dc_prev[idx] = dct * fg;
            }
            let row = &cache.xh[n * cols..(n + 1) * cols];
            let mut dxh = vec![T::zero(); cols];
            for (r, &d) in dz.iter().enumerate() {
                grad.bias[r] += d;
                let w = &self.weight[r * cols..(r + 1) * cols];
                let gw = &mut grad.weight[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    gw[j] += d * row[j];
                    dxh[j] += d * w[j];
                }
            }
            dx.data_mut()[n * i_dim..(n + 1) * i_dim].copy_from_slice(&dxh[..i_dim]);
            dh_prev[n * h_dim..(n + 1) * h_dim].copy_from_slice(&dxh[i_dim..]);
        }
        (dx, dh_prev, dc_prev)
    }
}

impl<T: Scalar> Parameters<T> for LstmCell<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(ParamView {
            name: join(prefix, "weight"),
            shape: vec![4 * self.hidden, self.input + self.hidden],
            data: &self.weight,
        });
        out.push(ParamView {
            name: join(prefix, "bias"),
            shape: vec![4 * self.hidden],
            data: &self.bias,
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}
