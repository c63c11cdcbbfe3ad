use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, Dense, ParamView, Parameters};
use super::lstm::{LstmCache, LstmCell, LstmState};
use super::tensor::Tensor;
use crate::error::Result;
use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// LSTM over per-tick inputs with a linear readout of the next state.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor<T> {
    pub config: PredictorConfig,
    pub lstm: LstmCell<T>,
    pub readout: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct StepCache<T> {
    lstm: LstmCache<T>,
    h: Tensor<T>,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(config: PredictorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmCell::new(config.input, config.hidden, &mut rng);
        let readout = Dense::new(config.hidden, config.output, &mut rng);
        Predictor { config, lstm, readout }
    }

    pub fn initial_state(&self, batch: usize) -> LstmState<T> {
        LstmState::zeros(batch, self.config.hidden)
    }

    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<(Tensor<T>, LstmState<T>, StepCache<T>)> {
        let (next, lstm) = self.lstm.step(x, state)?;
        let y = self.readout.forward(&next.h)?;
        let cache = StepCache {
            lstm,
            h: next.h.clone(),
        };
        Ok((y, next, cache))
    }

    /// Runs a window of inputs from `state`, returning outputs, caches and the
    /// final state.
    pub fn forward_window(
        &self,
        xs: &[Tensor<T>],
        state: &LstmState<T>,
    ) -> Result<(Vec<Tensor<T>>, Vec<StepCache<T>>, LstmState<T>)> {
        let mut s = state.clone();
        let mut ys = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, next, cache) = self.step(x, &s)?;
            ys.push(y);
            caches.push(cache);
            s = next;
        }
        Ok((ys, caches, s))
    }

    /// Backprop through a window; gradients into the window's initial state
    /// are dropped (truncated BPTT). Returns d(loss)/d(input) per step.
    pub fn backward_window(&self, caches: &[StepCache<T>], dys: &[Tensor<T>], grad: &mut Self) -> Vec<Tensor<T>> {
        let hidden = self.config.hidden;
        let batch = caches.first().map(|c| c.h.dim(0)).unwrap_or(0);
        let mut dh_next = vec![T::zero(); batch * hidden];
        let mut dc_next = vec![T::zero(); batch * hidden];
        let mut dxs = vec![Tensor::zeros(&[0]); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh_read = self.readout.backward(&caches[t].h, &dys[t], &mut grad.readout);
            for (a, b) in dh_next.iter_mut().zip(dh_read.data()) {
                *a += *b;
            }
            let (dx, dh, dc) = self.lstm.backward_step(&caches[t].lstm, &dh_next, &dc_next, &mut grad.lstm);
            dh_next = dh;
            dc_next = dc;
            dxs[t] = dx;
        }
        dxs
    }
}

impl<T: Scalar> Parameters<T> for Predictor<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.lstm.visit(&join(prefix, "lstm"), out);
        self.readout.visit(&join(prefix, "readout"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.lstm.visit_mut(out);
        self.readout.visit_mut(out);
    }
}
