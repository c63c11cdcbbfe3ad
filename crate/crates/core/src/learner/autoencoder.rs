use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{join, relu, relu_backward, upsample2x, upsample2x_backward, Conv2d, Dense, ParamView, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Convolutional autoencoder geometry. Each encoder stage is a stride-2 3x3
/// convolution; the decoder mirrors it with 2x upsampling plus a 3x3 conv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub latent: usize,
}

impl AeConfig {
    pub fn standard(in_channels: usize, size: usize) -> Self {
        AeConfig {
            in_channels,
            height: size,
            width: size,
            channels: vec![8, 16, 32],
            latent: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = 1usize << self.channels.len();
        if self.channels.is_empty()
            || self.in_channels == 0
            || self.latent == 0
            || self.channels.contains(&0)
            || self.height == 0
            || self.width == 0
            || self.height % f != 0
            || self.width % f != 0
        {
            return Err(Error::InvalidConfig(format!(
                "autoencoder geometry {self:?}: image sides must be non-zero multiples of {f}"
            )));
        }
        Ok(())
    }

    /// Spatial size after the encoder convs.
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let f = 1usize << self.channels.len();
        (*self.channels.last().unwrap(), self.height / f, self.width / f)
    }

    pub fn flat_dim(&self) -> usize {
        let (c, h, w) = self.bottleneck();
        c * h * w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T> {
    pub config: AeConfig,
    pub enc_conv: Vec<Conv2d<T>>,
    pub enc_dense: Dense<T>,
    pub dec_dense: Dense<T>,
    pub dec_conv: Vec<Conv2d<T>>,
}

/// Encoder activations kept for backprop.
#[derive(Clone, Debug)]
pub struct EncCache<T> {
    enc_in: Vec<Tensor<T>>,
    enc_flat: Tensor<T>,
}

/// Intermediate activations kept for backprop.
#[derive(Clone, Debug)]
pub struct AeCache<T> {
    enc: EncCache<T>,
    latent: Tensor<T>,
    dec_hidden: Tensor<T>,
    dec_in: Vec<Tensor<T>>,
    dec_out: Vec<Tensor<T>>,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc_conv = Vec::new();
        let mut prev = config.in_channels;
        for &c in &config.channels {
            enc_conv.push(Conv2d::new(prev, c, 3, 2, 1, &mut rng));
            prev = c;
        }
        let flat = config.flat_dim();
        let enc_dense = Dense::new(flat, config.latent, &mut rng);
        let dec_dense = Dense::new(config.latent, flat, &mut rng);
        let mut dec_conv = Vec::new();
        let n = config.channels.len();
        for s in 0..n {
            let cin = config.channels[n - 1 - s];
            let cout = if s + 1 < n { config.channels[n - 2 - s] } else { config.in_channels };
            dec_conv.push(Conv2d::new(cin, cout, 3, 1, 1, &mut rng));
        }
        Ok(Autoencoder {
            config,
            enc_conv,
            enc_dense,
            dec_dense,
            dec_conv,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        if x.shape().len() != 4 || x.shape()[1..] != [c.in_channels, c.height, c.width] {
            return Err(Error::ShapeMismatch(format!(
                "autoencoder expects [batch, {}, {}, {}], got {:?}",
                c.in_channels,
                c.height,
                c.width,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for conv in &self.enc_conv {
            a = relu(&conv.forward(&a)?);
        }
        self.enc_dense.forward(&a)
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.decode_cached(z)?.0)
    }

    fn decode_cached(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let b = z.dim(0);
        let (c, h, w) = self.config.bottleneck();
        let hidden = relu(&self.dec_dense.forward(z)?).reshape(&[b, c, h, w])?;
        let mut dec_in = Vec::new();
        let mut dec_out = Vec::new();
        let mut a = hidden.clone();
        let last = self.dec_conv.len() - 1;
        for (s, conv) in self.dec_conv.iter().enumerate() {
            let up = upsample2x(&a);
            let y = conv.forward(&up)?;
            a = if s < last { relu(&y) } else { y };
            dec_in.push(up);
            dec_out.push(a.clone());
        }
        Ok((a, hidden, dec_in, dec_out))
    }

    pub fn encode_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EncCache<T>)> {
        self.check_input(x)?;
        let mut enc_in = Vec::new();
        let mut a = x.clone();
        for conv in &self.enc_conv {
            let y = relu(&conv.forward(&a)?);
            enc_in.push(a);
            a = y;
        }
        let latent = self.enc_dense.forward(&a)?;
        Ok((latent, EncCache { enc_in, enc_flat: a }))
    }

    /// Backprop of d(loss)/d(latent) through the encoder only.
    pub fn encode_backward(&self, cache: &EncCache<T>, dz: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        let mut d = self.enc_dense.backward(&cache.enc_flat, dz, &mut grad.enc_dense);
        d = d.reshape(cache.enc_flat.shape())?;
        for s in (0..self.enc_conv.len()).rev() {
            let out = if s + 1 < self.enc_conv.len() { &cache.enc_in[s + 1] } else { &cache.enc_flat };
            d = relu_backward(out, &d);
            d = self.enc_conv[s].backward(&cache.enc_in[s], &d, &mut grad.enc_conv[s]);
        }
        Ok(d)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, AeCache<T>)> {
        let (latent, enc) = self.encode_cached(x)?;
        let (out, dec_hidden, dec_in, dec_out) = self.decode_cached(&latent)?;
        Ok((
            out,
            AeCache {
                enc,
                latent,
                dec_hidden,
                dec_in,
                dec_out,
            },
        ))
    }

    /// Backprop of d(loss)/d(output); returns d(loss)/d(input).
    pub fn backward(&self, cache: &AeCache<T>, dout: &Tensor<T>, grad: &mut Self) -> Result<Tensor<T>> {
        let last = self.dec_conv.len() - 1;
        let mut d = dout.clone();
        for s in (0..=last).rev() {
            if s < last {
                d = relu_backward(&cache.dec_out[s], &d);
            }
            let dup = self.dec_conv[s].backward(&cache.dec_in[s], &d, &mut grad.dec_conv[s]);
            d = upsample2x_backward(&dup);
        }
        let b = d.dim(0);
        let flat_hidden = cache.dec_hidden.clone().reshape(&[b, self.config.flat_dim()])?;
        let d = relu_backward(&flat_hidden, &d.reshape(&[b, self.config.flat_dim()])?);
        let dz = self.dec_dense.backward(&cache.latent, &d, &mut grad.dec_dense);
        self.encode_backward(&cache.enc, &dz, grad)
    }

    pub fn latent_of(cache: &AeCache<T>) -> &Tensor<T> {
        &cache.latent
    }
}

impl<T: Scalar> Parameters<T> for Autoencoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        for (i, c) in self.enc_conv.iter().enumerate() {
            c.visit(&join(prefix, &format!("enc_conv{i}")), out);
        }
        self.enc_dense.visit(&join(prefix, "enc_dense"), out);
        self.dec_dense.visit(&join(prefix, "dec_dense"), out);
        for (i, c) in self.dec_conv.iter().enumerate() {
            c.visit(&join(prefix, &format!("dec_conv{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for c in &mut self.enc_conv {
            c.visit_mut(out);
        }
        self.enc_dense.visit_mut(out);
        self.dec_dense.visit_mut(out);
        for c in &mut self.dec_conv {
            c.visit_mut(out);
        }
    }
}
