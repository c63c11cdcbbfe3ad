use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Named view of one parameter tensor.
#[derive(Debug)]
pub struct ParamView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Enumerates parameters in a fixed order. Gradients are stored in a value of
/// the same type, so optimizer code zips `params_mut` of the model with
/// `params` of the gradient.
pub trait Parameters<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>);

    fn params(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.fill(T::zero());
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::cast(rng.gen_range(-bound..bound))).collect()
}

/// 2-D convolution, weights `[out, in, k, k]`, lowered to a matrix product
/// over an im2col buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: uniform(rng, out_ch * fan_in, (6.0 / fan_in as f64).sqrt()),
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, col: &mut [T]) {
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                x[(c * h + iy as usize) * w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        for c in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dx[(c * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 4 || x.dim(1) != self.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [batch, {}, h, w], got {:?}",
                self.in_ch,
                x.shape()
            )));
        }
        let (b, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::ShapeMismatch(format!("conv2d input {h}x{w} smaller than kernel")));
        }
        let (oh, ow) = self.out_size(h, w);
        let rows = self.in_ch * self.kernel * self.kernel;
        let p = oh * ow;
        let mut col = vec![T::zero(); rows * p];
        let mut y = Tensor::zeros(&[b, self.out_ch, oh, ow]);
        let in_per = self.in_ch * h * w;
        let out_per = self.out_ch * p;
        for n in 0..b {
            self.im2col(&x.data()[n * in_per..(n + 1) * in_per], h, w, &mut col);
            let yn = &mut y.data_mut()[n * out_per..(n + 1) * out_per];
            for oc in 0..self.out_ch {
                let yrow = &mut yn[oc * p..(oc + 1) * p];
                yrow.fill(self.bias[oc]);
                let wrow = &self.weight[oc * rows..(oc + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    let crow = &col[r * p..(r + 1) * p];
                    for (yv, cv) in yrow.iter_mut().zip(crow) {
                        *yv += wv * *cv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns d(loss)/dx.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Self) -> Tensor<T> {
        let (b, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        let (oh, ow) = self.out_size(h, w);
        debug_assert_eq!(dy.shape(), &[b, self.out_ch, oh, ow]);
        let rows = self.in_ch * self.kernel * self.kernel;
        let p = oh * ow;
        let mut col = vec![T::zero(); rows * p];
        let mut dcol = vec![T::zero(); rows * p];
        let mut dx = Tensor::zeros(x.shape());
        let in_per = self.in_ch * h * w;
        let out_per = self.out_ch * p;
        for n in 0..b {
            self.im2col(&x.data()[n * in_per..(n + 1) * in_per], h, w, &mut col);
            let dyn_ = &dy.data()[n * out_per..(n + 1) * out_per];
            dcol.fill(T::zero());
            for oc in 0..self.out_ch {
                let drow = &dyn_[oc * p..(oc + 1) * p];
                grad.bias[oc] += drow.iter().copied().sum::<T>();
                let wrow = &self.weight[oc * rows..(oc + 1) * rows];
                let gwrow = &mut grad.weight[oc * rows..(oc + 1) * rows];
                for r in 0..rows {
                    let crow = &col[r * p..(r + 1) * p];
                    let mut acc = T::zero();
                    for (d, c) in drow.iter().zip(crow) {
                        acc += *d * *c;
                    }
                    gwrow[r] += acc;
                    let wv = wrow[r];
                    let dc = &mut dcol[r * p..(r + 1) * p];
                    for (o, d) in dc.iter_mut().zip(drow) {
                        *o += wv * *d;
                    }
                }
            }
            self.col2im(&dcol, h, w, &mut dx.data_mut()[n * in_per..(n + 1) * in_per]);
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(ParamView {
            name: join(prefix, "weight"),
            shape: vec![self.out_ch, self.in_ch, self.kernel, self.kernel],
            data: &self.weight,
        });
        out.push(ParamView {
            name: join(prefix, "bias"),
            shape: vec![self.out_ch],
            data: &self.bias,
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Fully connected layer, weights `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            input,
            output,
            weight: uniform(rng, input * output, (6.0 / input as f64).sqrt()),
            bias: vec![T::zero(); output],
        }
    }

    /// Accepts `[batch, ...]` and flattens trailing dims.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.shape().first().copied().unwrap_or(0);
        if b == 0 || x.len() != b * self.input {
            return Err(Error::ShapeMismatch(format!(
                "dense expects [batch, {}], got {:?}",
                self.input,
                x.shape()
            )));
        }
        let mut y = Tensor::zeros(&[b, self.output]);
        for n in 0..b {
            let xr = &x.data()[n * self.input..(n + 1) * self.input];
            let yr = &mut y.data_mut()[n * self.output..(n + 1) * self.output];
            for (o, yv) in yr.iter_mut().enumerate() {
                let wr = &self.weight[o * self.input..(o + 1) * self.input];
                let mut acc = self.bias[o];
                for (wv, xv) in wr.iter().zip(xr) {
                    acc += *wv * *xv;
                }
                *yv = acc;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Self) -> Tensor<T> {
        let b = x.dim(0);
        let mut dx = Tensor::zeros(x.shape());
        for n in 0..b {
            let xr = &x.data()[n * self.input..(n + 1) * self.input];
            let dr = &dy.data()[n * self.output..(n + 1) * self.output];
            let dxr = &mut dx.data_mut()[n * self.input..(n + 1) * self.input];
            for (o, &d) in dr.iter().enumerate() {
                grad.bias[o] += d;
                let wr = &self.weight[o * self.input..(o + 1) * self.input];
                let gr = &mut grad.weight[o * self.input..(o + 1) * self.input];
                for i in 0..self.input {
                    gr[i] += d * xr[i];
                    dxr[i] += d * wr[i];
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for Dense<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        out.push(ParamView {
            name: join(prefix, "weight"),
            shape: vec![self.output, self.input],
            data: &self.weight,
        });
        out.push(ParamView {
            name: join(prefix, "bias"),
            shape: vec![self.output],
            data: &self.bias,
        });
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward through ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling of `[b, c, h, w]`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut y = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
    let out = y.data_mut();
    for plane in 0..b * c {
        for iy in 0..2 * h {
            for ix in 0..2 * w {
                out[(plane * 2 * h + iy) * 2 * w + ix] = x.data()[(plane * h + iy / 2) * w + ix / 2];
            }
        }
    }
    y
}

pub fn upsample2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (b, c, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let out = dx.data_mut();
    for plane in 0..b * c {
        for iy in 0..h2 {
            for ix in 0..w2 {
                out[(plane * h + iy / 2) * w + ix / 2] += dy.data()[(plane * h2 + iy) * w2 + ix];
            }
        }
    }
    dx
}
