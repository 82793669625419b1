use rand::Rng;

use super::Tensor4;
use crate::error::{Error, Result};
use crate::params::{Parameters, Visitor, VisitorMut};

/// 2-D cross-correlation layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out × in × k × k`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and bias.
    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel, stride, padding);
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        layer.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-bound..bound));
        layer
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if s == 0 || h + 2 * p < k || w + 2 * p < k {
            return Err(Error::dim(format!(
                "conv k={k} s={s} p={p} does not fit a {h}x{w} input"
            )));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    fn check_input(&self, input: &Tensor4) -> Result<(usize, usize)> {
        if input.channels() != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        self.output_size(input.height(), input.width())
    }

    /// Output positions whose kernel tap `tap` reads inside `0..len`.
    #[inline]
    fn valid(&self, tap: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.padding);
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        let hi = if len + p > tap { ((len + p - tap - 1) / s + 1).min(out_len) } else { 0 };
        lo..hi.max(lo)
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let (oh, ow) = self.check_input(input)?;
        let [n, cin, h, w] = input.shape();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let mut out = Tensor4::zeros([n, self.out_channels, oh, ow]);
        let src = input.data();
        for (bo, plane) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let (b, o) = (bo / self.out_channels, bo % self.out_channels);
            plane.fill(self.bias[o]);
            for i in 0..cin {
                let chan = &src[(b * cin + i) * h * w..(b * cin + i + 1) * h * w];
                for ky in 0..k {
                    let ys = self.valid(ky, h, oh);
                    for kx in 0..k {
                        let xs = self.valid(kx, w, ow);
                        let wv = self.weight[self.w(o, i, ky, kx)];
                        for y in ys.clone() {
                            let row = &chan[(y * s + ky - p) * w..];
                            let orow = &mut plane[y * ow..(y + 1) * ow];
                            for x in xs.clone() {
                                orow[x] += wv * row[x * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradients with respect to the input and to this layer's parameters.
    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, Conv2d)> {
        let (oh, ow) = self.check_input(input)?;
        let [n, cin, h, w] = input.shape();
        if grad_out.shape() != [n, self.out_channels, oh, ow] {
            return Err(Error::dim(format!(
                "conv backward: gradient shape {:?}, expected {:?}",
                grad_out.shape(),
                [n, self.out_channels, oh, ow]
            )));
        }
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let mut grads = Conv2d::zeros(self.in_channels, self.out_channels, k, s, p);
        let mut gin = Tensor4::zeros(input.shape());
        let src = input.data();
        let gsrc = grad_out.data();
        for b in 0..n {
            for o in 0..self.out_channels {
                let g = &gsrc[(b * self.out_channels + o) * oh * ow..(b * self.out_channels + o + 1) * oh * ow];
                grads.bias[o] += g.iter().sum::<f64>();
                for i in 0..cin {
                    let base = (b * cin + i) * h * w;
                    let chan = &src[base..base + h * w];
                    let gchan = &mut gin.data_mut()[base..base + h * w];
                    for ky in 0..k {
                        let ys = self.valid(ky, h, oh);
                        for kx in 0..k {
                            let xs = self.valid(kx, w, ow);
                            let wi = self.w(o, i, ky, kx);
                            let wv = self.weight[wi];
                            let mut acc = 0.0;
                            for y in ys.clone() {
                                let r0 = (y * s + ky - p) * w;
                                let grow = &g[y * ow..(y + 1) * ow];
                                for x in xs.clone() {
                                    let sx = r0 + x * s + kx - p;
                                    acc += grow[x] * chan[sx];
                                    gchan[sx] += grow[x] * wv;
                                }
                            }
                            grads.weight[wi] += acc;
                        }
                    }
                }
            }
        }
        Ok((gin, grads))
    }
}

impl Parameters for Conv2d {
    fn visit(&self, f: &mut Visitor<'_>) {
        let (o, i, k) = (self.out_channels, self.in_channels, self.kernel);
        f("weight", &[o, i, k, k], &self.weight);
        f("bias", &[o], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        let (o, i, k) = (self.out_channels, self.in_channels, self.kernel);
        f("weight", &[o, i, k, k], &mut self.weight);
        f("bias", &[o], &mut self.bias);
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `grad_out ⊙ silu'(pre)`.
pub fn silu_backward(pre: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(pre.data()) {
        *d *= silu_grad(x);
    }
    g
}
