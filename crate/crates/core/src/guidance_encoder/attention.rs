use rand::Rng;

use super::Tensor4;
use crate::error::{Error, Result};
use crate::params::{Parameters, Visitor, VisitorMut};

/// Single-head spatial self-attention with a residual connection.
///
/// Tokens are the `H·W` positions of each batch item. With `x_n ∈ R^C`:
/// `A = softmax(q kᵀ / sqrt(C))` row-wise, `out_n = x_n + Σ_m A_nm v_m`.
/// Cost is `(H·W)²·C` per item; intended for feature maps up to 32×32.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub channels: usize,
    /// `C × C`, row-major; `q_n = W_q x_n`.
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Per batch item, token-major `N × C`.
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per batch item, `N × N` attention weights.
    pub attention: Vec<Vec<f64>>,
}

fn matvec_tokens(w: &[f64], x: &[f64], c: usize) -> Vec<f64> {
    let n = x.len() / c;
    let mut out = vec![0.0; n * c];
    for t in 0..n {
        let xt = &x[t * c..(t + 1) * c];
        for r in 0..c {
            out[t * c + r] = w[r * c..(r + 1) * c].iter().zip(xt).map(|(a, b)| a * b).sum();
        }
    }
    out
}

impl SelfAttention {
    pub fn zeros(channels: usize) -> Self {
        let n = channels * channels;
        Self { channels, w_q: vec![0.0; n], w_k: vec![0.0; n], w_v: vec![0.0; n] }
    }

    /// Normal entries with standard deviation `1/sqrt(C)`.
    pub fn random<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let std = 1.0 / (channels as f64).sqrt();
        let mut draw = || {
            crate::rng::normal_vec(rng, channels * channels)
                .into_iter()
                .map(|x| std * x)
                .collect::<Vec<_>>()
        };
        Self { channels, w_q: draw(), w_k: draw(), w_v: draw() }
    }

    fn tokens(features: &Tensor4, b: usize) -> Vec<f64> {
        let [_, c, h, w] = features.shape();
        let n = h * w;
        let mut x = vec![0.0; n * c];
        for ch in 0..c {
            let plane = &features.data()[features.offset(b, ch, 0, 0)..][..n];
            for (t, &val) in plane.iter().enumerate() {
                x[t * c + ch] = val;
            }
        }
        x
    }

    pub fn forward(&self, features: &Tensor4) -> Result<(Tensor4, AttentionCache)> {
        let [nb, c, h, w] = features.shape();
        if c != self.channels {
            return Err(Error::dim(format!(
                "attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let n = h * w;
        let scale = 1.0 / (c as f64).sqrt();
        let mut out = features.clone();
        let mut cache = AttentionCache { x: vec![], q: vec![], k: vec![], v: vec![], attention: vec![] };
        for b in 0..nb {
            let x = Self::tokens(features, b);
            let q = matvec_tokens(&self.w_q, &x, c);
            let k = matvec_tokens(&self.w_k, &x, c);
            let v = matvec_tokens(&self.w_v, &x, c);
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                let qi = &q[i * c..(i + 1) * c];
                let row = &mut a[i * n..(i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = scale * qi.iter().zip(&k[j * c..(j + 1) * c]).map(|(x, y)| x * y).sum::<f64>();
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
            }
            for i in 0..n {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += a[i * n + j] * v[j * c + ch];
                    }
                    let off = out.offset(b, ch, i / w, i % w);
                    out.data_mut()[off] += acc;
                }
            }
            cache.x.push(x);
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.attention.push(a);
        }
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &AttentionCache, grad_out: &Tensor4) -> Result<(Tensor4, SelfAttention)> {
        let [nb, c, h, w] = grad_out.shape();
        if c != self.channels || nb != cache.attention.len() {
            return Err(Error::dim("attention backward: gradient shape does not match the cache"));
        }
        let n = h * w;
        let scale = 1.0 / (c as f64).sqrt();
        let mut grads = SelfAttention::zeros(c);
        // Residual path.
        let mut gin = grad_out.clone();
        for b in 0..nb {
            let (x, q, k, v, a) = (&cache.x[b], &cache.q[b], &cache.k[b], &cache.v[b], &cache.attention[b]);
            let gout = Self::tokens(grad_out, b);

            let mut gv = vec![0.0; n * c];
            let mut gs = vec![0.0; n * n];
            for i in 0..n {
                let go = &gout[i * c..(i + 1) * c];
                let arow = &a[i * n..(i + 1) * n];
                let mut ga = vec![0.0; n];
                for j in 0..n {
                    ga[j] = go.iter().zip(&v[j * c..(j + 1) * c]).map(|(x, y)| x * y).sum();
                    for ch in 0..c {
                        gv[j * c + ch] += arow[j] * go[ch];
                    }
                }
                let dot: f64 = arow.iter().zip(&ga).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    gs[i * n + j] = arow[j] * (ga[j] - dot);
                }
            }
            let mut gq = vec![0.0; n * c];
            let mut gk = vec![0.0; n * c];
            for i in 0..n {
                for j in 0..n {
                    let s = gs[i * n + j] * scale;
                    if s == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        gq[i * c + ch] += s * k[j * c + ch];
                        gk[j * c + ch] += s * q[i * c + ch];
                    }
                }
            }
            for (gw, wmat, gproj) in [
                (&mut grads.w_q, &self.w_q, &gq),
                (&mut grads.w_k, &self.w_k, &gk),
                (&mut grads.w_v, &self.w_v, &gv),
            ] {
                for t in 0..n {
                    let g = &gproj[t * c..(t + 1) * c];
                    let xt = &x[t * c..(t + 1) * c];
                    for r in 0..c {
                        for col in 0..c {
                            gw[r * c + col] += g[r] * xt[col];
                        }
                    }
                    for col in 0..c {
                        let mut acc = 0.0;
                        for r in 0..c {
                            acc += wmat[r * c + col] * g[r];
                        }
                        let off = gin.offset(b, col, t / w, t % w);
                        gin.data_mut()[off] += acc;
                    }
                }
            }
        }
        Ok((gin, grads))
    }
}

impl Parameters for SelfAttention {
    fn visit(&self, f: &mut Visitor<'_>) {
        let c = self.channels;
        f("w_q", &[c, c], &self.w_q);
        f("w_k", &[c, c], &self.w_k);
        f("w_v", &[c, c], &self.w_v);
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        let c = self.channels;
        f("w_q", &[c, c], &mut self.w_q);
        f("w_k", &[c, c], &mut self.w_k);
        f("w_v", &[c, c], &mut self.w_v);
    }
}
