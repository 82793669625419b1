use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Latent, NoiseModel};
use crate::error::{Error, Result};
use crate::guidance_encoder::{silu, silu_backward, Conv2d, Tensor4};
use crate::params::{Parameters, Visitor, VisitorMut};

/// How the guidance feature `y` enters the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `z_t + y` on the latent channels.
    #[default]
    Add,
    /// `y` as extra input channels; zeros when guidance is absent.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub hidden: usize,
    /// Even number of sinusoidal timestep channels.
    pub embed_dim: usize,
    pub fusion: Fusion,
    /// Length of the schedule the timestep embedding is normalized by.
    pub timesteps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { latent_channels: 4, hidden: 32, embed_dim: 4, fusion: Fusion::Add, timesteps: 1000 }
    }
}

impl DenoiserConfig {
    pub fn input_channels(&self) -> usize {
        let extra = match self.fusion {
            Fusion::Add => 0,
            Fusion::Concat => self.latent_channels,
        };
        self.latent_channels + self.embed_dim + extra
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden == 0 || self.timesteps == 0 {
            return Err(Error::invalid("denoiser channels and timesteps must be positive"));
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("embed_dim must be even, got {}", self.embed_dim)));
        }
        Ok(())
    }
}

/// `[sin(w_0 s), cos(w_0 s), sin(w_1 s), ...]` with `s = t / T` and
/// `w_i = 2^i pi / 2`.
pub fn timestep_embedding(t: usize, timesteps: usize, dim: usize) -> Vec<f64> {
    let s = t as f64 / timesteps as f64;
    (0..dim / 2)
        .flat_map(|i| {
            let w = FRAC_PI_2 * (1u64 << i) as f64;
            [(w * s).sin(), (w * s).cos()]
        })
        .collect()
}

/// Three 3x3 convolutions with SiLU between them, predicting the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub config: DenoiserConfig,
    pub conv_in: Conv2d,
    pub conv_mid: Conv2d,
    pub conv_out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DenoiserCache {
    input: Tensor4,
    pre1: Tensor4,
    h1: Tensor4,
    pre2: Tensor4,
    h2: Tensor4,
    has_guidance: bool,
}

impl ToyDenoiser {
    pub fn new<R: Rng + ?Sized>(config: &DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, h) = (config.latent_channels, config.hidden);
        Ok(Self {
            config: config.clone(),
            conv_in: Conv2d::random(config.input_channels(), h, 3, 1, 1, rng),
            conv_mid: Conv2d::random(h, h, 3, 1, 1, rng),
            conv_out: Conv2d::random(h, c, 3, 1, 1, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |c: &Conv2d| Conv2d::zeros(c.in_channels, c.out_channels, c.kernel, c.stride, c.padding);
        Self {
            config: self.config.clone(),
            conv_in: z(&self.conv_in),
            conv_mid: z(&self.conv_mid),
            conv_out: z(&self.conv_out),
        }
    }

    fn build_input(&self, z_t: &Latent, ts: &[usize], guidance: Option<&Tensor4>) -> Result<Tensor4> {
        let cfg = &self.config;
        let [n, c, h, w] = z_t.shape();
        if c != cfg.latent_channels {
            return Err(Error::dim(format!(
                "denoiser expects {} latent channels, got {c}",
                cfg.latent_channels
            )));
        }
        if ts.len() != n {
            return Err(Error::dim(format!("{} timesteps for a batch of {n}", ts.len())));
        }
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > cfg.timesteps) {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", cfg.timesteps)));
        }
        if let Some(y) = guidance {
            z_t.check_same(y, "guidance fusion")?;
        }
        let plane = h * w;
        let mut emb = Vec::with_capacity(n * cfg.embed_dim * plane);
        for &t in ts {
            for e in timestep_embedding(t, cfg.timesteps, cfg.embed_dim) {
                emb.extend(std::iter::repeat_n(e, plane));
            }
        }
        let emb = Tensor4::new([n, cfg.embed_dim, h, w], emb)?;
        match cfg.fusion {
            Fusion::Add => {
                let mut x = z_t.clone();
                if let Some(y) = guidance {
                    x.add_assign(y)?;
                }
                x.concat_channels(&emb)
            }
            Fusion::Concat => {
                let y = guidance.cloned().unwrap_or_else(|| Tensor4::zeros(z_t.shape()));
                z_t.concat_channels(&emb)?.concat_channels(&y)
            }
        }
    }

    /// Predicts noise for a batch with one timestep per item.
    pub fn forward(&self, z_t: &Latent, ts: &[usize], guidance: Option<&Tensor4>) -> Result<(Latent, DenoiserCache)> {
        let input = self.build_input(z_t, ts, guidance)?;
        let pre1 = self.conv_in.forward(&input)?;
        let h1 = pre1.map(silu);
        let pre2 = self.conv_mid.forward(&h1)?;
        let h2 = pre2.map(silu);
        let out = self.conv_out.forward(&h2)?;
        Ok((out, DenoiserCache { input, pre1, h1, pre2, h2, has_guidance: guidance.is_some() }))
    }

    /// Parameter gradients and, when guidance was given, `dL/dy`.
    pub fn backward(&self, cache: &DenoiserCache, grad_out: &Latent) -> Result<(ToyDenoiser, Option<Tensor4>)> {
        let (g_h2, out_g) = self.conv_out.backward(&cache.h2, grad_out)?;
        let (g_h1, mid_g) = self.conv_mid.backward(&cache.h1, &silu_backward(&cache.pre2, &g_h2))?;
        let (g_in, in_g) = self.conv_in.backward(&cache.input, &silu_backward(&cache.pre1, &g_h1))?;
        let grads = ToyDenoiser { config: self.config.clone(), conv_in: in_g, conv_mid: mid_g, conv_out: out_g };
        let grad_y = cache.has_guidance.then(|| {
            let c = self.config.latent_channels;
            match self.config.fusion {
                Fusion::Add => g_in.split_channels(c).0,
                Fusion::Concat => g_in.split_channels(c + self.config.embed_dim).1,
            }
        });
        Ok((grads, grad_y))
    }
}

impl NoiseModel for ToyDenoiser {
    fn predict(&self, z_t: &Latent, t: usize, guidance: Option<&Tensor4>) -> Result<Latent> {
        let ts = vec![t; z_t.batch()];
        self.forward(z_t, &ts, guidance).map(|(eps, _)| eps)
    }
}

impl Parameters for ToyDenoiser {
    fn visit(&self, f: &mut Visitor<'_>) {
        self.conv_in.visit(&mut |n, d, v| f(&format!("conv_in.{n}"), d, v));
        self.conv_mid.visit(&mut |n, d, v| f(&format!("conv_mid.{n}"), d, v));
        self.conv_out.visit(&mut |n, d, v| f(&format!("conv_out.{n}"), d, v));
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        self.conv_in.visit_mut(&mut |n, d, v| f(&format!("conv_in.{n}"), d, v));
        self.conv_mid.visit_mut(&mut |n, d, v| f(&format!("conv_mid.{n}"), d, v));
        self.conv_out.visit_mut(&mut |n, d, v| f(&format!("conv_out.{n}"), d, v));
    }
}
