//! Synthetic latents that are a deterministic function of their guidance.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{train_step, DenoiserConfig, DiffusionConfig, Fusion, Latent, ToyDenoiser, TrainingBatch};
use crate::error::{Error, Result};
use crate::guidance_encoder::{Condition, GuidanceBundle, GuidanceEncoder, GuidanceNetConfig, Tensor4};
use crate::rng;

/// Three random discs, one per guidance channel, drawn at
/// `guidance_size × guidance_size`. Latent channel `c` is `2 * coverage - 1`
/// of disc `c % 3`, box-pooled to `size × size`.
pub fn shapes_dataset(
    count: usize,
    size: usize,
    guidance_size: usize,
    latent_channels: usize,
    seed: u64,
) -> Result<Vec<(Latent, GuidanceBundle)>> {
    if size == 0 || latent_channels == 0 || !guidance_size.is_multiple_of(size) {
        return Err(Error::invalid(format!(
            "shapes dataset needs positive sizes with {size} dividing {guidance_size}"
        )));
    }
    let mut r = rng::seeded(seed);
    let full = guidance_size;
    let f = full / size;
    (0..count)
        .map(|_| {
            let mut cond = vec![0.0; 3 * full * full];
            for ch in 0..3 {
                let cx = r.random_range(0.0..full as f64);
                let cy = r.random_range(0.0..full as f64);
                let rad = r.random_range(0.15..0.4) * full as f64;
                for y in 0..full {
                    for x in 0..full {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        if dx * dx + dy * dy <= rad * rad {
                            cond[(ch * full + y) * full + x] = 1.0;
                        }
                    }
                }
            }
            let mut z0 = vec![0.0; latent_channels * size * size];
            for c in 0..latent_channels {
                let src = c % 3;
                for y in 0..size {
                    for x in 0..size {
                        let mut cover = 0.0;
                        for dy in 0..f {
                            for dx in 0..f {
                                cover += cond[(src * full + f * y + dy) * full + f * x + dx];
                            }
                        }
                        z0[(c * size + y) * size + x] = 2.0 * cover / (f * f) as f64 - 1.0;
                    }
                }
            }
            let bundle = GuidanceBundle::new().with(Condition::Depth, Tensor4::new([1, 3, full, full], cond)?);
            Ok((Tensor4::new([1, latent_channels, size, size], z0)?, bundle))
        })
        .collect()
}

/// Settings for a small guided training run on [`shapes_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainingConfig {
    pub diffusion: DiffusionConfig,
    pub latent_size: usize,
    /// Must be a multiple of `latent_size` matching the encoder's downsampling.
    pub guidance_size: usize,
    pub latent_channels: usize,
    pub dataset_size: usize,
    pub dataset_seed: u64,
    pub batch: usize,
    pub hidden: usize,
    pub encoder_widths: Vec<usize>,
    pub fusion: Fusion,
    /// Pair each latent with the guidance of a random other sample.
    pub shuffle_guidance: bool,
}

impl Default for ToyTrainingConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionConfig { timesteps: 100, lr: 0.3, ..DiffusionConfig::default() },
            latent_size: 8,
            guidance_size: 16,
            latent_channels: 2,
            dataset_size: 64,
            dataset_seed: 7,
            batch: 8,
            hidden: 16,
            encoder_widths: vec![8, 16],
            fusion: Fusion::Add,
            shuffle_guidance: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTrainingRun {
    pub losses: Vec<f64>,
    pub denoiser: ToyDenoiser,
    pub encoder: GuidanceEncoder,
}

impl ToyTrainingRun {
    /// Mean loss over steps `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let part = &self.losses[range];
        part.iter().sum::<f64>() / part.len() as f64
    }
}

/// Trains a denoiser and a depth-guidance encoder from scratch.
///
/// Every random choice (initialization, batch order, guidance shuffling,
/// timesteps and noise) comes from `diffusion.seed`.
pub fn run_toy_training(cfg: &ToyTrainingConfig) -> Result<ToyTrainingRun> {
    if cfg.batch == 0 || cfg.batch > cfg.dataset_size {
        return Err(Error::invalid(format!(
            "batch {} must be between 1 and the dataset size {}",
            cfg.batch, cfg.dataset_size
        )));
    }
    let sched = cfg.diffusion.schedule()?;
    let data = shapes_dataset(cfg.dataset_size, cfg.latent_size, cfg.guidance_size, cfg.latent_channels, cfg.dataset_seed)?;
    let mut r = rng::seeded(cfg.diffusion.seed);
    let dcfg = DenoiserConfig {
        latent_channels: cfg.latent_channels,
        hidden: cfg.hidden,
        embed_dim: 4,
        fusion: cfg.fusion,
        timesteps: cfg.diffusion.timesteps,
    };
    let mut denoiser = ToyDenoiser::new(&dcfg, &mut r)?;
    let ncfg = GuidanceNetConfig::with_widths(3, &cfg.encoder_widths, cfg.latent_channels);
    let out = ncfg.output_size(cfg.guidance_size, cfg.guidance_size)?;
    if out != (cfg.latent_size, cfg.latent_size) {
        return Err(Error::invalid(format!(
            "encoder maps {0}x{0} guidance to {out:?}, latents are {1}x{1}",
            cfg.guidance_size, cfg.latent_size
        )));
    }
    let mut encoder = GuidanceEncoder::new(&ncfg, &[Condition::Depth], &mut r);
    let mut losses = Vec::with_capacity(cfg.diffusion.steps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.diffusion.steps {
        order.shuffle(&mut r);
        let mut guide = order[..cfg.batch].to_vec();
        if cfg.shuffle_guidance {
            guide = (0..cfg.batch).map(|_| r.random_range(0..data.len())).collect();
        }
        let items: Vec<(Latent, GuidanceBundle)> =
            order[..cfg.batch].iter().zip(&guide).map(|(&i, &g)| (data[i].0.clone(), data[g].1.clone())).collect();
        let batch = TrainingBatch::from_items(&items)?;
        losses.push(train_step(&mut denoiser, Some(&mut encoder), &batch, &sched, &mut r, cfg.diffusion.lr)?);
    }
    Ok(ToyTrainingRun { losses, denoiser, encoder })
}
