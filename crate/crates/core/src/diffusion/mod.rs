//! Variance-preserving diffusion over small latent tensors.
//!
//! Timesteps are 1-based: `t = 1` is the least noisy level and `t = T` the
//! noisiest. `alpha_bar(0)` is defined as 1 so that the sampler can finish on a
//! clean latent.

mod denoiser;
mod toy;
mod train;

pub use denoiser::{timestep_embedding, DenoiserCache, DenoiserConfig, Fusion, ToyDenoiser};
pub use toy::{run_toy_training, shapes_dataset, ToyTrainingConfig, ToyTrainingRun};
pub use train::{train_step, TrainingBatch};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance_encoder::Tensor4;
use crate::rng;

/// Latents are batched `[n, C, H, W]` tensors.
pub type Latent = Tensor4;

/// Linear beta schedule with cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Text-configurable schedule and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02, lr: 0.2, steps: 500, seed: 0 }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if timesteps == 0 {
        return Err(Error::invalid("schedule needs at least one timestep"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "schedule needs 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(timesteps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(DiffusionSchedule { betas, alpha_bar })
}

impl DiffusionSchedule {
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.num_steps())));
        }
        Ok(())
    }

    /// Draws `t` uniformly from `1..=T`.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(1..=self.num_steps())
    }
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(z0: &Latent, t: usize, eps: &Latent, sched: &DiffusionSchedule) -> Result<Latent> {
    sched.check_timestep(t)?;
    z0.check_same(eps, "forward_diffuse")?;
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + s * e).collect();
    Tensor4::new(z0.shape(), data)
}

/// Inverse of [`forward_diffuse`] given the noise.
pub fn predict_z0(z_t: &Latent, t: usize, eps: &Latent, sched: &DiffusionSchedule) -> Result<Latent> {
    z_t.check_same(eps, "predict_z0")?;
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z_t.data().iter().zip(eps.data()).map(|(z, e)| (z - s * e) / a).collect();
    Tensor4::new(z_t.shape(), data)
}

/// Unit loss weight.
pub fn unit_weight(_t: usize) -> f64 {
    1.0
}

/// `weight(t) * mean((eps_true - eps_pred)^2)`.
pub fn training_loss(eps_true: &Latent, eps_pred: &Latent, t: usize, weight: impl Fn(usize) -> f64) -> Result<f64> {
    eps_true.check_same(eps_pred, "training_loss")?;
    let n = eps_true.data().len();
    if n == 0 {
        return Err(Error::dim("training_loss: empty tensors"));
    }
    let sse: f64 = eps_true.data().iter().zip(eps_pred.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(weight(t) * sse / n as f64)
}

/// Anything that predicts the noise in `z_t`.
pub trait NoiseModel {
    fn predict(&self, z_t: &Latent, t: usize, guidance: Option<&Tensor4>) -> Result<Latent>;
}

/// Timesteps visited by an `steps`-step sampler, starting at `T` and ending at 0.
///
/// `t_k = T - floor(k T / steps)` for `k = 0..steps`, followed by 0.
pub fn sampling_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    if steps > total {
        return Err(Error::invalid(format!("{steps} sampler steps exceed the {total}-step schedule")));
    }
    let mut ts: Vec<usize> = (0..steps).map(|k| total - k * total / steps).collect();
    ts.push(0);
    Ok(ts)
}

/// Deterministic DDIM sampling from a given `z_T`.
pub fn sample(
    model: &dyn NoiseModel,
    guidance: Option<&Tensor4>,
    sched: &DiffusionSchedule,
    steps: usize,
    z_t: Latent,
) -> Result<Latent> {
    let ts = sampling_timesteps(sched.num_steps(), steps)?;
    let mut z = z_t;
    for pair in ts.windows(2) {
        let (t, next) = (pair[0], pair[1]);
        let eps = model.predict(&z, t, guidance)?;
        z.check_same(&eps, "sample")?;
        let ab = sched.alpha_bar(t);
        let ab_next = sched.alpha_bar(next);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (a_next, s_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        let data: Vec<f64> = z
            .data()
            .iter()
            .zip(eps.data())
            .map(|(zt, e)| {
                let z0 = (zt - s * e) / a;
                a_next * z0 + s_next * e
            })
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("sampler diverged at t = {t}")));
        }
        z = Tensor4::new(z.shape(), data)?;
    }
    Ok(z)
}

/// Draws `z_T ~ N(0, I)` from `rng` and samples.
pub fn sample_from_noise<R: Rng + ?Sized>(
    model: &dyn NoiseModel,
    guidance: Option<&Tensor4>,
    sched: &DiffusionSchedule,
    steps: usize,
    shape: [usize; 4],
    rng: &mut R,
) -> Result<Latent> {
    let z_t = Tensor4::new(shape, rng::normal_vec(rng, shape.iter().product()))?;
    sample(model, guidance, sched, steps, z_t)
}

#[cfg(test)]
mod tests;
