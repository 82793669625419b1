use rand::Rng;

use super::{forward_diffuse, DiffusionSchedule, Latent, ToyDenoiser};
use crate::error::{Error, Result};
use crate::guidance_encoder::{GuidanceBundle, GuidanceEncoder, Tensor4};
use crate::params::sgd_step;
use crate::rng;

/// Clean latents with their (optional) guidance, batched along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub z0: Latent,
    pub guidance: Option<GuidanceBundle>,
}

impl TrainingBatch {
    pub fn from_items(items: &[(Latent, GuidanceBundle)]) -> Result<Self> {
        let z: Vec<Tensor4> = items.iter().map(|(z, _)| z.clone()).collect();
        let g: Vec<GuidanceBundle> = items.iter().map(|(_, g)| g.clone()).collect();
        Ok(Self { z0: Tensor4::stack(&z)?, guidance: Some(GuidanceBundle::stack(&g)?) })
    }

    pub fn unguided(z0: Latent) -> Self {
        Self { z0, guidance: None }
    }
}

/// One SGD step on the unweighted noise-prediction loss.
///
/// For each batch item a timestep is drawn uniformly from `1..=T`, then the
/// item's noise from `N(0, I)`, all from `rng`. Gradients flow through the
/// denoiser and, when both are present, the encoder and the batch guidance.
/// Returns the loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    denoiser: &mut ToyDenoiser,
    encoder: Option<&mut GuidanceEncoder>,
    batch: &TrainingBatch,
    sched: &DiffusionSchedule,
    rng: &mut R,
    lr: f64,
) -> Result<f64> {
    if denoiser.config.timesteps != sched.num_steps() {
        return Err(Error::invalid(format!(
            "denoiser embeds {} timesteps, schedule has {}",
            denoiser.config.timesteps,
            sched.num_steps()
        )));
    }
    let [n, c, h, w] = batch.z0.shape();
    let item_len = c * h * w;
    let mut ts = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n * item_len);
    let mut z_t = Vec::with_capacity(n * item_len);
    for b in 0..n {
        let t = sched.sample_timestep(rng);
        let e = Tensor4::new([1, c, h, w], rng::normal_vec(rng, item_len))?;
        z_t.extend(forward_diffuse(&batch.z0.item(b), t, &e, sched)?.into_data());
        eps.extend(e.into_data());
        ts.push(t);
    }
    let eps = Tensor4::new(batch.z0.shape(), eps)?;
    let z_t = Tensor4::new(batch.z0.shape(), z_t)?;

    let encoded = match (&encoder, &batch.guidance) {
        (Some(enc), Some(bundle)) => Some(enc.encode_with_cache(bundle)?),
        _ => None,
    };
    let (pred, cache) = denoiser.forward(&z_t, &ts, encoded.as_ref().map(|(y, _)| y))?;

    let total = (n * item_len) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(eps.data())
        .map(|(p, e)| {
            loss += (p - e) * (p - e);
            2.0 * (p - e) / total
        })
        .collect();
    let loss = loss / total;
    if !loss.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    let grad = Tensor4::new(pred.shape(), grad)?;

    let (d_grads, grad_y) = denoiser.backward(&cache, &grad)?;
    let enc_grads = match (&encoder, &encoded, &grad_y) {
        (Some(enc), Some((_, ecache)), Some(gy)) => Some(enc.backward(ecache, gy)?),
        _ => None,
    };
    if lr != 0.0 {
        sgd_step(denoiser, &d_grads, lr);
        if let (Some(enc), Some(g)) = (encoder, enc_grads) {
            sgd_step(enc, &g, lr);
        }
    }
    Ok(loss)
}
