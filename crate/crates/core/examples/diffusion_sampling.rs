//! Noises a latent, then samples it back with a denoiser that knows the
//! clean latent, for several step counts.

use bodyguide::diffusion::{forward_diffuse, make_schedule, sample, Latent, NoiseModel};
use bodyguide::guidance_encoder::Tensor4;
use bodyguide::rng;

/// Returns the exact noise that turns the known `z0` into `z_t`.
struct Oracle {
    z0: Latent,
    alpha_bar: Vec<f64>,
}

impl NoiseModel for Oracle {
    fn predict(&self, z_t: &Latent, t: usize, _: Option<&Tensor4>) -> bodyguide::Result<Latent> {
        let ab = self.alpha_bar[t - 1];
        let data = z_t.data().iter().zip(self.z0.data()).map(|(z, z0)| (z - ab.sqrt() * z0) / (1.0 - ab).sqrt());
        Tensor4::new(z_t.shape(), data.collect())
    }
}

fn main() -> bodyguide::Result<()> {
    let sched = make_schedule(1000, 1e-4, 0.02)?;
    let mut r = rng::seeded(0);
    let shape = [1, 2, 4, 4];
    let z0 = Tensor4::new(shape, rng::normal_vec(&mut r, 32))?;
    let eps = Tensor4::new(shape, rng::normal_vec(&mut r, 32))?;
    let z_t = forward_diffuse(&z0, 1000, &eps, &sched)?;
    let oracle = Oracle { z0: z0.clone(), alpha_bar: sched.alpha_bars().to_vec() };
    for steps in [1, 10, 50, 1000] {
        let out = sample(&oracle, None, &sched, steps, z_t.clone())?;
        let err = out.data().iter().zip(z0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{steps:>4} steps: max |z - z0| = {err:.3e}");
    }
    Ok(())
}
