use super::*;
use crate::guidance_encoder::{Condition, GuidanceBundle, GuidanceEncoder, GuidanceNetConfig};
use crate::params::Parameters;

fn randn(shape: [usize; 4], seed: u64) -> Tensor4 {
    let mut r = rng::seeded(seed);
    Tensor4::new(shape, rng::normal_vec(&mut r, shape.iter().product())).unwrap()
}

/// Returns the noise that was actually used to build `z_t` from `z0`.
struct Oracle<'a> {
    z0: &'a Tensor4,
    sched: &'a DiffusionSchedule,
}

impl NoiseModel for Oracle<'_> {
    fn predict(&self, z_t: &Latent, t: usize, _: Option<&Tensor4>) -> Result<Latent> {
        let ab = self.sched.alpha_bar(t);
        let data = z_t
            .data()
            .iter()
            .zip(self.z0.data())
            .map(|(z, z0)| (z - ab.sqrt() * z0) / (1.0 - ab).sqrt())
            .collect();
        Tensor4::new(z_t.shape(), data)
    }
}

struct Silent;

impl NoiseModel for Silent {
    fn predict(&self, z_t: &Latent, _: usize, _: Option<&Tensor4>) -> Result<Latent> {
        Ok(Tensor4::zeros(z_t.shape()))
    }
}

#[test]
fn single_step_schedule() {
    let s = make_schedule(1, 0.5, 0.5).unwrap();
    assert_eq!(s.alpha_bars(), &[0.5]);
    assert_eq!(s.alpha_bar(0), 1.0);
}

#[test]
fn standard_schedule_decreases() {
    let s = make_schedule(1000, 1e-4, 0.02).unwrap();
    assert_eq!(s.num_steps(), 1000);
    assert_eq!(s.beta(1), 1e-4);
    assert!((s.beta(1000) - 0.02).abs() < 1e-15);
    assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    assert!(s.alpha_bar(1000) < 1e-4);
    let mut acc = 1.0;
    for t in 1..=1000 {
        acc *= 1.0 - s.beta(t);
        assert_eq!(s.alpha_bar(t), acc);
    }
}

#[test]
fn schedule_rejects_bad_ranges() {
    for (t, a, b) in [(10, 0.02, 1e-4), (0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 1e-4, 1.0)] {
        assert!(matches!(make_schedule(t, a, b), Err(Error::InvalidArgument(_))), "{t} {a} {b}");
    }
}

#[test]
fn forward_diffuse_branches() {
    let s = make_schedule(100, 1e-4, 0.02).unwrap();
    let z0 = randn([1, 2, 3, 3], 1);
    let eps = randn([1, 2, 3, 3], 2);
    let zero = Tensor4::zeros(z0.shape());
    let t = 37;
    let ab = s.alpha_bar(t);

    let a = forward_diffuse(&z0, t, &zero, &s).unwrap();
    for (x, z) in a.data().iter().zip(z0.data()) {
        assert_eq!(*x, ab.sqrt() * z);
    }
    let b = forward_diffuse(&zero, t, &eps, &s).unwrap();
    for (x, e) in b.data().iter().zip(eps.data()) {
        assert_eq!(*x, (1.0 - ab).sqrt() * e);
    }
    let zt = forward_diffuse(&z0, t, &eps, &s).unwrap();
    let back = predict_z0(&zt, t, &eps, &s).unwrap();
    for (x, z) in back.data().iter().zip(z0.data()) {
        assert!((x - z).abs() < 1e-12);
    }

    assert!(forward_diffuse(&z0, 0, &eps, &s).is_err());
    assert!(forward_diffuse(&z0, 101, &eps, &s).is_err());
    assert!(matches!(forward_diffuse(&z0, 5, &randn([1, 2, 3, 2], 3), &s), Err(Error::Dimension(_))));
}

#[test]
fn loss_examples() {
    let a = randn([2, 2, 3, 3], 4);
    assert_eq!(training_loss(&a, &a, 5, unit_weight).unwrap(), 0.0);
    let b = a.map(|x| x + 1.0);
    assert!((training_loss(&a, &b, 5, unit_weight).unwrap() - 1.0).abs() < 1e-12);
    assert!((training_loss(&a, &b, 5, |t| t as f64).unwrap() - 5.0).abs() < 1e-12);
    assert!(training_loss(&a, &randn([1, 2, 3, 3], 5), 1, unit_weight).is_err());
}

#[test]
fn sampling_timesteps_are_strided() {
    assert_eq!(sampling_timesteps(10, 1).unwrap(), vec![10, 0]);
    assert_eq!(sampling_timesteps(10, 3).unwrap(), vec![10, 7, 4, 0]);
    assert_eq!(sampling_timesteps(4, 4).unwrap(), vec![4, 3, 2, 1, 0]);
    assert!(sampling_timesteps(10, 0).is_err());
    assert!(sampling_timesteps(10, 11).is_err());
}

#[test]
fn oracle_sampler_recovers_z0() {
    let s = make_schedule(1000, 1e-4, 0.02).unwrap();
    let z0 = randn([1, 2, 4, 4], 6);
    let eps = randn([1, 2, 4, 4], 7);
    let z_t = forward_diffuse(&z0, 1000, &eps, &s).unwrap();
    let oracle = Oracle { z0: &z0, sched: &s };
    for (steps, tol) in [(1, 1e-10), (10, 1e-8), (1000, 1e-8)] {
        let out = sample(&oracle, None, &s, steps, z_t.clone()).unwrap();
        let err = out.data().iter().zip(z0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < tol, "{steps} steps: {err}");
    }
}

#[test]
fn silent_sampler_matches_scalar_recursion() {
    let s = make_schedule(50, 1e-3, 0.05).unwrap();
    let z_t = randn([1, 1, 2, 2], 8);
    let out = sample(&Silent, None, &s, 7, z_t.clone()).unwrap();
    let ts = sampling_timesteps(50, 7).unwrap();
    let factor: f64 = ts.windows(2).map(|p| (s.alpha_bar(p[1]) / s.alpha_bar(p[0])).sqrt()).product();
    for (o, z) in out.data().iter().zip(z_t.data()) {
        assert!((o - factor * z).abs() < 1e-12);
    }
    assert!((factor - 1.0 / s.alpha_bar(50).sqrt()).abs() < 1e-10);
}

#[test]
fn variance_is_preserved() {
    let s = make_schedule(1000, 1e-4, 0.02).unwrap();
    let n = 10_000;
    let mut r = rng::seeded(9);
    let z0 = Tensor4::new([1, 1, 1, n], rng::normal_vec(&mut r, n)).unwrap();
    for t in [1, 10, 100, 500, 1000] {
        let eps = Tensor4::new([1, 1, 1, n], rng::normal_vec(&mut r, n)).unwrap();
        let zt = forward_diffuse(&z0, t, &eps, &s).unwrap();
        let mean = zt.data().iter().sum::<f64>() / n as f64;
        let var = zt.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05, "t = {t}: {var}");
    }
}

fn small_config(fusion: Fusion) -> DenoiserConfig {
    DenoiserConfig { latent_channels: 2, hidden: 4, embed_dim: 4, fusion, timesteps: 20 }
}

#[test]
fn embedding_is_sinusoidal() {
    let e = timestep_embedding(10, 20, 4);
    let s = std::f64::consts::FRAC_PI_2 * 0.5;
    assert_eq!(e, vec![s.sin(), s.cos(), (2.0 * s).sin(), (2.0 * s).cos()]);
    assert!(DenoiserConfig { embed_dim: 3, ..small_config(Fusion::Add) }.validate().is_err());
}

#[test]
fn denoiser_shapes_and_errors() {
    let mut r = rng::seeded(10);
    for fusion in [Fusion::Add, Fusion::Concat] {
        let d = ToyDenoiser::new(&small_config(fusion), &mut r).unwrap();
        let z = randn([2, 2, 5, 5], 11);
        let (eps, _) = d.forward(&z, &[3, 4], None).unwrap();
        assert_eq!(eps.shape(), z.shape());
        assert!(d.forward(&z, &[3], None).is_err());
        assert!(d.forward(&z, &[0, 1], None).is_err());
        assert!(d.forward(&z, &[1, 21], None).is_err());
        assert!(d.forward(&randn([2, 3, 5, 5], 12), &[1, 1], None).is_err());
        assert!(matches!(d.forward(&z, &[1, 1], Some(&randn([2, 2, 4, 5], 13))), Err(Error::Dimension(_))));
    }
}

#[test]
fn zero_guidance_is_bitwise_neutral() {
    let mut r = rng::seeded(14);
    for fusion in [Fusion::Add, Fusion::Concat] {
        let cfg = DenoiserConfig { timesteps: 100, ..small_config(fusion) };
        let d = ToyDenoiser::new(&cfg, &mut r).unwrap();
        let enc = GuidanceEncoder::new(&GuidanceNetConfig::toy(2), &Condition::ALL, &mut r);
        let mut bundle = GuidanceBundle::new();
        for (i, c) in Condition::ALL.iter().enumerate() {
            bundle = bundle.with(*c, randn([1, 3, 8, 8], 20 + i as u64));
        }
        let y = enc.encode(&bundle).unwrap();
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let z_t = randn([1, 2, 4, 4], 15);
        let a = sample(&d, Some(&y), &s, 10, z_t.clone()).unwrap();
        let b = sample(&d, None, &s, 10, z_t).unwrap();
        let bits = |t: &Tensor4| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

fn weighted_sum(t: &Tensor4, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    for fusion in [Fusion::Add, Fusion::Concat] {
        let mut r = rng::seeded(30);
        let d = ToyDenoiser::new(&small_config(fusion), &mut r).unwrap();
        let z = randn([2, 2, 4, 4], 31);
        let y = randn([2, 2, 4, 4], 32);
        let ts = [3, 17];
        let proj = rng::normal_vec(&mut r, z.data().len());
        let (out, cache) = d.forward(&z, &ts, Some(&y)).unwrap();
        let grad_out = Tensor4::new(out.shape(), proj.clone()).unwrap();
        let (grads, grad_y) = d.backward(&cache, &grad_out).unwrap();
        let analytic = grads.flat();
        let theta = d.flat();
        let h = 1e-6;
        let mut probe = d.clone();
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            probe.set_flat(&p);
            let up = weighted_sum(&probe.forward(&z, &ts, Some(&y)).unwrap().0, &proj);
            p[i] -= 2.0 * h;
            probe.set_flat(&p);
            let down = weighted_sum(&probe.forward(&z, &ts, Some(&y)).unwrap().0, &proj);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "{fusion:?} param {i}: fd {fd} analytic {}", analytic[i]);
        }
        let grad_y = grad_y.unwrap();
        for i in (0..y.data().len()).step_by(5) {
            let mut yp = y.clone();
            yp.data_mut()[i] += h;
            let up = weighted_sum(&d.forward(&z, &ts, Some(&yp)).unwrap().0, &proj);
            yp.data_mut()[i] -= 2.0 * h;
            let down = weighted_sum(&d.forward(&z, &ts, Some(&yp)).unwrap().0, &proj);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad_y.data()[i]).abs() < 1e-6 * fd.abs().max(1.0), "{fusion:?} y {i}");
        }
    }
}

fn toy_batch(seed: u64) -> TrainingBatch {
    let items: Vec<(Tensor4, GuidanceBundle)> = (0..3)
        .map(|i| {
            (
                randn([1, 2, 4, 4], seed + 2 * i),
                GuidanceBundle::new().with(Condition::Depth, randn([1, 3, 8, 8], seed + 2 * i + 1)),
            )
        })
        .collect();
    TrainingBatch::from_items(&items).unwrap()
}

fn toy_models(seed: u64) -> (ToyDenoiser, GuidanceEncoder) {
    let mut r = rng::seeded(seed);
    let d = ToyDenoiser::new(&small_config(Fusion::Add), &mut r).unwrap();
    let enc = GuidanceEncoder::new(&GuidanceNetConfig::with_widths(3, &[4, 4], 2), &[Condition::Depth], &mut r);
    (d, enc)
}

#[test]
fn training_is_deterministic() {
    let s = make_schedule(20, 1e-3, 0.2).unwrap();
    let batch = toy_batch(40);
    let run = || {
        let (mut d, mut enc) = toy_models(41);
        let mut r = rng::seeded(42);
        (0..5)
            .map(|_| train_step(&mut d, Some(&mut enc), &batch, &s, &mut r, 0.05).unwrap().to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let s = make_schedule(20, 1e-3, 0.2).unwrap();
    let batch = toy_batch(50);
    let (mut d, mut enc) = toy_models(51);
    let (d0, e0) = (d.clone(), enc.clone());
    let loss = train_step(&mut d, Some(&mut enc), &batch, &s, &mut rng::seeded(52), 0.0).unwrap();
    assert_eq!(d, d0);
    assert_eq!(enc, e0);

    // Same draws, evaluated by hand.
    let mut r = rng::seeded(52);
    let mut ts = Vec::new();
    let mut eps = Vec::new();
    let mut zt = Vec::new();
    for b in 0..3 {
        let t = s.sample_timestep(&mut r);
        let e = Tensor4::new([1, 2, 4, 4], rng::normal_vec(&mut r, 32)).unwrap();
        zt.push(forward_diffuse(&batch.z0.item(b), t, &e, &s).unwrap());
        eps.push(e);
        ts.push(t);
    }
    let y = enc.encode(batch.guidance.as_ref().unwrap()).unwrap();
    let pred = d.forward(&Tensor4::stack(&zt).unwrap(), &ts, Some(&y)).unwrap().0;
    let want = training_loss(&Tensor4::stack(&eps).unwrap(), &pred, 1, unit_weight).unwrap();
    assert!((loss - want).abs() < 1e-12);
}

#[test]
fn training_rejects_mismatched_schedule() {
    let s = make_schedule(30, 1e-3, 0.2).unwrap();
    let (mut d, _) = toy_models(60);
    let batch = TrainingBatch::unguided(randn([1, 2, 4, 4], 61));
    assert!(train_step(&mut d, None, &batch, &s, &mut rng::seeded(0), 0.1).is_err());
}
