//! Trains the toy denoiser with and without meaningful guidance and compares
//! the loss curves.
//!
//! `cargo run --release --example train_toy -- [steps] [seed]`

use bodyguide::diffusion::{run_toy_training, ToyTrainingConfig};

fn main() -> bodyguide::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(500);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);

    for shuffle_guidance in [false, true] {
        let mut cfg = ToyTrainingConfig { shuffle_guidance, ..Default::default() };
        cfg.diffusion.steps = steps;
        cfg.diffusion.seed = seed;
        let run = run_toy_training(&cfg)?;
        let window = (steps / 10).max(1);
        println!(
            "{:>9} guidance: first {window} steps {:.4}, last {window} steps {:.4}",
            if shuffle_guidance { "shuffled" } else { "matched" },
            run.mean_loss(0..window),
            run.mean_loss(steps - window..steps)
        );
    }
    Ok(())
}
