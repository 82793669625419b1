//! Runs every pipeline stage in-process: toy fixtures, alignment, rendering,
//! a short training run, sampling and attention dumps.
//!
//! `cargo run --release --example pipeline -- [out_dir]`

use std::path::PathBuf;

use bodyguide::pipeline::{
    cmd_align, cmd_animate, cmd_attn, cmd_make_toy_body, cmd_render, cmd_train, PipelineConfig,
};

fn main() -> bodyguide::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into()));
    let mut cfg = PipelineConfig {
        body_model: out.join("body.bin"),
        motion: out.join("motion.json"),
        reference_shape: out.join("shape.json"),
        output_dir: out.clone(),
        ..Default::default()
    };
    cfg.render.width = 96;
    cfg.render.height = 96;
    cfg.toy_body.frames = 30;
    cfg.diffusion.timesteps = 100;
    cfg.diffusion.steps = 100;
    cfg.animate.sampler_steps = 10;

    let body = cmd_make_toy_body(&cfg)?;
    println!("toy body: {} vertices, {} joints", body.vertices, body.joints);
    let aligned = cmd_align(&cfg)?;
    println!("aligned {} frames", aligned.frames);
    let rendered = cmd_render(&cfg)?;
    println!("rendered {} frames", rendered.frames);

    let untrained = cmd_animate(&cfg)?;
    println!("sampled {} frames over windows {:?}", untrained.frames, untrained.windows);

    let trained = cmd_train(&cfg)?;
    println!("trained: loss {:.3} -> {:.3}", trained.first_loss, trained.last_loss);
    cfg.checkpoint = Some(trained.checkpoint);
    cmd_animate(&cfg)?;
    let attn = cmd_attn(&cfg)?;
    println!("{} saliency images; outputs in {}", attn.images.len(), out.display());
    Ok(())
}
