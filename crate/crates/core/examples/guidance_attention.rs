//! Encodes rendered guidance maps and writes the self-attention saliency of
//! each condition branch.
//!
//! `cargo run --release --example guidance_attention -- [out_dir]`

use std::path::PathBuf;

use bodyguide::body_model::{make_toy_body, ToyBodyConfig};
use bodyguide::guidance_encoder::{bundle_from_maps, dump_attention, Condition, GuidanceEncoder, GuidanceNetConfig};
use bodyguide::pipeline::{render_guidance, toy_motion, RenderConfig};
use bodyguide::rng;

fn main() -> bodyguide::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "guidance_attention".into()));
    std::fs::create_dir_all(&out).map_err(|e| bodyguide::Error::Io { path: out.clone(), source: e })?;

    let model = make_toy_body(&ToyBodyConfig::default())?;
    let motion = toy_motion(&model, 1, 64, 64, 0);
    let render = RenderConfig { width: 64, height: 64, ..Default::default() };
    let (maps, _) = render_guidance(&model, &motion.source_shape, &motion.frames[0], &render)?;
    let bundle = bundle_from_maps(&maps, model.num_labels, 16)?;

    let config = GuidanceNetConfig::with_widths(3, &[16, 32], 4);
    let encoder = GuidanceEncoder::new(&config, &Condition::ALL, &mut rng::seeded(0));
    let y = encoder.encode(&bundle)?;
    let peak = y.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("fused guidance {:?}, max |y| = {peak} (zero-initialized output layers)", y.shape());

    for cond in Condition::ALL {
        let path = out.join(format!("{cond}.png"));
        let img = dump_attention(&encoder.nets[&cond], &bundle.conditions[&cond], &path)?;
        println!("{cond}: {}x{} saliency -> {}", img.width, img.height, path.display());
    }
    Ok(())
}
