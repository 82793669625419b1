//! Renders the four guidance layers of one posed frame to PNG files.
//!
//! `cargo run --release --example render_maps -- [out_dir] [size]`

use std::path::PathBuf;

use bodyguide::body_model::{make_toy_body, ToyBodyConfig};
use bodyguide::pipeline::{render_guidance, toy_motion, write_frame_maps, RenderConfig};

fn main() -> bodyguide::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "render_maps".into()));
    let size: usize = args.next().map(|s| s.parse().expect("size")).unwrap_or(256);
    std::fs::create_dir_all(&out).map_err(|e| bodyguide::Error::Io { path: out.clone(), source: e })?;

    let model = make_toy_body(&ToyBodyConfig { joints: 15, vertices: 400, labels: 8, ..Default::default() })?;
    let motion = toy_motion(&model, 8, size, size, 1);
    let render = RenderConfig { width: size, height: size, ..Default::default() };
    let (maps, _) = render_guidance(&model, &motion.source_shape, &motion.frames[5], &render)?;
    write_frame_maps(&out, 0, &maps, model.num_labels)?;
    println!("{} foreground pixels; maps written to {}", maps.foreground_count(), out.display());
    Ok(())
}
