//! Builds a procedural body model, prints its layout and writes it to disk.
//!
//! `cargo run --example toy_body -- [joints] [out.bin]`

use bodyguide::body_model::{make_toy_body, read_body_model, write_body_model, ToyBodyConfig, MAX_TOY_JOINTS};

fn main() -> bodyguide::Result<()> {
    let mut args = std::env::args().skip(1);
    let joints: usize = args.next().map(|s| s.parse().expect("joints")).unwrap_or(5);
    let out = args.next().unwrap_or_else(|| "toy_body.bin".into());

    let cfg = ToyBodyConfig { joints, pose_correctives: true, ..Default::default() };
    let model = make_toy_body(&cfg)?;
    println!(
        "{} vertices, {} faces, {} joints (max {MAX_TOY_JOINTS}), {} shape dims, {} labels",
        model.num_vertices(),
        model.faces.len(),
        model.num_joints(),
        model.num_shape,
        model.num_labels
    );
    for (parent, child) in model.bones() {
        println!("  joint {child} -> parent {parent}");
    }
    write_body_model(&model, out.as_ref())?;
    let back = read_body_model(out.as_ref())?;
    assert_eq!(back, model);
    println!("wrote {out}");
    Ok(())
}
