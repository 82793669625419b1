//! Transfers a reference shape onto a driving motion and fits the camera so
//! the first frame fills a target box.

use bodyguide::body_model::{evaluate_body, make_toy_body, ToyBodyConfig};
use bodyguide::pipeline::{toy_motion, toy_reference_shape};
use bodyguide::rasterizer::PixelRect;
use bodyguide::shape_alignment::{align_sequence, fit_camera_scale};

fn main() -> bodyguide::Result<()> {
    let model = make_toy_body(&ToyBodyConfig::default())?;
    let motion = toy_motion(&model, 10, 128, 128, 0);
    let beta_ref = toy_reference_shape(&model, 0);
    let aligned = align_sequence(&beta_ref, &motion)?;
    assert!(aligned.frames.iter().zip(&motion.frames).all(|(a, m)| a.pose == m.pose));

    let target = PixelRect { x0: 40.0, y0: 10.0, x1: 88.0, y1: 118.0 };
    let fitted = fit_camera_scale(target, &aligned, &model, 0)?;
    for (i, f) in fitted.frames.iter().enumerate() {
        let mesh = evaluate_body(&model, &fitted.shape, &f.pose)?;
        let b = PixelRect::of_projected(&f.camera, &mesh.vertices).expect("body in front of camera");
        println!("frame {i}: box height {:.2} px (target {:.2})", b.height(), target.height());
    }
    Ok(())
}
