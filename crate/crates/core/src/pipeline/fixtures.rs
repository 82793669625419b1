use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::body_model::{BodyModel, PoseParams, ShapeParams};
use crate::rasterizer::Camera;
use crate::rng;
use crate::shape_alignment::{MotionFrame, MotionSequence};

/// A smooth procedural motion for a toy body.
///
/// Every joint swings on its own seeded sinusoid (amplitude up to 0.35 rad);
/// the camera looks at the body's middle from the front, framed so that a
/// 1.75-unit-tall figure fills 80% of the image height.
pub fn toy_motion(model: &BodyModel, frames: usize, width: usize, height: usize, seed: u64) -> MotionSequence {
    let k = model.num_joints();
    let mut r = rng::seeded(seed);
    let amp = rng::uniform_vec(&mut r, 3 * k, -0.35, 0.35);
    let phase = rng::uniform_vec(&mut r, 3 * k, 0.0, TAU);
    let period = 24.0;
    let (body_mid, body_height, distance) = (0.9, 1.75, 4.0);
    let f = 0.8 * height as f64 * distance / body_height;
    let camera = Camera::look_at(
        Vector3::new(0.0, body_mid, distance),
        Vector3::new(0.0, body_mid, 0.0),
        Vector3::y(),
        f,
        width as f64 / 2.0,
        height as f64 / 2.0,
    );
    let frames = (0..frames)
        .map(|i| {
            let s = TAU * i as f64 / period;
            let axis_angles = (0..k)
                .map(|j| {
                    // Keep the root upright; it only turns slowly about y.
                    let a = |c: usize| amp[3 * j + c] * (s + phase[3 * j + c]).sin();
                    if j == 0 {
                        [0.0, 0.5 * a(1), 0.0]
                    } else {
                        [a(0), a(1), a(2)]
                    }
                })
                .collect();
            MotionFrame { pose: PoseParams::new(axis_angles), camera }
        })
        .collect();
    MotionSequence { frames, source_shape: model.neutral_shape(), fps: 24.0 }
}

/// Seeded reference shape with coefficients in `[-1, 1]`.
pub fn toy_reference_shape(model: &BodyModel, seed: u64) -> ShapeParams {
    let mut r = rng::stream(seed, 1);
    ShapeParams::new(rng::uniform_vec(&mut r, model.num_shape, -1.0, 1.0))
}
