//! Poses the toy body and reports how far vertices and joints move.

use bodyguide::body_model::{evaluate_body, make_toy_body, PoseParams, ShapeParams, ToyBodyConfig};
use bodyguide::rng;

fn main() -> bodyguide::Result<()> {
    let model = make_toy_body(&ToyBodyConfig::default())?;
    let rest = evaluate_body(&model, &model.neutral_shape(), &model.rest_pose())?;

    let mut r = rng::seeded(3);
    let shape = ShapeParams::new(rng::uniform_vec(&mut r, model.num_shape, -1.0, 1.0));
    let angles = rng::uniform_vec(&mut r, 3 * model.num_joints(), -0.5, 0.5);
    let pose = PoseParams::new(angles.chunks(3).map(|a| [a[0], a[1], a[2]]).collect());
    let posed = evaluate_body(&model, &shape, &pose)?;

    let dist = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    for (j, (a, b)) in rest.joints.iter().zip(&posed.joints).enumerate() {
        println!("joint {j}: rest {a:.3?} posed {b:.3?}");
    }
    let moved = rest.vertices.iter().zip(&posed.vertices).map(|(a, b)| dist(*a, *b)).fold(0.0, f64::max);
    println!("largest vertex displacement: {moved:.4}");
    Ok(())
}
