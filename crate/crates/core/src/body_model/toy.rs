//! Procedural low-poly humanoid used in place of licensed body assets.
//!
//! Each joint owns one closed, outward-oriented spindle running from the
//! joint to a fixed tip point. Spindles of a parent and child meet at the
//! child joint; skinning weights blend with the parent near each joint.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{arr3, BodyModel};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

struct ToyJoint {
    position: [f64; 3],
    parent: i32,
    tip: [f64; 3],
    radius: f64,
}

// y-up, meters, facing +z.
const SKELETON: [ToyJoint; 15] = [
    ToyJoint { position: [0.0, 0.95, 0.0], parent: -1, tip: [0.0, 1.12, 0.0], radius: 0.14 },
    ToyJoint { position: [0.0, 1.12, 0.0], parent: 0, tip: [0.0, 1.42, 0.0], radius: 0.15 },
    ToyJoint { position: [0.09, 0.92, 0.0], parent: 0, tip: [0.10, 0.52, 0.0], radius: 0.07 },
    ToyJoint { position: [-0.09, 0.92, 0.0], parent: 0, tip: [-0.10, 0.52, 0.0], radius: 0.07 },
    ToyJoint { position: [0.0, 1.45, 0.0], parent: 1, tip: [0.0, 1.72, 0.0], radius: 0.10 },
    ToyJoint { position: [0.10, 0.52, 0.0], parent: 2, tip: [0.10, 0.10, 0.0], radius: 0.055 },
    ToyJoint { position: [-0.10, 0.52, 0.0], parent: 3, tip: [-0.10, 0.10, 0.0], radius: 0.055 },
    ToyJoint { position: [0.17, 1.38, 0.0], parent: 1, tip: [0.45, 1.38, 0.0], radius: 0.05 },
    ToyJoint { position: [-0.17, 1.38, 0.0], parent: 1, tip: [-0.45, 1.38, 0.0], radius: 0.05 },
    ToyJoint { position: [0.45, 1.38, 0.0], parent: 7, tip: [0.70, 1.38, 0.0], radius: 0.04 },
    ToyJoint { position: [-0.45, 1.38, 0.0], parent: 8, tip: [-0.70, 1.38, 0.0], radius: 0.04 },
    ToyJoint { position: [0.10, 0.10, 0.0], parent: 5, tip: [0.10, 0.03, 0.15], radius: 0.04 },
    ToyJoint { position: [-0.10, 0.10, 0.0], parent: 6, tip: [-0.10, 0.03, 0.15], radius: 0.04 },
    ToyJoint { position: [0.70, 1.38, 0.0], parent: 9, tip: [0.80, 1.38, 0.0], radius: 0.035 },
    ToyJoint { position: [-0.70, 1.38, 0.0], parent: 10, tip: [-0.80, 1.38, 0.0], radius: 0.035 },
];

/// Largest joint count the procedural skeleton provides.
pub const MAX_TOY_JOINTS: usize = SKELETON.len();

const MIN_SEGMENT_VERTICES: usize = 5;
const PARENT_BLEND_SPAN: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyBodyConfig {
    pub vertices: usize,
    pub joints: usize,
    pub labels: usize,
    pub shape_dims: usize,
    pub pose_correctives: bool,
    pub seed: u64,
}

impl Default for ToyBodyConfig {
    fn default() -> Self {
        Self {
            vertices: 100,
            joints: 5,
            labels: 5,
            shape_dims: 10,
            pose_correctives: false,
            seed: 0,
        }
    }
}

struct SegmentFrame {
    origin: Vector3<f64>,
    axis: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    radius: f64,
}

impl SegmentFrame {
    fn new(joint: &ToyJoint) -> Self {
        let origin = Vector3::from(joint.position);
        let axis = Vector3::from(joint.tip) - origin;
        let u = axis.normalize();
        let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = (helper - helper.dot(&u) * u).normalize();
        let e2 = u.cross(&e1);
        Self { origin, axis, e1, e2, radius: joint.radius }
    }

    /// Surface point at axial parameter `s ∈ [0, 1]` and angle `phi`, plus
    /// the outward radial direction at that angle.
    fn point(&self, s: f64, phi: f64) -> (Vector3<f64>, Vector3<f64>) {
        let radial = phi.cos() * self.e1 + phi.sin() * self.e2;
        let r = self.radius * (PI * s).sin();
        (self.origin + s * self.axis + r * radial, radial)
    }
}

struct SegmentVertex {
    position: Vector3<f64>,
    radial: Vector3<f64>,
    s: f64,
}

/// Ring sizes for a spindle with `n` vertices (two poles plus rings).
fn ring_sizes(n: usize) -> Vec<usize> {
    let total = n - 2;
    let rings = ((total as f64 / 2.0).sqrt().round() as usize).clamp(1, total / 3);
    let base = total / rings;
    let extra = total % rings;
    // Larger rings sit in the middle of the spindle.
    let first_extra = (rings - extra) / 2;
    (0..rings)
        .map(|r| base + usize::from(r >= first_extra && r < first_extra + extra))
        .collect()
}

fn build_segment(frame: &SegmentFrame, n: usize, base: u32) -> (Vec<SegmentVertex>, Vec<[u32; 3]>) {
    let sizes = ring_sizes(n);
    let rings = sizes.len();
    let mut verts = Vec::with_capacity(n);
    let (p0, _) = frame.point(0.0, 0.0);
    verts.push(SegmentVertex { position: p0, radial: Vector3::zeros(), s: 0.0 });
    let mut ring_start = Vec::with_capacity(rings);
    for (r, &m) in sizes.iter().enumerate() {
        let s = (r + 1) as f64 / (rings + 1) as f64;
        ring_start.push(verts.len() as u32);
        for i in 0..m {
            let phi = 2.0 * PI * i as f64 / m as f64;
            let (position, radial) = frame.point(s, phi);
            verts.push(SegmentVertex { position, radial, s });
        }
    }
    let tip_index = verts.len() as u32;
    let (p1, _) = frame.point(1.0, 0.0);
    verts.push(SegmentVertex { position: p1, radial: Vector3::zeros(), s: 1.0 });

    let mut faces = Vec::new();
    let idx = |ring: usize, i: usize| base + ring_start[ring] + (i % sizes[ring]) as u32;

    let m0 = sizes[0];
    for i in 0..m0 {
        faces.push([base, idx(0, i + 1), idx(0, i)]);
    }
    for r in 0..rings - 1 {
        let (a, b) = (sizes[r], sizes[r + 1]);
        let (mut i, mut j) = (0usize, 0usize);
        while i < a || j < b {
            let next_a = (i + 1) as f64 / a as f64;
            let next_b = (j + 1) as f64 / b as f64;
            if j == b || (i < a && next_a <= next_b) {
                faces.push([idx(r, i), idx(r, i + 1), idx(r + 1, j)]);
                i += 1;
            } else {
                faces.push([idx(r, i), idx(r + 1, j + 1), idx(r + 1, j)]);
                j += 1;
            }
        }
    }
    let last = rings - 1;
    for i in 0..sizes[last] {
        faces.push([base + tip_index, idx(last, i), idx(last, i + 1)]);
    }
    (verts, faces)
}

/// Builds a valid toy body. Errors when `joints` exceeds [`MAX_TOY_JOINTS`]
/// or the vertex budget is below five vertices per joint.
pub fn make_toy_body(config: &ToyBodyConfig) -> Result<BodyModel> {
    let k = config.joints;
    if k == 0 || k > MAX_TOY_JOINTS {
        return Err(Error::invalid(format!(
            "toy body supports 1..={MAX_TOY_JOINTS} joints, got {k}"
        )));
    }
    if config.vertices < MIN_SEGMENT_VERTICES * k {
        return Err(Error::invalid(format!(
            "toy body needs at least {} vertices for {k} joints, got {}",
            MIN_SEGMENT_VERTICES * k,
            config.vertices
        )));
    }
    if config.labels == 0 {
        return Err(Error::invalid("toy body needs at least one part label"));
    }
    let v_total = config.vertices;
    let s_dims = config.shape_dims;
    let mut rng = rng::seeded(config.seed);

    let mut template = Vec::with_capacity(v_total);
    let mut shape_dirs = vec![0.0; v_total * 3 * s_dims];
    let mut skin = vec![0.0; v_total * k];
    let mut regressor = vec![0.0; k * v_total];
    let mut labels = Vec::with_capacity(v_total);
    let mut faces = Vec::new();

    for (seg, joint) in SKELETON.iter().take(k).enumerate() {
        let n = v_total / k + usize::from(seg < v_total % k);
        let frame = SegmentFrame::new(joint);
        let base = template.len() as u32;
        let (verts, seg_faces) = build_segment(&frame, n, base);
        faces.extend(seg_faces);
        regressor[seg * v_total + base as usize] = 1.0;

        let seg_offsets = random_offsets(&mut rng, s_dims);
        for sv in &verts {
            let vi = template.len();
            template.push(arr3(&sv.position));
            labels.push((seg % config.labels) as u32);

            let parent_w = if joint.parent >= 0 {
                0.5 * (1.0 - sv.s / PARENT_BLEND_SPAN).max(0.0)
            } else {
                0.0
            };
            skin[vi * k + seg] = 1.0 - parent_w;
            if joint.parent >= 0 {
                skin[vi * k + joint.parent as usize] += parent_w;
            }

            let girth = (PI * sv.s).sin();
            for sd in 0..s_dims {
                let d = match sd {
                    0 => Vector3::new(0.0, 0.05 * (sv.position.y - SKELETON[0].position[1]), 0.0),
                    1 => 0.02 * girth * sv.radial,
                    _ => seg_offsets[sd].0 + seg_offsets[sd].1 * girth * sv.radial,
                };
                for axis in 0..3 {
                    shape_dirs[(vi * 3 + axis) * s_dims + sd] = d[axis];
                }
            }
        }
    }

    let pose_dirs = config.pose_correctives.then(|| {
        let p = 9 * (k - 1);
        rng::normal_vec(&mut rng, v_total * 3 * p)
            .into_iter()
            .map(|x| 1e-3 * x)
            .collect()
    });

    let model = BodyModel {
        template_vertices: template,
        shape_dirs,
        num_shape: s_dims,
        pose_dirs,
        skin_weights: skin,
        joint_regressor: regressor,
        parents: SKELETON.iter().take(k).map(|j| j.parent).collect(),
        part_labels: labels,
        num_labels: config.labels,
        faces,
    };
    model.validate()?;
    Ok(model)
}

fn random_offsets(rng: &mut SeededRng, dims: usize) -> Vec<(Vector3<f64>, f64)> {
    (0..dims)
        .map(|_| {
            let g = rng::normal_vec(rng, 4);
            (0.01 * Vector3::new(g[0], g[1], g[2]), 0.005 * g[3])
        })
        .collect()
}
