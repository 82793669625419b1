use super::{project, Camera};

/// Bone colors, cycled by bone index. All entries are non-black.
pub const BONE_PALETTE: [[f64; 3]; 12] = [
    [1.0, 0.0, 0.0],
    [1.0, 0.33, 0.0],
    [1.0, 0.67, 0.0],
    [1.0, 1.0, 0.0],
    [0.67, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.67],
    [0.0, 1.0, 1.0],
    [0.0, 0.67, 1.0],
    [0.0, 0.0, 1.0],
    [0.67, 0.0, 1.0],
    [1.0, 0.0, 1.0],
];

/// Joint disc colors, cycled by joint index.
pub const JOINT_PALETTE: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.5, 0.5],
    [0.5, 1.0, 0.5],
    [0.5, 0.5, 1.0],
];

pub fn bone_color(bone: usize) -> [f64; 3] {
    BONE_PALETTE[bone % BONE_PALETTE.len()]
}

pub fn joint_color(joint: usize) -> [f64; 3] {
    JOINT_PALETTE[joint % JOINT_PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonStyle {
    pub line_width: f64,
    pub joint_radius: f64,
}

impl Default for SkeletonStyle {
    fn default() -> Self {
        Self { line_width: 3.0, joint_radius: 4.0 }
    }
}

fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Draws bones as anti-aliased segments, then joints as filled discs.
///
/// A pixel is lit by a bone iff its center lies within `line_width / 2` of
/// the segment; coverage falls from 1 to 0.5 over the last half pixel.
/// Joints behind the camera, and bones touching them, are skipped.
pub fn render_skeleton(
    joints: &[[f64; 3]],
    bones: &[(usize, usize)],
    camera: &Camera,
    width: usize,
    height: usize,
    style: SkeletonStyle,
) -> Vec<[f64; 3]> {
    let mut img = vec![[0.0; 3]; width * height];
    let proj: Vec<Option<(f64, f64)>> = joints
        .iter()
        .map(|j| {
            let p = project(camera, *j);
            p.in_front().then_some((p.u, p.v))
        })
        .collect();

    let half = 0.5 * style.line_width;
    for (bi, &(a, b)) in bones.iter().enumerate() {
        let (Some(pa), Some(pb)) = (proj[a], proj[b]) else {
            continue;
        };
        let color = bone_color(bi);
        let Some((c0, c1, r0, r1)) = pixel_bounds(
            pa.0.min(pb.0) - half,
            pa.0.max(pb.0) + half,
            pa.1.min(pb.1) - half,
            pa.1.max(pb.1) + half,
            width,
            height,
        ) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let d = point_segment_distance(col as f64 + 0.5, row as f64 + 0.5, pa, pb);
                if d > half {
                    continue;
                }
                let alpha = (0.5 + half - d).min(1.0);
                let px = &mut img[row * width + col];
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
                }
            }
        }
    }

    let r = style.joint_radius;
    for (ji, p) in proj.iter().enumerate() {
        let Some(p) = p else { continue };
        let Some((c0, c1, r0, r1)) = pixel_bounds(p.0 - r, p.0 + r, p.1 - r, p.1 + r, width, height) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (dx, dy) = (col as f64 + 0.5 - p.0, row as f64 + 0.5 - p.1);
                if dx * dx + dy * dy <= r * r {
                    img[row * width + col] = joint_color(ji);
                }
            }
        }
    }
    img
}

/// Inclusive pixel index ranges whose centers may fall in `[x0,x1]×[y0,y1]`.
fn pixel_bounds(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    if width == 0 || height == 0 || !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        return None;
    }
    let c0 = (x0 - 0.5).ceil().max(0.0);
    let c1 = (x1 - 0.5).floor().min(width as f64 - 1.0);
    let r0 = (y0 - 0.5).ceil().max(0.0);
    let r1 = (y1 - 0.5).floor().min(height as f64 - 1.0);
    if c1 < c0 || r1 < r0 {
        return None;
    }
    Some((c0 as usize, c1 as usize, r0 as usize, r1 as usize))
}
