use nalgebra::Vector3;

use super::{Camera, GuidanceMaps, MIN_DEPTH};
use crate::body_model::PosedMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterOptions {
    /// Skip triangles whose winding faces away from the camera.
    pub backface_culling: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self { backface_culling: true }
    }
}

/// Z-buffered rasterization with back-face culling on.
pub fn rasterize_mesh(mesh: &PosedMesh, camera: &Camera, width: usize, height: usize) -> GuidanceMaps {
    rasterize_mesh_with(mesh, camera, width, height, RasterOptions::default())
}

struct ScreenVertex {
    x: f64,
    y: f64,
    z: f64,
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

/// Top-left fill rule for positively oriented triangles in y-down space.
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Rasterizes `mesh` into depth, normal and semantic layers. The skeleton
/// layer is left black.
///
/// Triangles with any vertex behind the camera are dropped whole. Depth and
/// normals are interpolated with perspective-correct barycentrics; the part
/// label comes from the vertex with the largest weight (lowest corner on ties).
pub fn rasterize_mesh_with(
    mesh: &PosedMesh,
    camera: &Camera,
    width: usize,
    height: usize,
    options: RasterOptions,
) -> GuidanceMaps {
    let mut maps = GuidanceMaps::background(width, height);
    if width == 0 || height == 0 {
        return maps;
    }
    let cam_pts: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|p| camera.to_camera(&Vector3::from(*p)))
        .collect();
    let cam_normals: Vec<Vector3<f64>> = mesh
        .normals
        .iter()
        .map(|n| camera.r * Vector3::from(*n))
        .collect();
    let focal = camera.focal();

    for face in &mesh.faces {
        let idx = face.map(|i| i as usize);
        let p = idx.map(|i| cam_pts[i]);
        if p.iter().any(|q| q.z <= MIN_DEPTH) {
            continue;
        }
        let face_normal = (p[1] - p[0]).cross(&(p[2] - p[0]));
        if options.backface_culling && face_normal.dot(&p[0]) >= 0.0 {
            continue;
        }

        let mut sv = p.map(|q| ScreenVertex {
            x: focal * q.x / q.z + camera.cx,
            y: focal * q.y / q.z + camera.cy,
            z: q.z,
        });
        let mut slot = [0usize, 1, 2];
        let area = edge(&sv[0], &sv[1], sv[2].x, sv[2].y);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            sv.swap(1, 2);
            slot.swap(1, 2);
        }
        let area = area.abs();

        let min_x = sv.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
        let max_x = sv.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = sv.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
        let max_y = sv.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
        let col0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
        let row0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
        let col1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
        let row1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
        if col1 < 0.0 || row1 < 0.0 {
            continue;
        }
        let (col1, row1) = (col1 as usize, row1 as usize);

        let tl = [
            is_top_left(&sv[1], &sv[2]),
            is_top_left(&sv[2], &sv[0]),
            is_top_left(&sv[0], &sv[1]),
        ];
        let fallback = {
            let n = face_normal.normalize();
            if n.dot(&p[0]) > 0.0 { -n } else { n }
        };

        for row in row0..=row1 {
            let py = row as f64 + 0.5;
            for col in col0..=col1 {
                let px = col as f64 + 0.5;
                let e = [
                    edge(&sv[1], &sv[2], px, py),
                    edge(&sv[2], &sv[0], px, py),
                    edge(&sv[0], &sv[1], px, py),
                ];
                let inside = e
                    .iter()
                    .zip(&tl)
                    .all(|(&w, &top_left)| w > 0.0 || (w == 0.0 && top_left));
                if !inside {
                    continue;
                }
                let lambda = e.map(|w| w / area);
                let inv_z: [f64; 3] = [
                    lambda[0] / sv[0].z,
                    lambda[1] / sv[1].z,
                    lambda[2] / sv[2].z,
                ];
                let sum = inv_z[0] + inv_z[1] + inv_z[2];
                let depth = 1.0 / sum;
                let i = row * width + col;
                if !(depth < maps.depth[i]) {
                    continue;
                }
                // Perspective-correct weights, back in original corner order.
                let mut bary = [0.0; 3];
                for k in 0..3 {
                    bary[slot[k]] = inv_z[k] / sum;
                }
                let mut n = Vector3::zeros();
                for k in 0..3 {
                    n += bary[k] * cam_normals[idx[k]];
                }
                let len = n.norm();
                let n = if len > 1e-12 { n / len } else { fallback };

                let mut best = 0;
                for k in 1..3 {
                    if bary[k] > bary[best] {
                        best = k;
                    }
                }
                maps.depth[i] = depth;
                maps.normal[i] = [n.x, n.y, n.z];
                maps.semantic[i] = mesh.part_labels[idx[best]] + 1;
            }
        }
    }
    maps
}
