//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use bodyguide::body_model::{BodyModel, PoseParams, ShapeParams};
use bodyguide::guidance_encoder::{Conv2d, Tensor4};
use bodyguide::params::Parameters;
use bodyguide::rasterizer::{Camera, MIN_DEPTH};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

/// Rotation from the truncated exponential series of the skew matrix.
pub fn exp_rotation(w: [f64; 3]) -> Matrix3<f64> {
    let k = Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for n in 1..60 {
        term = term * k / n as f64;
        sum += term;
    }
    sum
}

fn homogeneous(r: &Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// Posed vertices and joints computed one vertex at a time with 4×4
/// homogeneous transforms, walking each joint's ancestor chain from scratch.
pub fn skinning_oracle(model: &BodyModel, shape: &ShapeParams, pose: &PoseParams) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let nv = model.template_vertices.len();
    let nk = model.parents.len();
    let s = model.num_shape;

    let mut shaped = vec![[0.0; 3]; nv];
    for v in 0..nv {
        for a in 0..3 {
            let mut x = model.template_vertices[v][a];
            for i in 0..s {
                x += model.shape_dirs[(v * 3 + a) * s + i] * shape.beta[i];
            }
            shaped[v][a] = x;
        }
    }
    let mut rest_joints = vec![Vector3::zeros(); nk];
    for k in 0..nk {
        for v in 0..nv {
            let w = model.joint_regressor[k * nv + v];
            rest_joints[k] += w * Vector3::from(shaped[v]);
        }
    }

    let rots: Vec<Matrix3<f64>> = pose.axis_angles.iter().map(|w| exp_rotation(*w)).collect();
    if let Some(dirs) = &model.pose_dirs {
        let mut feat = Vec::new();
        for r in &rots[1..] {
            let d = r - Matrix3::identity();
            for row in 0..3 {
                for col in 0..3 {
                    feat.push(d[(row, col)]);
                }
            }
        }
        let p = feat.len();
        for v in 0..nv {
            for a in 0..3 {
                for (i, f) in feat.iter().enumerate() {
                    shaped[v][a] += dirs[(v * 3 + a) * p + i] * f;
                }
            }
        }
    }

    let world = |k: usize| -> Matrix4<f64> {
        let mut chain = vec![k];
        while model.parents[*chain.last().unwrap()] >= 0 {
            chain.push(model.parents[*chain.last().unwrap()] as usize);
        }
        let mut m = Matrix4::identity();
        for &j in chain.iter().rev() {
            let offset = match model.parents[j] {
                p if p < 0 => rest_joints[j],
                p => rest_joints[j] - rest_joints[p as usize],
            };
            m *= homogeneous(&rots[j], offset);
        }
        m
    };
    let worlds: Vec<Matrix4<f64>> = (0..nk).map(world).collect();
    let skinning: Vec<Matrix4<f64>> =
        (0..nk).map(|k| worlds[k] * homogeneous(&Matrix3::identity(), -rest_joints[k])).collect();

    let vertices = (0..nv)
        .map(|v| {
            let x = Vector4::new(shaped[v][0], shaped[v][1], shaped[v][2], 1.0);
            let mut out = Vector4::zeros();
            for k in 0..nk {
                out += model.skin_weights[v * nk + k] * (skinning[k] * x);
            }
            [out.x, out.y, out.z]
        })
        .collect();
    let joints = worlds.iter().map(|m| [m[(0, 3)], m[(1, 3)], m[(2, 3)]]).collect();
    (vertices, joints)
}

/// One ray-surface hit.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub depth: f64,
    pub bary: [f64; 3],
    pub face: usize,
}

/// What the pixel-center ray through `(col, row)` sees.
#[derive(Debug, Clone, Copy)]
pub struct RayResult {
    pub nearest: Option<Hit>,
    /// Depth of the next surface behind the nearest one.
    pub second_depth: f64,
}

/// Möller–Trumbore against every face, with the rasterizer's whole-triangle
/// near culling and optional back-face culling.
pub fn cast_ray(
    vertices: &[[f64; 3]],
    faces: &[[u32; 3]],
    camera: &Camera,
    col: usize,
    row: usize,
    backface_culling: bool,
) -> RayResult {
    let f = camera.focal();
    let dir = Vector3::new((col as f64 + 0.5 - camera.cx) / f, (row as f64 + 0.5 - camera.cy) / f, 1.0);
    let mut best: Option<Hit> = None;
    let mut second = f64::INFINITY;
    for (fi, face) in faces.iter().enumerate() {
        let p: Vec<Vector3<f64>> =
            face.iter().map(|&i| camera.r * Vector3::from(vertices[i as usize]) + camera.t).collect();
        if p.iter().any(|q| q.z <= MIN_DEPTH) {
            continue;
        }
        let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
        if backface_culling && n.dot(&p[0]) >= 0.0 {
            continue;
        }
        let (e1, e2) = (p[1] - p[0], p[2] - p[0]);
        let h = dir.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-300 {
            continue;
        }
        let s = -p[0];
        let u = s.dot(&h) / det;
        let q = s.cross(&e1);
        let v = dir.dot(&q) / det;
        let t = e2.dot(&q) / det;
        if u < 0.0 || v < 0.0 || u + v > 1.0 || t <= 0.0 {
            continue;
        }
        let hit = Hit { depth: t, bary: [1.0 - u - v, u, v], face: fi };
        match best {
            Some(b) if b.depth <= t => second = second.min(t),
            Some(b) => {
                second = second.min(b.depth);
                best = Some(hit);
            }
            None => best = Some(hit),
        }
    }
    RayResult { nearest: best, second_depth: second }
}

/// Label of the corner with the largest weight, lowest corner on ties.
pub fn majority_corner(bary: [f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if bary[k] > bary[best] {
            best = k;
        }
    }
    best
}

/// A hit far enough from every edge, every label tie and every other surface
/// that floating-point rounding cannot change the outcome.
pub fn is_interior(r: &RayResult) -> bool {
    let Some(h) = r.nearest else { return false };
    let mut b = h.bary;
    b.sort_by(|x, y| y.total_cmp(x));
    b[2] > 1e-6 && b[0] - b[1] > 1e-9 && r.second_depth - h.depth > 1e-9
}

/// Cross-correlation written as six nested loops over output and kernel
/// positions, skipping out-of-bounds taps.
pub fn conv_oracle(layer: &Conv2d, input: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input.shape();
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let co = layer.out_channels;
    let mut out = Tensor4::zeros([n, co, oh, ow]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = layer.bias[o];
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * s + ky) as isize - p as isize;
                                let ix = (x * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wt = layer.weight[((o * c + i) * k + ky) * k + kx];
                                acc += wt * input.at(b, i, iy as usize, ix as usize);
                            }
                        }
                    }
                    let idx = out.offset(b, o, y, x);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

/// Largest relative disagreement between `analytic` and central finite
/// differences of `loss` over every parameter. Magnitudes below `floor` are
/// compared absolutely.
pub fn max_fd_error<P: Parameters + Clone>(
    params: &P,
    analytic: &[f64],
    step: f64,
    floor: f64,
    loss: impl Fn(&P) -> f64,
) -> (f64, usize) {
    let base = params.flat();
    assert_eq!(base.len(), analytic.len());
    let mut probe = params.clone();
    let mut worst = (0.0, 0);
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + step;
        probe.set_flat(&v);
        let up = loss(&probe);
        v[i] = base[i] - step;
        probe.set_flat(&v);
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * step);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
