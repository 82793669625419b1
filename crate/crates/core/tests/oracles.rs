//! Library operations against the independent oracles in `common`, over
//! wider input ranges than the acceptance gate uses.

mod common;

use bodyguide::body_model::{evaluate_body, make_toy_body, PosedMesh, PoseParams, ShapeParams, ToyBodyConfig};
use bodyguide::guidance_encoder::{Conv2d, Tensor4};
use bodyguide::rasterizer::{rasterize_mesh_with, Camera, RasterOptions};
use bodyguide::rng;
use common::{cast_ray, conv_oracle, is_interior, majority_corner, max_abs_diff, skinning_oracle};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn full_skeleton_with_pose_correctives_matches_oracle() {
    let cfg = ToyBodyConfig { joints: 15, vertices: 400, shape_dims: 6, pose_correctives: true, ..Default::default() };
    let model = make_toy_body(&cfg).unwrap();
    let mut r = rng::seeded(21);
    for _ in 0..10 {
        let shape = ShapeParams::new(rng::uniform_vec(&mut r, 6, -3.0, 3.0));
        let a = rng::uniform_vec(&mut r, 45, -2.5, 2.5);
        let pose = PoseParams::new(a.chunks(3).map(|c| [c[0], c[1], c[2]]).collect());
        let mesh = evaluate_body(&model, &shape, &pose).unwrap();
        let (v, j) = skinning_oracle(&model, &shape, &pose);
        assert!(max_abs_diff(&mesh.vertices.concat(), &v.concat()) < 1e-10);
        assert!(max_abs_diff(&mesh.joints.concat(), &j.concat()) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_naive_loops(
        seed in 0u64..1000,
        c_in in 1usize..4,
        c_out in 1usize..4,
        kernel in 1usize..4,
        stride in 1usize..3,
        padding in 0usize..3,
        h in 3usize..9,
        w in 3usize..9,
    ) {
        prop_assume!(h + 2 * padding >= kernel && w + 2 * padding >= kernel);
        let mut r = rng::seeded(seed);
        let layer = Conv2d::random(c_in, c_out, kernel, stride, padding, &mut r);
        let x = Tensor4::new([2, c_in, h, w], rng::normal_vec(&mut r, 2 * c_in * h * w)).unwrap();
        let got = layer.forward(&x).unwrap();
        let want = conv_oracle(&layer, &x);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(max_abs_diff(got.data(), want.data()) < 1e-12);
    }
}

fn triangle_soup(seed: u64, faces: usize) -> PosedMesh {
    let mut r = rng::seeded(seed);
    let mut vertices = Vec::new();
    for _ in 0..faces {
        let c = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)];
        for _ in 0..3 {
            vertices.push([0, 1, 2].map(|a| c[a] + r.random_range(-0.4..0.4)));
        }
    }
    let n = vertices.len();
    PosedMesh {
        normals: vec![[0.0, 0.0, 1.0]; n],
        part_labels: (0..n as u32).map(|i| i % 5).collect(),
        faces: (0..faces as u32).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect(),
        vertices,
        joints: Vec::new(),
    }
}

#[test]
fn overlapping_soup_without_culling_matches_ray_casts() {
    let camera = Camera::new(40.0, 24.0, 24.0, Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0));
    for seed in 0..6 {
        let mesh = triangle_soup(seed, 12);
        let maps = rasterize_mesh_with(&mesh, &camera, 48, 48, RasterOptions { backface_culling: false });
        let (mut interior, mut boundary, mut covered) = (0, 0, 0);
        for row in 0..48 {
            for col in 0..48 {
                let i = maps.index(row, col);
                let ray = cast_ray(&mesh.vertices, &mesh.faces, &camera, col, row, false);
                covered += ray.nearest.is_some() as usize;
                match ray.nearest {
                    Some(h) if is_interior(&ray) => {
                        interior += 1;
                        let label = mesh.part_labels[mesh.faces[h.face][majority_corner(h.bary)] as usize] + 1;
                        assert!((maps.depth[i] - h.depth).abs() < 1e-9, "seed {seed} pixel ({col}, {row})");
                        assert_eq!(maps.semantic[i], label);
                    }
                    Some(_) => boundary += 1,
                    None => assert!(!maps.is_foreground(i), "seed {seed}: ({col}, {row}) covered by nothing"),
                }
            }
        }
        assert!(interior > 0 && boundary * 100 <= covered, "seed {seed}: {boundary} of {covered} uncertain");
    }
}

#[test]
fn culling_hides_triangles_facing_away() {
    let camera = Camera::new(40.0, 24.0, 24.0, Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0));
    let mesh = triangle_soup(99, 20);
    let culled = rasterize_mesh_with(&mesh, &camera, 48, 48, RasterOptions { backface_culling: true });
    for row in 0..48 {
        for col in 0..48 {
            let ray = cast_ray(&mesh.vertices, &mesh.faces, &camera, col, row, true);
            if is_interior(&ray) {
                let i = culled.index(row, col);
                assert!((culled.depth[i] - ray.nearest.unwrap().depth).abs() < 1e-9);
            }
        }
    }
}
