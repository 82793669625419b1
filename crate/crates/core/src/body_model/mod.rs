//! Parametric body evaluation.
//!
//! A [`BodyModel`] holds a rest-pose template together with shape blend
//! shapes, optional pose correctives, skinning weights, a joint regressor and
//! a topologically sorted kinematic tree. [`evaluate_body`] runs the usual
//! order of operations:
//!
//! ```text
//! shaped   = template + shape_dirs · β
//! joints   = joint_regressor · shaped
//! shaped  += pose_dirs · vec(R_1 - I, ..., R_{K-1} - I)      (optional)
//! G_k      = forward kinematics over the tree
//! v'       = Σ_k w_vk · (G_k ∘ G_k,rest⁻¹)(v)
//! ```

mod io;
mod toy;

pub use io::{read_body_model, write_body_model, BODY_MAGIC, BODY_VERSION};
pub use toy::{make_toy_body, ToyBodyConfig, MAX_TOY_JOINTS};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const UNIT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    /// V×3, meters.
    pub template_vertices: Vec<[f64; 3]>,
    /// V×3×S, flattened as `(v * 3 + axis) * S + s`.
    pub shape_dirs: Vec<f64>,
    pub num_shape: usize,
    /// V×3×P with P = 9·(K−1), same layout as `shape_dirs`.
    pub pose_dirs: Option<Vec<f64>>,
    /// V×K, row-major.
    pub skin_weights: Vec<f64>,
    /// K×V, row-major.
    pub joint_regressor: Vec<f64>,
    /// Parent index per joint; `parents[0] == -1` and `parents[i] < i`.
    pub parents: Vec<i32>,
    pub part_labels: Vec<u32>,
    pub num_labels: usize,
    pub faces: Vec<[u32; 3]>,
}

impl BodyModel {
    /// Validates every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let k = self.num_joints();
        let s = self.num_shape;
        if v == 0 {
            return Err(Error::invalid("body model has no vertices"));
        }
        if k == 0 {
            return Err(Error::invalid("body model has no joints"));
        }
        if let Some((i, _)) = self
            .template_vertices
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::invalid(format!("template vertex {i} is not finite")));
        }
        if self.shape_dirs.len() != v * 3 * s {
            return Err(Error::dim(format!(
                "shape_dirs has {} values, expected V*3*S = {}",
                self.shape_dirs.len(),
                v * 3 * s
            )));
        }
        if let Some(pd) = &self.pose_dirs {
            let p = self.num_pose_features();
            if pd.len() != v * 3 * p {
                return Err(Error::dim(format!(
                    "pose_dirs has {} values, expected V*3*P = {}",
                    pd.len(),
                    v * 3 * p
                )));
            }
        }
        if self.skin_weights.len() != v * k {
            return Err(Error::dim(format!(
                "skin_weights has {} values, expected V*K = {}",
                self.skin_weights.len(),
                v * k
            )));
        }
        for (i, row) in self.skin_weights.chunks(k).enumerate() {
            if let Some(j) = row.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(format!(
                    "skin weight [{i}, {j}] = {} is negative or not finite",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > UNIT_SUM_TOL {
                return Err(Error::invalid(format!(
                    "skin weights of vertex {i} sum to {sum}, expected 1"
                )));
            }
        }
        if self.joint_regressor.len() != k * v {
            return Err(Error::dim(format!(
                "joint_regressor has {} values, expected K*V = {}",
                self.joint_regressor.len(),
                k * v
            )));
        }
        for (i, row) in self.joint_regressor.chunks(v).enumerate() {
            let sum: f64 = row.iter().sum();
            if !sum.is_finite() || (sum - 1.0).abs() > UNIT_SUM_TOL {
                return Err(Error::invalid(format!(
                    "joint regressor row {i} sums to {sum}, expected 1"
                )));
            }
        }
        if self.parents[0] != -1 {
            return Err(Error::invalid(format!(
                "parents[0] = {}, root must have parent -1",
                self.parents[0]
            )));
        }
        for (i, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::invalid(format!(
                    "parents[{i}] = {p}, expected 0 <= parent < {i}"
                )));
            }
        }
        if self.part_labels.len() != v {
            return Err(Error::dim(format!(
                "part_labels has {} entries, expected V = {v}",
                self.part_labels.len()
            )));
        }
        if let Some(i) = self
            .part_labels
            .iter()
            .position(|&l| l as usize >= self.num_labels)
        {
            return Err(Error::invalid(format!(
                "part label of vertex {i} is {}, expected < L = {}",
                self.part_labels[i], self.num_labels
            )));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&idx) = f.iter().find(|&&idx| idx as usize >= v) {
                return Err(Error::invalid(format!(
                    "face {fi} references vertex {idx}, expected < V = {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// Length of the pose-corrective feature vector, 9·(K−1).
    pub fn num_pose_features(&self) -> usize {
        9 * self.num_joints().saturating_sub(1)
    }

    /// `(parent, child)` pairs of the kinematic tree, in child order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, &p)| (p as usize, c))
            .collect()
    }

    pub fn skin_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skin_weights[vertex * self.num_joints() + joint]
    }

    pub fn neutral_shape(&self) -> ShapeParams {
        ShapeParams::zeros(self.num_shape)
    }

    pub fn rest_pose(&self) -> PoseParams {
        PoseParams::zeros(self.num_joints())
    }
}

/// Shape blend coefficients β.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub beta: Vec<f64>,
}

impl ShapeParams {
    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta }
    }

    pub fn zeros(dims: usize) -> Self {
        Self {
            beta: vec![0.0; dims],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Per-joint axis-angle rotations; joint 0 is the global orientation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseParams {
    pub axis_angles: Vec<[f64; 3]>,
}

impl PoseParams {
    pub fn new(axis_angles: Vec<[f64; 3]>) -> Self {
        Self { axis_angles }
    }

    pub fn zeros(joints: usize) -> Self {
        Self {
            axis_angles: vec![[0.0; 3]; joints],
        }
    }

    pub fn len(&self) -> usize {
        self.axis_angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_angles.is_empty()
    }

    pub fn rotation_matrices(&self) -> Result<Vec<Matrix3<f64>>> {
        self.axis_angles.iter().map(|aa| rodrigues(*aa)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<[f64; 3]>,
    pub joints: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub part_labels: Vec<u32>,
    pub faces: Vec<[u32; 3]>,
}

impl PosedMesh {
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            joints: Vec::new(),
            normals: Vec::new(),
            part_labels: Vec::new(),
            faces: Vec::new(),
        }
    }
}

/// Rotation followed by translation: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub(crate) fn vec3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

pub(crate) fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Axis-angle to rotation matrix.
///
/// Below an angle of 1e-8 the second-order expansion `I + [w]× + [w]×²/2`
/// is used instead of the closed form.
pub fn rodrigues(axis_angle: [f64; 3]) -> Result<Matrix3<f64>> {
    if axis_angle.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid(format!(
            "axis-angle {axis_angle:?} is not finite"
        )));
    }
    let w = vec3(&axis_angle);
    let angle = w.norm();
    let k = skew(&w);
    if angle < 1e-8 {
        return Ok(Matrix3::identity() + k + 0.5 * k * k);
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Ok(Matrix3::identity() + a * k + b * k * k)
}

/// World transforms of every joint.
///
/// `G_0 = (R_0, j_0)`, `G_i = G_parent ∘ (R_i, j_i − j_parent)`.
pub fn forward_kinematics(
    model: &BodyModel,
    rest_joints: &[[f64; 3]],
    local_rots: &[Matrix3<f64>],
) -> Result<Vec<RigidTransform>> {
    let k = model.num_joints();
    if rest_joints.len() != k || local_rots.len() != k {
        return Err(Error::dim(format!(
            "forward kinematics expects {k} joints, got {} rest joints and {} rotations",
            rest_joints.len(),
            local_rots.len()
        )));
    }
    let mut world: Vec<RigidTransform> = Vec::with_capacity(k);
    for i in 0..k {
        let j = vec3(&rest_joints[i]);
        let g = match model.parents[i] {
            p if p < 0 => RigidTransform::new(local_rots[i], j),
            p => {
                let p = p as usize;
                let local = RigidTransform::new(local_rots[i], j - vec3(&rest_joints[p]));
                world[p].compose(&local)
            }
        };
        world.push(g);
    }
    Ok(world)
}

pub fn regress_joints(model: &BodyModel, vertices: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let v = model.num_vertices();
    if vertices.len() != v {
        return Err(Error::dim(format!(
            "joint regression expects {v} vertices, got {}",
            vertices.len()
        )));
    }
    Ok(model
        .joint_regressor
        .chunks(v)
        .map(|row| {
            let mut acc = [0.0; 3];
            for (w, p) in row.iter().zip(vertices) {
                if *w != 0.0 {
                    acc[0] += w * p[0];
                    acc[1] += w * p[1];
                    acc[2] += w * p[2];
                }
            }
            acc
        })
        .collect())
}

/// Template plus shape blend: `T̄ + shape_dirs · β`.
pub fn shaped_template(model: &BodyModel, shape: &ShapeParams) -> Result<Vec<[f64; 3]>> {
    let s = model.num_shape;
    if shape.len() != s {
        return Err(Error::dim(format!(
            "model has {s} shape coefficients, got {}",
            shape.len()
        )));
    }
    if shape.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("shape coefficients must be finite"));
    }
    let mut out = model.template_vertices.clone();
    for (vi, p) in out.iter_mut().enumerate() {
        for (axis, c) in p.iter_mut().enumerate() {
            let dirs = &model.shape_dirs[(vi * 3 + axis) * s..(vi * 3 + axis + 1) * s];
            *c += dot(dirs, &shape.beta);
        }
    }
    Ok(out)
}

/// `vec(R_1 − I, ..., R_{K−1} − I)`, row-major per joint.
pub fn pose_feature(rots: &[Matrix3<f64>]) -> Vec<f64> {
    let mut f = Vec::with_capacity(9 * rots.len().saturating_sub(1));
    for r in rots.iter().skip(1) {
        for row in 0..3 {
            for col in 0..3 {
                let id = if row == col { 1.0 } else { 0.0 };
                f.push(r[(row, col)] - id);
            }
        }
    }
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shaped and pose-corrected rest vertices together with the rest joints
/// and per-joint world transforms: everything skinning needs.
#[derive(Debug, Clone)]
pub struct SkinningInputs {
    pub rest_vertices: Vec<[f64; 3]>,
    pub rest_joints: Vec<[f64; 3]>,
    pub world: Vec<RigidTransform>,
}

pub fn prepare_skinning(
    model: &BodyModel,
    shape: &ShapeParams,
    pose: &PoseParams,
) -> Result<SkinningInputs> {
    let k = model.num_joints();
    if pose.len() != k {
        return Err(Error::dim(format!(
            "model has {k} joints, pose has {}",
            pose.len()
        )));
    }
    let mut rest_vertices = shaped_template(model, shape)?;
    let rest_joints = regress_joints(model, &rest_vertices)?;
    let rots = pose.rotation_matrices()?;

    if let Some(pose_dirs) = &model.pose_dirs {
        let feat = pose_feature(&rots);
        let p = feat.len();
        for (vi, v) in rest_vertices.iter_mut().enumerate() {
            for (axis, c) in v.iter_mut().enumerate() {
                *c += dot(&pose_dirs[(vi * 3 + axis) * p..(vi * 3 + axis + 1) * p], &feat);
            }
        }
    }

    let world = forward_kinematics(model, &rest_joints, &rots)?;
    Ok(SkinningInputs {
        rest_vertices,
        rest_joints,
        world,
    })
}

/// Linear blend skinning with per-vertex blended affine maps.
pub fn skin_vertices(model: &BodyModel, inputs: &SkinningInputs) -> Vec<[f64; 3]> {
    let k = model.num_joints();
    // A_k(x) = R_k (x − j_k) + t_k = R_k x + (t_k − R_k j_k)
    let offsets: Vec<Vector3<f64>> = inputs
        .world
        .iter()
        .zip(&inputs.rest_joints)
        .map(|(g, j)| g.translation - g.rotation * vec3(j))
        .collect();

    inputs
        .rest_vertices
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let weights = &model.skin_weights[vi * k..(vi + 1) * k];
            let mut m = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for (j, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    m += w * inputs.world[j].rotation;
                    b += w * offsets[j];
                }
            }
            arr3(&(m * vec3(v) + b))
        })
        .collect()
}

/// Poses the model.
pub fn evaluate_body(model: &BodyModel, shape: &ShapeParams, pose: &PoseParams) -> Result<PosedMesh> {
    let inputs = prepare_skinning(model, shape, pose)?;
    let vertices = skin_vertices(model, &inputs);
    let normals = vertex_normals(&vertices, &model.faces);
    let joints = inputs.world.iter().map(|g| arr3(&g.translation)).collect();
    Ok(PosedMesh {
        vertices,
        joints,
        normals,
        part_labels: model.part_labels.clone(),
        faces: model.faces.clone(),
    })
}

/// Area-weighted vertex normals accumulated in face order.
///
/// Zero-area faces contribute nothing. A vertex that ends with a zero
/// accumulated normal (unreferenced or surrounded by degenerate faces) gets
/// `+z` so every entry stays unit length.
pub fn vertex_normals(vertices: &[[f64; 3]], faces: &[[u32; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![Vector3::<f64>::zeros(); vertices.len()];
    for f in faces {
        let a = vec3(&vertices[f[0] as usize]);
        let b = vec3(&vertices[f[1] as usize]);
        let c = vec3(&vertices[f[2] as usize]);
        // |cross| is twice the area, so the raw cross product is area-weighted.
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    acc.iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                arr3(&(n / len))
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}
