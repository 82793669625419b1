//! Transferring a reference subject's shape onto a driving pose sequence.
//!
//! Every aligned frame is the body evaluated at `(β_ref, θ_i)`: poses are
//! copied untouched, only the shape is replaced. [`fit_camera_scale`] then
//! applies one uniform camera-scale and principal-point correction so the
//! anchor frame's projected body matches a reference bounding box.

use crate::body_model::{evaluate_body, BodyModel, PoseParams, PosedMesh, ShapeParams};
use crate::error::{Error, Result};
use crate::rasterizer::{Camera, PixelRect};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub pose: PoseParams,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Vec<MotionFrame>,
    /// Shape of the driving subject; kept for provenance only.
    pub source_shape: ShapeParams,
    pub fps: f64,
}

impl MotionSequence {
    /// Frame count, fps and joint counts only; cameras are not inspected.
    pub fn validate_structure(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("motion sequence has no frames"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("fps = {} must be positive", self.fps)));
        }
        let k = self.frames[0].pose.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.pose.len() != k {
                return Err(Error::dim(format!(
                    "frame {i} has {} joints, frame 0 has {k}",
                    f.pose.len()
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for (i, f) in self.frames.iter().enumerate() {
            f.camera
                .validate()
                .map_err(|e| Error::invalid(format!("frame {i}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub shape: ShapeParams,
    pub frames: Vec<MotionFrame>,
    pub fps: f64,
}

impl AlignedSequence {
    /// The aligned sequence seen as a driving motion whose source shape is the
    /// aligned shape.
    pub fn as_motion(&self) -> MotionSequence {
        MotionSequence {
            frames: self.frames.clone(),
            source_shape: self.shape.clone(),
            fps: self.fps,
        }
    }

    pub fn posed_mesh(&self, model: &BodyModel, frame: usize) -> Result<PosedMesh> {
        let f = self
            .frames
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("frame {frame} out of range")))?;
        evaluate_body(model, &self.shape, &f.pose)
    }
}

pub fn align_sequence(beta_ref: &ShapeParams, motion: &MotionSequence) -> Result<AlignedSequence> {
    if motion.frames.is_empty() {
        return Err(Error::invalid("cannot align an empty motion sequence"));
    }
    if beta_ref.len() != motion.source_shape.len() {
        return Err(Error::dim(format!(
            "reference shape has {} coefficients, motion shape has {}",
            beta_ref.len(),
            motion.source_shape.len()
        )));
    }
    Ok(AlignedSequence {
        shape: beta_ref.clone(),
        frames: motion.frames.clone(),
        fps: motion.fps,
    })
}

/// Rescales every frame's camera by `reference.height / projected.height`,
/// measured on `frame_index`, then shifts every principal point by the
/// offset that centers the anchor's projected box on the reference box.
pub fn fit_camera_scale(
    reference_bbox: PixelRect,
    aligned: &AlignedSequence,
    model: &BodyModel,
    frame_index: usize,
) -> Result<AlignedSequence> {
    if !(reference_bbox.width() > 0.0 && reference_bbox.height() > 0.0) {
        return Err(Error::invalid(format!(
            "reference box {reference_bbox:?} must have positive width and height"
        )));
    }
    let anchor = aligned.frames.get(frame_index).ok_or_else(|| {
        Error::invalid(format!(
            "anchor frame {frame_index} out of range for {} frames",
            aligned.frames.len()
        ))
    })?;
    let mesh = aligned.posed_mesh(model, frame_index)?;
    let projected = PixelRect::of_projected(&anchor.camera, &mesh.vertices)
        .ok_or_else(|| Error::Alignment("no body vertex is in front of the anchor camera".into()))?;
    if !(projected.height() > 1e-12) {
        return Err(Error::Alignment(format!(
            "projected body height is {} on frame {frame_index}",
            projected.height()
        )));
    }
    let s = reference_bbox.height() / projected.height();

    // Scaling f about the principal point scales pixel offsets from it.
    let (pu, pv) = projected.center();
    let scaled_u = anchor.camera.cx + s * (pu - anchor.camera.cx);
    let scaled_v = anchor.camera.cy + s * (pv - anchor.camera.cy);
    let (ru, rv) = reference_bbox.center();
    let (du, dv) = (ru - scaled_u, rv - scaled_v);

    let frames = aligned
        .frames
        .iter()
        .map(|f| {
            let mut camera = f.camera;
            camera.scale *= s;
            camera.cx += du;
            camera.cy += dv;
            MotionFrame { pose: f.pose.clone(), camera }
        })
        .collect();
    Ok(AlignedSequence {
        shape: aligned.shape.clone(),
        frames,
        fps: aligned.fps,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::body_model::{make_toy_body, ToyBodyConfig};

    fn model() -> BodyModel {
        make_toy_body(&ToyBodyConfig::default()).unwrap()
    }

    fn camera() -> Camera {
        Camera::look_at(
            Vector3::new(0.0, 0.9, 3.5),
            Vector3::new(0.0, 0.9, 0.0),
            Vector3::y(),
            120.0,
            64.0,
            64.0,
        )
    }

    fn motion(m: &BodyModel, frames: usize) -> MotionSequence {
        let frames = (0..frames)
            .map(|i| {
                let mut pose = m.rest_pose();
                pose.axis_angles[0] = [0.0, 0.2 * i as f64, 0.0];
                pose.axis_angles[2] = [0.1 * i as f64, 0.0, 0.05];
                MotionFrame { pose, camera: camera() }
            })
            .collect();
        MotionSequence {
            frames,
            source_shape: ShapeParams::new((0..m.num_shape).map(|i| 0.1 * i as f64).collect()),
            fps: 30.0,
        }
    }

    #[test]
    fn self_alignment_is_identity() {
        let m = model();
        let mo = motion(&m, 3);
        let a = align_sequence(&mo.source_shape, &mo).unwrap();
        assert_eq!(a.shape, mo.source_shape);
        assert_eq!(a.frames, mo.frames);
    }

    #[test]
    fn neutral_alignment_poses_neutral_body() {
        let m = model();
        let mo = motion(&m, 3);
        let a = align_sequence(&m.neutral_shape(), &mo).unwrap();
        for (i, f) in mo.frames.iter().enumerate() {
            let want = evaluate_body(&m, &m.neutral_shape(), &f.pose).unwrap();
            assert_eq!(a.posed_mesh(&m, i).unwrap(), want);
        }
    }

    #[test]
    fn alignment_is_idempotent() {
        let m = model();
        let mo = motion(&m, 4);
        let beta = ShapeParams::new(vec![0.7; m.num_shape]);
        let once = align_sequence(&beta, &mo).unwrap();
        let twice = align_sequence(&beta, &once.as_motion()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_or_mismatched_motion_errors() {
        let m = model();
        let mut mo = motion(&m, 1);
        mo.frames.clear();
        assert!(matches!(align_sequence(&m.neutral_shape(), &mo), Err(Error::InvalidArgument(_))));
        let mo = motion(&m, 1);
        assert!(matches!(align_sequence(&ShapeParams::zeros(2), &mo), Err(Error::Dimension(_))));
    }

    fn projected(a: &AlignedSequence, m: &BodyModel, i: usize) -> PixelRect {
        let mesh = a.posed_mesh(m, i).unwrap();
        PixelRect::of_projected(&a.frames[i].camera, &mesh.vertices).unwrap()
    }

    #[test]
    fn already_aligned_box_leaves_cameras() {
        let m = model();
        let a = align_sequence(&m.neutral_shape(), &motion(&m, 3)).unwrap();
        let bbox = projected(&a, &m, 0);
        let fitted = fit_camera_scale(bbox, &a, &m, 0).unwrap();
        for (f, g) in fitted.frames.iter().zip(&a.frames) {
            assert!((f.camera.scale - 1.0).abs() < 1e-12);
            assert!((f.camera.cx - g.camera.cx).abs() < 1e-9);
            assert!((f.camera.cy - g.camera.cy).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_target_doubles_scale() {
        let m = model();
        let a = align_sequence(&m.neutral_shape(), &motion(&m, 3)).unwrap();
        let p = projected(&a, &m, 0);
        let target = PixelRect { x0: 10.0, y0: 5.0, x1: 10.0 + 2.0 * p.width(), y1: 5.0 + 2.0 * p.height() };
        let fitted = fit_camera_scale(target, &a, &m, 0).unwrap();
        for f in &fitted.frames {
            assert!((f.camera.scale - 2.0).abs() < 1e-9);
        }
        let re = projected(&fitted, &m, 0);
        assert!((re.height() - target.height()).abs() < 1.0);
        assert!((re.center().0 - target.center().0).abs() < 1e-9);
        assert!((re.center().1 - target.center().1).abs() < 1e-9);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let m = model();
        let a = align_sequence(&m.neutral_shape(), &motion(&m, 3)).unwrap();
        let target = PixelRect { x0: 20.0, y0: 8.0, x1: 60.0, y1: 120.0 };
        let direct = fit_camera_scale(target, &a, &m, 1).unwrap();
        let mut pre = a.clone();
        for f in &mut pre.frames {
            f.camera.scale *= 1.7;
        }
        let via = fit_camera_scale(target, &pre, &m, 1).unwrap();
        for (x, y) in direct.frames.iter().zip(&via.frames) {
            assert!((x.camera.scale - y.camera.scale).abs() < 1e-9);
            assert!((x.camera.cx - y.camera.cx).abs() < 1e-9);
            assert!((x.camera.cy - y.camera.cy).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_projection_fails() {
        let m = model();
        let mut a = align_sequence(&m.neutral_shape(), &motion(&m, 2)).unwrap();
        // Camera looking away from the body.
        a.frames[0].camera = Camera::look_at(
            Vector3::new(0.0, 0.9, 3.5),
            Vector3::new(0.0, 0.9, 7.0),
            Vector3::y(),
            120.0,
            64.0,
            64.0,
        );
        let target = PixelRect { x0: 0.0, y0: 0.0, x1: 10.0, y1: 10.0 };
        assert!(matches!(fit_camera_scale(target, &a, &m, 0), Err(Error::Alignment(_))));

        // A body flattened onto one image row.
        let mut flat = m.clone();
        for v in &mut flat.template_vertices {
            v[1] = 0.9;
        }
        for row in flat.shape_dirs.chunks_mut(flat.num_shape * 3) {
            row.fill(0.0);
        }
        let a = align_sequence(&flat.neutral_shape(), &motion(&flat, 1)).unwrap();
        let mut a0 = a.clone();
        a0.frames[0].pose = flat.rest_pose();
        assert!(matches!(fit_camera_scale(target, &a0, &flat, 0), Err(Error::Alignment(_))));

        let zero = PixelRect { x0: 0.0, y0: 0.0, x1: 10.0, y1: 0.0 };
        assert!(matches!(fit_camera_scale(zero, &a, &m, 0), Err(Error::InvalidArgument(_))));
        assert!(fit_camera_scale(target, &a, &m, 9).is_err());
    }
}
