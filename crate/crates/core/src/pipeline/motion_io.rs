//! JSON documents for motion sequences and reference shapes.
//!
//! Motion file:
//!
//! ```json
//! {
//!   "fps": 30.0,
//!   "shape": [0.0, ...],
//!   "frames": [
//!     { "theta": [[0.0, 0.0, 0.0], ...],
//!       "camera": { "f": 500.0, "cx": 128.0, "cy": 128.0, "scale": 1.0,
//!                   "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 4] } }
//!   ]
//! }
//! ```
//!
//! `R` is the row-major world-to-camera rotation. Reference shape file:
//! `{"beta": [...]}` with an optional `"bbox": [x0, y0, x1, y1]` target box
//! in pixels. Unknown keys are reported as warnings; missing keys are errors
//! naming the file and the JSON path.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Map, Value};

use crate::body_model::{PoseParams, ShapeParams};
use crate::error::{Error, Result};
use crate::rasterizer::{Camera, PixelRect};
use crate::shape_alignment::{AlignedSequence, MotionFrame, MotionSequence};

/// A parsed document and the unknown keys it contained.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceShape {
    pub shape: ShapeParams,
    pub bbox: Option<PixelRect>,
}

struct Doc<'a> {
    file: &'a str,
    warnings: Vec<String>,
}

impl<'a> Doc<'a> {
    fn err(&self, path: &str, msg: impl std::fmt::Display) -> Error {
        Error::format(format!("{}: {path}", self.file), msg.to_string())
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, known: &[&str]) -> Result<&'v Map<String, Value>> {
        let obj = v.as_object().ok_or_else(|| self.err(path, "expected an object"))?;
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                self.warnings.push(format!("{}: ignoring unknown field {path}.{key}", self.file));
            }
        }
        Ok(obj)
    }

    fn field<'v>(&self, obj: &'v Map<String, Value>, path: &str, key: &str) -> Result<&'v Value> {
        obj.get(key).ok_or_else(|| self.err(path, format!("missing field {key:?}")))
    }

    fn number(&self, v: &Value, path: &str) -> Result<f64> {
        let x = v.as_f64().ok_or_else(|| self.err(path, "expected a number"))?;
        if !x.is_finite() {
            return Err(self.err(path, "number is not finite"));
        }
        Ok(x)
    }

    fn numbers(&self, v: &Value, path: &str, len: Option<usize>) -> Result<Vec<f64>> {
        let arr = v.as_array().ok_or_else(|| self.err(path, "expected an array of numbers"))?;
        if let Some(n) = len {
            if arr.len() != n {
                return Err(self.err(path, format!("expected {n} numbers, found {}", arr.len())));
            }
        }
        arr.iter().enumerate().map(|(i, x)| self.number(x, &format!("{path}[{i}]"))).collect()
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), format!("invalid JSON: {e}")))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_camera(doc: &mut Doc, v: &Value, path: &str) -> Result<Camera> {
    let obj = doc.object(v, path, &["f", "cx", "cy", "scale", "R", "t"])?;
    let num = |doc: &Doc, key: &str| doc.number(doc.field(obj, path, key)?, &format!("{path}.{key}"));
    let r = doc.numbers(doc.field(obj, path, "R")?, &format!("{path}.R"), Some(9))?;
    let t = doc.numbers(doc.field(obj, path, "t")?, &format!("{path}.t"), Some(3))?;
    Ok(Camera {
        f: num(doc, "f")?,
        cx: num(doc, "cx")?,
        cy: num(doc, "cy")?,
        scale: num(doc, "scale")?,
        r: Matrix3::from_row_slice(&r),
        t: Vector3::new(t[0], t[1], t[2]),
    })
}

/// Parses a motion document held in memory; `file` names it in messages.
pub fn parse_motion(text: &str, file: &str) -> Result<Parsed<MotionSequence>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::format(file.to_string(), format!("invalid JSON: {e}")))?;
    parse_motion_value(&root, file)
}

fn parse_motion_value(root: &Value, file: &str) -> Result<Parsed<MotionSequence>> {
    let mut doc = Doc { file, warnings: Vec::new() };
    let obj = doc.object(root, "$", &["fps", "shape", "frames"])?;
    let fps = doc.number(doc.field(obj, "$", "fps")?, "$.fps")?;
    let shape = doc.numbers(doc.field(obj, "$", "shape")?, "$.shape", None)?;
    let frames_v = doc.field(obj, "$", "frames")?.as_array().ok_or_else(|| doc.err("$.frames", "expected an array"))?;
    let mut frames = Vec::with_capacity(frames_v.len());
    for (i, fv) in frames_v.iter().enumerate() {
        let path = format!("$.frames[{i}]");
        let fo = doc.object(fv, &path, &["theta", "camera"])?;
        let theta_v = doc.field(fo, &path, "theta")?;
        let tpath = format!("{path}.theta");
        let rows = theta_v.as_array().ok_or_else(|| doc.err(&tpath, "expected a K x 3 array"))?;
        let axis_angles = rows
            .iter()
            .enumerate()
            .map(|(j, row)| doc.numbers(row, &format!("{tpath}[{j}]"), Some(3)).map(|v| [v[0], v[1], v[2]]))
            .collect::<Result<Vec<_>>>()?;
        let camera_v = doc.field(fo, &path, "camera")?;
        let camera = parse_camera(&mut doc, camera_v, &format!("{path}.camera"))?;
        frames.push(MotionFrame { pose: PoseParams::new(axis_angles), camera });
    }
    let motion = MotionSequence { frames, source_shape: ShapeParams::new(shape), fps };
    motion.validate_structure().map_err(|e| Error::format(file.to_string(), e.to_string()))?;
    Ok(Parsed { value: motion, warnings: doc.warnings })
}

pub fn read_motion(path: &Path) -> Result<Parsed<MotionSequence>> {
    let root = read_json(path)?;
    parse_motion_value(&root, &path.display().to_string())
}

pub fn motion_to_json(motion: &MotionSequence) -> Value {
    let frames: Vec<Value> = motion
        .frames
        .iter()
        .map(|f| {
            let c = &f.camera;
            let r: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| c.r[(i, j)])).collect();
            json!({
                "theta": f.pose.axis_angles,
                "camera": {
                    "f": c.f, "cx": c.cx, "cy": c.cy, "scale": c.scale,
                    "R": r, "t": [c.t.x, c.t.y, c.t.z],
                },
            })
        })
        .collect();
    json!({ "fps": motion.fps, "shape": motion.source_shape.beta, "frames": frames })
}

pub fn write_motion(path: &Path, motion: &MotionSequence) -> Result<()> {
    write_json(path, &motion_to_json(motion))
}

/// Writes an aligned sequence in the motion format, with the aligned shape.
pub fn write_aligned(path: &Path, aligned: &AlignedSequence) -> Result<()> {
    write_motion(path, &aligned.as_motion())
}

pub fn read_reference_shape(path: &Path) -> Result<Parsed<ReferenceShape>> {
    let root = read_json(path)?;
    let file = path.display().to_string();
    let mut doc = Doc { file: &file, warnings: Vec::new() };
    let obj = doc.object(&root, "$", &["beta", "bbox"])?;
    let beta = doc.numbers(doc.field(obj, "$", "beta")?, "$.beta", None)?;
    let bbox = match obj.get("bbox") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let b = doc.numbers(v, "$.bbox", Some(4))?;
            Some(PixelRect { x0: b[0], y0: b[1], x1: b[2], y1: b[3] })
        }
    };
    Ok(Parsed { value: ReferenceShape { shape: ShapeParams::new(beta), bbox }, warnings: doc.warnings })
}

pub fn write_reference_shape(path: &Path, reference: &ReferenceShape) -> Result<()> {
    let mut v = json!({ "beta": reference.shape.beta });
    if let Some(b) = reference.bbox {
        v["bbox"] = json!([b.x0, b.y0, b.x1, b.y1]);
    }
    write_json(path, &v)
}
