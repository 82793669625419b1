use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Points with camera-space z at or below this are behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole camera: `p_cam = R·p + t`, `u = f·scale·x/z + cx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    /// World-to-camera rotation.
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Camera {
    pub fn new(f: f64, cx: f64, cy: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { f, cx, cy, scale: 1.0, r, t }
    }

    /// Camera at `eye` looking at `target`; image rows grow against `up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        f: f64,
        cx: f64,
        cy: f64,
    ) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(f, cx, cy, r, -(r * eye))
    }

    pub fn focal(&self) -> f64 {
        self.f * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.f, self.cx, self.cy, self.scale];
        if vals.iter().chain(self.r.iter()).chain(self.t.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("camera has non-finite parameters"));
        }
        if self.focal() <= 0.0 {
            return Err(Error::invalid(format!(
                "camera f*scale = {} must be positive",
                self.focal()
            )));
        }
        let err = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (error {err:.3e})"
            )));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projection {
    /// False when the point lies at or behind the camera plane.
    pub fn in_front(&self) -> bool {
        self.z > MIN_DEPTH
    }
}

pub fn project(camera: &Camera, point: [f64; 3]) -> Projection {
    let p = camera.to_camera(&Vector3::from(point));
    let f = camera.focal();
    Projection {
        u: f * p.x / p.z + camera.cx,
        v: f * p.y / p.z + camera.cy,
        z: p.z,
    }
}

/// Axis-aligned pixel rectangle, `x0 <= x1`, `y0 <= y1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Bounding box of the projections of all points in front of the camera.
    pub fn of_projected(camera: &Camera, points: &[[f64; 3]]) -> Option<PixelRect> {
        let mut rect: Option<PixelRect> = None;
        for p in points {
            let q = project(camera, *p);
            if !q.in_front() {
                continue;
            }
            rect = Some(match rect {
                None => PixelRect { x0: q.u, y0: q.v, x1: q.u, y1: q.v },
                Some(r) => PixelRect {
                    x0: r.x0.min(q.u),
                    y0: r.y0.min(q.v),
                    x1: r.x1.max(q.u),
                    y1: r.y1.max(q.v),
                },
            });
        }
        rect
    }
}
