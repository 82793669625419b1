//! Pinhole projection and guidance-map rendering.
//!
//! A posed mesh becomes four aligned layers: camera-space depth, camera-space
//! normals, part labels, and a skeleton drawing. Pixel `(row, col)` samples
//! the image plane at `(col + 0.5, row + 0.5)`.

mod camera;
pub mod export;
mod raster;
mod skeleton;

pub use camera::{project, Camera, PixelRect, Projection, MIN_DEPTH};
pub use raster::{rasterize_mesh, rasterize_mesh_with, RasterOptions};
pub use skeleton::{bone_color, joint_color, render_skeleton, SkeletonStyle, BONE_PALETTE, JOINT_PALETTE};

/// Depth stored for pixels no surface covers.
pub const BACKGROUND_DEPTH: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMaps {
    pub width: usize,
    pub height: usize,
    /// Camera-space z in meters, [`BACKGROUND_DEPTH`] where empty.
    pub depth: Vec<f64>,
    /// Camera-space unit normals, zero where empty.
    pub normal: Vec<[f64; 3]>,
    /// Part label + 1, zero where empty.
    pub semantic: Vec<u32>,
    /// RGB in [0, 1], black where empty.
    pub skeleton: Vec<[f64; 3]>,
}

impl GuidanceMaps {
    pub fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            depth: vec![BACKGROUND_DEPTH; n],
            normal: vec![[0.0; 3]; n],
            semantic: vec![0; n],
            skeleton: vec![[0.0; 3]; n],
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn is_foreground(&self, i: usize) -> bool {
        self.depth[i] < BACKGROUND_DEPTH
    }

    pub fn foreground_count(&self) -> usize {
        (0..self.depth.len()).filter(|&i| self.is_foreground(i)).count()
    }
}
