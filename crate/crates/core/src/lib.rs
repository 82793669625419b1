#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod body_model;
pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod guidance_encoder;
pub mod params;
pub mod pipeline;
pub mod rasterizer;
pub mod rng;
pub mod shape_alignment;
pub mod temporal;

pub use error::{Error, Result};
