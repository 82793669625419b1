//! Image and raw-float exports of guidance maps.
//!
//! PNG encodings:
//! - depth: 8-bit gray, `(d_max − d) / (d_max − d_min)` over the frame's
//!   foreground (near = bright), background 0. A constant-depth foreground
//!   exports as 255.
//! - normal: 8-bit RGB, `(n + 1) / 2`, background black.
//! - semantic: indexed, palette entry 0 black, entry `l + 1` for label `l`.
//! - skeleton: 8-bit RGB of the [0, 1] drawing.
//!
//! Raw dumps use a flat little-endian container: `"CHMPMAPS"`, `u32`
//! version, `u32` rank, `u32` dims, then row-major `f32` data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{GuidanceMaps, BACKGROUND_DEPTH};
use crate::error::{Error, Result};

pub const MAPS_MAGIC: &[u8; 8] = b"CHMPMAPS";
pub const MAPS_VERSION: u32 = 1;

/// Normalization constants written next to every exported frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MapsMetadata {
    pub width: usize,
    pub height: usize,
    /// `None` when the frame has no foreground.
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
    pub background_depth: f64,
    pub num_labels: usize,
    pub foreground_pixels: usize,
}

impl MapsMetadata {
    pub fn of(maps: &GuidanceMaps, num_labels: usize) -> Self {
        let range = depth_range(maps);
        Self {
            width: maps.width,
            height: maps.height,
            depth_min: range.map(|r| r.0),
            depth_max: range.map(|r| r.1),
            background_depth: BACKGROUND_DEPTH,
            num_labels,
            foreground_pixels: maps.foreground_count(),
        }
    }
}

pub fn depth_range(maps: &GuidanceMaps) -> Option<(f64, f64)> {
    maps.depth
        .iter()
        .filter(|&&d| d < BACKGROUND_DEPTH)
        .fold(None, |acc, &d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
}

/// Per-pixel normalized depth in [0, 1], background 0.
pub fn normalized_depth(maps: &GuidanceMaps) -> Vec<f64> {
    let Some((lo, hi)) = depth_range(maps) else {
        return vec![0.0; maps.depth.len()];
    };
    maps.depth
        .iter()
        .map(|&d| {
            if d >= BACKGROUND_DEPTH {
                0.0
            } else if hi > lo {
                (hi - d) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn depth_u8(maps: &GuidanceMaps) -> Vec<u8> {
    normalized_depth(maps).into_iter().map(to_u8).collect()
}

pub fn normal_rgb8(maps: &GuidanceMaps) -> Vec<u8> {
    let mut out = Vec::with_capacity(maps.normal.len() * 3);
    for (i, n) in maps.normal.iter().enumerate() {
        if maps.is_foreground(i) {
            out.extend(n.iter().map(|c| to_u8(0.5 * (c + 1.0))));
        } else {
            out.extend([0, 0, 0]);
        }
    }
    out
}

pub fn rgb8(pixels: &[[f64; 3]]) -> Vec<u8> {
    pixels.iter().flat_map(|p| p.map(to_u8)).collect()
}

/// `L + 1` RGB entries: black, then evenly spaced hues.
pub fn semantic_palette(num_labels: usize) -> Vec<[u8; 3]> {
    let mut pal = vec![[0, 0, 0]];
    for l in 0..num_labels {
        pal.push(hsv_to_rgb8(l as f64 / num_labels.max(1) as f64, 0.75, 0.95));
    }
    pal
}

fn hsv_to_rgb8(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.fract()) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [to_u8(r), to_u8(g), to_u8(b)]
}

fn png_err(path: &Path, e: png::EncodingError) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, None, data)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, None, data)
}

pub fn write_semantic_png(path: &Path, maps: &GuidanceMaps, num_labels: usize) -> Result<()> {
    if let Some(&bad) = maps.semantic.iter().find(|&&s| s as usize > num_labels) {
        return Err(Error::invalid(format!(
            "semantic value {bad} exceeds label count {num_labels}"
        )));
    }
    if num_labels > 255 {
        return Err(Error::invalid("indexed PNG supports at most 255 labels"));
    }
    let palette: Vec<u8> = semantic_palette(num_labels).into_iter().flatten().collect();
    let data: Vec<u8> = maps.semantic.iter().map(|&s| s as u8).collect();
    write_png(path, maps.width, maps.height, png::ColorType::Indexed, Some(palette), &data)
}

/// Decoded 8-bit PNG: `(width, height, samples, palette)`.
pub struct DecodedPng {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
    pub palette: Option<Vec<u8>>,
}

pub fn read_png(path: &Path) -> Result<DecodedPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let to_err = |e: png::DecodingError| Error::format(path.display().to_string(), e.to_string());
    let mut reader = decoder.read_info().map_err(to_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path.display().to_string(), "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(to_err)?;
    buf.truncate(info.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        channels: info.color_type.samples(),
        data: buf,
        palette,
    })
}

pub fn write_f32_dump(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::dim(format!(
            "dump dims {dims:?} hold {expected} values, got {}",
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + 4 * dims.len() + 4 * data.len());
    bytes.extend_from_slice(MAPS_MAGIC);
    bytes.extend_from_slice(&MAPS_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_dump(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = || path.display().to_string();
    let word = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(ctx(), "truncated header"))
    };
    if bytes.get(..8) != Some(MAPS_MAGIC.as_slice()) {
        return Err(Error::format(ctx(), "bad magic, expected CHMPMAPS"));
    }
    if word(8)? != MAPS_VERSION {
        return Err(Error::format(ctx(), format!("unsupported version {}", word(8)?)));
    }
    let rank = word(12)? as usize;
    let dims: Vec<usize> = (0..rank).map(|i| word(16 + 4 * i).map(|d| d as usize)).collect::<Result<_>>()?;
    let start = 16 + 4 * rank;
    let count: usize = dims.iter().product();
    if bytes.len() != start + 4 * count {
        return Err(Error::format(
            ctx(),
            format!("expected {} data bytes for dims {dims:?}, found {}", 4 * count, bytes.len() - start),
        ));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// The four layers as `f32` arrays with their dims, in the order
/// depth (H×W), normal (H×W×3), semantic (H×W), skeleton (H×W×3).
pub fn layer_dumps(maps: &GuidanceMaps) -> [(&'static str, Vec<usize>, Vec<f32>); 4] {
    let (h, w) = (maps.height, maps.width);
    [
        ("depth", vec![h, w], maps.depth.iter().map(|&d| d as f32).collect()),
        ("normal", vec![h, w, 3], maps.normal.iter().flatten().map(|&x| x as f32).collect()),
        ("semantic", vec![h, w], maps.semantic.iter().map(|&s| s as f32).collect()),
        ("skeleton", vec![h, w, 3], maps.skeleton.iter().flatten().map(|&x| x as f32).collect()),
    ]
}

/// Rebuilds maps from the four raw layers produced by [`layer_dumps`].
pub fn maps_from_dumps(
    depth: (Vec<usize>, Vec<f32>),
    normal: (Vec<usize>, Vec<f32>),
    semantic: (Vec<usize>, Vec<f32>),
    skeleton: (Vec<usize>, Vec<f32>),
) -> Result<GuidanceMaps> {
    let (h, w) = match depth.0.as_slice() {
        [h, w] => (*h, *w),
        d => return Err(Error::dim(format!("depth dump dims {d:?}, expected [H, W]"))),
    };
    let check = |name: &str, dims: &[usize], want: &[usize]| {
        if dims != want {
            Err(Error::dim(format!("{name} dump dims {dims:?}, expected {want:?}")))
        } else {
            Ok(())
        }
    };
    check("normal", &normal.0, &[h, w, 3])?;
    check("semantic", &semantic.0, &[h, w])?;
    check("skeleton", &skeleton.0, &[h, w, 3])?;
    let triples = |v: &[f32]| v.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    Ok(GuidanceMaps {
        width: w,
        height: h,
        depth: depth
            .1
            .iter()
            .map(|&d| if d as f64 >= BACKGROUND_DEPTH * 0.5 { BACKGROUND_DEPTH } else { d as f64 })
            .collect(),
        normal: triples(&normal.1),
        semantic: semantic.1.iter().map(|&s| s as u32).collect(),
        skeleton: triples(&skeleton.1),
    })
}
