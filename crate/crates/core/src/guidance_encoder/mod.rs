//! Per-condition guidance encoders and summation fusion.
//!
//! Each condition (depth, normal, semantic, skeleton) passes through its own
//! [`GuidanceNet`]; the outputs are summed in the fixed order of
//! [`Condition`] to form the guidance feature `y`. Output layers start at
//! zero, so a freshly built encoder yields `y = 0` exactly.

mod attention;
mod conv;
mod net;
mod tensor;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

pub use attention::{AttentionCache, SelfAttention};
pub use conv::{silu, silu_backward, silu_grad, Conv2d};
pub use net::{ConvSpec, GuidanceNet, GuidanceNetConfig, NetCache};
pub use tensor::Tensor4;

use crate::error::{Error, Result};
use crate::params::{Parameters, Visitor, VisitorMut};
use crate::rasterizer::export::{normalized_depth, semantic_palette, write_gray_png};
use crate::rasterizer::GuidanceMaps;

/// Guidance conditions in canonical summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Depth,
    Normal,
    Semantic,
    Skeleton,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Depth, Condition::Normal, Condition::Semantic, Condition::Skeleton];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Depth => "depth",
            Condition::Normal => "normal",
            Condition::Semantic => "semantic",
            Condition::Skeleton => "skeleton",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown condition {s:?}; valid names: depth, normal, semantic, skeleton")))
    }
}

/// Conditions of one sample, all with the same spatial size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GuidanceBundle {
    pub conditions: BTreeMap<Condition, Tensor4>,
}

impl GuidanceBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, condition: Condition, tensor: Tensor4) -> Self {
        self.conditions.insert(condition, tensor);
        self
    }

    /// Batches bundles that carry the same set of conditions.
    pub fn stack(bundles: &[GuidanceBundle]) -> Result<GuidanceBundle> {
        let Some(first) = bundles.first() else {
            return Err(Error::invalid("stack: no bundles"));
        };
        let mut out = GuidanceBundle::new();
        for cond in first.conditions.keys() {
            let parts = bundles
                .iter()
                .map(|b| {
                    b.conditions
                        .get(cond)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("stack: a bundle lacks condition {cond}")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.conditions.insert(*cond, Tensor4::stack(&parts)?);
        }
        if bundles.iter().any(|b| b.conditions.len() != first.conditions.len()) {
            return Err(Error::invalid("stack: bundles carry different condition sets"));
        }
        Ok(out)
    }

    /// Batch item `b` of every condition.
    pub fn item(&self, b: usize) -> GuidanceBundle {
        GuidanceBundle {
            conditions: self.conditions.iter().map(|(c, t)| (*c, t.item(b))).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut it = self.conditions.iter();
        let Some((_, first)) = it.next() else {
            return Err(Error::invalid("guidance bundle has no conditions"));
        };
        let size = (first.height(), first.width());
        for (c, t) in it {
            if (t.height(), t.width()) != size {
                return Err(Error::dim(format!(
                    "condition {c} is {}x{}, others are {}x{}",
                    t.height(),
                    t.width(),
                    size.0,
                    size.1
                )));
            }
        }
        Ok(())
    }
}

/// Sums condition outputs in canonical condition order, whatever the input order.
pub fn fuse(outputs: &[(Condition, Tensor4)]) -> Result<Tensor4> {
    let mut sorted: Vec<&(Condition, Tensor4)> = outputs.iter().collect();
    sorted.sort_by_key(|(c, _)| *c);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("fuse: each condition may appear once"));
    }
    let mut it = sorted.into_iter();
    let Some((_, first)) = it.next() else {
        return Err(Error::invalid("fuse: no condition outputs"));
    };
    let mut sum = first.clone();
    for (_, t) in it {
        sum.add_assign(t)?;
    }
    Ok(sum)
}

/// One guidance net per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceEncoder {
    pub config: GuidanceNetConfig,
    pub nets: BTreeMap<Condition, GuidanceNet>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub per_condition: Vec<(Condition, NetCache)>,
}

impl GuidanceEncoder {
    /// Nets are initialized in canonical condition order from `rng`.
    pub fn new<R: Rng + ?Sized>(config: &GuidanceNetConfig, conditions: &[Condition], rng: &mut R) -> Self {
        let mut wanted: Vec<Condition> = conditions.to_vec();
        wanted.sort();
        wanted.dedup();
        let nets = wanted.into_iter().map(|c| (c, GuidanceNet::new(config, rng))).collect();
        Self { config: config.clone(), nets }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            nets: self.nets.iter().map(|(c, n)| (*c, n.zeros_like())).collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels
    }

    pub fn encode(&self, bundle: &GuidanceBundle) -> Result<Tensor4> {
        self.encode_with_cache(bundle).map(|(y, _)| y)
    }

    pub fn encode_with_cache(&self, bundle: &GuidanceBundle) -> Result<(Tensor4, EncoderCache)> {
        bundle.validate()?;
        let mut outputs = Vec::with_capacity(bundle.conditions.len());
        let mut per_condition = Vec::with_capacity(bundle.conditions.len());
        for (cond, tensor) in &bundle.conditions {
            let net = self
                .nets
                .get(cond)
                .ok_or_else(|| Error::invalid(format!("no guidance net for condition {cond}")))?;
            let (y, cache) = net.encode_with_cache(tensor)?;
            outputs.push((*cond, y));
            per_condition.push((*cond, cache));
        }
        Ok((fuse(&outputs)?, EncoderCache { per_condition }))
    }

    /// Parameter gradients for `dL/dy = grad_y`; nets not used by the cached
    /// bundle get zero gradients.
    pub fn backward(&self, cache: &EncoderCache, grad_y: &Tensor4) -> Result<GuidanceEncoder> {
        let mut grads = self.zeros_like();
        for (cond, c) in &cache.per_condition {
            let (g, _) = self.nets[cond].backward(c, grad_y)?;
            grads.nets.insert(*cond, g);
        }
        Ok(grads)
    }
}

impl Parameters for GuidanceEncoder {
    fn visit(&self, f: &mut Visitor<'_>) {
        for (c, net) in &self.nets {
            net.visit(&mut |name, dims, v| f(&format!("{c}.{name}"), dims, v));
        }
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        for (c, net) in self.nets.iter_mut() {
            net.visit_mut(&mut |name, dims, v| f(&format!("{c}.{name}"), dims, v));
        }
    }
}

/// Box-averages an `H×W×3` image (row-major triples) down to `size×size`
/// as a `1×3×size×size` tensor.
fn downsample_rgb(pixels: &[[f64; 3]], width: usize, height: usize, size: usize) -> Tensor4 {
    let mut out = Tensor4::zeros([1, 3, size, size]);
    let mut counts = vec![0usize; size * size];
    for row in 0..height {
        let oy = row * size / height;
        for col in 0..width {
            let ox = col * size / width;
            let p = pixels[row * width + col];
            for ch in 0..3 {
                let off = out.offset(0, ch, oy, ox);
                out.data_mut()[off] += p[ch];
            }
            counts[oy * size + ox] += 1;
        }
    }
    for ch in 0..3 {
        for i in 0..size * size {
            let off = out.offset(0, ch, i / size, i % size);
            if counts[i] > 0 {
                out.data_mut()[off] /= counts[i] as f64;
            }
        }
    }
    out
}

/// Encoder inputs for one rendered frame: every condition as a 3-channel
/// image in [0, 1] (depth replicated, normals as `(n + 1) / 2`, labels
/// through the semantic palette), box-downsampled to `size×size`.
pub fn bundle_from_maps(maps: &GuidanceMaps, num_labels: usize, size: usize) -> Result<GuidanceBundle> {
    if size == 0 || size > maps.width || size > maps.height {
        return Err(Error::invalid(format!(
            "encoder input size {size} must be in 1..={}",
            maps.width.min(maps.height)
        )));
    }
    let (w, h) = (maps.width, maps.height);
    let depth: Vec<[f64; 3]> = normalized_depth(maps).into_iter().map(|d| [d; 3]).collect();
    let normal: Vec<[f64; 3]> = maps
        .normal
        .iter()
        .enumerate()
        .map(|(i, n)| if maps.is_foreground(i) { n.map(|c| 0.5 * (c + 1.0)) } else { [0.0; 3] })
        .collect();
    let palette = semantic_palette(num_labels);
    let semantic: Vec<[f64; 3]> = maps
        .semantic
        .iter()
        .map(|&s| {
            let c = palette.get(s as usize).copied().unwrap_or([255, 255, 255]);
            c.map(|x| x as f64 / 255.0)
        })
        .collect();
    Ok(GuidanceBundle::new()
        .with(Condition::Depth, downsample_rgb(&depth, w, h, size))
        .with(Condition::Normal, downsample_rgb(&normal, w, h, size))
        .with(Condition::Semantic, downsample_rgb(&semantic, w, h, size))
        .with(Condition::Skeleton, downsample_rgb(&maps.skeleton, w, h, size)))
}

/// Attention saliency as an 8-bit image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyImage {
    pub width: usize,
    pub height: usize,
    /// Column sums of the attention matrix: total attention each position receives.
    pub values: Vec<f64>,
    pub pixels: Vec<u8>,
}

/// Column sums of an `N×N` row-stochastic matrix reshaped to `height×width`,
/// min-max scaled to 0..=255. Constant maps become mid-gray 128.
pub fn saliency_image(attention: &[f64], height: usize, width: usize) -> Result<SaliencyImage> {
    let n = height * width;
    if attention.len() != n * n {
        return Err(Error::dim(format!(
            "attention has {} entries, expected ({n})^2",
            attention.len()
        )));
    }
    let mut values = vec![0.0; n];
    for row in attention.chunks(n) {
        for (v, a) in values.iter_mut().zip(row) {
            *v += a;
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        vec![128; n]
    } else {
        values.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
    };
    Ok(SaliencyImage { width, height, values, pixels })
}

/// Runs `net` on the first batch item of `condition` and writes its
/// attention saliency as a grayscale PNG.
pub fn dump_attention(net: &GuidanceNet, condition: &Tensor4, path: &Path) -> Result<SaliencyImage> {
    let (_, cache) = net.encode_with_cache(condition)?;
    let (h, w) = cache.feature_size();
    let img = saliency_image(cache.attention_weights(0), h, w)?;
    write_gray_png(path, w, h, &img.pixels)?;
    Ok(img)
}
