use rand::Rng;

use super::attention::{AttentionCache, SelfAttention};
use super::conv::{silu, silu_backward, Conv2d};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::params::{Parameters, Visitor, VisitorMut};

/// One convolution of the feature stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GuidanceNetConfig {
    pub in_channels: usize,
    pub convs: Vec<ConvSpec>,
    /// Channels of the fused guidance feature; must equal the latent channels.
    pub out_channels: usize,
}

impl GuidanceNetConfig {
    /// conv(3→16, k3 s1 p1) → SiLU → conv(16→32, k3 s2 p1) → SiLU →
    /// attention(32) → zero 1×1 conv(32→out).
    pub fn toy(out_channels: usize) -> Self {
        Self::with_widths(3, &[16, 32], out_channels)
    }

    /// First conv keeps resolution, later convs halve it.
    pub fn with_widths(in_channels: usize, widths: &[usize], out_channels: usize) -> Self {
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvSpec {
                out_channels: c,
                kernel: 3,
                stride: if i == 0 { 1 } else { 2 },
                padding: 1,
            })
            .collect();
        Self { in_channels, convs, out_channels }
    }

    pub fn feature_channels(&self) -> usize {
        self.convs.last().map_or(self.in_channels, |c| c.out_channels)
    }

    /// Spatial size of the fused feature for an `h × w` condition.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.convs.iter().try_fold((h, w), |(h, w), c| {
            Conv2d::zeros(0, 0, c.kernel, c.stride, c.padding).output_size(h, w)
        })
    }
}

/// Per-condition encoder: conv stack with SiLU, spatial self-attention, and a
/// zero-initialized 1×1 output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceNet {
    pub convs: Vec<Conv2d>,
    pub attention: SelfAttention,
    pub out_layer: Conv2d,
}

/// Forward intermediates.
#[derive(Debug, Clone)]
pub struct NetCache {
    conv_inputs: Vec<Tensor4>,
    pre_activations: Vec<Tensor4>,
    attention: AttentionCache,
    attended: Tensor4,
}

impl NetCache {
    /// `N × N` attention weights of batch item `b`.
    pub fn attention_weights(&self, b: usize) -> &[f64] {
        &self.attention.attention[b]
    }

    /// Spatial size of the attended feature map.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.attended.height(), self.attended.width())
    }
}

impl GuidanceNet {
    /// Random conv and attention weights with zero conv biases, so an empty
    /// (all-zero) condition attends uniformly. The output layer starts at
    /// exactly zero.
    pub fn new<R: Rng + ?Sized>(config: &GuidanceNetConfig, rng: &mut R) -> Self {
        let mut c_in = config.in_channels;
        let mut convs = Vec::with_capacity(config.convs.len());
        for spec in &config.convs {
            let mut conv = Conv2d::random(c_in, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng);
            conv.bias.fill(0.0);
            convs.push(conv);
            c_in = spec.out_channels;
        }
        Self {
            convs,
            attention: SelfAttention::random(c_in, rng),
            out_layer: Conv2d::zeros(c_in, config.out_channels, 1, 1, 0),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().map_or(self.attention.channels, |c| c.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.out_layer.out_channels
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, _, v| v.fill(0.0));
        z
    }

    /// Confirms the layer shapes chain and match `config`.
    pub fn check_config(&self, config: &GuidanceNetConfig) -> Result<()> {
        let mut c_in = config.in_channels;
        if self.convs.len() != config.convs.len() {
            return Err(Error::dim(format!(
                "net has {} convs, config has {}",
                self.convs.len(),
                config.convs.len()
            )));
        }
        for (i, (layer, spec)) in self.convs.iter().zip(&config.convs).enumerate() {
            let got = (layer.in_channels, layer.out_channels, layer.kernel, layer.stride, layer.padding);
            let want = (c_in, spec.out_channels, spec.kernel, spec.stride, spec.padding);
            if got != want {
                return Err(Error::dim(format!("conv {i} is {got:?}, config wants {want:?}")));
            }
            c_in = spec.out_channels;
        }
        if self.attention.channels != c_in
            || self.out_layer.in_channels != c_in
            || self.out_layer.out_channels != config.out_channels
            || self.out_layer.kernel != 1
        {
            return Err(Error::dim("attention/output layer shapes do not match the config"));
        }
        Ok(())
    }

    pub fn encode(&self, condition: &Tensor4) -> Result<Tensor4> {
        self.encode_with_cache(condition).map(|(y, _)| y)
    }

    pub fn encode_with_cache(&self, condition: &Tensor4) -> Result<(Tensor4, NetCache)> {
        if condition.channels() != self.in_channels() {
            return Err(Error::dim(format!(
                "guidance net expects {} input channels, got {}",
                self.in_channels(),
                condition.channels()
            )));
        }
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut pre_activations = Vec::with_capacity(self.convs.len());
        let mut h = condition.clone();
        for conv in &self.convs {
            let pre = conv.forward(&h)?;
            conv_inputs.push(h);
            h = pre.map(silu);
            pre_activations.push(pre);
        }
        let (attended, attention) = self.attention.forward(&h)?;
        let y = self.out_layer.forward(&attended)?;
        Ok((y, NetCache { conv_inputs, pre_activations, attention, attended }))
    }

    /// Parameter gradients and the gradient with respect to the condition.
    pub fn backward(&self, cache: &NetCache, grad_out: &Tensor4) -> Result<(GuidanceNet, Tensor4)> {
        let (g_att, out_grads) = self.out_layer.backward(&cache.attended, grad_out)?;
        let (mut g, att_grads) = self.attention.backward(&cache.attention, &g_att)?;
        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let g_pre = silu_backward(&cache.pre_activations[i], &g);
            let (g_in, cg) = conv.backward(&cache.conv_inputs[i], &g_pre)?;
            conv_grads.push(cg);
            g = g_in;
        }
        conv_grads.reverse();
        Ok((GuidanceNet { convs: conv_grads, attention: att_grads, out_layer: out_grads }, g))
    }
}

impl Parameters for GuidanceNet {
    fn visit(&self, f: &mut Visitor<'_>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&mut |name, dims, v| f(&format!("conv{i}.{name}"), dims, v));
        }
        self.attention.visit(&mut |name, dims, v| f(&format!("attention.{name}"), dims, v));
        self.out_layer.visit(&mut |name, dims, v| f(&format!("out.{name}"), dims, v));
    }

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&mut |name, dims, v| f(&format!("conv{i}.{name}"), dims, v));
        }
        self.attention.visit_mut(&mut |name, dims, v| f(&format!("attention.{name}"), dims, v));
        self.out_layer.visit_mut(&mut |name, dims, v| f(&format!("out.{name}"), dims, v));
    }
}
