//! End-to-end driver: configuration, file layout and the commands behind the
//! `bodyguide` binary.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/aligned.json                    aligned motion
//! <out>/maps/frame_NNNNN_<layer>.png    depth, normal, semantic, skeleton
//! <out>/maps/frame_NNNNN_<layer>.f32    raw layers (CHMPMAPS)
//! <out>/maps/frame_NNNNN.json           normalization sidecar
//! <out>/animate/frame_NNNNN.{png,f32}   sampled latents
//! <out>/attn/frame_NNNNN_<cond>.png     attention saliency
//! <out>/checkpoint.bin                  trained weights (CHMPNETS)
//! ```

mod commands;
mod fixtures;
pub mod motion_io;

pub use commands::{
    align_in_process, cmd_align, cmd_animate, cmd_attn, cmd_make_toy_body, cmd_render, cmd_train, latent_size,
    load_models, read_frame_maps, render_guidance, write_frame_maps, AlignReport, AnimateReport, AttnImage,
    AttnReport, FrameBox, RenderReport, ToyBodyReport, TrainReport,
};
pub use fixtures::{toy_motion, toy_reference_shape};

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::body_model::ToyBodyConfig;
use crate::diffusion::{DiffusionConfig, Fusion};
use crate::error::{Error, Result};
use crate::guidance_encoder::Condition;
use crate::temporal::{Blend, DEFAULT_STRIDE, DEFAULT_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub line_width: f64,
    pub joint_radius: f64,
    pub backface_culling: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 256, height: 256, line_width: 3.0, joint_radius: 4.0, backface_culling: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    /// Frame whose bounding box is matched when the reference shape file
    /// carries a target box.
    pub anchor_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    /// Guidance maps are box-downsampled to `input_size × input_size`.
    pub input_size: usize,
    pub widths: Vec<usize>,
    pub conditions: Vec<Condition>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { input_size: 16, widths: vec![16, 32], conditions: Condition::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSettings {
    pub latent_channels: usize,
    pub hidden: usize,
    pub fusion: Fusion,
}

impl Default for DenoiserSettings {
    fn default() -> Self {
        Self { latent_channels: 4, hidden: 32, fusion: Fusion::Add }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnimateSettings {
    pub window: usize,
    pub stride: usize,
    pub blend: Blend,
    pub sampler_steps: usize,
    /// `false` runs the denoiser with no guidance input at all.
    pub guidance: bool,
    /// Also sample without guidance and require identical output when the
    /// guidance nets still have zero output layers.
    pub self_check: bool,
}

impl Default for AnimateSettings {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            blend: Blend::Triangular,
            sampler_steps: 20,
            guidance: true,
            self_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnSettings {
    pub frames: Vec<usize>,
    /// Condition names; empty means every configured condition.
    pub conditions: Vec<String>,
}

impl Default for AttnSettings {
    fn default() -> Self {
        Self { frames: vec![0], conditions: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBodySettings {
    pub body: ToyBodyConfig,
    /// Frames in the generated motion fixture.
    pub frames: usize,
}

impl Default for ToyBodySettings {
    fn default() -> Self {
        Self { body: ToyBodyConfig::default(), frames: 3 }
    }
}

/// Everything a pipeline command needs. Read from TOML; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub body_model: PathBuf,
    pub motion: PathBuf,
    pub reference_shape: PathBuf,
    pub output_dir: PathBuf,
    /// Aligned motion read by `render`; defaults to `<out>/aligned.json`.
    pub aligned_motion: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub align: AlignSettings,
    pub render: RenderConfig,
    pub encoder: EncoderSettings,
    pub denoiser: DenoiserSettings,
    pub diffusion: DiffusionConfig,
    pub animate: AnimateSettings,
    pub attn: AttnSettings,
    pub toy_body: ToyBodySettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            body_model: "body.bin".into(),
            motion: "motion.json".into(),
            reference_shape: "shape.json".into(),
            output_dir: "out".into(),
            aligned_motion: None,
            checkpoint: None,
            seed: 0,
            align: AlignSettings::default(),
            render: RenderConfig::default(),
            encoder: EncoderSettings::default(),
            denoiser: DenoiserSettings::default(),
            diffusion: DiffusionConfig::default(),
            animate: AnimateSettings::default(),
            attn: AttnSettings::default(),
            toy_body: ToyBodySettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path, file: &str) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::format(file.to_string(), e.message().to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.body_model);
        rebase(&mut cfg.motion);
        rebase(&mut cfg.reference_shape);
        rebase(&mut cfg.output_dir);
        if let Some(p) = cfg.aligned_motion.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.checkpoint.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.render.width == 0 || self.render.height == 0 {
            return Err(Error::invalid("render size must be positive"));
        }
        if self.encoder.input_size == 0 || self.encoder.widths.is_empty() {
            return Err(Error::invalid("encoder needs a positive input size and at least one conv"));
        }
        if self.encoder.conditions.is_empty() {
            return Err(Error::invalid("at least one guidance condition is required"));
        }
        Ok(())
    }

    pub fn aligned_path(&self) -> PathBuf {
        self.aligned_motion.clone().unwrap_or_else(|| self.output_dir.join("aligned.json"))
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.output_dir.join("maps")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.output_dir.join("checkpoint.bin"))
    }
}

pub fn frame_stem(frame: usize) -> String {
    format!("frame_{frame:05}")
}

/// Exclusive ownership of an output directory for the lifetime of the value.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
    _file: File,
}

pub const LOCK_FILE: &str = ".bodyguide.lock";

impl OutputLock {
    /// Creates `dir` if needed and claims it; fails if another run holds it.
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => Ok(Self { path, _file: file }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(
                    e.kind(),
                    "output directory is in use by another run (delete the lock file if it is stale)",
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_rebase() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back = PipelineConfig::from_toml(&text, Path::new("/base"), "cfg.toml").unwrap();
        assert_eq!(back.body_model, PathBuf::from("/base/body.bin"));
        assert_eq!(back.render, cfg.render);
        assert_eq!(back.animate, cfg.animate);
    }

    #[test]
    fn toml_keys() {
        let text = r#"
            seed = 9
            output_dir = "/tmp/x"
            [render]
            width = 64
            [diffusion]
            T = 50
            [encoder]
            conditions = ["depth", "skeleton"]
            [animate]
            blend = "uniform"
        "#;
        let cfg = PipelineConfig::from_toml(text, Path::new("."), "c.toml").unwrap();
        assert_eq!((cfg.seed, cfg.render.width, cfg.render.height), (9, 64, 256));
        assert_eq!(cfg.diffusion.timesteps, 50);
        assert_eq!(cfg.encoder.conditions, vec![Condition::Depth, Condition::Skeleton]);
        assert_eq!(cfg.animate.blend, Blend::Uniform);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));

        let err = PipelineConfig::from_toml("[render]\nwidht = 3\n", Path::new("."), "c.toml").unwrap_err();
        assert!(err.to_string().contains("widht"), "{err}");
        let err = PipelineConfig::from_toml("[encoder]\nconditions = [\"albedo\"]\n", Path::new("."), "c.toml");
        assert!(err.is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Io { .. })));
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }
}
