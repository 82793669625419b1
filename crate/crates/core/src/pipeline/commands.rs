use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::fixtures::{toy_motion, toy_reference_shape};
use super::motion_io::{read_motion, read_reference_shape, write_aligned, write_motion, write_reference_shape, ReferenceShape};
use super::{frame_stem, OutputLock, PipelineConfig, RenderConfig};
use crate::body_model::{evaluate_body, make_toy_body, read_body_model, write_body_model, BodyModel, ShapeParams};
use crate::checkpoint::Checkpoint;
use crate::diffusion::{run_toy_training, sample_from_noise, DenoiserConfig, ToyDenoiser, ToyTrainingConfig};
use crate::error::{Error, Result};
use crate::guidance_encoder::{
    bundle_from_maps, dump_attention, Condition, GuidanceBundle, GuidanceEncoder, GuidanceNetConfig, Tensor4,
};
use crate::rasterizer::export::{
    depth_u8, layer_dumps, maps_from_dumps, normal_rgb8, read_f32_dump, rgb8, write_f32_dump, write_gray_png,
    write_rgb_png, write_semantic_png, MapsMetadata,
};
use crate::rasterizer::{rasterize_mesh_with, render_skeleton, GuidanceMaps, PixelRect, RasterOptions, SkeletonStyle};
use crate::rng;
use crate::shape_alignment::{align_sequence, fit_camera_scale, AlignedSequence, MotionFrame, MotionSequence};
use crate::temporal::{aggregate, plan_windows};

const ENCODER_STREAM: u64 = u64::MAX - 1;
const DENOISER_STREAM: u64 = u64::MAX - 2;
const LAYERS: [&str; 4] = ["depth", "normal", "semantic", "skeleton"];

fn log_warnings(warnings: &[String]) {
    for w in warnings {
        warn!("{w}");
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameBox {
    pub frame: usize,
    /// Projected body extent; `None` when the body is behind the camera.
    pub bbox: Option<PixelRect>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignReport {
    pub output: PathBuf,
    pub frames: usize,
    /// Camera scale factor applied to fit the reference box, if one was given.
    pub camera_scale: Option<f64>,
    pub boxes: Vec<FrameBox>,
    pub warnings: Vec<String>,
}

fn check_model_dims(model: &BodyModel, shape: &ShapeParams, joints: usize, what: &Path) -> Result<()> {
    if shape.len() != model.num_shape {
        return Err(Error::dim(format!(
            "{}: {} shape coefficients, the body model has {}",
            what.display(),
            shape.len(),
            model.num_shape
        )));
    }
    if joints != model.num_joints() {
        return Err(Error::dim(format!(
            "{}: poses have {joints} joints, the body model has {}",
            what.display(),
            model.num_joints()
        )));
    }
    Ok(())
}

/// Replaces the motion's shape with the reference shape and, when the
/// reference file has a `bbox`, fits the cameras to it on the anchor frame.
pub fn cmd_align(cfg: &PipelineConfig) -> Result<AlignReport> {
    cfg.validate()?;
    let model = read_body_model(&cfg.body_model)?;
    let motion = read_motion(&cfg.motion)?;
    let reference = read_reference_shape(&cfg.reference_shape)?;
    let mut warnings = motion.warnings.clone();
    warnings.extend(reference.warnings.iter().cloned());
    log_warnings(&warnings);
    let (motion, reference) = (motion.value, reference.value);
    check_model_dims(&model, &reference.shape, motion.frames[0].pose.len(), &cfg.reference_shape)?;

    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let before = motion.frames.first().map_or(1.0, |f| f.camera.scale);
    let aligned = align_in_process(&model, &reference, &motion, cfg.align.anchor_frame)?;
    let camera_scale = reference.bbox.map(|_| aligned.frames[0].camera.scale / before);
    let boxes = aligned
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if let Err(e) = f.camera.validate() {
                warn!("frame {i}: degenerate camera ({e})");
                return Ok(FrameBox { frame: i, bbox: None });
            }
            let mesh = evaluate_body(&model, &aligned.shape, &f.pose)?;
            let bbox = PixelRect::of_projected(&f.camera, &mesh.vertices);
            match bbox {
                Some(b) => info!(
                    "frame {i}: bbox x {:.1}..{:.1} y {:.1}..{:.1} ({:.1} x {:.1} px)",
                    b.x0,
                    b.x1,
                    b.y0,
                    b.y1,
                    b.width(),
                    b.height()
                ),
                None => warn!("frame {i}: body is behind the camera"),
            }
            Ok(FrameBox { frame: i, bbox })
        })
        .collect::<Result<Vec<_>>>()?;
    let output = cfg.output_dir.join("aligned.json");
    write_aligned(&output, &aligned)?;
    info!("wrote {} aligned frames to {}", aligned.frames.len(), output.display());
    Ok(AlignReport { output, frames: aligned.frames.len(), camera_scale, boxes, warnings })
}

/// Depth, normal and semantic layers from the rasterizer plus the projected
/// skeleton. A camera that fails validation yields background-only maps.
pub fn render_guidance(
    model: &BodyModel,
    shape: &ShapeParams,
    frame: &MotionFrame,
    render: &RenderConfig,
) -> Result<(GuidanceMaps, Option<String>)> {
    let (w, h) = (render.width, render.height);
    if let Err(e) = frame.camera.validate() {
        return Ok((GuidanceMaps::background(w, h), Some(format!("degenerate camera ({e}); rendering background"))));
    }
    let mesh = evaluate_body(model, shape, &frame.pose)?;
    let opts = RasterOptions { backface_culling: render.backface_culling };
    let mut maps = rasterize_mesh_with(&mesh, &frame.camera, w, h, opts);
    let style = SkeletonStyle { line_width: render.line_width, joint_radius: render.joint_radius };
    maps.skeleton = render_skeleton(&mesh.joints, &model.bones(), &frame.camera, w, h, style);
    Ok((maps, None))
}

/// Writes the four PNG exports, four raw dumps and the sidecar of one frame.
pub fn write_frame_maps(dir: &Path, frame: usize, maps: &GuidanceMaps, num_labels: usize) -> Result<()> {
    let stem = frame_stem(frame);
    let p = |suffix: &str| dir.join(format!("{stem}_{suffix}"));
    let (w, h) = (maps.width, maps.height);
    write_gray_png(&p("depth.png"), w, h, &depth_u8(maps))?;
    write_rgb_png(&p("normal.png"), w, h, &normal_rgb8(maps))?;
    write_semantic_png(&p("semantic.png"), maps, num_labels)?;
    write_rgb_png(&p("skeleton.png"), w, h, &rgb8(&maps.skeleton))?;
    for (name, dims, data) in layer_dumps(maps) {
        write_f32_dump(&p(&format!("{name}.f32")), &dims, &data)?;
    }
    write_json(&dir.join(format!("{stem}.json")), &MapsMetadata::of(maps, num_labels))
}

fn frame_files(dir: &Path, frame: usize) -> Vec<PathBuf> {
    let stem = frame_stem(frame);
    let mut files: Vec<PathBuf> = LAYERS.iter().map(|l| dir.join(format!("{stem}_{l}.f32"))).collect();
    files.push(dir.join(format!("{stem}.json")));
    files
}

/// Reads the raw layers and sidecar written by [`write_frame_maps`].
pub fn read_frame_maps(dir: &Path, frame: usize) -> Result<(GuidanceMaps, MapsMetadata)> {
    let files = frame_files(dir, frame);
    let dump = |i: usize| read_f32_dump(&files[i]);
    let maps = maps_from_dumps(dump(0)?, dump(1)?, dump(2)?, dump(3)?)?;
    let text = fs::read_to_string(&files[4]).map_err(|e| Error::io(&files[4], e))?;
    let meta: MapsMetadata = serde_json::from_str(&text)
        .map_err(|e| Error::format(files[4].display().to_string(), e.to_string()))?;
    Ok((maps, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderReport {
    pub output_dir: PathBuf,
    pub frames: usize,
    pub foreground_pixels: Vec<usize>,
    pub degenerate_frames: Vec<usize>,
}

/// Renders every aligned frame in parallel.
pub fn cmd_render(cfg: &PipelineConfig) -> Result<RenderReport> {
    cfg.validate()?;
    let model = read_body_model(&cfg.body_model)?;
    let aligned_path = cfg.aligned_path();
    let motion = read_motion(&aligned_path)?;
    log_warnings(&motion.warnings);
    let motion = motion.value;
    check_model_dims(&model, &motion.source_shape, motion.frames[0].pose.len(), &aligned_path)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let dir = cfg.maps_dir();
    create_dir(&dir)?;
    let results = motion
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let (maps, warning) = render_guidance(&model, &motion.source_shape, frame, &cfg.render)?;
            write_frame_maps(&dir, i, &maps, model.num_labels)?;
            Ok((maps.foreground_count(), warning))
        })
        .collect::<Vec<Result<_>>>();
    let mut foreground_pixels = Vec::with_capacity(results.len());
    let mut degenerate_frames = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (fg, warning) = r?;
        if let Some(w) = warning {
            warn!("frame {i}: {w}");
            degenerate_frames.push(i);
        }
        foreground_pixels.push(fg);
    }
    info!("rendered {} frames into {}", motion.frames.len(), dir.display());
    Ok(RenderReport { output_dir: dir, frames: motion.frames.len(), foreground_pixels, degenerate_frames })
}

fn encoder_config(cfg: &PipelineConfig) -> GuidanceNetConfig {
    GuidanceNetConfig::with_widths(3, &cfg.encoder.widths, cfg.denoiser.latent_channels)
}

/// Latent spatial size implied by the encoder's downsampling.
pub fn latent_size(cfg: &PipelineConfig) -> Result<usize> {
    let (h, w) = encoder_config(cfg).output_size(cfg.encoder.input_size, cfg.encoder.input_size)?;
    debug_assert_eq!(h, w);
    Ok(h)
}

/// Guidance encoder and denoiser, freshly initialized from the seed and then
/// overwritten by any matching checkpoint sections.
pub fn load_models(cfg: &PipelineConfig) -> Result<(GuidanceEncoder, ToyDenoiser)> {
    let mut encoder =
        GuidanceEncoder::new(&encoder_config(cfg), &cfg.encoder.conditions, &mut rng::stream(cfg.seed, ENCODER_STREAM));
    let dcfg = DenoiserConfig {
        latent_channels: cfg.denoiser.latent_channels,
        hidden: cfg.denoiser.hidden,
        embed_dim: 4,
        fusion: cfg.denoiser.fusion,
        timesteps: cfg.diffusion.timesteps,
    };
    let mut denoiser = ToyDenoiser::new(&dcfg, &mut rng::stream(cfg.seed, DENOISER_STREAM))?;
    if let Some(path) = &cfg.checkpoint {
        let ck = Checkpoint::load(path)?;
        for (cond, net) in encoder.nets.iter_mut() {
            match ck.section(&format!("encoder.{cond}")) {
                Ok(s) => s.restore(net)?,
                Err(_) => warn!("{}: no weights for the {cond} net; using a fresh one", path.display()),
            }
        }
        match ck.section("denoiser") {
            Ok(s) => s.restore(&mut denoiser)?,
            Err(_) => warn!("{}: no denoiser weights; using a fresh denoiser", path.display()),
        }
    }
    Ok((encoder, denoiser))
}

fn frame_count(cfg: &PipelineConfig) -> Result<usize> {
    let motion = read_motion(&cfg.aligned_path())?;
    log_warnings(&motion.warnings);
    Ok(motion.value.frames.len())
}

fn load_bundles(cfg: &PipelineConfig, frames: &[usize]) -> Result<Vec<GuidanceBundle>> {
    let dir = cfg.maps_dir();
    let missing: Vec<usize> =
        frames.iter().copied().filter(|&f| frame_files(&dir, f).iter().any(|p| !p.exists())).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "guidance maps missing in {} for frames {missing:?}; run render first",
            dir.display()
        )));
    }
    frames
        .par_iter()
        .map(|&f| {
            let (maps, meta) = read_frame_maps(&dir, f)?;
            let mut bundle = bundle_from_maps(&maps, meta.num_labels, cfg.encoder.input_size)?;
            bundle.conditions.retain(|c, _| cfg.encoder.conditions.contains(c));
            Ok(bundle)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnimateReport {
    pub output_dir: PathBuf,
    pub frames: usize,
    pub windows: Vec<(usize, usize)>,
    /// `[C, H, W]` of every exported latent.
    pub latent_shape: [usize; 3],
    pub guidance: bool,
    /// Whether the guided and unguided samples matched bitwise, when checked.
    pub self_check: Option<bool>,
}

fn sample_windows(
    cfg: &PipelineConfig,
    denoiser: &ToyDenoiser,
    guidance: &[Option<Tensor4>],
    plan: &crate::temporal::WindowPlan,
    shape: [usize; 4],
) -> Result<Vec<Vec<f64>>> {
    let sched = cfg.diffusion.schedule()?;
    let outputs = plan
        .windows
        .par_iter()
        .enumerate()
        .map(|(w, &(s, e))| {
            (s..e)
                .map(|f| {
                    let mut r = rng::stream(cfg.seed, ((w as u64) << 32) | (f - s) as u64);
                    let z = sample_from_noise(
                        denoiser,
                        guidance[f].as_ref(),
                        &sched,
                        cfg.animate.sampler_steps,
                        shape,
                        &mut r,
                    )?;
                    Ok(z.into_data())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(plan, &outputs, cfg.animate.blend)
}

fn latent_png(data: &[f64], c: usize, h: usize, w: usize) -> Vec<u8> {
    let mut img = vec![0u8; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = data[(ch * h + y) * w + x];
                img[y * c * w + ch * w + x] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

/// Samples every frame window by window and blends overlapping windows.
///
/// Frame `f` at position `k` of window `w` starts from noise drawn from
/// stream `(w << 32) | k` of the seed, so reruns are byte-identical.
pub fn cmd_animate(cfg: &PipelineConfig) -> Result<AnimateReport> {
    cfg.validate()?;
    let n = frame_count(cfg)?;
    let plan = plan_windows(n, cfg.animate.window, cfg.animate.stride)?;
    for (i, (s, e)) in plan.windows.iter().enumerate() {
        info!("window {i}: frames ({s}, {e})");
    }
    let frames: Vec<usize> = (0..n).collect();
    let bundles = load_bundles(cfg, &frames)?;
    let (encoder, denoiser) = load_models(cfg)?;
    let size = latent_size(cfg)?;
    let c = cfg.denoiser.latent_channels;
    let shape = [1, c, size, size];

    let unguided = vec![None; n];
    let guided: Vec<Option<Tensor4>> = if cfg.animate.guidance {
        bundles.par_iter().map(|b| encoder.encode(b).map(Some)).collect::<Result<_>>()?
    } else {
        unguided.clone()
    };
    let latents = sample_windows(cfg, &denoiser, &guided, &plan, shape)?;

    let self_check = if cfg.animate.self_check {
        let reference = sample_windows(cfg, &denoiser, &unguided, &plan, shape)?;
        let same = latents.iter().flatten().map(|x| x.to_bits()).eq(reference.iter().flatten().map(|x| x.to_bits()));
        let zero_init = encoder.nets.values().all(|net| {
            net.out_layer.weight.iter().chain(&net.out_layer.bias).all(|&x| x == 0.0)
        });
        if zero_init && !same {
            return Err(Error::Numeric("self-check failed: zero-initialized guidance changed the samples".into()));
        }
        info!("self-check: guided and unguided samples {}", if same { "match bitwise" } else { "differ" });
        Some(same)
    } else {
        None
    };

    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let dir = cfg.output_dir.join("animate");
    create_dir(&dir)?;
    for (f, z) in latents.iter().enumerate() {
        let stem = frame_stem(f);
        let data: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        write_f32_dump(&dir.join(format!("{stem}.f32")), &[c, size, size], &data)?;
        write_gray_png(&dir.join(format!("{stem}.png")), c * size, size, &latent_png(z, c, size, size))?;
    }
    Ok(AnimateReport {
        output_dir: dir,
        frames: n,
        windows: plan.windows,
        latent_shape: [c, size, size],
        guidance: cfg.animate.guidance,
        self_check,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttnImage {
    pub frame: usize,
    pub condition: Condition,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttnReport {
    pub images: Vec<AttnImage>,
}

/// One saliency image per requested condition and frame.
pub fn cmd_attn(cfg: &PipelineConfig) -> Result<AttnReport> {
    cfg.validate()?;
    let conditions: Vec<Condition> = if cfg.attn.conditions.is_empty() {
        cfg.encoder.conditions.clone()
    } else {
        cfg.attn.conditions.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    if let Some(c) = conditions.iter().find(|c| !cfg.encoder.conditions.contains(c)) {
        return Err(Error::invalid(format!("condition {c} is not among the configured encoder conditions")));
    }
    let bundles = load_bundles(cfg, &cfg.attn.frames)?;
    let (encoder, _) = load_models(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let dir = cfg.output_dir.join("attn");
    create_dir(&dir)?;
    let mut images = Vec::new();
    for (&frame, bundle) in cfg.attn.frames.iter().zip(&bundles) {
        for &cond in &conditions {
            let path = dir.join(format!("{}_{cond}.png", frame_stem(frame)));
            dump_attention(&encoder.nets[&cond], &bundle.conditions[&cond], &path)?;
            images.push(AttnImage { frame, condition: cond, path });
        }
    }
    info!("wrote {} saliency images to {}", images.len(), dir.display());
    Ok(AttnReport { images })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyBodyReport {
    pub body_model: PathBuf,
    pub motion: PathBuf,
    pub reference_shape: PathBuf,
    pub vertices: usize,
    pub joints: usize,
    pub faces: usize,
    pub frames: usize,
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Writes a procedural body model, a motion fixture and a reference shape to
/// the configured paths.
pub fn cmd_make_toy_body(cfg: &PipelineConfig) -> Result<ToyBodyReport> {
    cfg.validate()?;
    let model = make_toy_body(&cfg.toy_body.body)?;
    for p in [&cfg.body_model, &cfg.motion, &cfg.reference_shape] {
        ensure_parent(p)?;
    }
    write_body_model(&model, &cfg.body_model)?;
    let motion = toy_motion(&model, cfg.toy_body.frames, cfg.render.width, cfg.render.height, cfg.seed);
    write_motion(&cfg.motion, &motion)?;
    let reference = ReferenceShape { shape: toy_reference_shape(&model, cfg.seed), bbox: None };
    write_reference_shape(&cfg.reference_shape, &reference)?;
    info!(
        "toy body: {} vertices, {} joints, {} faces; {} motion frames",
        model.num_vertices(),
        model.num_joints(),
        model.faces.len(),
        motion.frames.len()
    );
    Ok(ToyBodyReport {
        body_model: cfg.body_model.clone(),
        motion: cfg.motion.clone(),
        reference_shape: cfg.reference_shape.clone(),
        vertices: model.num_vertices(),
        joints: model.num_joints(),
        faces: model.faces.len(),
        frames: motion.frames.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Trains the depth guidance net and the denoiser on synthetic shapes and
/// saves both to the checkpoint path.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut diffusion = cfg.diffusion.clone();
    diffusion.seed = cfg.seed;
    let tcfg = ToyTrainingConfig {
        diffusion,
        latent_size: latent_size(cfg)?,
        guidance_size: cfg.encoder.input_size,
        latent_channels: cfg.denoiser.latent_channels,
        hidden: cfg.denoiser.hidden,
        encoder_widths: cfg.encoder.widths.clone(),
        fusion: cfg.denoiser.fusion,
        dataset_seed: cfg.seed,
        ..ToyTrainingConfig::default()
    };
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let run = run_toy_training(&tcfg)?;
    let steps = run.losses.len();
    let window = (steps / 10).max(1).min(steps);
    let (first_loss, last_loss) =
        if steps == 0 { (f64::NAN, f64::NAN) } else { (run.mean_loss(0..window), run.mean_loss(steps - window..steps)) };
    info!("trained {steps} steps: mean loss {first_loss:.4} -> {last_loss:.4}");
    let path = cfg.checkpoint_path();
    ensure_parent(&path)?;
    Checkpoint::new()
        .with("encoder.depth", &run.encoder.nets[&Condition::Depth])
        .with("denoiser", &run.denoiser)
        .save(&path)?;
    Ok(TrainReport { checkpoint: path, steps, first_loss, last_loss })
}

/// The aligned sequence exactly as `cmd_align` would compute it in-process.
pub fn align_in_process(
    model: &BodyModel,
    reference: &ReferenceShape,
    motion: &MotionSequence,
    anchor_frame: usize,
) -> Result<AlignedSequence> {
    let aligned = align_sequence(&reference.shape, motion)?;
    match reference.bbox {
        Some(b) => fit_camera_scale(b, &aligned, model, anchor_frame),
        None => Ok(aligned),
    }
}
