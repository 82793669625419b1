//! The `bodyguide` binary against in-process library calls on the same inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bodyguide::body_model::read_body_model;
use bodyguide::guidance_encoder::{bundle_from_maps, dump_attention, Condition};
use bodyguide::pipeline::motion_io::{read_motion, read_reference_shape, write_reference_shape, ReferenceShape};
use bodyguide::pipeline::{align_in_process, load_models, read_frame_maps, PipelineConfig};
use bodyguide::rasterizer::export::{read_f32_dump, read_png};
use bodyguide::rasterizer::{rasterize_mesh_with, GuidanceMaps, RasterOptions};
use bodyguide::shape_alignment::MotionFrame;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_bodyguide"))
            .current_dir(&self.root)
            .args(["--width", "48", "--height", "48"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// The configuration the binary builds from the flags used by [`Self::run`].
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            body_model: self.path("body.bin"),
            motion: self.path("motion.json"),
            reference_shape: self.path("shape.json"),
            output_dir: self.path("out"),
            ..Default::default()
        };
        cfg.render.width = 48;
        cfg.render.height = 48;
        cfg
    }
}

fn bundle_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn align_matches_library() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "3"]);
    let out = ws.ok(&["align", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["frames"], 3);

    let model = read_body_model(&ws.path("body.bin")).unwrap();
    let motion = read_motion(&ws.path("motion.json")).unwrap().value;
    let reference = read_reference_shape(&ws.path("shape.json")).unwrap().value;
    let expected = align_in_process(&model, &reference, &motion, 0).unwrap();
    let written = read_motion(&ws.path("out/aligned.json")).unwrap().value;
    assert_eq!(written.frames, expected.frames);
    assert_eq!(written.source_shape, reference.shape);
}

#[test]
fn align_with_source_shape_keeps_poses_and_fits_box() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "4"]);
    let motion = read_motion(&ws.path("motion.json")).unwrap().value;
    let same = ReferenceShape { shape: motion.source_shape.clone(), bbox: None };
    write_reference_shape(&ws.path("same.json"), &same).unwrap();
    ws.ok(&["align", "--shape", "same.json"]);
    let written = read_motion(&ws.path("out/aligned.json")).unwrap().value;
    assert_eq!(written, motion);

    let boxed = ReferenceShape {
        shape: motion.source_shape.clone(),
        bbox: Some(bodyguide::rasterizer::PixelRect { x0: 10.0, y0: 4.0, x1: 38.0, y1: 44.0 }),
    };
    write_reference_shape(&ws.path("boxed.json"), &boxed).unwrap();
    let out = ws.ok(&["align", "--shape", "boxed.json", "--anchor", "2", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = &report["boxes"][2]["bbox"];
    let height = b["y1"].as_f64().unwrap() - b["y0"].as_f64().unwrap();
    assert!((height - 40.0).abs() < 1.0, "{height}");
    assert!(report["camera_scale"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_shape_file_names_the_path() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body"]);
    let out = ws.run(&["align", "--shape", "nope.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn validation_errors_exit_with_two() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.toml"), "[render]\nwidht = 3\n").unwrap();
    let out = ws.run(&["--config", "bad.toml", "render", "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["error"].as_str().unwrap().contains("widht"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let ws = Workspace::new();
    fs::write(ws.path("c.toml"), "output_dir = \"from_config\"\n[toy_body]\nframes = 2\n").unwrap();
    ws.ok(&["--config", "c.toml", "make-toy-body"]);
    ws.ok(&["--config", "c.toml", "align"]);
    assert!(ws.path("from_config/aligned.json").exists());
    ws.ok(&["--config", "c.toml", "--out", "flag_out", "align"]);
    assert!(ws.path("flag_out/aligned.json").exists());
}

#[test]
fn render_writes_layers_and_matches_library() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "1", "--labels", "4"]);
    ws.ok(&["align"]);
    ws.ok(&["render"]);
    let maps = ws.path("out/maps");
    for layer in ["depth", "normal", "semantic", "skeleton"] {
        assert!(maps.join(format!("frame_00000_{layer}.png")).exists(), "{layer} png");
        assert!(maps.join(format!("frame_00000_{layer}.f32")).exists(), "{layer} dump");
    }
    assert!(maps.join("frame_00000.json").exists());
    let semantic = read_png(&maps.join("frame_00000_semantic.png")).unwrap();
    assert!(semantic.data.iter().all(|&i| i <= 4));
    assert!(semantic.data.iter().any(|&i| i > 0));

    let model = read_body_model(&ws.path("body.bin")).unwrap();
    let aligned = read_motion(&ws.path("out/aligned.json")).unwrap().value;
    let MotionFrame { pose, camera } = &aligned.frames[0];
    let mesh = bodyguide::body_model::evaluate_body(&model, &aligned.source_shape, pose).unwrap();
    let direct = rasterize_mesh_with(&mesh, camera, 48, 48, RasterOptions::default());
    let (from_disk, meta) = read_frame_maps(&maps, 0).unwrap();
    assert_eq!(meta.num_labels, 4);
    assert_eq!(from_disk.semantic, direct.semantic);
    let as_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    assert_eq!(as_f32(&from_disk.depth), as_f32(&direct.depth));
    let (dims, raw) = read_f32_dump(&maps.join("frame_00000_depth.f32")).unwrap();
    assert_eq!(dims, vec![48, 48]);
    assert_eq!(raw, as_f32(&direct.depth));

    let first = bundle_dir(&maps);
    ws.ok(&["render"]);
    assert_eq!(bundle_dir(&maps), first, "rerender is not byte-identical");
}

#[test]
fn animate_plans_windows_and_is_deterministic() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "40"]);
    ws.ok(&["align"]);
    ws.ok(&["render"]);
    let out = ws.ok(&["animate", "--steps", "4", "--self-check", "--json"]);
    let log = String::from_utf8_lossy(&out.stderr);
    for w in ["(0, 24)", "(12, 36)", "(16, 40)"] {
        assert!(log.contains(w), "window {w} not logged:\n{log}");
    }
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["self_check"], true);
    let first = bundle_dir(&ws.path("out/animate"));
    assert_eq!(first.len(), 80);
    ws.ok(&["animate", "--steps", "4"]);
    assert_eq!(bundle_dir(&ws.path("out/animate")), first);
    ws.ok(&["animate", "--steps", "4", "--seed", "1"]);
    assert_ne!(bundle_dir(&ws.path("out/animate")), first);
}

#[test]
fn animate_reports_missing_frames() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "3"]);
    ws.ok(&["align"]);
    ws.ok(&["render"]);
    fs::remove_file(ws.path("out/maps/frame_00001_normal.f32")).unwrap();
    let out = ws.run(&["animate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[1]"));
}

#[test]
fn attn_constant_maps_are_mid_gray() {
    let ws = Workspace::new();
    let cfg = ws.config();
    fs::create_dir_all(cfg.maps_dir()).unwrap();
    bodyguide::pipeline::write_frame_maps(&cfg.maps_dir(), 0, &GuidanceMaps::background(48, 48), 3).unwrap();
    ws.ok(&["attn"]);
    for cond in Condition::ALL {
        let img = read_png(&ws.path(&format!("out/attn/frame_00000_{cond}.png"))).unwrap();
        assert!(img.data.iter().all(|&p| p == 128), "{cond}: {:?}", &img.data[..4]);
    }
    let out = ws.run(&["attn", "--condition", "albedo"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("depth, normal, semantic, skeleton"), "{err}");
}

#[test]
fn trained_checkpoint_attention_matches_library() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body", "--frames", "2"]);
    ws.ok(&["align"]);
    ws.ok(&["render"]);
    let out = ws.ok(&["train", "--steps", "20", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps"], 20);
    ws.ok(&["attn", "--checkpoint", "out/checkpoint.bin", "--frame", "1", "--condition", "depth"]);

    let mut cfg = ws.config();
    cfg.checkpoint = Some(ws.path("out/checkpoint.bin"));
    let (encoder, _) = load_models(&cfg).unwrap();
    let (maps, meta) = read_frame_maps(&cfg.maps_dir(), 1).unwrap();
    let bundle = bundle_from_maps(&maps, meta.num_labels, cfg.encoder.input_size).unwrap();
    let direct = ws.path("direct.png");
    dump_attention(&encoder.nets[&Condition::Depth], &bundle.conditions[&Condition::Depth], &direct).unwrap();
    assert_eq!(fs::read(direct).unwrap(), fs::read(ws.path("out/attn/frame_00001_depth.png")).unwrap());
}

#[test]
fn held_lock_rejects_a_second_run() {
    let ws = Workspace::new();
    ws.ok(&["make-toy-body"]);
    let _lock = bodyguide::pipeline::OutputLock::acquire(&ws.path("out")).unwrap();
    let out = ws.run(&["align"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
}
