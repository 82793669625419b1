use std::path::PathBuf;
use std::process::ExitCode;

use bodyguide::pipeline::{self, PipelineConfig};
use bodyguide::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Body-conditioned guidance toolkit: align motions, render guidance maps,
/// sample toy latents and inspect guidance attention.
#[derive(Debug, Parser)]
#[command(name = "bodyguide", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More log output (-v debug, -vv trace).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Body model file.
    #[arg(long, global = true)]
    body: Option<PathBuf>,
    /// Driving motion JSON.
    #[arg(long, global = true)]
    motion: Option<PathBuf>,
    /// Reference shape JSON.
    #[arg(long, global = true)]
    shape: Option<PathBuf>,
    #[arg(long, global = true)]
    width: Option<usize>,
    #[arg(long, global = true)]
    height: Option<usize>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Put the reference shape on the driving motion.
    Align {
        /// Frame matched against the reference bounding box.
        #[arg(long)]
        anchor: Option<usize>,
    },
    /// Render depth, normal, semantic and skeleton maps for every frame.
    Render,
    /// Sample latents window by window and blend them.
    Animate {
        #[arg(long)]
        no_guidance: bool,
        /// Fail if zero-initialized guidance changes the samples.
        #[arg(long)]
        self_check: bool,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        /// Sampler steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write guidance attention saliency images.
    Attn {
        #[arg(long = "condition")]
        conditions: Vec<String>,
        #[arg(long = "frame")]
        frames: Vec<usize>,
    },
    /// Write a procedural body model, motion and reference shape.
    MakeToyBody {
        #[arg(long)]
        vertices: Option<usize>,
        #[arg(long)]
        joints: Option<usize>,
        #[arg(long)]
        labels: Option<usize>,
        #[arg(long)]
        shape_dims: Option<usize>,
        #[arg(long)]
        pose_correctives: bool,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the toy denoiser and depth guidance net on synthetic shapes.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, g.seed);
    set(&mut cfg.output_dir, g.out.clone());
    set(&mut cfg.body_model, g.body.clone());
    set(&mut cfg.motion, g.motion.clone());
    set(&mut cfg.reference_shape, g.shape.clone());
    set(&mut cfg.render.width, g.width);
    set(&mut cfg.render.height, g.height);
    if g.checkpoint.is_some() {
        cfg.checkpoint = g.checkpoint.clone();
    }
    match &cli.command {
        Command::Align { anchor } => set(&mut cfg.align.anchor_frame, *anchor),
        Command::Render => {}
        Command::Animate { no_guidance, self_check, window, stride, steps } => {
            cfg.animate.guidance &= !no_guidance;
            cfg.animate.self_check |= self_check;
            set(&mut cfg.animate.window, *window);
            set(&mut cfg.animate.stride, *stride);
            set(&mut cfg.animate.sampler_steps, *steps);
        }
        Command::Attn { conditions, frames } => {
            if !conditions.is_empty() {
                cfg.attn.conditions = conditions.clone();
            }
            if !frames.is_empty() {
                cfg.attn.frames = frames.clone();
            }
        }
        Command::MakeToyBody { vertices, joints, labels, shape_dims, pose_correctives, frames } => {
            let b = &mut cfg.toy_body.body;
            set(&mut b.vertices, *vertices);
            set(&mut b.joints, *joints);
            set(&mut b.labels, *labels);
            set(&mut b.shape_dims, *shape_dims);
            b.pose_correctives |= pose_correctives;
            set(&mut cfg.toy_body.frames, *frames);
        }
        Command::Train { steps, lr } => {
            set(&mut cfg.diffusion.steps, *steps);
            set(&mut cfg.diffusion.lr, *lr);
        }
    }
    Ok(cfg)
}

fn summary<T: Serialize>(report: T) -> serde_json::Value {
    serde_json::to_value(report).expect("reports always serialize")
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let cfg = build_config(cli)?;
    Ok(match cli.command {
        Command::Align { .. } => summary(pipeline::cmd_align(&cfg)?),
        Command::Render => summary(pipeline::cmd_render(&cfg)?),
        Command::Animate { .. } => summary(pipeline::cmd_animate(&cfg)?),
        Command::Attn { .. } => summary(pipeline::cmd_attn(&cfg)?),
        Command::MakeToyBody { .. } => summary(pipeline::cmd_make_toy_body(&cfg)?),
        Command::Train { .. } => summary(pipeline::cmd_train(&cfg)?),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(&cli) {
        Ok(report) => {
            if cli.global.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("JSON values always serialize"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            if cli.global.json {
                println!("{}", serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
