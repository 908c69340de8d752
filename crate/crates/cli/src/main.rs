//! `synthact` command line.
//!
//! Exit status: 0 on success, 1 when some work items failed (or a run
//! failed outright), 2 for configuration and input validation errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthact::exec::ExecMode;
use synthact::formats::{export_png_frames, read_clip, write_ply, Manifest, StreamWeights, Subset};
use synthact::pipeline::{
    audit, compute_flows, config_sample_space, generate, load_manifest, plan_specs, save_manifest, write_atomic, write_npy, PipelineConfig,
    OUTPUT_ROOT_ENV,
};
use synthact::preprocess::{load_png_sequence, preprocess, FrameStack};
use synthact::recon::{format_trajectory, load_rgbd_dir, reconstruct, ReconConfig};
use synthact::Error;

#[derive(Parser)]
#[command(name = "synthact", version, about = "Synthetic human-activity clip generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the output tree lives: `--root`, else the environment override,
/// else the config's `output_root`, else `out`.
#[derive(Args)]
struct RootArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; takes precedence over the config and the environment.
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render every clip of the configured dataset and write the manifest.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Only plan: sample every spec and print the counts.
        #[arg(long)]
        dry_run: bool,
        /// Also compute flows after rendering.
        #[arg(long)]
        flows: bool,
    },
    /// Compute TV-L1 flow containers for every manifest entry.
    Flow {
        #[command(flatten)]
        root: RootArgs,
    },
    /// Reconstruct a mesh and trajectory from an RGB-D directory.
    Reconstruct {
        /// Directory with intrinsics.json, color/ and depth/.
        input: PathBuf,
        /// Output directory (default: `<output root>/recon`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reconstruction parameters (TOML).
        #[arg(long)]
        recon_config: Option<PathBuf>,
        /// Depth PNGs are in TUM units (1/5000 m).
        #[arg(long)]
        tum: bool,
    },
    /// Show or set per-subset RGB/flow training weights.
    Weights {
        #[command(flatten)]
        root: RootArgs,
        /// Subset to change (`BG+R`, `BG+R2T`, `3D+R`, `3D+M`, `R3D+R`, `real`).
        #[arg(long, requires_all = ["rgb", "flow"])]
        subset: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        rgb: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        flow: Option<f64>,
    },
    /// Per-class and per-method counts plus the weight table.
    Stats {
        #[command(flatten)]
        root: RootArgs,
        /// Also check that every entry references a parseable container.
        #[arg(long)]
        audit: bool,
    },
    /// Write the frames of a clip as numbered PNGs.
    ExportPng {
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample, resize, crop and normalize a clip or PNG sequence into
    /// `crop_<i>.npy` arrays.
    Preprocess {
        /// A `.clip` file or a directory of PNG frames.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame rate of a PNG sequence.
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
        /// Number of crops (default: ceil(width / 224)).
        #[arg(long)]
        crops: Option<usize>,
    },
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Validation(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome = Result<u8, Failure>;

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Error> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
        cfg.output_root = PathBuf::from(root);
    }
    Ok(cfg)
}

fn output_root(args: &RootArgs) -> Result<(PipelineConfig, PathBuf), Error> {
    let cfg = load_config(args.config.as_deref())?;
    let root = match &args.root {
        Some(r) => r.clone(),
        None => cfg.output_dir(),
    };
    Ok((cfg, root))
}

fn manifest_at(root: &Path) -> Result<Manifest, Error> {
    load_manifest(root).map_err(|e| match e {
        Error::PathIo { path, .. } => Error::Config(format!("no manifest at {} (run `generate` first)", path.display())),
        other => other,
    })
}

fn cmd_generate(config: Option<&Path>, dry_run: bool, flows: bool) -> Outcome {
    let cfg = load_config(config)?;
    cfg.validate()?;
    if dry_run {
        let specs = plan_specs(&cfg, &config_sample_space(&cfg))?;
        let mut m = Manifest::default();
        for (t, s) in &specs {
            m.entries.push(synthact::formats::ManifestEntry {
                path: t.path.clone(),
                label: t.action,
                method: s.method(),
                subject_id: t.subject.clone(),
                clip_index: t.k as u32,
                seed: t.seed,
                frame_count: 0,
                flow_path: None,
            });
        }
        print!("{}", m.stats());
        return Ok(0);
    }
    let report = generate(&cfg)?;
    println!("rendered {}, reused {}, failed {}", report.rendered, report.reused, report.failed);
    let mut failed = report.failed;
    if flows {
        let mut m = report.manifest;
        let r = compute_flows(&cfg.output_dir(), &mut m, &cfg.flow, cfg.exec)?;
        println!("flows computed {}, reused {}, failed {}", r.computed, r.reused, r.failed);
        failed += r.failed;
    }
    Ok(u8::from(failed > 0))
}

fn cmd_flow(args: &RootArgs) -> Outcome {
    let (cfg, root) = output_root(args)?;
    cfg.flow.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut m = manifest_at(&root)?;
    let r = compute_flows(&root, &mut m, &cfg.flow, cfg.exec)?;
    println!("flows computed {}, reused {}, failed {}", r.computed, r.reused, r.failed);
    Ok(u8::from(r.failed > 0))
}

fn cmd_reconstruct(input: &Path, out: Option<&Path>, recon_config: Option<&Path>, tum: bool) -> Outcome {
    let cfg: ReconConfig = match recon_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ReconConfig::default(),
    };
    cfg.validate()?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => load_config(None)?.output_dir().join("recon"),
    };
    if !input.join("intrinsics.json").is_file() {
        return Err(Error::Config(format!("{} has no intrinsics.json", input.display())).into());
    }
    let frames = load_rgbd_dir(input, tum)?;
    let result = reconstruct(&frames, &cfg, ExecMode::Parallel)?;
    write_atomic(&out.join("mesh.ply"), &write_ply(&result.mesh))?;
    write_atomic(&out.join("trajectory.txt"), format_trajectory(&result.trajectory).as_bytes())?;
    let mut report = serde_json::to_vec_pretty(&result.report).map_err(Error::from)?;
    report.push(b'\n');
    write_atomic(&out.join("report.json"), &report)?;
    let r = &result.report;
    println!(
        "{} frames, {} fragments, {} odometry + {} loop edges, cost {:.3e} -> {:.3e}, {} vertices",
        r.frames, r.fragments, r.odometry_edges, r.loop_edges, r.initial_cost, r.final_cost, r.mesh_vertices
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(u8::from(r.tracking_lost))
}

fn cmd_weights(args: &RootArgs, subset: Option<&str>, rgb: Option<f64>, flow: Option<f64>) -> Outcome {
    let (_, root) = output_root(args)?;
    let mut m = manifest_at(&root)?;
    if let (Some(s), Some(rgb), Some(flow)) = (subset, rgb, flow) {
        let subset: Subset = s.parse()?;
        m.set_weights(subset, StreamWeights { rgb, flow })?;
        save_manifest(&root, &m)?;
    }
    for (k, w) in &m.weights.0 {
        println!("{k:<8} rgb {:>5} flow {:>5}", w.rgb, w.flow);
    }
    Ok(0)
}

fn cmd_stats(args: &RootArgs, check: bool) -> Outcome {
    let (_, root) = output_root(args)?;
    let m = manifest_at(&root)?;
    print!("{}", m.stats());
    for e in &m.errors {
        println!("error: {}: {}", e.path, e.message);
    }
    if check {
        let problems = audit(&root, &m);
        for p in &problems {
            println!("audit: {p}");
        }
        if !problems.is_empty() {
            return Ok(1);
        }
    }
    Ok(0)
}

fn read_clip_file(path: &Path) -> Result<synthact::formats::ClipContainer, Error> {
    let f = std::fs::File::open(path).map_err(Error::io_at(path))?;
    read_clip(std::io::BufReader::new(f))
}

fn cmd_export_png(clip: &Path, out: &Path) -> Outcome {
    let c = read_clip_file(clip)?;
    let files = export_png_frames(&c, out)?;
    println!("wrote {} frames to {}", files.len(), out.display());
    Ok(0)
}

fn cmd_preprocess(input: &Path, out: &Path, fps: f64, crops: Option<usize>) -> Outcome {
    let stack = if input.is_dir() { load_png_sequence(input, fps)? } else { FrameStack::from_clip(&read_clip_file(input)?) };
    let clips = preprocess(&stack, crops, ExecMode::Parallel)?;
    let mut offsets = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        write_npy(&out.join(format!("crop_{i}.npy")), c)?;
        offsets.push(c.crop_offset);
    }
    let meta = serde_json::json!({
        "fps": synthact::preprocess::TARGET_FPS,
        "size": synthact::preprocess::CROP,
        "frames": clips.first().map_or(0, |c| c.frames.len()),
        "crop_offsets": offsets,
        "range": [-1.0, 1.0],
    });
    let mut bytes = serde_json::to_vec_pretty(&meta).map_err(Error::from)?;
    bytes.push(b'\n');
    write_atomic(&out.join("meta.json"), &bytes)?;
    println!("wrote {} crops to {}", clips.len(), out.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate { config, dry_run, flows } => cmd_generate(config.as_deref(), *dry_run, *flows),
        Command::Flow { root } => cmd_flow(root),
        Command::Reconstruct { input, out, recon_config, tum } => cmd_reconstruct(input, out.as_deref(), recon_config.as_deref(), *tum),
        Command::Weights { root, subset, rgb, flow } => cmd_weights(root, subset.as_deref(), *rgb, *flow),
        Command::Stats { root, audit } => cmd_stats(root, *audit),
        Command::ExportPng { clip, out } => cmd_export_png(clip, out),
        Command::Preprocess { input, out, fps, crops } => cmd_preprocess(input, out, *fps, *crops),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
