//! Command-line frontend: synthetic scene generation, track formation,
//! evaluation, and global map merging. Every command is deterministic
//! given its flags and inputs; a run manifest with input digests is
//! written next to each file output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use vecmap_core::merger::{render_svg, save_global_map, GlobalMap};
use vecmap_core::metrics::{consistency_map, standard_map, MetricReport, DEFAULT_THRESHOLDS};
use vecmap_core::raster::{rasterize_frame, GridSpec};
use vecmap_core::scene::{load_sequence, save_sequence, ElementClass, Sequence};
use vecmap_core::synth::{
    gen_world, perturb, project_gt, IdMode, NoiseSpec, ScoreModel, Trajectory, WorldSpec,
};
use vecmap_core::tracker::{annotate, extract_tracks, form_gt_tracks, TrackerConfig};
use vecmap_core::Window;

#[derive(Parser)]
#[command(name = "vecmap", version, about = "Vector map benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ground-truth sequence and a perturbed
    /// prediction sequence.
    Synth(SynthArgs),
    /// Assign global track IDs to a sequence.
    Tracks(TracksArgs),
    /// Evaluate predictions against ground truth (mAP and C-mAP).
    Eval(EvalArgs),
    /// Merge a tracked sequence into a global vector map.
    Merge(MergeArgs),
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a non-negative number, got {s}"))
    }
}

fn parse_prob(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be a probability in [0, 1], got {s}"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Straight,
    Arc,
    SCurve,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreModelArg {
    Calibrated,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdModeArg {
    Oracle,
    FreshPerFrame,
    SwapPairs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TrajectoryArg::Straight)]
    trajectory: TrajectoryArg,
    /// Arc radius in meters (arc and s-curve trajectories).
    #[arg(long, value_parser = parse_positive, default_value_t = 80.0)]
    radius: f64,
    /// Trajectory length in meters.
    #[arg(long, value_parser = parse_positive, default_value_t = 100.0)]
    length: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 2.5)]
    frame_spacing: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 3.5)]
    lane_width: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 20.0)]
    crossing_spacing: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 4.0)]
    crossing_len: f64,
    /// Divider count; seeded 1..=3 when omitted.
    #[arg(long)]
    dividers: Option<u32>,
    /// Gaussian jitter sigma per point, meters.
    #[arg(long, value_parser = parse_nonneg, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Drop probability per element per frame.
    #[arg(long, value_parser = parse_prob, default_value_t = 0.0)]
    noise_drop: f64,
    /// Expected false elements per frame.
    #[arg(long, value_parser = parse_nonneg, default_value_t = 0.0)]
    noise_clutter: f64,
    #[arg(long, value_enum, default_value_t = ScoreModelArg::Calibrated)]
    score_model: ScoreModelArg,
    #[arg(long, value_enum, default_value_t = IdModeArg::Oracle)]
    id_mode: IdModeArg,
    /// Seed for the perturbation stream (defaults to --seed).
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long, default_value = "gt.seq")]
    gt_out: PathBuf,
    #[arg(long, default_value = "pred.seq")]
    pred_out: PathBuf,
}

#[derive(Args)]
struct TracksArgs {
    /// Input sequence file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score threshold tau; elements with score > tau are tracked.
    #[arg(long, value_parser = parse_prob, default_value_t = 0.4)]
    tau: f64,
    /// Look-back frame count N.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), default_value_t = 1)]
    lookback: u32,
    /// Stroke thickness for matching masks, meters.
    #[arg(long, value_parser = parse_positive, default_value_t = 0.5)]
    thickness: f64,
    /// Minimum IoU for a track correspondence.
    #[arg(long, value_parser = parse_prob, default_value_t = 0.05)]
    min_iou: f64,
    /// Treat the input as ground truth: every element is positive and the
    /// look-back is forced to 1.
    #[arg(long)]
    gt: bool,
    /// Dump per-frame per-class masks as PGM files into this directory.
    #[arg(long)]
    dump_masks: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Chamfer distance thresholds in meters.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive,
          default_values_t = DEFAULT_THRESHOLDS)]
    thresholds: Vec<f64>,
    /// Skip the consistency-aware metrics.
    #[arg(long)]
    no_cmap: bool,
    /// Also write the JSON report to a file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Tracked sequence file (elements carry global IDs).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render the merged map as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl ManifestBuilder {
    fn new(command: &str, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs
            .insert(path.display().to_string(), sha256_hex(bytes));
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs
            .insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Write `<primary>.manifest.json`.
    fn write(self, primary: &Path) -> Result<()> {
        let manifest = serde_json::json!({
            "tool": "vecmap",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_ms": self.started.elapsed().as_millis() as u64,
        });
        let path = manifest_path(primary);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_output(manifest: &mut ManifestBuilder, path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path, bytes);
    Ok(())
}

fn load_seq_file(manifest: &mut ManifestBuilder, path: &Path) -> Result<Sequence> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    manifest.input(path, &bytes);
    load_sequence(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let trajectory = match args.trajectory {
        TrajectoryArg::Straight => Trajectory::Straight,
        TrajectoryArg::Arc => Trajectory::Arc {
            radius: args.radius,
        },
        TrajectoryArg::SCurve => Trajectory::SCurve {
            radius: args.radius,
        },
    };
    let spec = WorldSpec {
        seed: args.seed,
        trajectory,
        length: args.length,
        frame_spacing: args.frame_spacing,
        lane_width: args.lane_width,
        crossing_spacing: args.crossing_spacing,
        crossing_len: args.crossing_len,
        dividers: args.dividers,
    };
    let noise = NoiseSpec {
        jitter_sigma: args.noise_sigma,
        drop_prob: args.noise_drop,
        clutter_rate: args.noise_clutter,
        score_model: match args.score_model {
            ScoreModelArg::Calibrated => ScoreModel::Calibrated,
            ScoreModelArg::Uniform => ScoreModel::Uniform,
        },
        id_mode: match args.id_mode {
            IdModeArg::Oracle => IdMode::Oracle,
            IdModeArg::FreshPerFrame => IdMode::FreshPerFrame,
            IdModeArg::SwapPairs => IdMode::SwapPairs,
        },
    };
    let noise_seed = args.noise_seed.unwrap_or(args.seed);

    let mut manifest = ManifestBuilder::new(
        "synth",
        serde_json::json!({
            "seed": args.seed,
            "trajectory": format!("{trajectory:?}"),
            "length": args.length,
            "frame_spacing": args.frame_spacing,
            "lane_width": args.lane_width,
            "crossing_spacing": args.crossing_spacing,
            "crossing_len": args.crossing_len,
            "dividers": args.dividers,
            "noise_sigma": args.noise_sigma,
            "noise_drop": args.noise_drop,
            "noise_clutter": args.noise_clutter,
            "score_model": format!("{:?}", noise.score_model),
            "id_mode": format!("{:?}", noise.id_mode),
            "noise_seed": noise_seed,
        }),
    );

    let world = gen_world(&spec)?;
    let gt = project_gt(&world, Window::DEFAULT);
    let pred = perturb(&gt, &noise, noise_seed);

    write_output(&mut manifest, &args.gt_out, &save_sequence(&gt))?;
    write_output(&mut manifest, &args.pred_out, &save_sequence(&pred))?;
    manifest.write(&args.gt_out)?;
    println!(
        "synth: {} frames, {} world elements -> {}, {}",
        gt.frames.len(),
        world.elements.len(),
        args.gt_out.display(),
        args.pred_out.display()
    );
    Ok(())
}

fn cmd_tracks(args: TracksArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "tracks",
        serde_json::json!({
            "tau": args.tau,
            "lookback": args.lookback,
            "thickness": args.thickness,
            "min_iou": args.min_iou,
            "gt": args.gt,
        }),
    );
    let seq = load_seq_file(&mut manifest, &args.input)?;
    let cfg = TrackerConfig {
        tau: args.tau,
        lookback: args.lookback as usize,
        thickness: args.thickness,
        min_iou: args.min_iou,
        grid: GridSpec::doubled_window(),
    };
    let book = if args.gt {
        form_gt_tracks(&seq, &cfg)?
    } else {
        extract_tracks(&seq, &cfg)?
    };
    let annotated = annotate(&seq, &book)?;
    write_output(&mut manifest, &args.out, &save_sequence(&annotated))?;

    if let Some(dir) = &args.dump_masks {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for frame in &seq.frames {
            let masks = rasterize_frame(frame, args.thickness, GridSpec::default_window());
            for class in ElementClass::ALL {
                let path = dir.join(format!("frame_{:04}_{}.pgm", frame.index, class));
                std::fs::write(&path, masks.class(class).to_pgm())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }

    manifest.write(&args.out)?;
    println!("tracks: {}", book.distinct_ids());
    Ok(())
}

fn format_table(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("class      AP        C-AP\n");
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    for class in ElementClass::ALL {
        out.push_str(&format!(
            "{:<10} {:<9} {}\n",
            class.as_str(),
            fmt(report.ap.map(|a| a.get(class))),
            fmt(report.cap.map(|c| c.get(class))),
        ));
    }
    out.push_str(&format!(
        "mAP {}   C-mAP {}   C-mAP-upper {}\n",
        fmt(report.map),
        fmt(report.cmap),
        fmt(report.cmap_upper)
    ));
    out
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new(
        "eval",
        serde_json::json!({
            "thresholds": args.thresholds,
            "no_cmap": args.no_cmap,
        }),
    );
    let pred = load_seq_file(&mut manifest, &args.pred)?;
    let gt = load_seq_file(&mut manifest, &args.gt)?;

    let report = standard_map(&pred, &gt, &args.thresholds)?;
    let report = if args.no_cmap {
        report
    } else {
        let cons = consistency_map(&pred, &gt, &args.thresholds)?;
        MetricReport::merged(report, cons)
    };

    let json = serde_json::to_string(&report)?;
    println!("{json}");
    print!("{}", format_table(&report));

    if let Some(out) = &args.out {
        write_output(&mut manifest, out, json.as_bytes())?;
        manifest.write(out)?;
    }
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("merge", serde_json::json!({}));
    let seq = load_seq_file(&mut manifest, &args.input)?;
    let any_elements = seq.frames.iter().any(|f| !f.elements.is_empty());
    let any_ids = seq
        .frames
        .iter()
        .any(|f| f.elements.iter().any(|e| e.global_id.is_some()));
    if any_elements && !any_ids {
        bail!(
            "{} carries no global ids; run `vecmap tracks` on it first",
            args.input.display()
        );
    }
    let mut map = GlobalMap::new();
    for frame in &seq.frames {
        map.merge_frame(frame)?;
    }
    write_output(&mut manifest, &args.out, &save_global_map(&map))?;
    if let Some(svg) = &args.svg {
        write_output(&mut manifest, svg, &render_svg(&map))?;
    }
    manifest.write(&args.out)?;
    println!("merge: {} map elements", map.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("VECMAP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let result = match cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Tracks(args) => cmd_tracks(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Merge(args) => cmd_merge(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
