use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gausstore::sim::{
    generate_synthetic, population_hash, read_metrics, report, run_replay, write_dataset,
    DatasetPaths, ReplayConfig, SyntheticScene, TimingMode,
};

#[derive(Parser)]
#[command(name = "gausstore", version, about = "Out-of-core Gaussian map replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Timing {
    Modeled,
    Wall,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a recorded trajectory through the map and write per-step metrics.
    Replay(ReplayArgs),
    /// Generate a synthetic corridor dataset.
    Synth(SynthArgs),
    /// Summarize a metrics file.
    Report { metrics: PathBuf },
}

#[derive(clap::Args)]
struct ReplayArgs {
    /// TUM pose file: `timestamp tx ty tz qx qy qz qw` per line.
    #[arg(long)]
    trajectory: PathBuf,
    /// Directory of `<timestamp>.png` RGB frames.
    #[arg(long)]
    images: PathBuf,
    /// Directory of `<timestamp>.png` 16-bit millimeter depth frames.
    #[arg(long)]
    depth: PathBuf,
    /// Metrics CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    chunk_size: f64,
    #[arg(long, default_value_t = 50_000)]
    gaussian_budget: u64,
    #[arg(long, default_value_t = 16)]
    keyframe_budget: usize,
    /// Keyframe selection grid resolution in meters.
    #[arg(long, default_value_t = 200.0)]
    grid: f64,
    #[arg(long, default_value_t = 5)]
    steps_per_frame: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Loop-closure correction events.
    #[arg(long)]
    loop_closures: Option<PathBuf>,
    /// Camera file `fx fy cx cy width height near far`; desk camera when absent.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Tracker keypoints `frame x y z r g b`.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// Chunk and keyframe storage; defaults to `<out>.store`, cleared first.
    #[arg(long)]
    disk_root: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Timing::Modeled)]
    timing: Timing,
    /// Pixels sampled per new keyframe.
    #[arg(long)]
    samples_per_frame: Option<usize>,
    /// Refinement steps after each loop closure.
    #[arg(long)]
    refine_iters: Option<usize>,
}

#[derive(clap::Args)]
struct SynthArgs {
    /// Corridor length in meters.
    #[arg(long, default_value_t = 100.0)]
    length: f64,
    /// Keyframe spacing in meters.
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    /// Gaussians per cubic meter of corridor volume.
    #[arg(long, default_value_t = 50.0)]
    density: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Closed rectangular loop with a drift correction at the end.
    #[arg(long = "loop")]
    looped: bool,
}

fn default_store(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".store");
    out.with_file_name(name)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let root = match a.disk_root {
        Some(r) => r,
        None => {
            let r = default_store(&a.out);
            if r.exists() {
                fs::remove_dir_all(&r).with_context(|| format!("clearing {}", r.display()))?;
            }
            r
        }
    };
    let mut cfg = ReplayConfig::desk(root);
    cfg.store.chunk_size_m = a.chunk_size;
    cfg.store.gaussian_budget = a.gaussian_budget;
    cfg.store.keyframe_budget = a.keyframe_budget;
    cfg.select.grid_resolution_m = a.grid;
    cfg.steps_per_frame = a.steps_per_frame;
    cfg.seed = a.seed;
    cfg.timing = match a.timing {
        Timing::Modeled => TimingMode::Modeled,
        Timing::Wall => TimingMode::Wall,
    };
    if let Some(n) = a.samples_per_frame {
        cfg.sample.samples_per_keyframe = n;
    }
    if let Some(n) = a.refine_iters {
        cfg.refine_iters = n;
    }
    let paths = DatasetPaths {
        trajectory: a.trajectory,
        images: a.images,
        depth: a.depth,
        camera: a.camera,
        keypoints: a.keypoints,
        loop_closures: a.loop_closures,
    };
    let out = run_replay(&paths, &cfg, &a.out)?;
    eprintln!(
        "{} frames, {} rows, {} Gaussians total, {} loop closures",
        out.frames,
        out.rows,
        out.stats.total_gaussians_ever,
        out.corrections.len()
    );
    if let Some(audit) = out.audit {
        if audit.misplaced > 0 {
            bail!("placement audit found {} misplaced Gaussians", audit.misplaced);
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut scene = SyntheticScene::corridor(a.length, a.spacing, a.density, a.seed);
    if a.looped {
        scene = scene.with_loop();
    }
    let out = generate_synthetic(&scene)?;
    write_dataset(&out.dataset, &a.out)?;
    println!(
        "{} keyframes, {} Gaussians (hash {:016x}) written to {}",
        out.dataset.frames.len(),
        out.population.len(),
        population_hash(&out.population),
        a.out.display()
    );
    Ok(())
}

fn summarize(path: &Path) -> Result<()> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_metrics(file)?;
    println!("{}", report(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Replay(a) => replay(a),
        Command::Synth(a) => synth(a),
        Command::Report { metrics } => summarize(&metrics),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
