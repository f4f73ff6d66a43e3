use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use flamevol_core::experiment::ExperimentKind;
use flamevol_core::scene::{SceneConfig, SynthKind};

/// Flame volume reconstruction from sparse multi-view images.
#[derive(Debug, Parser)]
#[command(name = "flamevol", version, about)]
struct Cli {
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural volume, its cameras and rendered views.
    Synth {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Render every camera view of a volume file.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_name = "FILE")]
        volume: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Carve the visual hull of thresholded input images.
    Hull {
        #[command(flatten)]
        scene: SceneArgs,
        /// Input images (PPM or FIM), one per camera in camera order.
        #[arg(required = true, num_args = 2.., value_name = "IMAGE")]
        images: Vec<PathBuf>,
        /// Hull volume: 1 inside, the sentinel outside.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write each flame mask as PBM into this directory.
        #[arg(long, value_name = "DIR")]
        masks_dir: Option<PathBuf>,
    },
    /// Reconstruct a volume from calibrated input images.
    Reconstruct {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(required = true, num_args = 2.., value_name = "IMAGE")]
        images: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Color)]
        mode: Mode,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Per-iteration RMSE trace (CSV).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Ground-truth volume for the volume RMSE column of the trace.
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
        #[command(flatten)]
        snapshots: SnapshotArgs,
    },
    /// Export the color-temperature map, optionally converting a green
    /// volume to kelvin.
    TempMap {
        #[command(flatten)]
        scene: SceneArgs,
        /// Map table (CSV).
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Reconstructed green volume to convert.
        #[arg(long, value_name = "FILE", requires = "out")]
        green: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires = "green")]
        out: Option<PathBuf>,
    },
    /// RMSE between two images or two volumes.
    Metrics {
        #[command(flatten)]
        scene: SceneArgs,
        /// Reconstruction (image or volume).
        a: PathBuf,
        /// Reference of the same kind.
        b: PathBuf,
        /// Pixel box `x0,y0,x1,y1` (inclusive); defaults to the flame box of
        /// the reference.
        #[arg(long, value_name = "BOX")]
        bbox: Option<String>,
    },
    /// Simulate strobe smear and estimate camera shutter offsets.
    SyncSim {
        /// Scenario file (TOML); the built-in scenario when absent.
        #[arg(long, value_name = "FILE")]
        scenario: Option<PathBuf>,
        /// Estimated offsets as CSV `camera,offset_s`.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Print the built-in scenario and exit.
        #[arg(long)]
        print_default: bool,
    },
    /// Run one of the synthetic evaluation experiments. The flame threshold
    /// defaults to 5 here since the renders carry no noise.
    Experiment {
        #[arg(value_parser = parse_experiment)]
        name: ExperimentKind,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Exit with status 4 when an acceptance bound is breached.
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        snapshots: SnapshotArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Red, green and blue channels.
    Color,
    /// First image channel as a single gray channel.
    Gray,
    /// Green channel read back as kelvin.
    Temperature,
}

#[derive(Debug, Clone, Args)]
struct SnapshotArgs {
    /// Write rendered views as PPM into this directory during iteration.
    #[arg(long, value_name = "DIR")]
    snapshots: Option<PathBuf>,
    /// Snapshot every Nth iteration.
    #[arg(long, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    snapshot_every: u64,
}

/// Scene file plus overrides; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
struct SceneArgs {
    /// Scene file (TOML).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Voxels along the longest box side.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<SynthKind>,
    /// Camera-parameter file; replaces the synthetic ring.
    #[arg(long, value_name = "FILE")]
    cameras: Option<PathBuf>,
    /// Number of ring cameras.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Ring radius (m).
    #[arg(long)]
    radius: Option<f64>,
    /// Horizontal field of view (degrees).
    #[arg(long)]
    fov: Option<f64>,
    /// Elevation jitter bound (degrees).
    #[arg(long)]
    jitter: Option<f64>,
    /// Per-sample opacity.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha_l: Option<f64>,
    #[arg(long)]
    alpha_d: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Convergence threshold on the RMSE change.
    #[arg(long)]
    eps: Option<f64>,
    /// Fixed-order accumulation, reproducible across thread counts.
    #[arg(long)]
    deterministic: bool,
    /// Flame threshold on the brightest channel.
    #[arg(long)]
    threshold: Option<f32>,
    /// Bounding-box dilation (pixels).
    #[arg(long)]
    dilate: Option<u32>,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse()
        .map_err(|_| format!("expected flame, smoke or slab, got '{s}'"))
}

fn parse_experiment(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

impl SceneArgs {
    fn resolve(&self) -> flamevol_core::Result<SceneConfig> {
        let mut s = match &self.config {
            Some(p) => SceneConfig::load(p)?,
            None => SceneConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(s.seed, self.seed);
        if self.grid.is_some() {
            s.volume.grid = self.grid;
        }
        set!(s.volume.kind, self.kind);
        if self.cameras.is_some() {
            s.cameras.file = self.cameras.clone();
        }
        set!(s.cameras.count, self.views);
        set!(s.cameras.width, self.width);
        set!(s.cameras.height, self.height);
        set!(s.cameras.radius, self.radius);
        set!(s.cameras.fov_deg, self.fov);
        set!(s.cameras.jitter_deg, self.jitter);
        set!(s.render.tau, self.tau);
        set!(s.reconstruct.alpha_l, self.alpha_l);
        set!(s.reconstruct.alpha_d, self.alpha_d);
        set!(s.reconstruct.max_iters, self.max_iters);
        set!(s.reconstruct.converge_eps, self.eps);
        if self.deterministic {
            s.reconstruct.deterministic = true;
        }
        set!(s.preprocess.threshold, self.threshold);
        set!(s.preprocess.dilate, self.dilate);
        s.validate()?;
        Ok(s)
    }

    /// As `resolve`, with the synthetic flame threshold unless a scene file or
    /// `--threshold` is given.
    fn resolve_synthetic(&self) -> flamevol_core::Result<SceneConfig> {
        let mut s = self.resolve()?;
        if self.config.is_none() && self.threshold.is_none() {
            s.preprocess.threshold = flamevol_core::experiment::SYNTHETIC_THRESHOLD;
        }
        Ok(s)
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<flamevol_core::Error>() {
        Some(core) if !core.is_data_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
