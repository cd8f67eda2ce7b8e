//! `cdog`: generate synthetic multi-camera benchmarks, associate 2D
//! detections into per-3D-point groups, evaluate predictions against
//! ground truth, and run full benchmark sweeps.
//!
//! Exit codes: 0 success, 2 invalid flags, 3 IO failure, 4 malformed
//! scene or schema mismatch, 5 benchmark run with no usable scene.
//! Log verbosity is controlled by the `CDOG_LOG` env var (off|info|debug).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdog_core::baselines::{baseline_associate, BaselineConfig, BaselineMethod};
use cdog_core::benchmark::{
    self, drop_views, BenchmarkError, BenchmarkSpec, Manifest, RigSpec,
};
use cdog_core::harness::{self, Method, RunOptions};
use cdog_core::metrics::{self, MetricsError};
use cdog_core::pipeline::{self, AssociationResult, CdogConfig, PipelineError};
use cdog_core::rng::derive_seed;
use cdog_core::scene::{Scene, SceneError};

const EXIT_FLAGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SCHEMA: u8 = 4;
const EXIT_NO_SCENE: u8 = 5;

#[derive(Parser)]
#[command(name = "cdog", version, about = "Descriptor-free multi-view point association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset (scene files + manifest).
    Generate(GenerateArgs),
    /// Associate one scene's detections into groups.
    Associate(AssociateArgs),
    /// Score a prediction against a labeled scene; appends one CSV row.
    Evaluate(EvaluateArgs),
    /// Run methods over a dataset and emit per-scene/grid/timing CSVs.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for scene files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated point counts (default: 1..20 step 1, 25..130 step 5).
    #[arg(long, value_delimiter = ',')]
    points: Option<Vec<u32>>,
    /// Comma-separated noise levels in pixels (default: 0..5 step 0.25).
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Scenes per (count, sigma) cell.
    #[arg(long, default_value_t = 5)]
    batches: u32,
    #[arg(long, default_value_t = 0xC0D6)]
    seed: u64,
    /// Rig spec JSON file (default: built-in 10-camera circular rig).
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Retain this many randomly chosen views per scene.
    #[arg(long)]
    keep_views: Option<u32>,
    /// Reject points closer than this to another point's epipolar lines.
    #[arg(long)]
    min_separation: Option<f64>,
}

#[derive(Args)]
struct MethodConfigArgs {
    /// Association method.
    #[arg(long, default_value = "cdog")]
    method: String,
    /// Known detection noise in pixels; 0 = use scene metadata or estimate.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Neighborhood-overlap pruning cutoff in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Edge threshold scale.
    #[arg(long, default_value_t = 2.0)]
    tau_alpha: f64,
    /// IQR multiplier for in-group outlier removal.
    #[arg(long, default_value_t = 2.0)]
    iqr_alpha: f64,
    /// Disable the error-group gap filter.
    #[arg(long)]
    no_gap_filter: bool,
}

impl MethodConfigArgs {
    fn config(&self) -> CdogConfig {
        CdogConfig {
            sigma: self.sigma,
            delta: self.delta,
            tau_alpha: self.tau_alpha,
            iqr_alpha: self.iqr_alpha,
            gap_enabled: !self.no_gap_filter,
            ..CdogConfig::default()
        }
    }
}

#[derive(Args)]
struct AssociateArgs {
    /// Input scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Output association JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: MethodConfigArgs,
    /// Retain this many randomly chosen views before associating.
    #[arg(long)]
    keep_views: Option<u32>,
    /// Seed for the --keep-views subset.
    #[arg(long, default_value_t = 0)]
    view_seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Association JSON to score.
    #[arg(long)]
    pred: PathBuf,
    /// Labeled scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// CSV file to append to (header written when new).
    #[arg(long)]
    out: PathBuf,
    /// Method name recorded in the CSV row.
    #[arg(long, default_value = "cdog")]
    method: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated methods to run.
    #[arg(long, value_delimiter = ',', default_value = "cdog")]
    methods: Vec<String>,
    /// Output directory for per_scene.csv, grid.csv and timing.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    cfg: MethodConfigArgs,
    /// Retain this many randomly chosen views per scene.
    #[arg(long)]
    keep_views: Option<u32>,
    /// Seed for the --keep-views subsets.
    #[arg(long, default_value_t = 0)]
    view_seed: u64,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        let code = match &e {
            SceneError::Io { .. } => EXIT_IO,
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        let code = match &e {
            BenchmarkError::Io { .. } => EXIT_IO,
            BenchmarkError::InvalidSpec(_) => EXIT_FLAGS,
            BenchmarkError::Scene(s) => return CliError::from_scene_in_benchmark(s),
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, e.to_string())
    }
}

impl CliError {
    fn from_scene_in_benchmark(e: &SceneError) -> Self {
        let code = match e {
            SceneError::Io { .. } => EXIT_IO,
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::InvalidConfig(_) => EXIT_FLAGS,
            PipelineError::Io { .. } => EXIT_IO,
            PipelineError::Json(_) => EXIT_SCHEMA,
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::new(EXIT_SCHEMA, e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(EXIT_IO, format!("io error on {}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDOG_LOG", "off")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Associate(args) => cmd_associate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let rig_spec = match &args.rig {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<RigSpec>(&text)
                .map_err(|e| CliError::new(EXIT_FLAGS, format!("invalid rig spec: {e}")))?
        }
        None => RigSpec::default(),
    };
    if let Some(keep) = args.keep_views {
        if keep < 2 || keep > rig_spec.n_cameras {
            return Err(CliError::new(
                EXIT_FLAGS,
                format!("--keep-views must lie in 2..={}", rig_spec.n_cameras),
            ));
        }
    }
    let spec = BenchmarkSpec {
        point_counts: args.points.unwrap_or_else(benchmark::default_point_counts),
        sigmas: args.sigmas.unwrap_or_else(benchmark::default_sigmas),
        batches: args.batches,
        seed: args.seed,
        keep_views: args.keep_views,
        min_separation_px: args.min_separation,
    };
    let manifest = benchmark::generate_benchmark(&spec, &rig_spec, &args.out)?;
    log::info!(
        "wrote {} scenes to {}",
        manifest.scenes.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_method(name: &str) -> Result<Method, CliError> {
    name.parse::<Method>()
        .map_err(|e| CliError::new(EXIT_FLAGS, e.to_string()))
}

fn cmd_associate(args: AssociateArgs) -> Result<(), CliError> {
    let method = parse_method(&args.cfg.method)?;
    let cfg = args.cfg.config();
    cfg.validate().map_err(CliError::from)?;
    let mut scene = Scene::load(&args.scene)?;
    if let Some(keep) = args.keep_views {
        let n = scene.cameras.len() as u32;
        if keep < 2 || keep > n {
            return Err(CliError::new(
                EXIT_FLAGS,
                format!("--keep-views must lie in 2..={n}"),
            ));
        }
        scene = drop_views(&scene, keep, derive_seed(args.view_seed, &[scene.seed]));
    }
    let result = run_method(&scene, method, &cfg)?;
    result.save(&args.out).map_err(CliError::from)?;
    log::info!(
        "{}: {} groups, {} outliers",
        args.out.display(),
        result.groups.len(),
        result.outliers.len()
    );
    Ok(())
}

fn run_method(
    scene: &Scene,
    method: Method,
    cfg: &CdogConfig,
) -> Result<AssociationResult, CliError> {
    match method {
        Method::Cdog => pipeline::associate(scene, cfg).map_err(CliError::from),
        Method::Greedy | Method::Cca => {
            let bcfg = BaselineConfig {
                method: if method == Method::Greedy {
                    BaselineMethod::Greedy
                } else {
                    BaselineMethod::Cca
                },
                tau: pipeline::resolve_threshold(scene, cfg),
            };
            baseline_associate(scene, &bcfg)
                .map_err(|e| CliError::new(EXIT_SCHEMA, e.to_string()))
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let scene = Scene::load(&args.scene)?;
    let pred = AssociationResult::load(&args.pred)?;
    let report = metrics::evaluate(&pred, &scene, pred.timings.total())?;

    let name = args
        .scene
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.scene.display().to_string());
    let row = harness::scene_csv_row(
        &name,
        scene.gt_instance_count() as u32,
        scene.sigma.unwrap_or(f64::NAN),
        scene.view_ids().len() as u32,
        &args.method,
        &report,
    );
    let mut text = String::new();
    if !args.out.exists() {
        text.push_str(harness::SCENE_CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&row);
    text.push('\n');
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)
        .map_err(io_err(&args.out))?;
    f.write_all(text.as_bytes()).map_err(io_err(&args.out))?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.threads == 0 {
        return Err(CliError::new(EXIT_FLAGS, "--threads must be >= 1"));
    }
    let methods = args
        .methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = args.cfg.config();
    cfg.validate().map_err(CliError::from)?;

    let manifest = Manifest::load(&args.dataset.join("manifest.json"))?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let opts = RunOptions {
        methods,
        threads: args.threads,
        config: cfg,
        keep_views: args.keep_views,
        view_seed: args.view_seed,
    };
    let records = harness::run_dataset(&args.dataset, &manifest, &opts).map_err(|e| match e {
        harness::HarnessError::NothingSucceeded => CliError::new(EXIT_NO_SCENE, e.to_string()),
        harness::HarnessError::Io { .. } => CliError::new(EXIT_IO, e.to_string()),
        other => CliError::new(EXIT_SCHEMA, other.to_string()),
    })?;
    let failures = manifest.scenes.len() * opts.methods.len() - records.len();
    if failures > 0 {
        log::warn!("{failures} (scene, method) runs failed and were skipped");
    }

    let to_io = |e: harness::HarnessError| CliError::new(EXIT_IO, e.to_string());
    harness::write_scene_csv(&records, &args.out.join("per_scene.csv")).map_err(to_io)?;
    harness::write_grid_csv(&harness::aggregate(&records), &args.out.join("grid.csv"))
        .map_err(to_io)?;
    harness::write_timing_csv(&records, &args.out.join("timing.csv")).map_err(to_io)?;
    log::info!(
        "evaluated {} (scene, method) pairs into {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}
