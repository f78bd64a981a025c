//! The `twostream` command line: argument parsing, dispatch, the run log and
//! exit codes (0 success, 1 usage error, 2 data or model error).

mod commands;
pub mod plot;

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const RUN_LOG_ENV: &str = "TWOSTREAM_RUN_LOG";
pub const DEFAULT_RUN_LOG: &str = "twostream-runs.jsonl";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<twostream::Error> for CliError {
    fn from(e: twostream::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

/// What a finished command reports to the run log.
pub struct Summary {
    pub seed: Option<u64>,
    pub metrics: serde_json::Value,
}

#[derive(Parser, Debug)]
#[command(name = "twostream", version, about = "Two-stream retinal image classifier")]
pub struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON-lines file that every run appends a record to.
    #[arg(long, global = true, env = RUN_LOG_ENV)]
    pub run_log: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic vessel or disease dataset.
    Synth(SynthArgs),
    /// Contrast-enhance one image.
    Enhance(EnhanceArgs),
    /// Train the vessel segmentation network on an image/mask directory.
    TrainSeg(TrainSegArgs),
    /// Segment one image with a trained network.
    Segment(SegmentArgs),
    /// Train the two-stream classifier and write a bundle.
    Train(TrainArgs),
    /// Classify one image with a bundle.
    Predict(PredictArgs),
    /// Score a bundle on a split, or a segmentation model on a directory.
    Evaluate(EvaluateArgs),
    /// Accuracy over a grid of hybrid ratios and kernels.
    Sweep(SweepArgs),
    /// Render SVG plots from curve, history and sweep files.
    Plot(PlotArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Vessel,
    Disease,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    /// Number of vessel images.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Image side length (default 64 for vessel, 128 for disease).
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnhanceMethod {
    Histeq,
    Clahe,
}

#[derive(Args, Debug, Clone)]
pub struct EnhanceOpts {
    #[arg(long, value_enum, default_value_t = EnhanceMethod::Clahe)]
    pub method: EnhanceMethod,
    /// CLAHE tile grid as X,Y.
    #[arg(long, value_parser = parse_pair, default_value = "8,8")]
    pub tiles: (usize, usize),
    /// CLAHE clip limit as a fraction of the tile pixel count.
    #[arg(long, default_value_t = 0.01)]
    pub clip: f64,
}

impl EnhanceOpts {
    fn enhancement(&self) -> Result<twostream::enhance::Enhancement, CliError> {
        use twostream::enhance::{ClaheParams, Enhancement};
        Ok(match self.method {
            EnhanceMethod::Histeq => Enhancement::HistEq,
            EnhanceMethod::Clahe => {
                let p = ClaheParams {
                    tiles_x: self.tiles.0,
                    tiles_y: self.tiles.1,
                    clip_limit: self.clip,
                };
                p.validate().map_err(|e| CliError::usage(e.to_string()))?;
                Enhancement::Clahe(p)
            }
        })
    }
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub opts: EnhanceOpts,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainSegArgs {
    /// Directory with images/ and masks/ holding same-named files.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_late: f64,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    /// Loss history JSON (default: next to the model as *.history.json).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the vessel probability map.
    #[arg(long)]
    pub prob: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelArg {
    Rbf,
    #[value(alias = "poly")]
    Polynomial,
}

impl From<KernelArg> for twostream::svm::KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Rbf => twostream::svm::KernelKind::Rbf,
            KernelArg::Polynomial => twostream::svm::KernelKind::Polynomial,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnetInputArg {
    Probability,
    Binary,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained segmentation model; without it a network is trained on
    /// synthetic vessel images first.
    #[arg(long)]
    pub seg_model: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub seg_epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub seg_count: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Rbf)]
    pub kernel: KernelArg,
    /// Fix the CLAHE-stream weight instead of choosing it on validation.
    #[arg(long, value_parser = parse_weight)]
    pub hybrid_w: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_weight, default_value = "0,0.4,0.5,0.6,1.0")]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = twostream::eigen::K_RGB)]
    pub k_rgb: usize,
    #[arg(long, default_value_t = twostream::eigen::K_UNET)]
    pub k_unet: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = UnetInputArg::Probability)]
    pub unet_input: UnetInputArg,
    /// Canonical side length images are resized to.
    #[arg(long, default_value_t = twostream::dataio::CANONICAL_DIMS.0)]
    pub size: usize,
    #[command(flatten)]
    pub enhance: EnhanceOpts,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write the prediction JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["bundle", "model"])))]
pub struct EvaluateArgs {
    /// Classification mode: a trained bundle.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Manifest to evaluate on (default: the one the bundle was trained from).
    #[arg(long, requires = "bundle")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test, requires = "bundle")]
    pub split: SplitArg,
    /// Segmentation mode: a trained network.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Directory with images/ and masks/.
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    /// JSON report; segmentation curves go next to it as *_roc.csv and *_pr.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_weight, default_value = "0,0.4,0.5,0.6,1.0")]
    pub grid: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rbf,polynomial")]
    pub kernels: Vec<KernelArg>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// ROC curve CSV (fpr,tpr).
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// Precision-recall CSV (recall,precision).
    #[arg(long)]
    pub pr: Option<PathBuf>,
    /// Loss history JSON written by train-seg.
    #[arg(long)]
    pub loss: Option<PathBuf>,
    /// Sweep table CSV.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got '{s}'"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a == 0 || b == 0 {
        return Err("tile counts must be positive".into());
    }
    Ok((a, b))
}

fn parse_weight(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("weights must lie in [0, 1], got {v}"));
    }
    Ok(v)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Enhance(_) => "enhance",
            Command::TrainSeg(_) => "train-seg",
            Command::Segment(_) => "segment",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Plot(_) => "plot",
        }
    }
}

fn append_run_log(path: &Path, record: &serde_json::Value) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{record}")
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 1;
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialized; --threads ignored");
        }
    }

    let name = cli.command.name();
    let result = commands::dispatch(&cli.command);
    let (code, seed, metrics, error) = match result {
        Ok(s) => (0, s.seed, s.metrics, None),
        Err(e) => {
            eprintln!("error: {}", e.message);
            if e.code == 1 {
                eprintln!("run `twostream {name} --help` for usage");
            }
            (e.code, None, serde_json::Value::Null, Some(e.message))
        }
    };
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let record = json!({
        "timestamp": timestamp,
        "command": name,
        "argv": argv.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "exit_code": code,
        "metrics": metrics,
        "error": error,
    });
    let log_path = cli.run_log.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_LOG));
    if let Err(e) = append_run_log(&log_path, &record) {
        log::warn!("could not append to run log {}: {e}", log_path.display());
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_parse_for_every_subcommand() {
        let cases: &[&[&str]] = &[
            &["synth", "--kind", "vessel", "--seed", "0", "--out", "o"],
            &["enhance", "--in", "a.png", "--out", "b.png"],
            &["train-seg", "--data", "d", "--seed", "0", "--out", "m.seg"],
            &["segment", "--model", "m.seg", "--in", "a.png", "--out", "b.png"],
            &["train", "--manifest", "m.json", "--seed", "0", "--out", "b"],
            &["predict", "--bundle", "b", "--in", "a.png"],
            &["evaluate", "--bundle", "b", "--out", "r.json"],
            &["sweep", "--bundle", "b", "--out", "s.csv"],
            &["plot", "--out-dir", "p"],
        ];
        for c in cases {
            let argv = std::iter::once("twostream").chain(c.iter().copied());
            assert!(Cli::try_parse_from(argv).is_ok(), "{c:?}");
        }
        let cli = Cli::try_parse_from(["twostream", "sweep", "--bundle", "b", "--out", "s.csv"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        assert_eq!(a.grid, vec![0.0, 0.4, 0.5, 0.6, 1.0]);
        assert!(Cli::try_parse_from(["twostream", "train", "--manifest", "m", "--seed", "0", "--out", "b", "--grid", "0,1.5"]).is_err());
    }
}
