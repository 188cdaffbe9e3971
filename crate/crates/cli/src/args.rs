use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nutf::ingest::SlotMode;
use nutf::Orientation;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "nutf", version, about = "Negative-unlabeled tensor factorization")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON object of flag values (keys are long flag names); command-line
    /// flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate class-structured synthetic candidate sets.
    Synth(SynthArgs),
    /// Turn location updates and a venue catalog into candidate sets.
    Preprocess(PreprocessArgs),
    /// Factorize candidate sets.
    Fit(FitArgs),
    /// Rank categories for one (user, slot) pair.
    Predict(PredictArgs),
    /// Top-k accuracy of a model on a validation list.
    Eval(EvalArgs),
    /// Per-iteration timings over a ladder of user counts.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
        }
    }
}

pub const SUBCOMMANDS: [&str; 6] = ["synth", "preprocess", "fit", "predict", "eval", "bench"];

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 50)]
    pub slots: usize,
    #[arg(long, default_value_t = 20)]
    pub categories: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Fraction of slots each user observes.
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    /// Candidate-set size (the truth plus decoys).
    #[arg(long, default_value_t = 4)]
    pub cands: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hide this fraction of observations behind all-C candidate sets and
    /// write them to validation.jsonl.
    #[arg(long)]
    pub mask: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotModeArg {
    PaperBins,
    Hourly,
}

impl From<SlotModeArg> for SlotMode {
    fn from(m: SlotModeArg) -> Self {
        match m {
            SlotModeArg::PaperBins => SlotMode::PaperBins,
            SlotModeArg::Hourly => SlotMode::Hourly,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PreprocessArgs {
    /// CSV: user_id,timestamp_utc,lat,lon,error_radius_m,utc_offset_minutes
    #[arg(long)]
    pub updates: PathBuf,
    /// CSV: venue_id,category,lat,lon,radius_m
    #[arg(long)]
    pub venues: PathBuf,
    /// CSV: raw_category,canonical_category. Without it every venue
    /// category is its own canonical category.
    #[arg(long)]
    pub category_map: Option<PathBuf>,
    /// Canonical bucket for raw categories missing from the map.
    #[arg(long)]
    pub other_category: Option<String>,
    #[arg(long, value_enum, default_value = "paper-bins")]
    pub slot_mode: SlotModeArg,
    /// First local day of the window (YYYY-MM-DD); inferred when omitted.
    #[arg(long)]
    pub start_date: Option<String>,
    /// Window length in days; inferred when omitted.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    pub min_dwell_min: f64,
    /// Radius for venues whose radius_m field is empty.
    #[arg(long, default_value_t = 50.0)]
    pub venue_radius_m: f64,
    /// Move singleton candidate sets into validation.jsonl, replacing them
    /// with all-C sets.
    #[arg(long)]
    pub certain_holdout: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationArg {
    Auto,
    Rows,
    Columns,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Auto => Orientation::Auto,
            OrientationArg::Rows => Orientation::Rows,
            OrientationArg::Columns => Orientation::Columns,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Directory holding omega.jsonl and meta.json.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub rank: usize,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = nutf::linalg::DEFAULT_POWER_ITERS)]
    pub power_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Order-fixed reductions: bitwise-reproducible across thread counts.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum, default_value = "auto")]
    pub orientation: OrientationArg,
    /// Skip writing the final iterate x.nutf.
    #[arg(long)]
    pub no_x: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PredictArgs {
    /// model.nutf written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// meta.json for resolving user and category names.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// User index, or user id when --meta is given.
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub slot: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Comma-separated categories (indices or names) to rank among.
    #[arg(long, value_delimiter = ',')]
    pub restrict: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON lines {"u":..,"j":..,"cat":..}.
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Rank each pair only among its candidate set in this directory's
    /// omega.jsonl.
    #[arg(long)]
    pub restrict: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    /// User counts to time, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "10000,20000,40000")]
    pub users: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub slots: usize,
    #[arg(long, default_value_t = 50)]
    pub categories: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 4)]
    pub cands: usize,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = nutf::linalg::DEFAULT_POWER_ITERS)]
    pub power_iters: usize,
    /// Timed outer iterations per point.
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    /// Exit with status 1 if a doubling of N moves per-iteration time
    /// outside [1.4, 2.6].
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
