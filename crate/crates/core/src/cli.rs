//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other I/O failure, 2 usage, 3 missing input
//! file, 4 unparseable input, 5 configuration violation, 6 invalid data.
//! Failures print exactly one line `error[<category>] <message>` to stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::classify::{
    feature_importance, load_model, make_labels_for_steps, save_model, train_forest,
    train_logistic, ClassWeight, LabelVector, Model, TrainConfig,
};
use crate::edap::{edap, ToleranceSet};
use crate::error::Error;
use crate::extract::{extract, ExtractConfig};
use crate::features::{
    build_features, columns_with_window, Channel, FeatureMatrix, FeatureSpec, Stat,
};
use crate::io::{
    read_events_csv, read_features_csv, read_intervals_csv, read_predictions, read_proba_csv,
    read_series_csv, write_events_csv, write_features_csv, write_intervals_csv, write_predictions,
    write_proba_csv, write_series_csv, IngestReport, ProbaTrack,
};
use crate::model::{parse_timestamp, validate_series, EventClass, Series};
use crate::plot::{render_svg, spans_from_events, Marker};
use crate::rules::{detect_all, DetectorConfig};
use crate::synth::{generate_corpus, NonwearSegment, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_INVALID: i32 = 6;

#[derive(Debug)]
pub enum CliError {
    MissingFile(PathBuf),
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn category(&self) -> (&'static str, i32) {
        match self {
            CliError::MissingFile(_) => ("missing_file", EXIT_MISSING_FILE),
            CliError::Usage(_) => ("usage", EXIT_USAGE),
            CliError::Core(e) => match e {
                Error::Io(_) => ("io", EXIT_IO),
                Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => ("io", EXIT_IO),
                Error::Csv(_)
                | Error::Header { .. }
                | Error::Parse(_)
                | Error::ColumnMismatch { .. }
                | Error::Model(_) => ("parse", EXIT_PARSE),
                Error::Config(_) => ("config", EXIT_CONFIG),
                Error::Invalid(_)
                | Error::DuplicatePrediction { .. }
                | Error::MissingClass(_)
                | Error::NothingToScore
                | Error::Collision(_) => ("invalid", EXIT_INVALID),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::MissingFile(p) => format!("no such file: {}", p.display()),
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "sleepstate",
    version,
    about = "Sleep onset/wakeup detection for wrist accelerometer series"
)]
pub struct Cli {
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// File of `key = value` lines supplying flag values; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic corpus (series.csv, events.csv, intervals.csv).
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Compute rolling-window feature columns.
    #[command(args_override_self = true)]
    Features(FeaturesArgs),
    /// Run the rule-based detector.
    #[command(args_override_self = true)]
    Detect(DetectArgs),
    /// Train a per-step sleep classifier.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Predict per-step sleep probabilities.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Turn sleep probabilities into scored events.
    #[command(args_override_self = true)]
    Extract(ExtractArgs),
    /// Score predictions with event detection average precision.
    #[command(args_override_self = true)]
    Score(ScoreArgs),
    /// Render one series as SVG.
    #[command(args_override_self = true)]
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory receiving series.csv, events.csv and intervals.csv.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Number of series to generate.
    #[arg(long, default_value_t = 10)]
    n_series: usize,
    /// Length of each series in days.
    #[arg(long, default_value_t = 7)]
    n_days: u32,
    /// Base seed; each series derives its own seed from it and its index.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Series ids are this prefix plus a three-digit index.
    #[arg(long, default_value = "synth")]
    series_prefix: String,
    /// First sample time, e.g. 2023-01-01T12:00:00-0400.
    #[arg(long, default_value = "2023-01-01T12:00:00-0400")]
    start: String,
    /// Seconds between samples.
    #[arg(long, default_value_t = 5)]
    cadence: u32,
    /// Mean sleep onset, local hour (values past 24 fall after midnight).
    #[arg(long, default_value_t = 22.5)]
    onset_hour_mean: f64,
    /// Standard deviation of the onset hour.
    #[arg(long, default_value_t = 1.0)]
    onset_hour_std: f64,
    /// Mean sleep duration, hours.
    #[arg(long, default_value_t = 9.0)]
    duration_mean_h: f64,
    /// Standard deviation of the sleep duration, hours.
    #[arg(long, default_value_t = 1.0)]
    duration_std_h: f64,
    /// Per-step anglez noise while asleep, degrees.
    #[arg(long, default_value_t = 1.0)]
    sigma_sleep: f64,
    /// Per-step anglez spread while awake, degrees.
    #[arg(long, default_value_t = 25.0)]
    sigma_wake: f64,
    /// Posture changes per hour of sleep.
    #[arg(long, default_value_t = 2.0)]
    posture_rate: f64,
    /// Mean enmo while awake, g.
    #[arg(long, default_value_t = 0.05)]
    enmo_wake: f64,
    /// Mean enmo while asleep, g.
    #[arg(long, default_value_t = 0.005)]
    enmo_sleep: f64,
    /// Non-wear block as START_HOURS:DURATION_MINUTES from the series start; repeatable.
    #[arg(long, value_name = "H:M")]
    nonwear: Vec<String>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    /// Series CSV.
    #[arg(long, value_name = "FILE")]
    series: PathBuf,
    /// Feature CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Window lengths in minutes.
    #[arg(long, value_delimiter = ',', default_value = "5,30,120,480")]
    windows: Vec<u32>,
    /// Statistics per window.
    #[arg(long, value_delimiter = ',', default_value = "mean,max,std")]
    stats: Vec<StatArg>,
    /// Signals to compute features from.
    #[arg(long, value_delimiter = ',', default_value = "anglez,enmo")]
    channels: Vec<ChannelArg>,
    /// Leave out the hour-of-day column.
    #[arg(long)]
    no_hour: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StatArg {
    Mean,
    Max,
    Std,
    Tv,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ChannelArg {
    Anglez,
    Enmo,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Series CSV.
    #[arg(long, value_name = "FILE")]
    series: PathBuf,
    /// Predictions CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// A step is inactive when the smoothed |change in anglez| is below this, degrees.
    #[arg(long, default_value_t = 5.0)]
    angle_threshold: f64,
    /// Rolling-median window for the anglez change, minutes.
    #[arg(long, default_value_t = 5)]
    smoothing_min: u32,
    /// Shortest sleep window kept, minutes.
    #[arg(long, default_value_t = 30)]
    min_window_min: u32,
    /// Active gaps up to this long are merged into the surrounding sleep, minutes.
    #[arg(long, default_value_t = 30)]
    max_interruption_min: u32,
    /// Non-wear when the anglez standard deviation stays below this, degrees.
    #[arg(long, default_value_t = 0.05)]
    nonwear_std: f64,
    /// Shortest non-wear span, minutes.
    #[arg(long, default_value_t = 60)]
    nonwear_min: u32,
    /// Local hour at which one night ends and the next begins.
    #[arg(long, default_value_t = 12)]
    night_boundary_hour: u32,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModelKind {
    Logistic,
    Forest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Feature CSV.
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    /// Ground-truth events CSV used to label each step.
    #[arg(long, value_name = "FILE")]
    events: PathBuf,
    /// Model file (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Classifier kind.
    #[arg(long, value_enum, default_value_t = ModelKind::Forest)]
    model: ModelKind,
    /// Feature importance CSV (forest only); defaults to importance.csv beside the model.
    #[arg(long, value_name = "FILE")]
    importance_out: Option<PathBuf>,
    /// Train on these columns only.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Train only on columns computed over this window, in minutes.
    #[arg(long, value_name = "MINUTES")]
    only_window: Option<u32>,
    /// Keep every Nth training row.
    #[arg(long, default_value_t = 1)]
    subsample: usize,
    /// Logistic: gradient-descent step size.
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    /// Logistic: full-batch gradient steps.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// balanced, uniform, or W0,W1.
    #[arg(long, default_value = "balanced")]
    class_weight: String,
    /// Forest: number of trees.
    #[arg(long, default_value_t = 50)]
    n_estimators: usize,
    /// Forest: fewest training rows per leaf.
    #[arg(long, default_value_t = 100)]
    min_samples_leaf: usize,
    /// Forest: deepest split level.
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    /// Candidate features per split [default: floor(sqrt(columns))].
    #[arg(long)]
    features_per_split: Option<usize>,
    /// Forest: random seed for bootstraps and feature sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model file written by train.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Feature CSV with the columns the model was trained on.
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    /// Probability CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Probability CSV written by predict.
    #[arg(long, value_name = "FILE")]
    proba: PathBuf,
    /// Series CSV the probabilities belong to.
    #[arg(long, value_name = "FILE")]
    series: PathBuf,
    /// Predictions CSV.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Centred moving-average window applied to the probabilities, minutes.
    #[arg(long, default_value_t = 10)]
    smooth_window_min: u32,
    /// Enter sleep when the smoothed probability rises above this.
    #[arg(long, default_value_t = 0.6)]
    theta_on: f64,
    /// Leave sleep when the smoothed probability falls below this.
    #[arg(long, default_value_t = 0.4)]
    theta_off: f64,
    /// Events need confidence strictly above this.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Shortest sleep window kept, minutes.
    #[arg(long, default_value_t = 30)]
    min_window_min: u32,
    /// Wake gaps up to this long are merged into the surrounding sleep, minutes.
    #[arg(long, default_value_t = 30)]
    max_interruption_min: u32,
    /// Non-wear when the anglez standard deviation stays below this, degrees.
    #[arg(long, default_value_t = 0.05)]
    nonwear_std: f64,
    /// Shortest non-wear span, minutes.
    #[arg(long, default_value_t = 60)]
    nonwear_min: u32,
    /// Local hour at which one night ends and the next begins.
    #[arg(long, default_value_t = 12)]
    night_boundary_hour: u32,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Predictions CSV.
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    /// Ground-truth events CSV.
    #[arg(long, value_name = "FILE")]
    events: PathBuf,
    /// Scoring intervals CSV; predictions outside them are dropped.
    #[arg(long, value_name = "FILE")]
    intervals: Option<PathBuf>,
    /// Comma-separated step tolerances.
    #[arg(long, default_value = "12,36,60,90,120,150,180,240,300,360")]
    tolerances: String,
    /// Also write the report CSV here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Report format on stdout.
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Series CSV.
    #[arg(long, value_name = "FILE")]
    series: PathBuf,
    /// SVG output.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Series to draw [default: the first in the file].
    #[arg(long)]
    series_id: Option<String>,
    /// Ground-truth events, shaded red.
    #[arg(long, value_name = "FILE")]
    events: Option<PathBuf>,
    /// Predicted events, shaded blue.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match try_run(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (cat, code) = e.category();
            let msg = e.message().replace(['\n', '\r'], " ");
            eprintln!("error[{cat}] {msg}");
            code
        }
    }
}

fn try_run(args: Vec<OsString>) -> CliResult<()> {
    let args = inject_config(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                // a closed pipe (e.g. `| head`) is not an error here
                let _ = e.print();
                return Ok(());
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            return Err(CliError::Usage(first.to_string()));
        }
    };
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(Error::Config("threads must be at least 1".into()).into());
            }
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| CliError::Core(Error::Config(format!("cannot start thread pool: {e}"))))?
    };
    pool.install(|| dispatch(cli.command))
}

/// Splices `--key value` pairs from the config file in directly after the
/// subcommand name, so explicit flags that follow override them.
fn inject_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut config: Option<PathBuf> = None;
    let mut sub_at: Option<usize> = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" || a == "--threads" {
            if a == "--config" {
                config = args.get(i + 1).map(PathBuf::from);
            }
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if !a.starts_with('-') && sub_at.is_none() {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, sub_at) else {
        return Ok(args);
    };
    let sub_name = args[at].to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingFile(path.clone()),
        _ => CliError::from(e),
    })?;

    let root = Cli::command();
    let mut known: BTreeSet<String> = BTreeSet::new();
    let mut flags: BTreeMap<String, bool> = BTreeMap::new();
    for sub in root.get_subcommands() {
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                known.insert(long.to_string());
                if sub.get_name() == sub_name {
                    flags.insert(long.to_string(), arg.get_action().takes_values());
                }
            }
        }
    }

    // a flag given on the command line replaces the file's value outright,
    // which matters for repeatable flags that would otherwise accumulate
    let explicit: BTreeSet<String> = args[at + 1..]
        .iter()
        .filter_map(|a| {
            let a = a.to_string_lossy();
            let name = a.strip_prefix("--")?;
            Some(name.split_once('=').map_or(name, |(k, _)| k).to_string())
        })
        .collect();

    let mut extra: Vec<OsString> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key = value",
                path.display(),
                n + 1
            ))
            .into());
        };
        let key = k.trim().replace('_', "-");
        let value = v.trim();
        if key == "threads" || key == "config" {
            return Err(Error::Config(format!(
                "{}:{}: {key} must be given on the command line",
                path.display(),
                n + 1
            ))
            .into());
        }
        if !known.contains(&key) {
            return Err(Error::Config(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                n + 1
            ))
            .into());
        }
        if explicit.contains(&key) {
            continue;
        }
        match flags.get(&key) {
            None => {}
            Some(true) => {
                extra.push(format!("--{key}").into());
                extra.push(value.into());
            }
            Some(false) => match value {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{}:{}: {key} takes true or false, got {value:?}",
                        path.display(),
                        n + 1
                    ))
                    .into())
                }
            },
        }
    }
    let mut out = args[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Features(a) => cmd_features(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Score(a) => cmd_score(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
            _ => CliError::from(e),
        })
}

/// Creates `path` and any missing parent directories.
fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let with_path = |e: std::io::Error| {
        CliError::from(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(with_path)?;
    }
    File::create(path).map(BufWriter::new).map_err(with_path)
}

fn note_ingest(path: &Path, report: &IngestReport) {
    if report.rows_skipped > 0 || report.clamped_enmo > 0 {
        let reasons: Vec<String> = report
            .skip_reasons
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        eprintln!(
            "note: {}: read {} rows, skipped {} [{}], clamped {} negative enmo",
            path.display(),
            report.rows_read,
            report.rows_skipped,
            reasons.join(" "),
            report.clamped_enmo
        );
    }
}

fn load_series(path: &Path) -> CliResult<Vec<Series>> {
    let (series, report) = read_series_csv(open(path)?)?;
    note_ingest(path, &report);
    for s in &series {
        let v = validate_series(s);
        if let Some(first) = v.first() {
            return Err(Error::Invalid(format!(
                "series {} has {} violation(s), first: {}",
                s.series_id,
                v.len(),
                first.description
            ))
            .into());
        }
    }
    Ok(series)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let nonwear = a
        .nonwear
        .iter()
        .map(|s| {
            let bad = || Error::Config(format!("non-wear block {s:?} is not HOURS:MINUTES"));
            let (h, m) = s.split_once(':').ok_or_else(bad)?;
            Ok(NonwearSegment {
                start_hour_offset: h.trim().parse().map_err(|_| bad())?,
                duration_min: m.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let start = parse_timestamp(&a.start).map_err(|e| Error::Config(format!("start: {e}")))?;
    let cfg = SynthConfig {
        series_id: a.series_prefix,
        start,
        n_days: a.n_days,
        cadence_seconds: a.cadence,
        sleep_onset_hour_mean: a.onset_hour_mean,
        sleep_onset_hour_std: a.onset_hour_std,
        sleep_duration_mean_h: a.duration_mean_h,
        sleep_duration_std_h: a.duration_std_h,
        sigma_sleep_deg: a.sigma_sleep,
        sigma_wake_deg: a.sigma_wake,
        posture_change_rate_per_hour: a.posture_rate,
        enmo_wake_mean: a.enmo_wake,
        enmo_sleep_mean: a.enmo_sleep,
        nonwear_segments: nonwear,
        rng_seed: a.seed,
    };
    cfg.validate()?;
    if a.n_series == 0 {
        return Err(Error::Config("n_series must be at least 1".into()).into());
    }
    let corpus = generate_corpus(&cfg, a.n_series)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let series: Vec<Series> = corpus.iter().map(|c| c.series.clone()).collect();
    let events: Vec<_> = corpus
        .iter()
        .flat_map(|c| c.events.iter().cloned())
        .collect();
    let intervals: Vec<_> = corpus
        .iter()
        .flat_map(|c| c.intervals.iter().cloned())
        .collect();
    write_series_csv(&series, create(&a.out_dir.join("series.csv"))?)?;
    write_events_csv(&events, create(&a.out_dir.join("events.csv"))?)?;
    write_intervals_csv(&intervals, create(&a.out_dir.join("intervals.csv"))?)?;
    println!(
        "wrote {} series, {} events to {}",
        series.len(),
        events.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_features(a: FeaturesArgs) -> CliResult<()> {
    let series = load_series(&a.series)?;
    if a.windows.contains(&0) {
        return Err(Error::Config("feature windows must be at least 1 minute".into()).into());
    }
    let matrices = series
        .par_iter()
        .map(|s| {
            let mut specs = Vec::new();
            for ch in &a.channels {
                let channel = match ch {
                    ChannelArg::Anglez => Channel::Anglez,
                    ChannelArg::Enmo => Channel::Enmo,
                };
                for &w in &a.windows {
                    for st in &a.stats {
                        let stat = match st {
                            StatArg::Mean => Stat::Mean,
                            StatArg::Max => Stat::Max,
                            StatArg::Std => Stat::Std,
                            StatArg::Tv => Stat::TotalVariation,
                        };
                        specs.push(FeatureSpec::from_minutes(
                            channel,
                            stat,
                            w,
                            s.cadence_seconds,
                        ));
                    }
                }
            }
            build_features(s, &specs, !a.no_hour)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_features_csv(&matrices, create(&a.out)?)?;
    let cols = matrices.first().map_or(0, FeatureMatrix::n_cols);
    println!("wrote {cols} feature columns for {} series", matrices.len());
    Ok(())
}

fn detector_config(a: &DetectArgs) -> DetectorConfig {
    DetectorConfig {
        angle_change_threshold_deg: a.angle_threshold,
        smoothing_window_min: a.smoothing_min,
        min_window_min: a.min_window_min,
        max_interruption_min: a.max_interruption_min,
        nonwear_std_threshold_deg: a.nonwear_std,
        nonwear_min_duration_min: a.nonwear_min,
        night_boundary_hour: a.night_boundary_hour,
    }
}

fn cmd_detect(a: DetectArgs) -> CliResult<()> {
    let cfg = detector_config(&a);
    cfg.validate()?;
    let series = load_series(&a.series)?;
    let results = detect_all(&series, &cfg)?;
    let events: Vec<_> = results.into_iter().flat_map(|(_, e)| e).collect();
    write_predictions(&events, create(&a.out)?)?;
    println!("wrote {} events for {} series", events.len(), series.len());
    Ok(())
}

fn parse_class_weight(s: &str) -> Result<ClassWeight, Error> {
    match s.trim() {
        "balanced" => Ok(ClassWeight::Balanced),
        "uniform" => Ok(ClassWeight::Uniform),
        other => {
            let bad = || {
                Error::Config(format!(
                    "class weight {other:?} is not balanced, uniform or W0,W1"
                ))
            };
            let (w0, w1) = other.split_once(',').ok_or_else(bad)?;
            Ok(ClassWeight::Explicit(
                w0.trim().parse().map_err(|_| bad())?,
                w1.trim().parse().map_err(|_| bad())?,
            ))
        }
    }
}

fn select_columns(x: FeatureMatrix, keep: &[String]) -> Result<FeatureMatrix, Error> {
    let mut columns = Vec::with_capacity(keep.len());
    for name in keep {
        let j = x
            .column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::ColumnMismatch {
                missing: vec![name.clone()],
                extra: Vec::new(),
            })?;
        columns.push(x.columns[j].clone());
    }
    Ok(FeatureMatrix {
        column_names: keep.to_vec(),
        columns,
        ..x
    })
}

fn every_nth(x: FeatureMatrix, y: LabelVector, k: usize) -> (FeatureMatrix, LabelVector) {
    if k <= 1 {
        return (x, y);
    }
    let pick = |v: &[f64]| v.iter().step_by(k).copied().collect::<Vec<_>>();
    let columns = x.columns.iter().map(|c| pick(c)).collect();
    let steps = x.steps.iter().step_by(k).copied().collect();
    let values = y.values.iter().step_by(k).copied().collect();
    (
        FeatureMatrix {
            columns,
            steps,
            ..x
        },
        LabelVector {
            values,
            dropped_nights: y.dropped_nights,
        },
    )
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        class_weight: parse_class_weight(&a.class_weight)?,
        n_estimators: a.n_estimators,
        min_samples_leaf: a.min_samples_leaf,
        max_depth: a.max_depth,
        features_per_split: a.features_per_split,
        rng_seed: a.seed,
    };
    cfg.validate()?;
    if a.subsample == 0 {
        return Err(Error::Config("subsample must be at least 1".into()).into());
    }
    let matrices = read_features_csv(open(&a.features)?)?;
    let (events, report) = read_events_csv(open(&a.events)?)?;
    note_ingest(&a.events, &report);

    let mut labels = Vec::new();
    let mut dropped = 0;
    for m in &matrices {
        let y = make_labels_for_steps(&m.series_id, &m.steps, &events);
        dropped += y.dropped_nights;
        labels.extend(y.values);
    }
    if dropped > 0 {
        eprintln!("note: {dropped} night(s) without a valid onset/wakeup pair were labelled awake");
    }
    let mut x = FeatureMatrix::concat(&matrices)?;
    let mut keep: Vec<String> = if a.columns.is_empty() {
        x.column_names.clone()
    } else {
        a.columns.clone()
    };
    if let Some(m) = a.only_window {
        keep = columns_with_window(&keep, m);
        if keep.is_empty() {
            return Err(
                Error::Config(format!("no feature columns use a {m} minute window")).into(),
            );
        }
    }
    if keep != x.column_names {
        x = select_columns(x, &keep)?;
    }
    let y = LabelVector {
        values: labels,
        dropped_nights: dropped,
    };
    let (x, y) = every_nth(x, y, a.subsample);

    let model = match a.model {
        ModelKind::Logistic => Model::Logistic(train_logistic(&x, &y, &cfg)?),
        ModelKind::Forest => Model::Forest(train_forest(&x, &y, &cfg)?),
    };
    let mut out = create(&a.out)?;
    save_model(&model, &mut out)?;
    out.flush()?;

    if let Model::Forest(f) = &model {
        let path = a.importance_out.clone().unwrap_or_else(|| {
            a.out.parent().map_or_else(
                || PathBuf::from("importance.csv"),
                |p| p.join("importance.csv"),
            )
        });
        let mut imp = feature_importance(f);
        imp.sort_by(|l, r| r.1.total_cmp(&l.1).then_with(|| l.0.cmp(&r.0)));
        let mut w = create(&path)?;
        writeln!(w, "feature,importance")?;
        for (name, v) in &imp {
            writeln!(w, "{name},{v}")?;
        }
        w.flush()?;
    }
    println!(
        "trained {} model on {} rows x {} columns",
        match a.model {
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
        },
        x.n_rows(),
        x.n_cols()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let model = load_model(open(&a.model)?)?;
    let matrices = read_features_csv(open(&a.features)?)?;
    let tracks = matrices
        .iter()
        .map(|m| {
            Ok(ProbaTrack {
                series_id: m.series_id.clone(),
                steps: m.steps.clone(),
                proba: model.predict_proba(m)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    write_proba_csv(&tracks, create(&a.out)?)?;
    println!("wrote probabilities for {} series", tracks.len());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> CliResult<()> {
    let cfg = ExtractConfig {
        smooth_window_min: a.smooth_window_min,
        theta_on: a.theta_on,
        theta_off: a.theta_off,
        tau: a.tau,
        min_window_min: a.min_window_min,
        max_interruption_min: a.max_interruption_min,
        night_boundary_hour: a.night_boundary_hour,
        nonwear_std_threshold_deg: a.nonwear_std,
        nonwear_min_duration_min: a.nonwear_min,
    };
    cfg.validate()?;
    let tracks = read_proba_csv(open(&a.proba)?)?;
    let series = load_series(&a.series)?;
    let by_id: BTreeMap<&str, &Series> = series.iter().map(|s| (s.series_id.as_str(), s)).collect();
    let per_track = tracks
        .par_iter()
        .map(|t| {
            let s = by_id.get(t.series_id.as_str()).ok_or_else(|| {
                Error::Invalid(format!(
                    "no series {} in {}",
                    t.series_id,
                    a.series.display()
                ))
            })?;
            if s.steps() != t.steps {
                return Err(Error::Invalid(format!(
                    "probability steps for {} do not match the series steps",
                    t.series_id
                )));
            }
            extract(&t.proba, s, &cfg).map(|(_, e)| e)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let events: Vec<_> = per_track.into_iter().flatten().collect();
    write_predictions(&events, create(&a.out)?)?;
    println!("wrote {} events for {} series", events.len(), tracks.len());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> CliResult<()> {
    let tolerances = ToleranceSet::parse(&a.tolerances)?;
    let preds = read_predictions(open(&a.predictions)?)?;
    let (gts, report) = read_events_csv(open(&a.events)?)?;
    note_ingest(&a.events, &report);
    let intervals = a
        .intervals
        .as_deref()
        .map(|p| read_intervals_csv(open(p)?).map_err(CliError::from))
        .transpose()?;
    let r = edap(&preds, &gts, &tolerances, intervals.as_deref())?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        r.write_csv(&mut w)?;
        w.flush()?;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match a.format {
        ReportFormat::Text => write!(lock, "{}", r.to_text())?,
        ReportFormat::Csv => r.write_csv(&mut lock)?,
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> CliResult<()> {
    let series = load_series(&a.series)?;
    let s = match &a.series_id {
        Some(id) => series
            .iter()
            .find(|s| &s.series_id == id)
            .ok_or_else(|| Error::Invalid(format!("no series {id} in {}", a.series.display())))?,
        None => series
            .first()
            .ok_or_else(|| Error::Invalid(format!("{} holds no series", a.series.display())))?,
    };
    let mut spans = Vec::new();
    let mut markers = Vec::new();
    if let Some(p) = &a.events {
        let (ev, _) = read_events_csv(open(p)?)?;
        let own: Vec<(u64, EventClass)> = ev
            .iter()
            .filter(|e| e.series_id == s.series_id)
            .map(|e| (e.step, e.class))
            .collect();
        spans.extend(spans_from_events(&own, "#e74c3c"));
        markers.extend(own.iter().map(|&(step, class)| Marker { step, class }));
    }
    if let Some(p) = &a.predictions {
        let ev = read_predictions(open(p)?)?;
        let own: Vec<(u64, EventClass)> = ev
            .iter()
            .filter(|e| e.series_id == s.series_id)
            .map(|e| (e.step, e.class))
            .collect();
        spans.extend(spans_from_events(&own, "#3498db"));
    }
    let mut w = create(&a.out)?;
    w.write_all(render_svg(s, &spans, &markers).as_bytes())?;
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}
