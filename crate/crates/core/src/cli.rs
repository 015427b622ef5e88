//! Command-line front end: train, forecast, evaluate, diagnose and synth.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, write_breakdown_csv, EvaluationSummary, Observation};
use crate::forecasting::{check_history, rolling_ensemble, ForecastBundle};
use crate::model::Model;
use crate::synthetic::{generate, SyntheticSpec};
use crate::timeseries::{self, diagnose, HourlySeries, HOURS_PER_DAY, TIMESTAMP_FORMAT};
use crate::training::train_ensemble;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "esdrnn", version, about = "Next-day hourly load forecasting with ES-dRNN ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one checkpoint per seed.
    Train(TrainArgs),
    /// Rolling daily forecasts from a directory of checkpoints.
    Forecast(ForecastArgs),
    /// Score a forecast CSV against actuals.
    Evaluate(EvaluateArgs),
    /// Variation coefficients and harmonic contributions per series.
    Diagnose(DiagnoseArgs),
    /// Write the bundled synthetic data set.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hourly CSV `series_id,timestamp,value`; overrides the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated member seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Use the reduced schedule (`--desk-scale false` for the full one).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub desk_scale: Option<bool>,
    /// Last day used for training; later hours are ignored.
    #[arg(long)]
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Directory holding `*.bin` checkpoints with their manifests.
    #[arg(long)]
    pub checkpoints: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub from: NaiveDate,
    #[arg(long)]
    pub to: NaiveDate,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Forecast CSV `series_id,timestamp,point,lower,upper`.
    #[arg(long)]
    pub forecast: PathBuf,
    /// Actuals in the hourly data format.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for `metrics.json` and `breakdown.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV `series_id,metric,value`; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator settings; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Whether every series was processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Complete) => EXIT_OK,
        Ok(Outcome::Partial) => EXIT_PARTIAL,
        Err(e) if e.is_numeric() => EXIT_NUMERIC,
        Err(_) => EXIT_INVALID,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Forecast(a) => forecast(a),
        Command::Evaluate(a) => evaluate_files(a),
        Command::Diagnose(a) => diagnose_file(a),
        Command::Synth(a) => synth(a),
    };
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

fn midnight(day: NaiveDate) -> NaiveDateTime {
    day.and_hms_opt(0, 0, 0).expect("midnight exists")
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.out.is_some() {
        cfg.output = a.out;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if a.ablation.is_some() {
        cfg.ablation = a.ablation;
    }
    if let Some(d) = a.desk_scale {
        cfg.desk_scale = d;
    }
    cfg.validate()?;
    let data_path = cfg.data.clone().ok_or_else(|| Error::Config("no data path given".into()))?;
    let out = cfg.output.clone().ok_or_else(|| Error::Config("no output directory given".into()))?;
    let mut data = timeseries::load_csv(&data_path)?;
    if let Some(to) = a.to {
        let until = midnight(to + Duration::days(1));
        data = data
            .iter()
            .filter(|s| s.start() < until)
            .map(|s| s.truncated(until))
            .collect::<Result<_>>()?;
    }
    cmd_train(&cfg, &data, &out)?;
    Ok(Outcome::Complete)
}

fn checkpoint_stem(seed: u64) -> String {
    format!("member-{seed:04}")
}

/// Trains the ensemble, writes one checkpoint per seed plus `train.log`,
/// and returns the checkpoint paths in seed order.
pub fn cmd_train(cfg: &RunConfig, data: &[HourlySeries], out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let members = train_ensemble(data, &cfg.model_config(), &schedule, &cfg.loss, &cfg.seeds())?;
    std::fs::create_dir_all(out)?;
    let mut log = String::new();
    let mut paths = Vec::with_capacity(members.len());
    for member in members {
        for r in &member.reports {
            log.push_str(&format!("seed={} {r}\n", member.seed));
        }
        let stem = checkpoint_stem(member.seed);
        let ck = Checkpoint { run: cfg.clone(), member };
        paths.push(ck.save(out, &stem)?);
    }
    std::fs::write(out.join("train.log"), log)?;
    Ok(paths)
}

/// Loads every `*.bin` checkpoint in `dir`, sorted by file name.
pub fn load_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut bins: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    if bins.is_empty() {
        return Err(Error::Checkpoint(format!("no checkpoints in {}", dir.display())));
    }
    bins.iter().map(Checkpoint::load).collect()
}

/// Rolling ensemble forecasts for every series with enough history; the
/// ids of skipped series come back alongside.
pub fn cmd_forecast(
    checkpoints: &[Checkpoint],
    data: &[HourlySeries],
    from: NaiveDate,
    to: NaiveDate,
) -> Result<(Vec<ForecastBundle>, Vec<String>)> {
    let first = checkpoints.first().ok_or_else(|| Error::Checkpoint("no checkpoints".into()))?;
    let w_s = first.run.schedule().w_s;
    if checkpoints.iter().any(|c| c.run.schedule().w_s != w_s) {
        return Err(Error::Checkpoint("checkpoints disagree on the warm-up length".into()));
    }
    if to < from {
        return Err(Error::invalid(format!("empty date range {from}..{to}")));
    }
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for s in data {
        match check_history(s, from, to, w_s) {
            Ok(_) => usable.push(s),
            Err(e @ Error::InsufficientHistory { .. }) => {
                log::warn!("skipping: {e}");
                skipped.push(s.id().to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if usable.is_empty() {
        return Err(Error::invalid("no series has enough history for the requested range"));
    }
    let models: Vec<Model> = checkpoints.iter().map(|c| c.member.model.clone()).collect();
    let bundles = rolling_ensemble(&models, &usable, from, to, w_s)?;
    Ok((bundles, skipped))
}

pub fn write_forecast_csv(bundles: &[ForecastBundle], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "timestamp", "point", "lower", "upper"])?;
    for b in bundles {
        for h in 0..HOURS_PER_DAY {
            let ts = b.target_day.and_hms_opt(h as u32, 0, 0).expect("valid hour");
            w.write_record([
                b.series_id.clone(),
                ts.format(TIMESTAMP_FORMAT).to_string(),
                b.point[h].to_string(),
                b.lower[h].to_string(),
                b.upper[h].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn forecast(a: ForecastArgs) -> Result<Outcome> {
    let checkpoints = load_checkpoints(&a.checkpoints)?;
    let data = timeseries::load_csv(&a.data)?;
    let (bundles, skipped) = cmd_forecast(&checkpoints, &data, a.from, a.to)?;
    write_forecast_csv(&bundles, open_output(a.out.as_deref())?)?;
    Ok(if skipped.is_empty() { Outcome::Complete } else { Outcome::Partial })
}

/// One row of a forecast CSV.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct ForecastRow {
    pub series_id: String,
    #[serde(with = "timestamp_format")]
    pub timestamp: NaiveDateTime,
    pub point: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

mod timestamp_format {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&s, super::TIMESTAMP_FORMAT).map_err(serde::de::Error::custom)
    }
}

pub fn read_forecast_csv(reader: impl Read) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = ["series_id", "timestamp", "point", "lower", "upper"];
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(expected) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("expected header {}, got {:?}", expected.join(","), headers),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Pairs forecast rows with actuals; errors list up to ten unmatched rows.
pub fn match_rows(rows: &[ForecastRow], actuals: &[HourlySeries]) -> Result<Vec<Observation>> {
    let by_id: BTreeMap<&str, &HourlySeries> = actuals.iter().map(|s| (s.id(), s)).collect();
    let mut out = Vec::with_capacity(rows.len());
    let mut missing = Vec::new();
    for r in rows {
        match by_id.get(r.series_id.as_str()).and_then(|s| s.index_of(r.timestamp).map(|i| s.values()[i])) {
            Some(actual) => out.push(Observation {
                series_id: r.series_id.clone(),
                timestamp: r.timestamp,
                actual,
                point: r.point,
                lower: r.lower,
                upper: r.upper,
            }),
            None => missing.push(format!("{},{}", r.series_id, r.timestamp.format(TIMESTAMP_FORMAT))),
        }
    }
    if !missing.is_empty() {
        let total = missing.len();
        missing.truncate(10);
        return Err(Error::invalid(format!(
            "{total} forecast rows have no actual value; first: {}",
            missing.join("; ")
        )));
    }
    if out.is_empty() {
        return Err(Error::invalid("forecast file has no rows"));
    }
    Ok(out)
}

/// Writes `metrics.json` and `breakdown.csv` into `out`.
pub fn cmd_evaluate(rows: &[ForecastRow], actuals: &[HourlySeries], out: &Path) -> Result<EvaluationSummary> {
    let summary = evaluate(&match_rows(rows, actuals)?)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let file = std::fs::File::create(out.join("breakdown.csv"))?;
    write_breakdown_csv(&summary, std::io::BufWriter::new(file))?;
    Ok(summary)
}

fn evaluate_files(a: EvaluateArgs) -> Result<Outcome> {
    let rows = read_forecast_csv(std::fs::File::open(&a.forecast)?)?;
    let actuals = timeseries::load_csv(&a.data)?;
    let s = cmd_evaluate(&rows, &actuals, &a.out)?;
    log::info!("MAPE {:.4} over {} series", s.cross_series_mean.mape, s.per_series.len());
    Ok(Outcome::Complete)
}

/// `series_id,metric,value` rows; series that fail are reported by id.
pub fn cmd_diagnose(data: &[HourlySeries], writer: impl Write) -> Result<Vec<String>> {
    let results: Vec<_> = data.par_iter().map(|s| (s.id(), diagnose(s))).collect();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "metric", "value"])?;
    let mut failed = Vec::new();
    for (id, r) in results {
        let d = match r {
            Ok(d) => d,
            Err(e) => {
                log::warn!("diagnostics failed: {e}");
                failed.push(id.to_string());
                continue;
            }
        };
        let mut rows: Vec<(String, Option<f64>)> = vec![
            ("v_daily".into(), Some(d.v_daily)),
            ("v_weekly".into(), d.v_weekly),
            ("v_yearly".into(), d.v_yearly),
        ];
        rows.extend(d.harmonics.iter().map(|(label, _, c)| (format!("harmonic_{label}"), Some(*c))));
        rows.push(("mean_pattern_distance".into(), d.mean_pattern_distance));
        for (metric, v) in rows {
            if let Some(v) = v {
                w.write_record([id, metric.as_str(), v.to_string().as_str()])?;
            }
        }
    }
    w.flush()?;
    Ok(failed)
}

fn diagnose_file(a: DiagnoseArgs) -> Result<Outcome> {
    let data = timeseries::load_csv(&a.data)?;
    let failed = cmd_diagnose(&data, open_output(a.out.as_deref())?)?;
    Ok(if failed.is_empty() { Outcome::Complete } else { Outcome::Partial })
}

fn synth(a: SynthArgs) -> Result<Outcome> {
    let spec: SyntheticSpec = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SyntheticSpec::default(),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    timeseries::write_csv(&a.out, &generate(&spec)?)?;
    Ok(Outcome::Complete)
}
