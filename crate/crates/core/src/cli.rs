//! Command-line front end: `synth`, `fit`, `forecast`, `evaluate`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calendar::CalendarSpec;
use crate::error::{Error, ErrorKind, Result};
use crate::filter::{BreakpointPlan, FilterModel};
use crate::forecast::{evaluate, read_predictions, two_stage_forecast};
use crate::net::NetConfig;
use crate::series::{DailySeries, ExclusionMask};
use crate::synth::{generate, SynthParams};

#[derive(Debug, Parser)]
#[command(name = "loadcast", version, about = "Two-stage daily electricity consumption forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic series with its ground truth.
    Synth {
        #[arg(long)]
        params: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the piecewise linear filter and write residuals and a report.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the filter, train the residual net and forecast the horizon.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare a forecast CSV with observed values.
    Evaluate {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        actual: PathBuf,
        /// Metrics JSON destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One pipeline run. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub calendar: PathBuf,
    #[serde(default)]
    pub breakpoints: BreakpointPlan,
    /// Inclusive date ranges left out of fitting, training and metrics.
    #[serde(default)]
    pub exclude: ExclusionMask,
    /// First day not used for training; later days serve as actuals.
    #[serde(default)]
    pub split: Option<NaiveDate>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_horizon() -> usize {
    90
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.calendar, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if let Some(seed) = cfg.seed {
            cfg.net.seed = seed;
        }
        cfg.net.validate()?;
        Ok(cfg)
    }
}

/// Loaded inputs shared by `fit` and `forecast`.
struct Inputs {
    train: DailySeries,
    rest: Option<DailySeries>,
    spec: CalendarSpec,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let spec = CalendarSpec::load(&cfg.calendar)?;
    let series = DailySeries::load(&cfg.data)?;
    cfg.exclude.validate_for(&series)?;
    let (train, rest) = match cfg.split {
        Some(boundary) => {
            let (a, b) = series.split(boundary)?;
            (a, Some(b))
        }
        None => (series, None),
    };
    Ok(Inputs { train, rest, spec })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, json: &str) -> Result<()> {
    write_file(path, format!("{json}\n").as_bytes())
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub group: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub training_start: NaiveDate,
    pub training_end: NaiveDate,
    pub retained_rows: usize,
    pub excluded_rows: usize,
    pub training_rmse: f64,
    pub coefficients: Vec<CoefficientRow>,
}

impl FitReport {
    pub fn new(model: &FilterModel) -> Self {
        Self {
            training_start: model.training_start,
            training_end: model.training_end,
            retained_rows: model.observations,
            excluded_rows: model.excluded,
            training_rmse: model.training_rmse(),
            coefficients: model
                .coefficient_table()
                .into_iter()
                .map(|(name, group, estimate, std_error)| CoefficientRow {
                    name,
                    group: group.to_string(),
                    estimate,
                    std_error,
                })
                .collect(),
        }
    }

    fn render(&self) -> String {
        let mut s = format!(
            "training span {}..={}: {} rows retained, {} excluded, rmse {:.3}\n",
            self.training_start, self.training_end, self.retained_rows, self.excluded_rows, self.training_rmse
        );
        s.push_str(&format!("{:<28} {:>16} {:>14}\n", "coefficient", "estimate", "std_error"));
        for r in &self.coefficients {
            s.push_str(&format!("{:<28} {:>16.4} {:>14.4}\n", r.name, r.estimate, r.std_error));
        }
        s
    }
}

fn fit_and_write(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> Result<FilterModel> {
    let model = FilterModel::fit(&inputs.train, &cfg.exclude, &cfg.breakpoints, &inputs.spec)?;
    let residuals = model.residuals(&inputs.train, &cfg.exclude, &inputs.spec)?;
    create_dir(out)?;
    write_json(&out.join("filter_model.json"), &model.to_json())?;
    write_with(&out.join("residuals.csv"), |b| residuals.write_csv(b))?;
    let report = FitReport::new(&model);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_json(&out.join("fit_report.json"), &json)?;
    Ok(model)
}

pub fn cmd_synth(params: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut p = SynthParams::load(params)?;
    if let Some(s) = seed {
        p.seed = s;
    }
    let (series, truth) = generate(&p)?;
    create_dir(out)?;
    write_with(&out.join("data.csv"), |b| series.write_csv(b))?;
    write_with(&out.join("ground_truth.csv"), |b| truth.write_csv(b))?;
    let cal = serde_json::to_string_pretty(&p.calendar).expect("calendar serializes");
    write_json(&out.join("calendar.json"), &cal)?;
    let plan = serde_json::to_string_pretty(&truth.plan_until(series.end())).expect("plan serializes");
    write_json(&out.join("breakpoints.json"), &plan)?;
    println!("wrote {} days ({}..={}) to {}", series.len(), series.start(), series.end(), out.display());
    Ok(())
}

pub fn cmd_fit(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let inputs = load_inputs(&cfg)?;
    let out = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    let model = fit_and_write(&cfg, &inputs, &out)?;
    print!("{}", FitReport::new(&model).render());
    Ok(())
}

pub fn cmd_forecast(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.net.seed = s;
    }
    let inputs = load_inputs(&cfg)?;
    let out = out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    let run = two_stage_forecast(
        &inputs.train,
        &cfg.exclude,
        &inputs.spec,
        &cfg.breakpoints,
        &cfg.net,
        cfg.horizon,
    )?;
    let mut forecast = run.forecast;
    let covered = inputs
        .rest
        .as_ref()
        .filter(|rest| forecast.dates.last().is_some_and(|&d| rest.contains(d)));
    if let Some(rest) = covered {
        forecast = forecast.with_actual(rest)?;
    }

    create_dir(&out)?;
    write_json(&out.join("filter_model.json"), &run.filter.to_json())?;
    write_with(&out.join("residuals.csv"), |b| run.residuals.write_csv(b))?;
    let report = serde_json::to_string_pretty(&FitReport::new(&run.filter)).expect("report serializes");
    write_json(&out.join("fit_report.json"), &report)?;
    write_json(&out.join("residual_net.json"), &run.net.to_json())?;
    write_with(&out.join("training_log.csv"), |b| run.log.write_csv(b))?;
    write_with(&out.join("forecast.csv"), |b| forecast.write_csv(b))?;
    println!(
        "forecast {}..={} written to {} (best epoch {})",
        forecast.dates[0],
        forecast.dates[forecast.len() - 1],
        out.display(),
        run.log.best_epoch
    );
    if forecast.actual.is_some() {
        let metrics = forecast.metrics(&cfg.exclude)?;
        write_json(&out.join("metrics.json"), &metrics.to_json())?;
        println!("rmse {:.3}  mape {:.4}%  over {} days", metrics.rmse, metrics.mape, metrics.n);
    }
    Ok(())
}

pub fn cmd_evaluate(forecast: &Path, actual: &Path, out: Option<&Path>) -> Result<()> {
    let file = fs::File::open(forecast).map_err(|e| Error::io(forecast, e))?;
    let predictions = read_predictions(file)?;
    let actual = DailySeries::load(actual)?;
    let metrics = evaluate(&predictions, &actual)?;
    let json = metrics.to_json();
    match out {
        Some(path) => write_json(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { params, out, seed } => cmd_synth(&params, &out, seed),
        Command::Fit { config, out } => cmd_fit(&config, out.as_deref()),
        Command::Forecast { config, out, seed } => cmd_forecast(&config, out.as_deref(), seed),
        Command::Evaluate { forecast, actual, out } => cmd_evaluate(&forecast, &actual, out.as_deref()),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

/// Parses `std::env::args`, runs the command and maps failures to exit
/// codes with a diagnostic on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
