//! Command-line front end of the `calref` binary.
//!
//! Exit codes: 0 success, 2 input error, 3 method incompatible with the
//! input, 4 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibrate::{fit_isotonic, fit_temperature, Calibrator};
use crate::decompose::{decompose_risk, Estimator};
use crate::error::{Error, Result};
use crate::highdim::{lambda_sweep, log_grid, minimizer_gap_and_gain, SpectralDist, TheoryProblem};
use crate::io::{
    fmt_float, predictions_to_csv, read_epoch_dir, read_predictions, read_text, write_text,
    ReadOptions,
};
use crate::scores::LossKind;
use crate::simulate::replicate_learning_curve;
use crate::stopping::{EpochTracker, Metric, StoppingReport};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "CALREF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "calref", version, about = "Calibration/refinement decomposition, refinement-based early stopping and logistic-regression theory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the risk of a prediction file into calibration and refinement.
    Decompose(DecomposeArgs),
    /// Fit a post-hoc calibrator or apply one to predictions.
    #[command(subcommand)]
    Calibrate(CalibrateCommand),
    /// Pick the best epoch of a training run under each stopping metric.
    Stop(StopArgs),
    /// Asymptotic learning curves and heatmaps of ridge logistic regression.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Finite-sample learning curve with 95% intervals across seeds.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationMethod {
    Ts,
    Isotonic,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Prediction CSV with a `label` column and `p0..` (or `z0..`) columns.
    #[arg(long)]
    pub preds: PathBuf,
    /// Read `z0..` logit columns and softmax them.
    #[arg(long)]
    pub logits: bool,
    /// Rescale probability rows that do not sum to one.
    #[arg(long)]
    pub renormalize: bool,
}

impl InputArgs {
    fn options(&self) -> ReadOptions {
        ReadOptions {
            logits: self.logits,
            renormalize: self.renormalize,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "logloss")]
    pub loss: LossKind,
    #[arg(long, default_value = "ts")]
    pub method: Estimator,
    /// Laplace smoothing of the fitted calibrator.
    #[arg(long, value_enum, default_value = "off")]
    pub smoothing: Switch,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum CalibrateCommand {
    /// Fit a calibrator and write it as JSON.
    Fit(CalibrateFitArgs),
    /// Apply a calibrator JSON to predictions and write the calibrated CSV.
    Apply(CalibrateApplyArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateFitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "ts")]
    pub method: CalibrationMethod,
    /// Loss minimized by temperature scaling.
    #[arg(long, default_value = "logloss")]
    pub loss: LossKind,
    #[arg(long, value_enum, default_value = "off")]
    pub smoothing: Switch,
    /// Output file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateApplyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Calibrator JSON written by `calibrate fit`.
    #[arg(long)]
    pub calibrator: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StopArgs {
    /// Directory of `epoch_NNNN.csv` validation files.
    #[arg(long)]
    pub epoch_dir: PathBuf,
    #[arg(long, default_value = "ts-refinement")]
    pub metric: Metric,
    /// Report the chosen epoch under every metric.
    #[arg(long)]
    pub report_all: bool,
    /// Test predictions per epoch; defaults to `<epoch-dir>/test` when given
    /// without a value. Adds raw and temperature-scaled test metrics.
    #[arg(long, num_args = 0..=1)]
    pub test_dir: Option<Option<PathBuf>>,
    #[arg(long)]
    pub logits: bool,
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = crate::highdim::DEFAULT_EPSILON)]
    pub eps: f64,
}

impl SpectrumArgs {
    fn spectrum(&self) -> Result<SpectralDist> {
        SpectralDist::shifted_beta(self.alpha, self.beta, self.eps)
    }
}

#[derive(Debug, Args)]
pub struct LambdaArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 60)]
    pub lambda_steps: usize,
    /// Explicit comma-separated grid; overrides min/max/steps.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
}

impl LambdaArgs {
    fn grid(&self) -> Result<Vec<f64>> {
        match &self.lambda_grid {
            Some(g) => Ok(g.clone()),
            None => log_grid(self.lambda_min, self.lambda_max, self.lambda_steps),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Risk, calibration and refinement along a lambda grid.
    Curve(CurveArgs),
    /// Minimizer gap and refine-then-calibrate gain over an (r, e*) grid.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    /// Dimensions-to-samples ratio.
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    /// Bayes error rate.
    #[arg(long, default_value_t = 0.1)]
    pub estar: f64,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    #[arg(long, conflicts_with = "r_grid")]
    pub r: Option<f64>,
    /// Comma-separated values of r.
    #[arg(long, value_delimiter = ',')]
    pub r_grid: Option<Vec<f64>>,
    #[arg(long, conflicts_with = "estar_grid")]
    pub estar: Option<f64>,
    /// Comma-separated values of e*.
    #[arg(long, value_delimiter = ',')]
    pub estar_grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, default_value_t = 0.1)]
    pub estar: f64,
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[command(flatten)]
    pub lambda: LambdaArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_incompatibility() {
        EXIT_INCOMPATIBLE
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Caps the global worker pool from [`THREADS_ENV`].
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    message: e.to_string(),
                })
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Decompose(a) => emit(None, &decompose_report(&a)?),
        Command::Calibrate(CalibrateCommand::Fit(a)) => {
            let data = read_predictions(&a.input.preds, a.input.options())?;
            let cal = match a.method {
                CalibrationMethod::Ts => {
                    Calibrator::Temperature(fit_temperature(&data, a.loss, a.smoothing.on())?)
                }
                CalibrationMethod::Isotonic => {
                    Calibrator::Isotonic(fit_isotonic(&data, a.smoothing.on())?)
                }
            };
            let json = serde_json::to_string_pretty(&cal).expect("calibrator serializes") + "\n";
            emit(a.out.as_deref(), &json)
        }
        Command::Calibrate(CalibrateCommand::Apply(a)) => {
            let text = read_text(&a.calibrator)?;
            let cal: Calibrator = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: a.calibrator.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            let data = read_predictions(&a.input.preds, a.input.options())?;
            emit(a.out.as_deref(), &predictions_to_csv(&cal.apply_set(&data)?))
        }
        Command::Stop(a) => emit(None, &stop_report(&a)?),
        Command::Theory(TheoryCommand::Curve(a)) => {
            let text = curve_table(&a)?;
            emit(a.out.as_deref(), &text)
        }
        Command::Theory(TheoryCommand::Heatmap(a)) => {
            let text = heatmap_table(&a)?;
            emit(a.out.as_deref(), &text)
        }
        Command::Simulate(a) => {
            let text = simulate_table(&a)?;
            emit(a.out.as_deref(), &text)
        }
    }
}

/// JSON object or CSV row for `decompose`.
pub fn decompose_report(a: &DecomposeArgs) -> Result<String> {
    let data = read_predictions(&a.input.preds, a.input.options())?;
    let d = decompose_risk(&data, a.loss, a.method, a.smoothing.on())?;
    Ok(match a.format {
        Format::Json => {
            let v = serde_json::json!({
                "risk": d.risk,
                "calibration": d.calibration,
                "refinement": d.refinement,
                "loss": d.loss,
                "estimator": d.estimator,
                "n": data.n(),
                "k": data.k(),
            });
            serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
        }
        Format::Csv => format!(
            "risk,calibration,refinement,loss,estimator,n,k\n{},{},{},{},{},{},{}\n",
            fmt_float(d.risk),
            fmt_float(d.calibration),
            fmt_float(d.refinement),
            d.loss,
            d.estimator,
            data.n(),
            data.k()
        ),
    })
}

fn stop_report(a: &StopArgs) -> Result<String> {
    let opts = ReadOptions {
        logits: a.logits,
        renormalize: a.renormalize,
    };
    let val = read_epoch_dir(&a.epoch_dir, opts)?;
    let mut tracker = EpochTracker::retaining_predictions();
    for (epoch, data) in val.iter().enumerate() {
        tracker.record_epoch(epoch, data)?;
    }
    let metrics: Vec<Metric> = if a.report_all {
        Metric::ALL.to_vec()
    } else {
        vec![a.metric]
    };

    let Some(test_dir) = &a.test_dir else {
        let mut out = String::from("metric,epoch,value\n");
        for m in metrics {
            let e = match tracker.best_epoch(m) {
                Err(Error::UndefinedMetric(name)) if a.report_all => {
                    eprintln!("note: {name} is undefined at every epoch; skipped");
                    continue;
                }
                r => r?,
            };
            let _ = writeln!(out, "{m},{e},{}", fmt_float(tracker.records()[e].get(m)));
        }
        return Ok(out);
    };
    let test_dir = test_dir.clone().unwrap_or_else(|| a.epoch_dir.join("test"));
    let test = read_epoch_dir(&test_dir, opts)?;
    let report = tracker.compare_policies(&test)?;
    for m in &metrics {
        if report.row(*m).is_none() {
            if !a.report_all {
                return Err(Error::UndefinedMetric(m.name().to_string()));
            }
            eprintln!("note: {m} is undefined at every epoch; skipped");
        }
    }
    Ok(policy_table(&report, &metrics))
}

/// The policy comparison as CSV: validation choice, then raw and
/// temperature-scaled test metrics.
pub fn policy_table(report: &StoppingReport, metrics: &[Metric]) -> String {
    let mut out = String::from(
        "metric,epoch,value,beta,test_logloss,test_brier,test_accuracy,test_ece,\
         ts_logloss,ts_brier,ts_accuracy,ts_ece\n",
    );
    for m in metrics {
        let Some(r) = report.row(*m) else { continue };
        let cells = [
            r.value,
            r.beta,
            r.test_raw.logloss,
            r.test_raw.brier,
            r.test_raw.accuracy,
            r.test_raw.ece,
            r.test_ts.logloss,
            r.test_ts.brier,
            r.test_ts.accuracy,
            r.test_ts.ece,
        ];
        let _ = write!(out, "{},{}", r.metric, r.epoch);
        for c in cells {
            out.push(',');
            out.push_str(&fmt_float(c));
        }
        out.push('\n');
    }
    out
}

fn curve_table(a: &CurveArgs) -> Result<String> {
    let grid = a.lambda.grid()?;
    let base = TheoryProblem::new(a.r, a.estar, a.spectrum.spectrum()?, grid[0])?;
    let sweep = lambda_sweep(&base, &grid)?;
    let mut out = String::from(
        "lambda,eta,tau,gamma,alignment,norm,risk,calibration,refinement,error_rate\n",
    );
    for p in &sweep.points {
        let cells = [
            p.eta,
            p.tau,
            p.gamma,
            p.alignment,
            p.norm,
            p.risk,
            p.calibration,
            p.refinement,
            p.error_rate,
        ];
        out.push_str(&fmt_float(p.lambda));
        for c in cells {
            out.push(',');
            out.push_str(&if p.converged { fmt_float(c) } else { "NA".into() });
        }
        out.push('\n');
    }
    let failures = sweep.failures();
    if failures > 0 {
        eprintln!("warning: solver failed at {failures} of {} grid points (NA)", grid.len());
    }
    for (name, m) in [
        ("calibration", sweep.argmin_calibration()),
        ("risk", sweep.argmin_risk()),
        ("refinement", sweep.argmin_refinement()),
    ] {
        if let Some(m) = m {
            eprintln!(
                "argmin {name}: lambda = {}{}",
                fmt_float(m.lambda),
                if m.at_boundary { " (grid boundary)" } else { "" }
            );
        }
    }
    Ok(out)
}

fn one_or_grid(single: Option<f64>, grid: &Option<Vec<f64>>, default: f64) -> Vec<f64> {
    match (single, grid) {
        (_, Some(g)) => g.clone(),
        (Some(v), None) => vec![v],
        (None, None) => vec![default],
    }
}

fn heatmap_table(a: &HeatmapArgs) -> Result<String> {
    let r_grid = one_or_grid(a.r, &a.r_grid, 0.5);
    let estar_grid = one_or_grid(a.estar, &a.estar_grid, 0.1);
    let cells = minimizer_gap_and_gain(
        &a.spectrum.spectrum()?,
        &r_grid,
        &estar_grid,
        &a.lambda.grid()?,
    )?;
    let mut out = String::from(
        "r,estar,lambda_cal,lambda_ref,lambda_loss,log10_gap,gain_percent,\
         cal_at_boundary,ref_at_boundary,failed_points\n",
    );
    let mut failed_cells = 0;
    for c in &cells {
        if !c.ok {
            failed_cells += 1;
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_float(c.r),
            fmt_float(c.estar),
            fmt_float(c.lambda_cal),
            fmt_float(c.lambda_ref),
            fmt_float(c.lambda_loss),
            fmt_float(c.log10_gap),
            fmt_float(c.gain_percent),
            c.cal_at_boundary,
            c.ref_at_boundary,
            c.failed_points
        );
    }
    let partial = cells.iter().filter(|c| c.ok && c.failed_points > 0).count();
    if failed_cells > 0 || partial > 0 {
        eprintln!(
            "warning: {failed_cells} cells failed entirely (NA), {partial} cells had solver failures at some lambda"
        );
    }
    Ok(out)
}

fn simulate_table(a: &SimulateArgs) -> Result<String> {
    if a.seeds == 0 {
        return Err(Error::InvalidParameter("--seeds must be at least 1".into()));
    }
    let grid = a.lambda.grid()?;
    let base = TheoryProblem::new(a.r, a.estar, a.spectrum.spectrum()?, grid[0])?;
    let rep = replicate_learning_curve(&base, &grid, a.n, a.seeds)?;
    let mut out = String::from(
        "lambda,risk_mean,risk_lo,risk_hi,calibration_mean,calibration_lo,calibration_hi,\
         refinement_mean,refinement_lo,refinement_hi,alignment_mean,norm_mean,\
         theory_risk,theory_calibration,theory_refinement\n",
    );
    for p in &rep.points {
        let th = |v: f64| if p.theory.converged { v } else { f64::NAN };
        let cells = [
            p.lambda,
            p.risk.mean,
            p.risk.lo,
            p.risk.hi,
            p.calibration.mean,
            p.calibration.lo,
            p.calibration.hi,
            p.refinement.mean,
            p.refinement.lo,
            p.refinement.hi,
            p.alignment.mean,
            p.norm.mean,
            th(p.theory.risk),
            th(p.theory.calibration),
            th(p.theory.refinement),
        ];
        let row: Vec<String> = cells.iter().map(|&c| fmt_float(c)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if !rep.dropped.is_empty() {
        let list: Vec<String> = rep
            .dropped
            .iter()
            .map(|(s, why)| format!("{s} ({why})"))
            .collect();
        let _ = writeln!(
            out,
            "# dropped {} of {} seeds: {}",
            rep.dropped.len(),
            a.seeds,
            list.join("; ")
        );
    }
    Ok(out)
}
