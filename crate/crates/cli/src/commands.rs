//! Subcommand bodies. Each one reads an [`ExperimentConfig`], calls into the
//! library and writes its files under `output.dir`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use subcusum::detectors::{run_detector_traced, DetectorConfig, StatUpdate, StoppingReport};
use subcusum::format::{write_stream_csv, write_trace_csv};
use subcusum::model::sample_stream;
use subcusum::montecarlo::{calibrate_threshold, compare_procedures, write_comparison_csv, Calibration, CompareSetup, ComparisonRow};
use subcusum::tuning::{tune, TuningResult};

use crate::config::{ConfigError, ExperimentConfig, Origins, Threshold};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(subcusum::Error),
    #[error("{0}")]
    Calibration(subcusum::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::Calibration(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<subcusum::Error> for CliError {
    fn from(e: subcusum::Error) -> Self {
        match e {
            subcusum::Error::Calibration(_) => CliError::Calibration(e),
            _ => CliError::Invalid(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn out_path(cfg: &ExperimentConfig, name: &str) -> CliResult<PathBuf> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.join(name))
}

fn write_file<F>(cfg: &ExperimentConfig, name: &str, body: F) -> CliResult<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let path = out_path(cfg, name)?;
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(&path, e))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: Serialize>(cfg: &ExperimentConfig, name: &str, value: &T) -> CliResult<PathBuf> {
    write_file(cfg, name, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)
    })
}

/// Echo of the resolved configuration next to the results.
fn write_config(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    write_file(cfg, "config.cfg", |out| out.write_all(cfg.to_text().as_bytes()))
}

fn first_gamma(cfg: &ExperimentConfig, origins: &Origins) -> CliResult<f64> {
    match cfg.montecarlo.gamma.first() {
        Some(&g) => Ok(g),
        None => Err(ConfigError {
            origin: Some(origins.of("montecarlo.gamma")),
            field: "montecarlo.gamma".into(),
            message: "need a target ARL to calibrate against".into(),
        }
        .into()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub horizon: usize,
    /// Columns of `stream.csv`.
    pub columns: usize,
    pub reduced: bool,
    pub detector: DetectorConfig,
    pub threshold_b: f64,
    pub calibration: Option<Calibration>,
    pub report: StoppingReport,
}

/// Samples a stream, and runs the configured detector on it.
///
/// Writes `stream.csv`, and with a detector `report.json` and (unless
/// `output.trace = false`) `trace.csv`, which ends at the first crossing.
pub fn simulate(cfg: &ExperimentConfig, origins: &Origins) -> CliResult<Option<SimulateReport>> {
    let original = cfg.scenario(origins)?;
    let (scenario, projection) = cfg.working_scenario(origins)?;
    let detector = cfg.detector_config(&scenario, origins)?;
    let seed = cfg.montecarlo.seed;
    let mut stream = sample_stream(&original, cfg.scenario.horizon, seed)?;
    if let Some(q) = &projection {
        stream = stream.iter().map(|x| q.apply(x)).collect::<Result<_, _>>()?;
    }
    write_config(cfg)?;
    write_file(cfg, "stream.csv", |out| write_stream_csv(&stream, out))?;

    let Some(detector) = detector else {
        return Ok(None);
    };
    let (threshold_b, calibration) = match cfg.detector.b {
        Threshold::Value(b) => (b, None),
        Threshold::Calibrate => {
            let spec = cfg.calibration_spec(first_gamma(cfg, origins)?, origins)?;
            let cal = calibrate_threshold(&detector, &scenario, &spec)?;
            (cal.b, Some(cal))
        }
    };
    let mut updates: Vec<StatUpdate> = Vec::new();
    let mut running = detector.build()?;
    let report = run_detector_traced(&mut running, &stream, threshold_b, stream.len() as u64, |u| updates.push(*u))?;
    if cfg.output.trace {
        write_file(cfg, "trace.csv", |out| write_trace_csv(&updates, threshold_b, out))?;
    }
    let summary = SimulateReport {
        seed,
        horizon: cfg.scenario.horizon,
        columns: scenario.k(),
        reduced: projection.is_some(),
        detector,
        threshold_b,
        calibration,
        report,
    };
    write_json(cfg, "report.json", &summary)?;
    Ok(Some(summary))
}

/// First-order tuning at `(gamma, k, rho, sigma2)`.
pub fn tune_params(gamma: f64, k: usize, rho: f64, sigma2: f64) -> CliResult<TuningResult> {
    Ok(tune(gamma, k, rho, sigma2)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub gamma: f64,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateReport {
    pub detector: DetectorConfig,
    pub rows: Vec<CalibrationRow>,
}

/// Calibrates the configured detector to every target ARL; writes
/// `calibrate.json`.
pub fn calibrate(cfg: &ExperimentConfig, origins: &Origins) -> CliResult<CalibrateReport> {
    let (scenario, _) = cfg.working_scenario(origins)?;
    let detector = cfg.detector_config(&scenario, origins)?.ok_or_else(|| ConfigError {
        origin: Some(origins.of("detector.kind")),
        field: "detector.kind".into(),
        message: "calibration needs a detector".into(),
    })?;
    let specs = cfg
        .montecarlo
        .gamma
        .iter()
        .map(|&g| cfg.calibration_spec(g, origins))
        .collect::<Result<Vec<_>, _>>()?;
    first_gamma(cfg, origins)?;
    write_config(cfg)?;
    let mut rows = Vec::new();
    for spec in specs {
        let calibration = calibrate_threshold(&detector, &scenario, &spec)?;
        rows.push(CalibrationRow {
            gamma: spec.target_gamma,
            calibration,
        });
    }
    let report = CalibrateReport { detector, rows };
    write_json(cfg, "calibrate.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub setup: CompareSetup,
    pub rows: Vec<ComparisonRow>,
}

/// Writes `compare.csv` and its JSON mirror `compare.json`. Failed rows are
/// kept in the table.
pub fn compare(cfg: &ExperimentConfig, origins: &Origins) -> CliResult<CompareReport> {
    let setup = cfg.compare_setup(origins)?;
    write_config(cfg)?;
    let rows = compare_procedures(&setup)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        warn!("{failed} of {} rows failed; see compare.json for the reasons", rows.len());
    }
    write_file(cfg, "compare.csv", |out| write_comparison_csv(&rows, out))?;
    let report = CompareReport { setup, rows };
    write_json(cfg, "compare.json", &report)?;
    Ok(report)
}
