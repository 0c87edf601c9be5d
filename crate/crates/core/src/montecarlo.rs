//! Monte Carlo estimation of ARL and EDD, threshold calibration, and
//! procedure comparisons.
//!
//! Replication `i` always draws from `seeded_rng(master_seed, stream(purpose, i))`
//! and results are aggregated in index order, so every estimate is a pure
//! function of its inputs regardless of the rayon pool it runs in.
//!
//! A replication keeps its detector alive together with the times at which
//! its statistic set a new running maximum. The stopping time for any
//! threshold `b` is the first such record at or above `b`, so evaluating many
//! thresholds on the same replications (common random numbers) costs one
//! simulation extended as far as the largest threshold requires.

use std::io::{self, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{Detector, DetectorConfig, DetectorKind};
use crate::eigen::PowerIteration;
use crate::format::fmt_f64;
use crate::model::{seeded_rng, Flavor, Scenario, StreamSampler};
use crate::tuning::{optimal_drift, predicted_threshold_cusum, solve_delta_inf};
use crate::{Error, Result};

pub const DEFAULT_REPS: usize = 2000;
pub const DEFAULT_REL_TOL: f64 = 0.05;
pub const DEFAULT_CAP_FACTOR: f64 = 50.0;
/// Censored fraction above which an estimate is flagged unreliable.
pub const CENSORING_WARNING: f64 = 0.10;
pub const THRESHOLD_MIN: f64 = 0.1;
pub const THRESHOLD_MAX: f64 = 100.0;
const MAX_SEARCH_STEPS: usize = 100;

pub const COMPARISON_HEADER: &str = "gamma,detector,w,b,arl_hat,arl_se,edd_hat,edd_se,censored_frac,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Arl = 1,
    Edd = 2,
}

fn stream_id(purpose: Purpose, index: usize) -> u64 {
    ((purpose as u64) << 48) | index as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub target_gamma: f64,
    pub rel_tol: f64,
    pub reps: usize,
    pub horizon_cap: u64,
    pub master_seed: u64,
}

impl CalibrationSpec {
    /// Defaults: 5% tolerance, 2000 replications, cap at `50 * gamma`.
    pub fn new(target_gamma: f64, master_seed: u64) -> Result<Self> {
        let spec = Self {
            target_gamma,
            rel_tol: DEFAULT_REL_TOL,
            reps: DEFAULT_REPS,
            horizon_cap: default_cap(target_gamma),
            master_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_gamma.is_finite() && self.target_gamma > 1.0) {
            return Err(Error::invalid("gamma", "target ARL must exceed 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid("rel_tol", "must lie in (0, 1)"));
        }
        if self.reps < 100 {
            return Err(Error::invalid("reps", "at least 100 replications are required"));
        }
        if self.horizon_cap == 0 {
            return Err(Error::invalid("horizon_cap", "must be positive"));
        }
        Ok(())
    }
}

fn default_cap(gamma: f64) -> u64 {
    (DEFAULT_CAP_FACTOR * gamma).ceil().max(1.0) as u64
}

/// Mean effective stopping time over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLengthEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(reps)`.
    pub stderr: f64,
    pub reps: usize,
    /// Replications that hit the horizon cap; they are counted at the cap.
    pub censored: usize,
    pub censored_frac: f64,
    /// More than [`CENSORING_WARNING`] of the replications were censored.
    pub unreliable: bool,
}

impl RunLengthEstimate {
    fn from_times(times: &[(u64, bool)]) -> Self {
        let n = times.len() as f64;
        let mean = times.iter().map(|t| t.0 as f64).sum::<f64>() / n;
        let var = times.iter().map(|t| (t.0 as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let censored = times.iter().filter(|t| t.1).count();
        let censored_frac = censored as f64 / n;
        Self {
            mean,
            stderr: (var / n).sqrt(),
            reps: times.len(),
            censored,
            censored_frac,
            unreliable: censored_frac > CENSORING_WARNING,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Record {
    level: f64,
    time: u64,
}

#[derive(Debug, Clone)]
struct Replication {
    detector: Detector,
    sampler: StreamSampler,
    x: Vec<f64>,
    records: Vec<Record>,
    best: f64,
    time: u64,
}

impl Replication {
    fn advance_to(&mut self, b: f64, cap: u64) -> Result<()> {
        while self.best < b && self.time < cap {
            self.sampler.fill_next(&mut self.x);
            self.time += 1;
            if let Some(up) = self.detector.observe(&self.x)? {
                if up.statistic > self.best {
                    self.best = up.statistic;
                    self.records.push(Record {
                        level: up.statistic,
                        time: up.effective_time,
                    });
                }
            }
        }
        Ok(())
    }

    fn stopping_time(&self, b: f64, cap: u64) -> (u64, bool) {
        let idx = self.records.partition_point(|r| r.level < b);
        match self.records.get(idx) {
            Some(r) => (r.time, false),
            None => (cap, true),
        }
    }
}

/// Replications of one detector on one data law, reusable across thresholds.
#[derive(Debug, Clone)]
pub struct RunLengthSampler {
    replications: Vec<Replication>,
    cap: u64,
}

impl RunLengthSampler {
    fn new(
        detector: &DetectorConfig,
        scenario: &Scenario,
        reps: usize,
        cap: u64,
        master_seed: u64,
        purpose: Purpose,
    ) -> Result<Self> {
        if detector.k() != scenario.k() {
            return Err(Error::DimensionMismatch {
                expected: scenario.k(),
                actual: detector.k(),
            });
        }
        let replications = (0..reps)
            .map(|i| {
                Ok(Replication {
                    detector: detector.build()?,
                    sampler: StreamSampler::new(scenario.clone(), seeded_rng(master_seed, stream_id(purpose, i))),
                    x: vec![0.0; scenario.k()],
                    records: Vec::new(),
                    best: f64::NEG_INFINITY,
                    time: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { replications, cap })
    }

    /// Replications under the pre-change law only.
    pub fn pre_change(detector: &DetectorConfig, scenario: &Scenario, spec: &CalibrationSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(
            detector,
            &scenario.with_tau(u64::MAX),
            spec.reps,
            spec.horizon_cap,
            spec.master_seed,
            Purpose::Arl,
        )
    }

    /// Replications with the change in force from the first sample.
    pub fn post_change(detector: &DetectorConfig, scenario: &Scenario, spec: &CalibrationSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(
            detector,
            &scenario.with_tau(0),
            spec.reps,
            spec.horizon_cap,
            spec.master_seed,
            Purpose::Edd,
        )
    }

    pub fn estimate(&mut self, b: f64) -> Result<RunLengthEstimate> {
        if b.is_nan() {
            return Err(Error::NonFinite("threshold"));
        }
        let cap = self.cap;
        self.replications
            .par_iter_mut()
            .try_for_each(|r| r.advance_to(b, cap))?;
        let times: Vec<(u64, bool)> = self.replications.iter().map(|r| r.stopping_time(b, cap)).collect();
        Ok(RunLengthEstimate::from_times(&times))
    }
}

fn warn_if_unreliable(what: &str, b: f64, est: &RunLengthEstimate) {
    if est.unreliable {
        warn!(
            "{what} at b = {b}: {:.1}% of replications censored at the horizon cap; raise the cap",
            100.0 * est.censored_frac
        );
    }
}

/// Mean run length under the pre-change law (false-alarm rate).
pub fn estimate_arl(
    detector: &DetectorConfig,
    scenario: &Scenario,
    b: f64,
    spec: &CalibrationSpec,
) -> Result<RunLengthEstimate> {
    let est = RunLengthSampler::pre_change(detector, scenario, spec)?.estimate(b)?;
    warn_if_unreliable("ARL", b, &est);
    Ok(est)
}

/// Mean delay with the change at the first sample (`tau = 0`).
pub fn estimate_edd(
    detector: &DetectorConfig,
    scenario: &Scenario,
    b: f64,
    spec: &CalibrationSpec,
) -> Result<RunLengthEstimate> {
    let est = RunLengthSampler::post_change(detector, scenario, spec)?.estimate(b)?;
    warn_if_unreliable("EDD", b, &est);
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub b: f64,
    pub arl_hat: f64,
    pub arl_se: f64,
    pub censored_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub b: f64,
    pub arl: RunLengthEstimate,
    pub transcript: Vec<CalibrationStep>,
}

/// Starting point of the threshold search and the expected slope of
/// `log ARL` in `b`, both from the first-order predictions.
///
/// The Subspace-CUSUM prediction `log(gamma) / delta_inf` overshoots badly at
/// moderate `gamma` (an ARL near `26 gamma` at `gamma = 1e3`, `w = 20`), and
/// overshooting drives replications to the horizon cap, so the search starts
/// at half of it and climbs.
fn initial_threshold(detector: &DetectorConfig, scenario: &Scenario, gamma: f64) -> (f64, Option<f64>) {
    let (guess, slope) = match detector {
        DetectorConfig::ExactCusum { .. } => (predicted_threshold_cusum(gamma).ok(), Some(1.0)),
        DetectorConfig::SubspaceCusum { drift, .. } => match solve_delta_inf(*drift, scenario.pre().sigma2()) {
            Ok(delta) => (Some(0.5 * gamma.ln() / delta), Some(delta)),
            Err(_) => (None, None),
        },
        DetectorConfig::LargestEig { .. } => (Some(scenario.pre().sigma2()), None),
    };
    (guess.unwrap_or(1.0).clamp(THRESHOLD_MIN, THRESHOLD_MAX), slope)
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    b: f64,
    log_arl: f64,
}

/// Threshold whose Monte Carlo ARL is within `rel_tol` of the target.
///
/// The search evaluates every candidate on the same replications, so the ARL
/// is nondecreasing in `b` and a bracket, once found, is narrowed by
/// safeguarded secant steps on `log ARL`.
pub fn calibrate_threshold(
    detector: &DetectorConfig,
    scenario: &Scenario,
    spec: &CalibrationSpec,
) -> Result<Calibration> {
    let mut sampler = RunLengthSampler::pre_change(detector, scenario, spec)?;
    let gamma = spec.target_gamma;
    let target = gamma.ln();
    let mut below: Vec<Probe> = Vec::new();
    let mut above: Option<Probe> = None;
    let mut transcript = Vec::new();
    let (mut b, slope_hint) = initial_threshold(detector, scenario, gamma);
    let mut last_side_below: Option<bool> = None;
    let mut same_side_runs = 0;

    for _ in 0..MAX_SEARCH_STEPS {
        let est = sampler.estimate(b)?;
        transcript.push(CalibrationStep {
            b,
            arl_hat: est.mean,
            arl_se: est.stderr,
            censored_frac: est.censored_frac,
        });
        let ratio = est.mean / gamma;
        if (ratio - 1.0).abs() <= spec.rel_tol {
            warn_if_unreliable("calibrated ARL", b, &est);
            return Ok(Calibration { b, arl: est, transcript });
        }
        let probe = Probe { b, log_arl: est.mean.ln() };
        let is_below = ratio < 1.0;
        if is_below {
            below.push(probe);
        } else if above.is_none_or(|a| b < a.b) {
            above = Some(probe);
        }
        same_side_runs = if last_side_below == Some(is_below) { same_side_runs + 1 } else { 0 };
        last_side_below = Some(is_below);

        let lo = below.iter().copied().max_by(|x, y| x.b.total_cmp(&y.b));
        b = match (lo, above) {
            (Some(lo), Some(hi)) => {
                let width = hi.b - lo.b;
                if width <= 1e-12 * hi.b.max(1.0) {
                    return Err(Error::Calibration(format!(
                        "ARL jumps across the target between b = {} and b = {}; increase reps",
                        lo.b, hi.b
                    )));
                }
                let secant = lo.b + (target - lo.log_arl) / (hi.log_arl - lo.log_arl) * width;
                if same_side_runs >= 1 || !secant.is_finite() {
                    lo.b + 0.5 * width
                } else {
                    secant.clamp(lo.b + 0.05 * width, hi.b - 0.05 * width)
                }
            }
            (Some(lo), None) => {
                if lo.b >= THRESHOLD_MAX {
                    return Err(Error::Calibration(format!(
                        "no threshold in [{THRESHOLD_MIN}, {THRESHOLD_MAX}] reaches ARL {gamma}; last ARL {:.4}",
                        lo.log_arl.exp()
                    )));
                }
                extrapolate_up(&below, target, slope_hint).min(THRESHOLD_MAX)
            }
            (None, Some(hi)) => {
                if hi.b <= THRESHOLD_MIN {
                    return Err(Error::Calibration(format!(
                        "ARL {:.4} already exceeds {gamma} at the smallest threshold {THRESHOLD_MIN}",
                        hi.log_arl.exp()
                    )));
                }
                (0.5 * hi.b).max(THRESHOLD_MIN)
            }
            (None, None) => unreachable!("every probe lands on one side"),
        };
    }
    Err(Error::Calibration(format!(
        "no threshold within {:.1}% of ARL {gamma} after {MAX_SEARCH_STEPS} probes",
        100.0 * spec.rel_tol
    )))
}

/// Next probe above every point seen so far, from the log-ARL slope of the
/// two largest probes (or `slope_hint` before there are two). Steps are
/// capped so an optimistic slope cannot send the replications far past the
/// target.
fn extrapolate_up(below: &[Probe], target: f64, slope_hint: Option<f64>) -> f64 {
    let mut sorted: Vec<Probe> = below.to_vec();
    sorted.sort_by(|x, y| x.b.total_cmp(&y.b));
    let top = sorted[sorted.len() - 1];
    let max_step = 0.5 * top.b + 0.25;
    let slope = match sorted.len() {
        n if n >= 2 => {
            let prev = sorted[n - 2];
            Some((top.log_arl - prev.log_arl) / (top.b - prev.b))
        }
        _ => slope_hint,
    };
    let step = match slope {
        Some(s) if s > 1e-9 => ((target - top.log_arl) / s).min(max_step),
        _ => max_step,
    };
    top.b + step.max(1e-3 * top.b.max(1.0))
}

/// Calibrated threshold with the ARL and EDD measured at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub detector: DetectorConfig,
    pub spec: CalibrationSpec,
    pub threshold_b: f64,
    pub arl: RunLengthEstimate,
    pub edd: RunLengthEstimate,
    pub calibration: Vec<CalibrationStep>,
}

pub fn run_experiment(detector: &DetectorConfig, scenario: &Scenario, spec: &CalibrationSpec) -> Result<ExperimentResult> {
    let calibration = calibrate_threshold(detector, scenario, spec)?;
    let edd = estimate_edd(detector, scenario, calibration.b, spec)?;
    Ok(ExperimentResult {
        detector: detector.clone(),
        spec: *spec,
        threshold_b: calibration.b,
        arl: calibration.arl,
        edd,
        calibration: calibration.transcript,
    })
}

/// A procedure in a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Procedure {
    ExactCusum,
    /// `drift = None` selects the first-order optimal drift for `w`.
    SubspaceCusum { w: usize, drift: Option<f64> },
    LargestEig { w: usize },
    /// Subspace-CUSUM over a window scan, reported per window and at the
    /// window with the smallest measured EDD.
    SubspaceOptimized { windows: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSetup {
    pub scenario: Scenario,
    pub gammas: Vec<f64>,
    pub procedures: Vec<Procedure>,
    pub reps: usize,
    pub rel_tol: f64,
    /// Horizon cap per row as a multiple of its target ARL.
    pub cap_factor: f64,
    pub master_seed: u64,
    pub eigen: PowerIteration,
}

impl CompareSetup {
    pub fn new(scenario: Scenario, gammas: Vec<f64>, procedures: Vec<Procedure>, master_seed: u64) -> Self {
        Self {
            scenario,
            gammas,
            procedures,
            reps: DEFAULT_REPS,
            rel_tol: DEFAULT_REL_TOL,
            cap_factor: DEFAULT_CAP_FACTOR,
            master_seed,
            eigen: PowerIteration::default(),
        }
    }

    fn spec_for(&self, gamma: f64) -> CalibrationSpec {
        CalibrationSpec {
            target_gamma: gamma,
            rel_tol: self.rel_tol,
            reps: self.reps,
            horizon_cap: (self.cap_factor * gamma).ceil().max(1.0) as u64,
            master_seed: self.master_seed,
        }
    }

    fn subspace_config(&self, w: usize, drift: Option<f64>) -> Result<DetectorConfig> {
        let post = self.scenario.post();
        let drift = match drift {
            Some(d) => d,
            None => optimal_drift(post.k(), post.rho(), post.sigma2(), w as f64)?,
        };
        Ok(DetectorConfig::SubspaceCusum {
            k: post.k(),
            w,
            drift,
            eigen: self.eigen,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub gamma: f64,
    /// `exact_cusum`, `subspace_cusum`, `largest_eig`, `subspace_cusum_scan`
    /// or `subspace_cusum_opt`.
    pub detector: String,
    pub w: Option<usize>,
    pub drift: Option<f64>,
    pub b: f64,
    pub arl_hat: f64,
    pub arl_se: f64,
    pub edd_hat: f64,
    pub edd_se: f64,
    pub censored_frac: f64,
    pub edd_censored_frac: f64,
    pub seed: u64,
    pub error: Option<String>,
}

impl ComparisonRow {
    fn failed(gamma: f64, detector: &str, w: Option<usize>, seed: u64, err: &Error) -> Self {
        Self {
            gamma,
            detector: detector.to_string(),
            w,
            drift: None,
            b: f64::NAN,
            arl_hat: f64::NAN,
            arl_se: f64::NAN,
            edd_hat: f64::NAN,
            edd_se: f64::NAN,
            censored_frac: f64::NAN,
            edd_censored_frac: f64::NAN,
            seed,
            error: Some(err.to_string()),
        }
    }

    fn from_result(gamma: f64, detector: &str, res: &ExperimentResult) -> Self {
        let drift = match res.detector {
            DetectorConfig::SubspaceCusum { drift, .. } => Some(drift),
            _ => None,
        };
        Self {
            gamma,
            detector: detector.to_string(),
            w: res.detector.window(),
            drift,
            b: res.threshold_b,
            arl_hat: res.arl.mean,
            arl_se: res.arl.stderr,
            edd_hat: res.edd.mean,
            edd_se: res.edd.stderr,
            censored_frac: res.arl.censored_frac,
            edd_censored_frac: res.edd.censored_frac,
            seed: res.spec.master_seed,
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Calibrates every procedure to each target ARL and measures its EDD.
///
/// Row failures are recorded in the row; only an unusable setup is an error.
pub fn compare_procedures(setup: &CompareSetup) -> Result<Vec<ComparisonRow>> {
    if setup.scenario.flavor() != Flavor::Emerging {
        return Err(Error::invalid("flavor", "comparisons run on emerging scenarios; reduce switching ones first"));
    }
    if setup.scenario.post().rho() <= 0.0 {
        return Err(Error::invalid("theta", "post-change law needs a spike"));
    }
    if setup.gammas.is_empty() || setup.procedures.is_empty() {
        return Err(Error::invalid("gammas", "need at least one target ARL and one procedure"));
    }
    let mut rows = Vec::new();
    for &gamma in &setup.gammas {
        let spec = setup.spec_for(gamma);
        spec.validate()?;
        let seed = spec.master_seed;
        for proc in &setup.procedures {
            match proc {
                Procedure::ExactCusum => {
                    let cfg = DetectorConfig::ExactCusum {
                        model: setup.scenario.post().clone(),
                    };
                    rows.push(run_row(&cfg, setup, &spec, DetectorKind::ExactCusum.as_str()));
                }
                Procedure::SubspaceCusum { w, drift } => {
                    let row = match setup.subspace_config(*w, *drift) {
                        Ok(cfg) => run_row(&cfg, setup, &spec, DetectorKind::SubspaceCusum.as_str()),
                        Err(e) => ComparisonRow::failed(gamma, DetectorKind::SubspaceCusum.as_str(), Some(*w), seed, &e),
                    };
                    rows.push(row);
                }
                Procedure::LargestEig { w } => {
                    let cfg = DetectorConfig::LargestEig {
                        k: setup.scenario.k(),
                        w: *w,
                        eigen: setup.eigen,
                    };
                    rows.push(run_row(&cfg, setup, &spec, DetectorKind::LargestEig.as_str()));
                }
                Procedure::SubspaceOptimized { windows } => {
                    let scan: Vec<ComparisonRow> = windows
                        .iter()
                        .map(|&w| match setup.subspace_config(w, None) {
                            Ok(cfg) => run_row(&cfg, setup, &spec, "subspace_cusum_scan"),
                            Err(e) => ComparisonRow::failed(gamma, "subspace_cusum_scan", Some(w), seed, &e),
                        })
                        .collect();
                    let best = best_window_row(&scan).cloned();
                    rows.extend(scan);
                    rows.push(match best {
                        Some(mut row) => {
                            row.detector = "subspace_cusum_opt".into();
                            row
                        }
                        None => ComparisonRow::failed(
                            gamma,
                            "subspace_cusum_opt",
                            None,
                            seed,
                            &Error::Calibration("no window in the scan succeeded".into()),
                        ),
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn run_row(cfg: &DetectorConfig, setup: &CompareSetup, spec: &CalibrationSpec, label: &str) -> ComparisonRow {
    match run_experiment(cfg, &setup.scenario, spec) {
        Ok(res) => ComparisonRow::from_result(spec.target_gamma, label, &res),
        Err(e) => {
            warn!("{label} at gamma = {}: {e}", spec.target_gamma);
            ComparisonRow::failed(spec.target_gamma, label, cfg.window(), spec.master_seed, &e)
        }
    }
}

/// Successful scan row with the smallest EDD; ties go to the smaller window.
pub fn best_window_row(rows: &[ComparisonRow]) -> Option<&ComparisonRow> {
    rows.iter()
        .filter(|r| r.is_ok())
        .min_by(|a, b| a.edd_hat.total_cmp(&b.edd_hat).then(a.w.cmp(&b.w)))
}

/// CSV with [`COMPARISON_HEADER`]; floats carry 17 significant digits and
/// failed rows carry `NaN` measurements.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{COMPARISON_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.gamma),
            r.detector,
            r.w.map(|w| w.to_string()).unwrap_or_default(),
            fmt_f64(r.b),
            fmt_f64(r.arl_hat),
            fmt_f64(r.arl_se),
            fmt_f64(r.edd_hat),
            fmt_f64(r.edd_se),
            fmt_f64(r.censored_frac),
            r.seed
        )?;
    }
    Ok(())
}
