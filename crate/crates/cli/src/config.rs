//! Experiment configuration: flat `key = value` text under `[section]`
//! headers.
//!
//! ```text
//! [scenario]
//! flavor = emerging
//! k = 5
//! theta = 1
//! u = e1
//!
//! [detector]
//! kind = subspace_cusum
//! w = 20
//! d = auto
//! b = calibrate
//! ```
//!
//! Every key has a default, so an empty file is a valid configuration.
//! `#` starts a comment. Overrides of the form `section.key=value` go through
//! the same parser as the file and win over it.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use subcusum::detectors::{DetectorConfig, DetectorKind};
use subcusum::eigen::PowerIteration;
use subcusum::model::{basis_vector, random_unit_vector, seeded_rng, Flavor, ProjectionOperator, Scenario, SpikedModel};
use subcusum::montecarlo::{CalibrationSpec, CompareSetup, Procedure};
use subcusum::tuning::optimal_drift;

/// Stream id for drawing `random` directions, disjoint from the data and
/// replication streams.
const DIRECTION_STREAM: u64 = 3 << 48;

/// Where a configuration error was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub origin: Option<Origin>,
    /// `section.key`, or empty for structural errors.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.origin {
            Some(Origin::Line(n)) => write!(f, "line {n}: ")?,
            Some(Origin::Override) => write!(f, "override: ")?,
            Some(Origin::Default) | None => {}
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        f.write_str(&self.message)
    }
}

impl ConfigError {
    fn at(origin: Origin, field: &str, message: impl Into<String>) -> Self {
        Self {
            origin: Some(origin),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// A direction given as `random`, a basis vector `e1`..`ek`, or a
/// comma-separated list (normalized on use).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Direction {
    Random,
    Basis(usize),
    Explicit(Vec<f64>),
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Random => f.write_str("random"),
            Direction::Basis(i) => write!(f, "e{}", i + 1),
            Direction::Explicit(v) => f.write_str(&join(v)),
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "random" {
            return Ok(Direction::Random);
        }
        if let Some(i) = s.strip_prefix('e').and_then(|n| n.parse::<usize>().ok()) {
            if i == 0 {
                return Err("basis vectors are numbered from e1".into());
            }
            return Ok(Direction::Basis(i - 1));
        }
        let v = parse_list::<f64>(s).map_err(|_| format!("expected `random`, `e<i>` or a list of numbers, got `{s}`"))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err("entries must be finite".into());
        }
        Ok(Direction::Explicit(v))
    }
}

impl Direction {
    fn resolve<R: rand::Rng>(&self, k: usize, rng: &mut R) -> Result<DVector<f64>, String> {
        match self {
            Direction::Random => Ok(random_unit_vector(k, rng)),
            Direction::Basis(i) if *i < k => Ok(basis_vector(k, *i)),
            Direction::Basis(i) => Err(format!("e{} does not exist for k = {k}", i + 1)),
            Direction::Explicit(v) => {
                if v.len() != k {
                    return Err(format!("has {} entries, expected k = {k}", v.len()));
                }
                let v = DVector::from_column_slice(v);
                let norm = v.norm();
                if norm == 0.0 {
                    return Err("must be nonzero".into());
                }
                Ok(v / norm)
            }
        }
    }
}

/// Drift `auto` (first-order optimal for the window) or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Drift {
    Auto,
    Value(f64),
}

impl fmt::Display for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Auto => f.write_str("auto"),
            Drift::Value(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Drift {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Drift::Auto);
        }
        finite(s).map(Drift::Value).map_err(|_| format!("expected `auto` or a number, got `{s}`"))
    }
}

/// Threshold `calibrate` (Monte Carlo to the first target ARL) or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Calibrate,
    Value(f64),
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Calibrate => f.write_str("calibrate"),
            Threshold::Value(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "calibrate" {
            return Ok(Threshold::Calibrate);
        }
        finite(s).map(Threshold::Value).map_err(|_| format!("expected `calibrate` or a number, got `{s}`"))
    }
}

/// Procedures a comparison can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcedureName {
    ExactCusum,
    SubspaceCusum,
    LargestEig,
    SubspaceOptimized,
}

impl ProcedureName {
    fn as_str(self) -> &'static str {
        match self {
            ProcedureName::ExactCusum => "exact_cusum",
            ProcedureName::SubspaceCusum => "subspace_cusum",
            ProcedureName::LargestEig => "largest_eig",
            ProcedureName::SubspaceOptimized => "subspace_optimized",
        }
    }
}

impl fmt::Display for ProcedureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcedureName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            ProcedureName::ExactCusum,
            ProcedureName::SubspaceCusum,
            ProcedureName::LargestEig,
            ProcedureName::SubspaceOptimized,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown procedure `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub flavor: Flavor,
    pub k: usize,
    pub sigma2: f64,
    pub theta: f64,
    /// Post-change direction of an emerging scenario.
    pub u: Direction,
    /// Pre- and post-change directions of a switching scenario.
    pub u1: Direction,
    pub u2: Direction,
    /// Last pre-change sample; `never` keeps the stream pre-change.
    pub tau: u64,
    /// Samples written by `simulate`.
    pub horizon: usize,
    /// Project a switching scenario onto the complement of `u1`.
    pub reduce: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSection {
    /// `none` disables the detector in `simulate`.
    pub kind: Option<DetectorKind>,
    pub w: usize,
    pub d: Drift,
    pub b: Threshold,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSection {
    pub gamma: Vec<f64>,
    pub reps: usize,
    pub rel_tol: f64,
    /// Horizon cap as a multiple of the target ARL.
    pub cap_factor: f64,
    pub seed: u64,
    pub procedures: Vec<ProcedureName>,
    /// Window scan of `subspace_optimized`.
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub detector: DetectorSection,
    pub montecarlo: MonteCarloSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSection {
                flavor: Flavor::Emerging,
                k: 5,
                sigma2: 1.0,
                theta: 1.0,
                u: Direction::Basis(0),
                u1: Direction::Basis(0),
                u2: Direction::Basis(1),
                tau: 0,
                horizon: 1000,
                reduce: false,
            },
            detector: DetectorSection {
                kind: Some(DetectorKind::SubspaceCusum),
                w: 20,
                d: Drift::Auto,
                b: Threshold::Calibrate,
                tol: PowerIteration::default().tol,
                max_iter: PowerIteration::default().max_iter,
            },
            montecarlo: MonteCarloSection {
                gamma: vec![1000.0],
                reps: subcusum::montecarlo::DEFAULT_REPS,
                rel_tol: subcusum::montecarlo::DEFAULT_REL_TOL,
                cap_factor: subcusum::montecarlo::DEFAULT_CAP_FACTOR,
                seed: 0,
                procedures: vec![ProcedureName::ExactCusum, ProcedureName::SubspaceCusum, ProcedureName::LargestEig],
                windows: (1..=50).collect(),
            },
            output: OutputSection {
                dir: PathBuf::from("out"),
                trace: true,
            },
        }
    }
}

/// Where each `section.key` got its value, for diagnostics raised after
/// parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Origins(BTreeMap<String, Origin>);

impl Origins {
    pub fn of(&self, field: &str) -> Origin {
        self.0.get(field).copied().unwrap_or(Origin::Default)
    }

    fn error(&self, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::at(self.of(field), field, message)
    }
}

const SECTIONS: [&str; 4] = ["scenario", "detector", "montecarlo", "output"];

fn finite(s: &str) -> Result<f64, ()> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(()),
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, T::Err> {
    s.split(',').map(|p| p.trim().parse::<T>()).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `1..50` (inclusive) or a comma-separated list.
fn parse_windows(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("expected a list of window sizes or a range `lo..hi`, got `{s}`");
    let v: Vec<usize> = match s.split_once("..") {
        Some((lo, hi)) => {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(format!("empty range `{s}`"));
            }
            (lo..=hi).collect()
        }
        None => parse_list(s).map_err(|_| bad())?,
    };
    if v.contains(&0) {
        return Err("window sizes must be positive".into());
    }
    Ok(v)
}

fn format_windows(v: &[usize]) -> String {
    let contiguous = v.len() > 2 && v.windows(2).all(|p| p[1] == p[0] + 1);
    if contiguous {
        format!("{}..{}", v[0], v[v.len() - 1])
    } else {
        join(v)
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn positive_int(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn positive_real(s: &str) -> Result<f64, String> {
    match finite(s) {
        Ok(x) if x > 0.0 => Ok(x),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn nonnegative_real(s: &str) -> Result<f64, String> {
    match finite(s) {
        Ok(x) if x >= 0.0 => Ok(x),
        _ => Err(format!("expected a nonnegative number, got `{s}`")),
    }
}

impl ExperimentConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<(Self, Origins), ConfigError> {
        let mut cfg = Self::default();
        let mut origins = Origins::default();
        let mut section: Option<&str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at(Origin::Line(n), "", format!("malformed section header `{line}`")))?
                    .trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .copied()
                        .find(|s| *s == name)
                        .ok_or_else(|| ConfigError::at(Origin::Line(n), name, "unknown section"))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(Origin::Line(n), "", format!("expected `key = value`, got `{line}`")))?;
            let sec = section.ok_or_else(|| ConfigError::at(Origin::Line(n), key.trim(), "key outside any section"))?;
            let field = format!("{sec}.{}", key.trim());
            if origins.0.contains_key(&field) {
                return Err(ConfigError::at(Origin::Line(n), &field, "duplicate key"));
            }
            cfg.set_field(&field, value.trim()).map_err(|m| ConfigError::at(Origin::Line(n), &field, m))?;
            origins.0.insert(field, Origin::Line(n));
        }
        Ok((cfg, origins))
    }

    /// Applies `section.key=value`.
    pub fn apply_override(&mut self, origins: &mut Origins, assignment: &str) -> Result<(), ConfigError> {
        let (field, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::at(Origin::Override, "", format!("expected `section.key=value`, got `{assignment}`")))?;
        let field = field.trim();
        if !field.contains('.') {
            return Err(ConfigError::at(Origin::Override, field, "expected `section.key`"));
        }
        self.set_field(field, value.trim()).map_err(|m| ConfigError::at(Origin::Override, field, m))?;
        origins.0.insert(field.to_string(), Origin::Override);
        Ok(())
    }

    fn set_field(&mut self, field: &str, v: &str) -> Result<(), String> {
        let s = &mut self.scenario;
        let d = &mut self.detector;
        let m = &mut self.montecarlo;
        match field {
            "scenario.flavor" => {
                s.flavor = match v {
                    "emerging" => Flavor::Emerging,
                    "switching" => Flavor::Switching,
                    _ => return Err(format!("expected emerging or switching, got `{v}`")),
                }
            }
            "scenario.k" => s.k = positive_int(v)?,
            "scenario.sigma2" => s.sigma2 = positive_real(v)?,
            "scenario.theta" => s.theta = nonnegative_real(v)?,
            "scenario.u" => s.u = v.parse()?,
            "scenario.u1" => s.u1 = v.parse()?,
            "scenario.u2" => s.u2 = v.parse()?,
            "scenario.tau" => {
                s.tau = match v {
                    "never" => u64::MAX,
                    _ => v.parse().map_err(|_| format!("expected a sample index or `never`, got `{v}`"))?,
                }
            }
            "scenario.horizon" => s.horizon = positive_int(v)?,
            "scenario.reduce" => s.reduce = parse_bool(v)?,
            "detector.kind" => {
                d.kind = match v {
                    "none" => None,
                    _ => Some(v.parse().map_err(|_| {
                        format!("expected exact_cusum, subspace_cusum, largest_eig or none, got `{v}`")
                    })?),
                }
            }
            "detector.w" => d.w = positive_int(v)?,
            "detector.d" => d.d = v.parse()?,
            "detector.b" => d.b = v.parse()?,
            "detector.tol" => d.tol = positive_real(v)?,
            "detector.max_iter" => d.max_iter = positive_int(v)?,
            "montecarlo.gamma" => {
                let g = parse_list::<f64>(v).map_err(|_| format!("expected a list of numbers, got `{v}`"))?;
                if g.iter().any(|x| !x.is_finite() || *x <= 1.0) {
                    return Err("every target ARL must be finite and > 1".into());
                }
                m.gamma = g;
            }
            "montecarlo.reps" => m.reps = positive_int(v)?,
            "montecarlo.rel_tol" => m.rel_tol = positive_real(v)?,
            "montecarlo.cap_factor" => m.cap_factor = positive_real(v)?,
            "montecarlo.seed" => m.seed = v.parse().map_err(|_| format!("expected an unsigned 64-bit integer, got `{v}`"))?,
            "montecarlo.procedures" => m.procedures = parse_list(v)?,
            "montecarlo.windows" => m.windows = parse_windows(v)?,
            "output.dir" => {
                if v.is_empty() {
                    return Err("must not be empty".into());
                }
                self.output.dir = PathBuf::from(v)
            }
            "output.trace" => self.output.trace = parse_bool(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Text that [`ExperimentConfig::parse`] maps back to `self`.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let d = &self.detector;
        let m = &self.montecarlo;
        let mut out = String::new();
        let flavor = match s.flavor {
            Flavor::Emerging => "emerging",
            Flavor::Switching => "switching",
        };
        let tau = if s.tau == u64::MAX { "never".to_string() } else { s.tau.to_string() };
        let kind = d.kind.map_or("none", |k| k.as_str());
        let procedures = join(&m.procedures);
        // Writing into a String cannot fail.
        let _ = write!(
            out,
            "[scenario]\nflavor = {flavor}\nk = {}\nsigma2 = {}\ntheta = {}\nu = {}\nu1 = {}\nu2 = {}\ntau = {tau}\nhorizon = {}\nreduce = {}\n\n",
            s.k, s.sigma2, s.theta, s.u, s.u1, s.u2, s.horizon, s.reduce
        );
        let _ = write!(
            out,
            "[detector]\nkind = {kind}\nw = {}\nd = {}\nb = {}\ntol = {}\nmax_iter = {}\n\n",
            d.w, d.d, d.b, d.tol, d.max_iter
        );
        let _ = write!(
            out,
            "[montecarlo]\ngamma = {}\nreps = {}\nrel_tol = {}\ncap_factor = {}\nseed = {}\nprocedures = {procedures}\nwindows = {}\n\n",
            join(&m.gamma),
            m.reps,
            m.rel_tol,
            m.cap_factor,
            m.seed,
            format_windows(&m.windows)
        );
        let _ = write!(out, "[output]\ndir = {}\ntrace = {}\n", self.output.dir.display(), self.output.trace);
        out
    }

    pub fn eigen(&self) -> PowerIteration {
        PowerIteration {
            tol: self.detector.tol,
            max_iter: self.detector.max_iter,
        }
    }

    /// The configured scenario; `random` directions are drawn from the seed.
    pub fn scenario(&self, origins: &Origins) -> Result<Scenario, ConfigError> {
        let s = &self.scenario;
        let mut rng = seeded_rng(self.montecarlo.seed, DIRECTION_STREAM);
        let err = |field: &str, e: String| origins.error(field, e);
        let lib = |field: &str, e: subcusum::Error| origins.error(field, e.to_string());
        match s.flavor {
            Flavor::Emerging => {
                let u = s.u.resolve(s.k, &mut rng).map_err(|e| err("scenario.u", e))?;
                let post = SpikedModel::spiked(s.sigma2, s.theta, u).map_err(|e| lib("scenario.theta", e))?;
                Scenario::emerging(post, s.tau).map_err(|e| lib("scenario.tau", e))
            }
            Flavor::Switching => {
                let u1 = s.u1.resolve(s.k, &mut rng).map_err(|e| err("scenario.u1", e))?;
                let u2 = s.u2.resolve(s.k, &mut rng).map_err(|e| err("scenario.u2", e))?;
                Scenario::switching(s.sigma2, s.theta, u1, u2, s.tau).map_err(|e| lib("scenario.u2", e))
            }
        }
    }

    /// Scenario the detectors run on, with the projection applied to the
    /// stream when a switching scenario is reduced.
    pub fn working_scenario(&self, origins: &Origins) -> Result<(Scenario, Option<ProjectionOperator>), ConfigError> {
        let scenario = self.scenario(origins)?;
        match (scenario.flavor(), self.scenario.reduce) {
            (Flavor::Switching, true) => subcusum::model::reduce_switching(&scenario)
                .map(|(reduced, q)| (reduced, Some(q)))
                .map_err(|e| origins.error("scenario.reduce", e.to_string())),
            (Flavor::Emerging, true) => Err(origins.error("scenario.reduce", "only switching scenarios can be reduced")),
            (_, false) => Ok((scenario, None)),
        }
    }

    /// Drift for Subspace-CUSUM on `scenario`, resolving `auto`.
    pub fn drift(&self, scenario: &Scenario, origins: &Origins) -> Result<f64, ConfigError> {
        match self.detector.d {
            Drift::Value(d) => Ok(d),
            Drift::Auto => {
                let post = scenario.post();
                optimal_drift(post.k(), post.rho(), post.sigma2(), self.detector.w as f64)
                    .map_err(|e| origins.error("detector.w", format!("cannot choose the drift automatically: {e}")))
            }
        }
    }

    /// The configured detector on `scenario`, or `None` for `kind = none`.
    pub fn detector_config(&self, scenario: &Scenario, origins: &Origins) -> Result<Option<DetectorConfig>, ConfigError> {
        let Some(kind) = self.detector.kind else {
            return Ok(None);
        };
        if scenario.flavor() == Flavor::Switching {
            return Err(origins.error(
                "scenario.reduce",
                "detectors run on emerging scenarios; set reduce = true for a switching one",
            ));
        }
        self.eigen().validate().map_err(|e| origins.error("detector.tol", e.to_string()))?;
        let cfg = match kind {
            DetectorKind::ExactCusum => {
                if scenario.post().rho() <= 0.0 {
                    return Err(origins.error("scenario.theta", "exact CUSUM needs theta > 0"));
                }
                DetectorConfig::ExactCusum {
                    model: scenario.post().clone(),
                }
            }
            DetectorKind::SubspaceCusum => DetectorConfig::SubspaceCusum {
                k: scenario.k(),
                w: self.detector.w,
                drift: self.drift(scenario, origins)?,
                eigen: self.eigen(),
            },
            DetectorKind::LargestEig => DetectorConfig::LargestEig {
                k: scenario.k(),
                w: self.detector.w,
                eigen: self.eigen(),
            },
        };
        Ok(Some(cfg))
    }

    /// Calibration settings for one target ARL.
    pub fn calibration_spec(&self, gamma: f64, origins: &Origins) -> Result<CalibrationSpec, ConfigError> {
        let m = &self.montecarlo;
        let spec = CalibrationSpec {
            target_gamma: gamma,
            rel_tol: m.rel_tol,
            reps: m.reps,
            horizon_cap: (m.cap_factor * gamma).ceil() as u64,
            master_seed: m.seed,
        };
        spec.validate().map_err(|e| {
            let field = match e {
                subcusum::Error::InvalidParameter { name: "reps", .. } => "montecarlo.reps",
                subcusum::Error::InvalidParameter { name: "rel_tol", .. } => "montecarlo.rel_tol",
                subcusum::Error::InvalidParameter { name: "horizon_cap", .. } => "montecarlo.cap_factor",
                _ => "montecarlo.gamma",
            };
            origins.error(field, e.to_string())
        })?;
        Ok(spec)
    }

    /// Comparison table setup for the configured procedures.
    pub fn compare_setup(&self, origins: &Origins) -> Result<CompareSetup, ConfigError> {
        let (scenario, _) = self.working_scenario(origins)?;
        if scenario.flavor() == Flavor::Switching {
            return Err(origins.error(
                "scenario.reduce",
                "comparisons run on emerging scenarios; set reduce = true for a switching one",
            ));
        }
        if scenario.post().rho() <= 0.0 {
            return Err(origins.error("scenario.theta", "comparisons need theta > 0"));
        }
        let m = &self.montecarlo;
        for &gamma in &m.gamma {
            self.calibration_spec(gamma, origins)?;
        }
        if m.procedures.is_empty() {
            return Err(origins.error("montecarlo.procedures", "need at least one procedure"));
        }
        self.eigen().validate().map_err(|e| origins.error("detector.tol", e.to_string()))?;
        let w = self.detector.w;
        let drift = match self.detector.d {
            Drift::Auto => None,
            Drift::Value(d) => Some(d),
        };
        let procedures = m
            .procedures
            .iter()
            .map(|p| match p {
                ProcedureName::ExactCusum => Procedure::ExactCusum,
                ProcedureName::SubspaceCusum => Procedure::SubspaceCusum { w, drift },
                ProcedureName::LargestEig => Procedure::LargestEig { w },
                ProcedureName::SubspaceOptimized => Procedure::SubspaceOptimized {
                    windows: m.windows.clone(),
                },
            })
            .collect();
        let mut setup = CompareSetup::new(scenario, m.gamma.clone(), procedures, m.seed);
        setup.reps = m.reps;
        setup.rel_tol = m.rel_tol;
        setup.cap_factor = m.cap_factor;
        setup.eigen = self.eigen();
        Ok(setup)
    }
}
