//! Online stopping rules: exact CUSUM, Subspace-CUSUM and the
//! largest-eigenvalue baseline.
//!
//! Every detector consumes one observation at a time through
//! [`Detector::observe`] and emits a [`StatUpdate`] whenever its statistic
//! advances. The windowed detectors look `w` samples ahead: the update for
//! sample `t` is only available once `x_{t+1}, ..., x_{t+w}` have arrived, so
//! their updates lag arrivals by exactly `w` and their effective stopping time
//! is `t + w`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::eigen::{power_iteration, top_eigenvector, PowerIteration, SlidingWindowCov};
use crate::model::SpikedModel;
use crate::{Error, Result};

fn spike_of(model: &SpikedModel) -> Result<(&DVector<f64>, f64)> {
    let rho = model.rho();
    match model.direction() {
        Some(u) if rho > 0.0 => Ok((u, rho)),
        _ => Err(Error::invalid("theta", "exact CUSUM needs a post-change spike (rho > 0)")),
    }
}

fn check_dim(x: &[f64], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: x.len(),
        });
    }
    Ok(())
}

fn projection_sq(u: &DVector<f64>, x: &[f64]) -> f64 {
    let p: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    p * p
}

/// Drift-compensated CUSUM increment `(u^T x)^2 - sigma2 (1 + 1/rho) log(1 + rho)`.
pub fn exact_cusum_increment(x: &[f64], model: &SpikedModel) -> Result<f64> {
    let (u, rho) = spike_of(model)?;
    check_dim(x, model.k())?;
    Ok(projection_sq(u, x) - exact_drift(model.sigma2(), rho))
}

/// Log-likelihood ratio `log f0(x) / finf(x)`: the increment scaled by
/// `rho / (2 sigma2 (1 + rho))`.
pub fn exact_cusum_loglr(x: &[f64], model: &SpikedModel) -> Result<f64> {
    let inc = exact_cusum_increment(x, model)?;
    Ok(inc * loglr_scale(model.sigma2(), model.rho()))
}

fn exact_drift(sigma2: f64, rho: f64) -> f64 {
    sigma2 * (1.0 + 1.0 / rho) * rho.ln_1p()
}

fn loglr_scale(sigma2: f64, rho: f64) -> f64 {
    rho / (2.0 * sigma2 * (1.0 + rho))
}

/// The clamped recursion `S_t = (S_{t-1})^+ + increment`, started at `S_0 = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    s: f64,
    t: u64,
}

impl CusumState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn statistic(&self) -> f64 {
        self.s
    }

    /// Increments consumed so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, increment: f64) -> Result<f64> {
        if !increment.is_finite() {
            return Err(Error::NonFinite("CUSUM increment"));
        }
        self.s = self.s.max(0.0) + increment;
        self.t += 1;
        Ok(self.s)
    }
}

/// Free-function form of [`CusumState::step`].
pub fn cusum_step(state: &mut CusumState, increment: f64) -> Result<()> {
    state.step(increment).map(|_| ())
}

/// One advance of a detector statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatUpdate {
    /// Index `t` of the sample this statistic belongs to.
    pub raw_index: u64,
    /// Arrivals consumed when the statistic became available.
    pub effective_time: u64,
    pub statistic: f64,
    /// Increment applied (for the largest-eigenvalue baseline, the statistic itself).
    pub increment: f64,
}

/// Exact CUSUM on the log-likelihood-ratio scale with the true subspace known.
#[derive(Debug, Clone)]
pub struct ExactCusum {
    k: usize,
    u: DVector<f64>,
    drift: f64,
    scale: f64,
    state: CusumState,
}

impl ExactCusum {
    pub fn new(model: &SpikedModel) -> Result<Self> {
        let (u, rho) = spike_of(model)?;
        Ok(Self {
            k: model.k(),
            u: u.clone(),
            drift: exact_drift(model.sigma2(), rho),
            scale: loglr_scale(model.sigma2(), rho),
            state: CusumState::new(),
        })
    }

    pub fn state(&self) -> &CusumState {
        &self.state
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<StatUpdate> {
        check_dim(x, self.k)?;
        let increment = (projection_sq(&self.u, x) - self.drift) * self.scale;
        let statistic = self.state.step(increment)?;
        Ok(StatUpdate {
            raw_index: self.state.steps(),
            effective_time: self.state.steps(),
            statistic,
            increment,
        })
    }
}

/// Subspace-CUSUM: `S_t = (S_{t-1})^+ + (u_t^T x_t)^2 - d` with `u_t` the top
/// eigenvector of the scatter of the `w` samples following `x_t`.
#[derive(Debug, Clone)]
pub struct SubspaceCusum {
    drift: f64,
    eigen: PowerIteration,
    // Holds x_{t}, ..., x_{t+w-1}: the oldest entry is the next sample to score.
    window: SlidingWindowCov,
    pending: Vec<f64>,
    u_hat: Option<DVector<f64>>,
    state: CusumState,
    arrivals: u64,
}

impl SubspaceCusum {
    pub fn new(k: usize, w: usize, drift: f64, eigen: PowerIteration) -> Result<Self> {
        if !drift.is_finite() {
            return Err(Error::NonFinite("drift"));
        }
        eigen.validate()?;
        Ok(Self {
            drift,
            eigen,
            window: SlidingWindowCov::new(k, w)?,
            pending: vec![0.0; k],
            u_hat: None,
            state: CusumState::new(),
            arrivals: 0,
        })
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn w(&self) -> usize {
        self.window.w()
    }

    /// Samples after the last scored one, `x_{t+1}, ..., x_{t+w}` once running.
    pub fn window(&self) -> &SlidingWindowCov {
        &self.window
    }

    /// Estimate used by the most recent update.
    pub fn u_hat(&self) -> Option<&DVector<f64>> {
        self.u_hat.as_ref()
    }

    pub fn state(&self) -> &CusumState {
        &self.state
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<Option<StatUpdate>> {
        check_dim(x, self.window.k())?;
        self.arrivals += 1;
        if !self.window.is_full() {
            self.window.push(x)?;
            return Ok(None);
        }
        if let Some(oldest) = self.window.oldest() {
            self.pending.copy_from_slice(oldest);
        }
        self.window.push(x)?;
        let est = power_iteration(self.window.scatter(), &self.eigen, self.u_hat.as_ref());
        let increment = projection_sq(&est.u_hat, &self.pending) - self.drift;
        let statistic = self.state.step(increment)?;
        self.u_hat = Some(est.u_hat);
        Ok(Some(StatUpdate {
            raw_index: self.state.steps(),
            effective_time: self.arrivals,
            statistic,
            increment,
        }))
    }
}

/// `lambda_max(scatter) / w` of a full window.
pub fn largest_eig_statistic(window: &SlidingWindowCov, eigen: &PowerIteration) -> Result<f64> {
    let est = top_eigenvector(window, eigen, None)?;
    Ok(est.lambda_hat / window.w() as f64)
}

/// Baseline that alarms when the normalized top eigenvalue of the forward
/// window reaches the threshold. Indexing matches [`SubspaceCusum`].
#[derive(Debug, Clone)]
pub struct LargestEig {
    eigen: PowerIteration,
    window: SlidingWindowCov,
    u_hat: Option<DVector<f64>>,
    arrivals: u64,
}

impl LargestEig {
    pub fn new(k: usize, w: usize, eigen: PowerIteration) -> Result<Self> {
        eigen.validate()?;
        Ok(Self {
            eigen,
            window: SlidingWindowCov::new(k, w)?,
            u_hat: None,
            arrivals: 0,
        })
    }

    pub fn window(&self) -> &SlidingWindowCov {
        &self.window
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<Option<StatUpdate>> {
        self.window.push(x)?;
        self.arrivals += 1;
        let w = self.window.w() as u64;
        if self.arrivals <= w {
            return Ok(None);
        }
        let est = power_iteration(self.window.scatter(), &self.eigen, self.u_hat.as_ref());
        let statistic = est.lambda_hat / w as f64;
        self.u_hat = Some(est.u_hat);
        Ok(Some(StatUpdate {
            raw_index: self.arrivals - w,
            effective_time: self.arrivals,
            statistic,
            increment: statistic,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    ExactCusum,
    SubspaceCusum,
    LargestEig,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::ExactCusum => "exact_cusum",
            DetectorKind::SubspaceCusum => "subspace_cusum",
            DetectorKind::LargestEig => "largest_eig",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_cusum" => Ok(DetectorKind::ExactCusum),
            "subspace_cusum" => Ok(DetectorKind::SubspaceCusum),
            "largest_eig" => Ok(DetectorKind::LargestEig),
            other => Err(Error::invalid("detector", format!("unknown detector `{other}`"))),
        }
    }
}

/// Everything needed to instantiate a fresh detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    ExactCusum { model: SpikedModel },
    SubspaceCusum { k: usize, w: usize, drift: f64, eigen: PowerIteration },
    LargestEig { k: usize, w: usize, eigen: PowerIteration },
}

impl DetectorConfig {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorConfig::ExactCusum { .. } => DetectorKind::ExactCusum,
            DetectorConfig::SubspaceCusum { .. } => DetectorKind::SubspaceCusum,
            DetectorConfig::LargestEig { .. } => DetectorKind::LargestEig,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            DetectorConfig::ExactCusum { model } => model.k(),
            DetectorConfig::SubspaceCusum { k, .. } | DetectorConfig::LargestEig { k, .. } => *k,
        }
    }

    /// Look-ahead window, `None` for exact CUSUM.
    pub fn window(&self) -> Option<usize> {
        match self {
            DetectorConfig::ExactCusum { .. } => None,
            DetectorConfig::SubspaceCusum { w, .. } | DetectorConfig::LargestEig { w, .. } => Some(*w),
        }
    }

    pub fn build(&self) -> Result<Detector> {
        Ok(match self {
            DetectorConfig::ExactCusum { model } => Detector::Exact(ExactCusum::new(model)?),
            DetectorConfig::SubspaceCusum { k, w, drift, eigen } => {
                Detector::Subspace(SubspaceCusum::new(*k, *w, *drift, *eigen)?)
            }
            DetectorConfig::LargestEig { k, w, eigen } => Detector::LargestEig(LargestEig::new(*k, *w, *eigen)?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Detector {
    Exact(ExactCusum),
    Subspace(SubspaceCusum),
    LargestEig(LargestEig),
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Exact(_) => DetectorKind::ExactCusum,
            Detector::Subspace(_) => DetectorKind::SubspaceCusum,
            Detector::LargestEig(_) => DetectorKind::LargestEig,
        }
    }

    pub fn observe(&mut self, x: &[f64]) -> Result<Option<StatUpdate>> {
        match self {
            Detector::Exact(d) => d.observe(x).map(Some),
            Detector::Subspace(d) => d.observe(x),
            Detector::LargestEig(d) => d.observe(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingReport {
    pub stopped: bool,
    pub raw_index: u64,
    pub effective_time: u64,
    /// Statistic at the crossing, or the last statistic seen when not stopped.
    pub statistic_at_stop: f64,
}

/// Feeds at most `horizon` samples and stops at the first statistic `>= b`.
pub fn run_detector<I, X>(detector: &mut Detector, stream: I, b: f64, horizon: u64) -> Result<StoppingReport>
where
    I: IntoIterator<Item = X>,
    X: AsRef<[f64]>,
{
    run_detector_traced(detector, stream, b, horizon, |_| {})
}

/// [`run_detector`] that also hands every statistic update to `trace`.
pub fn run_detector_traced<I, X, F>(
    detector: &mut Detector,
    stream: I,
    b: f64,
    horizon: u64,
    mut trace: F,
) -> Result<StoppingReport>
where
    I: IntoIterator<Item = X>,
    X: AsRef<[f64]>,
    F: FnMut(&StatUpdate),
{
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    if b.is_nan() {
        return Err(Error::NonFinite("threshold"));
    }
    let mut report = StoppingReport {
        stopped: false,
        raw_index: 0,
        effective_time: 0,
        statistic_at_stop: f64::NAN,
    };
    for x in stream.into_iter().take(horizon as usize) {
        let update = detector.observe(x.as_ref())?;
        match update {
            Some(up) => {
                trace(&up);
                report.raw_index = up.raw_index;
                report.effective_time = up.effective_time;
                report.statistic_at_stop = up.statistic;
                if up.statistic >= b {
                    report.stopped = true;
                    return Ok(report);
                }
            }
            None => report.effective_time += 1,
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{basis_vector, seeded_rng, Scenario, StreamSampler};
    use crate::tuning::{drift_bounds, kl_number};
    use approx::assert_abs_diff_eq;

    fn spiked(k: usize, rho: f64) -> SpikedModel {
        SpikedModel::spiked(1.0, rho, basis_vector(k, 0)).unwrap()
    }

    fn post_stream(model: &SpikedModel, seed: u64) -> StreamSampler {
        StreamSampler::new(Scenario::emerging(model.clone(), 0).unwrap(), seeded_rng(seed, 0))
    }

    fn pre_stream(model: &SpikedModel, seed: u64) -> StreamSampler {
        StreamSampler::new(Scenario::emerging(model.clone(), u64::MAX).unwrap(), seeded_rng(seed, 0))
    }

    #[test]
    fn increment_at_zero_projection() {
        let m = spiked(3, 1.0);
        let inc = exact_cusum_increment(&[0.0, 1.0, -2.0], &m).unwrap();
        assert_abs_diff_eq!(inc, -2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(inc, -1.386294, epsilon = 1e-6);
    }

    #[test]
    fn increment_vanishes_at_drift() {
        let m = spiked(2, 1.5);
        let x0 = (exact_drift(1.0, 1.5)).sqrt();
        assert_abs_diff_eq!(exact_cusum_increment(&[x0, 3.0], &m).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exact_cusum_loglr(&[x0, 3.0], &m).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn increment_rejects_pure_noise_model() {
        let m = SpikedModel::isotropic(3, 1.0).unwrap();
        assert!(exact_cusum_increment(&[0.0; 3], &m).is_err());
        assert!(ExactCusum::new(&m).is_err());
    }

    #[test]
    fn loglr_matches_gaussian_densities() {
        // Independent route: log det and quadratic forms of the two covariances.
        let mut rng = seeded_rng(3, 0);
        let u = crate::model::random_unit_vector(4, &mut rng);
        let m = SpikedModel::spiked(1.7, 0.9, u).unwrap();
        let cov0 = m.covariance();
        let cov_inf = nalgebra::DMatrix::<f64>::identity(4, 4) * 1.7;
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
        let logpdf = |c: &nalgebra::DMatrix<f64>| {
            let inv = c.clone().try_inverse().unwrap();
            -0.5 * c.determinant().ln() - 0.5 * (x.transpose() * inv * &x)[(0, 0)]
        };
        let expected = logpdf(&cov0) - logpdf(&cov_inf);
        assert_abs_diff_eq!(exact_cusum_loglr(x.as_slice(), &m).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn loglr_and_increment_share_argmax() {
        let m = spiked(3, 2.0);
        let xs: Vec<Vec<f64>> = post_stream(&m, 1).take(200).collect();
        let argmax = |f: &dyn Fn(&[f64]) -> f64| {
            (0..xs.len())
                .max_by(|&a, &b| f(&xs[a]).partial_cmp(&f(&xs[b])).unwrap())
                .unwrap()
        };
        let a = argmax(&|x| exact_cusum_increment(x, &m).unwrap());
        let b = argmax(&|x| exact_cusum_loglr(x, &m).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn post_change_mean_increment() {
        let m = spiked(2, 1.0);
        let n = 1_000_000;
        let mut sampler = post_stream(&m, 9);
        let mut x = [0.0; 2];
        let (mut inc, mut llr) = (0.0, 0.0);
        for _ in 0..n {
            sampler.fill_next(&mut x);
            inc += exact_cusum_increment(&x, &m).unwrap();
            llr += exact_cusum_loglr(&x, &m).unwrap();
        }
        let expected = 2.0 - 2.0 * 2f64.ln();
        assert!(((inc / n as f64) / expected - 1.0).abs() < 0.01);
        assert!(((llr / n as f64) / kl_number(1.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn exact_increment_sign_under_each_law() {
        for rho in [0.5, 1.0, 2.0] {
            let m = spiked(3, rho);
            let n = 200_000;
            let mean = |sampler: &mut StreamSampler| {
                let mut x = [0.0; 3];
                (0..n)
                    .map(|_| {
                        sampler.fill_next(&mut x);
                        exact_cusum_increment(&x, &m).unwrap()
                    })
                    .sum::<f64>()
                    / n as f64
            };
            assert!(mean(&mut pre_stream(&m, 1)) < 0.0, "rho {rho}");
            assert!(mean(&mut post_stream(&m, 2)) > 0.0, "rho {rho}");
        }
    }

    #[test]
    fn cusum_clamps_previous_value_only() {
        let mut s = CusumState { s: -0.5, t: 3 };
        cusum_step(&mut s, 0.2).unwrap();
        assert_abs_diff_eq!(s.statistic(), 0.2, epsilon = 1e-15);
        assert_eq!(s.steps(), 4);
        let mut s = CusumState { s: 1.0, t: 0 };
        cusum_step(&mut s, -3.0).unwrap();
        assert_eq!(s.statistic(), -2.0);
    }

    #[test]
    fn cusum_rejects_non_finite() {
        let mut s = CusumState::new();
        assert_eq!(s.step(f64::NAN).unwrap_err(), Error::NonFinite("CUSUM increment"));
        assert!(s.step(f64::INFINITY).is_err());
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn subspace_warm_up_emits_nothing() {
        let m = spiked(3, 1.0);
        let mut det = SubspaceCusum::new(3, 5, 1.2, PowerIteration::default()).unwrap();
        let xs: Vec<Vec<f64>> = post_stream(&m, 4).take(7).collect();
        for x in &xs[..5] {
            assert!(det.observe(x).unwrap().is_none());
        }
        let up = det.observe(&xs[5]).unwrap().unwrap();
        assert_eq!(up.raw_index, 1);
        assert_eq!(up.effective_time, 6);
        // The window now holds x_2..x_6, the samples after x_1.
        let held: Vec<&[f64]> = det.window().samples().collect();
        assert_eq!(held, xs[1..6].iter().map(|x| x.as_slice()).collect::<Vec<_>>());
    }

    #[test]
    fn subspace_zero_increment_keeps_clamped_value() {
        // All samples along e1 with unit magnitude: u_hat = e1, (u^T x)^2 = 1.
        let mut det = SubspaceCusum::new(2, 3, 1.0, PowerIteration::default()).unwrap();
        for _ in 0..10 {
            if let Some(up) = det.observe(&[1.0, 0.0]).unwrap() {
                assert_eq!(up.increment, 0.0);
                assert_eq!(up.statistic, 0.0);
            }
        }
    }

    #[test]
    fn scripted_window_reproduces_cusum() {
        let w = 4;
        let drift = 1.3;
        let mut rng = seeded_rng(6, 0);
        let amps: Vec<f64> = (0..60)
            .map(|_| 0.2 + 2.0 * rand::Rng::random::<f64>(&mut rng))
            .collect();
        let mut det = SubspaceCusum::new(3, w, drift, PowerIteration::default()).unwrap();
        let mut oracle = CusumState::new();
        let mut t = 0;
        for a in &amps {
            if let Some(up) = det.observe(&[*a, 0.0, 0.0]).unwrap() {
                let x_t = amps[t];
                oracle.step(x_t * x_t - drift).unwrap();
                assert_eq!(up.statistic, oracle.statistic());
                assert_eq!(det.u_hat().unwrap(), &basis_vector(3, 0));
                t += 1;
            }
        }
        assert_eq!(t, amps.len() - w);
    }

    #[test]
    fn statistic_unchanged_by_eigenvector_sign() {
        let m = spiked(4, 1.0);
        let x: Vec<f64> = post_stream(&m, 3).next().unwrap();
        let u = crate::model::random_unit_vector(4, &mut seeded_rng(1, 1));
        assert_eq!(projection_sq(&u, &x), projection_sq(&(-&u), &x));
    }

    #[test]
    fn subspace_increment_sign_inside_drift_interval() {
        let (k, w) = (5, 200);
        let m = spiked(k, 1.0);
        let bounds = drift_bounds(k, 1.0, 1.0, w as f64).unwrap();
        let drift = 0.5 * (bounds.lower + bounds.upper);
        let n = 100_000;
        let mean = |sampler: &mut StreamSampler| {
            let mut det = SubspaceCusum::new(k, w, drift, PowerIteration::default()).unwrap();
            let mut x = [0.0; 5];
            let mut acc = 0.0;
            let mut count = 0;
            while count < n {
                sampler.fill_next(&mut x);
                if let Some(up) = det.observe(&x).unwrap() {
                    acc += up.increment;
                    count += 1;
                }
            }
            acc / n as f64
        };
        assert!(mean(&mut pre_stream(&m, 10)) < 0.0);
        assert!(mean(&mut post_stream(&m, 11)) > 0.0);
    }

    #[test]
    fn estimate_independent_of_scored_sample() {
        // Under noise, (u_t^T x_t)^2 must not correlate with the future window.
        let (k, w) = (5, 20);
        let m = spiked(k, 1.0);
        let mut sampler = pre_stream(&m, 12);
        let mut det = SubspaceCusum::new(k, w, 1.0, PowerIteration::default()).unwrap();
        let mut pairs = Vec::with_capacity(100_000);
        let mut x = [0.0; 5];
        while pairs.len() < 100_000 {
            sampler.fill_next(&mut x);
            if let Some(up) = det.observe(&x).unwrap() {
                pairs.push((up.increment, det.window().scatter().trace()));
            }
        }
        let n = pairs.len() as f64;
        let (ma, mb) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in &pairs {
            sab += (a - ma) * (b - mb);
            saa += (a - ma).powi(2);
            sbb += (b - mb).powi(2);
        }
        let r = sab / (saa * sbb).sqrt();
        assert!(r.abs() < 0.02, "correlation {r}");
    }

    #[test]
    fn largest_eig_of_identical_window() {
        let mut win = SlidingWindowCov::new(3, 6).unwrap();
        for _ in 0..6 {
            win.push(&[1.0, 0.0, 0.0]).unwrap();
        }
        assert_abs_diff_eq!(largest_eig_statistic(&win, &PowerIteration::default()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn largest_eig_requires_full_window() {
        let win = SlidingWindowCov::new(3, 6).unwrap();
        assert!(largest_eig_statistic(&win, &PowerIteration::default()).is_err());
    }

    #[test]
    fn largest_eig_matches_dense_eigensolver() {
        let m = spiked(5, 0.7);
        let mut sampler = post_stream(&m, 13);
        // Near-degenerate top pairs need more than the default iteration budget.
        let settings = PowerIteration {
            tol: 1e-10,
            max_iter: 100_000,
        };
        let mut det = LargestEig::new(5, 30, settings).unwrap();
        let mut x = [0.0; 5];
        let mut checked = 0;
        while checked < 50 {
            sampler.fill_next(&mut x);
            if let Some(up) = det.observe(&x).unwrap() {
                let eig = det.window().scatter().clone().symmetric_eigen();
                let lambda = eig.eigenvalues.max() / 30.0;
                assert!((up.statistic - lambda).abs() <= 1e-8 * lambda);
                checked += 1;
            }
        }
    }

    #[test]
    fn largest_eig_noise_bias() {
        let m = spiked(5, 1.0);
        let mean_at = |w: usize| {
            let mut sampler = pre_stream(&m, w as u64);
            let mut win = SlidingWindowCov::new(5, w).unwrap();
            let mut x = [0.0; 5];
            (0..1000)
                .map(|_| {
                    for _ in 0..w {
                        sampler.fill_next(&mut x);
                        win.push(&x).unwrap();
                    }
                    largest_eig_statistic(&win, &PowerIteration::default()).unwrap()
                })
                .sum::<f64>()
                / 1000.0
        };
        let m200 = mean_at(200);
        assert!(m200 > 1.0 && m200 < 1.5, "mean {m200}");
        assert!(mean_at(400) < m200);
    }

    #[test]
    fn zero_threshold_stops_at_first_nonnegative_increment() {
        let m = spiked(3, 1.0);
        let xs: Vec<Vec<f64>> = pre_stream(&m, 14).take(500).collect();
        let mut det = DetectorConfig::ExactCusum { model: m.clone() }.build().unwrap();
        let report = run_detector(&mut det, &xs, 0.0, 500).unwrap();
        let first = xs
            .iter()
            .position(|x| exact_cusum_increment(x, &m).unwrap() >= 0.0)
            .unwrap();
        assert!(report.stopped);
        assert_eq!(report.raw_index, first as u64 + 1);
        assert!(report.raw_index >= 1);
    }

    #[test]
    fn exact_cusum_delay_matches_kl_law() {
        let m = spiked(3, 1.0);
        let b = 20.0;
        let reps = 2000;
        let total: u64 = (0..reps)
            .map(|i| {
                let mut det = DetectorConfig::ExactCusum { model: m.clone() }.build().unwrap();
                let stream = StreamSampler::new(Scenario::emerging(m.clone(), 0).unwrap(), seeded_rng(15, i));
                run_detector(&mut det, stream, b, 100_000).unwrap().raw_index
            })
            .sum();
        let mean = total as f64 / reps as f64;
        let predicted = b / kl_number(1.0);
        assert!((mean / predicted - 1.0).abs() < 0.10, "mean {mean} vs {predicted}");
    }

    #[test]
    fn runs_are_deterministic_and_monotone_in_threshold() {
        let m = spiked(4, 1.0);
        let xs: Vec<Vec<f64>> = post_stream(&m, 16).take(3000).collect();
        let configs = [
            DetectorConfig::ExactCusum { model: m.clone() },
            DetectorConfig::SubspaceCusum { k: 4, w: 15, drift: 1.3, eigen: PowerIteration::default() },
            DetectorConfig::LargestEig { k: 4, w: 15, eigen: PowerIteration::default() },
        ];
        for cfg in &configs {
            let run = |b: f64| run_detector(&mut cfg.build().unwrap(), &xs, b, 3000).unwrap();
            assert_eq!(run(5.0), run(5.0));
            let mut prev = 0;
            for b in [0.5, 1.0, 2.0, 2.5, 3.0, 5.0, 8.0] {
                let r = run(b);
                if r.stopped {
                    assert!(r.statistic_at_stop >= b);
                    assert!(r.raw_index >= prev, "{:?} b={b}", cfg.kind());
                    prev = r.raw_index;
                }
                if let Some(w) = cfg.window() {
                    assert_eq!(r.effective_time, r.raw_index + w as u64);
                } else {
                    assert_eq!(r.effective_time, r.raw_index);
                }
            }
        }
    }

    #[test]
    fn horizon_exhaustion_is_not_an_error() {
        let m = spiked(3, 1.0);
        let mut det = DetectorConfig::SubspaceCusum { k: 3, w: 10, drift: 1.5, eigen: PowerIteration::default() }
            .build()
            .unwrap();
        let report = run_detector(&mut det, pre_stream(&m, 17), 1e9, 200).unwrap();
        assert!(!report.stopped);
        assert_eq!(report.effective_time, 200);
        assert_eq!(report.raw_index, 190);
    }

    #[test]
    fn windowed_detectors_never_stop_during_warm_up() {
        let mut det = DetectorConfig::LargestEig { k: 2, w: 8, eigen: PowerIteration::default() }
            .build()
            .unwrap();
        let report = run_detector(&mut det, vec![vec![100.0, 0.0]; 20], 0.0, 20).unwrap();
        assert!(report.stopped);
        assert_eq!(report.effective_time, 9);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut det = DetectorConfig::SubspaceCusum { k: 3, w: 2, drift: 1.0, eigen: PowerIteration::default() }
            .build()
            .unwrap();
        assert!(matches!(det.observe(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }
}
