//! Drift bounds, the ARL tilt `delta_inf`, and first-order optimal parameters.
//!
//! All EDD/ARL predictions here are first-order: the `1 + o(1)` factors and
//! the ARL constant are dropped. Thresholds derived from them are starting
//! points; operational thresholds come from [`crate::montecarlo`].

use serde::{Deserialize, Serialize};

use crate::eigen::min_window;
use crate::{Error, Result};

const BISECTION_MAX_ITER: usize = 200;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::invalid(name, format!("must be finite and > 0, got {value}")));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("k", format!("must be at least 2, got {k}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::invalid("gamma", format!("target ARL must exceed 1, got {gamma}")));
    }
    Ok(())
}

/// `(1 + rho)(1 - (k - 1)/(w rho))`: post-change mean of `(u_t^T x)^2` over `sigma2`.
pub fn signal_factor(k: usize, rho: f64, w: f64) -> f64 {
    (1.0 + rho) * (1.0 - (k as f64 - 1.0) / (w * rho))
}

/// Interval of drifts giving a negative pre-change and positive post-change
/// mean increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBounds {
    /// `E_inf[(u_t^T x)^2] = sigma2`.
    pub lower: f64,
    /// `E_0[(u_t^T x)^2] = sigma2 (1 + rho)(1 - (k - 1)/(w rho))`.
    pub upper: f64,
    pub w_min: f64,
    pub w: f64,
}

impl DriftBounds {
    pub fn is_feasible(&self) -> bool {
        self.w > self.w_min
    }

    /// Errors with [`Error::InfeasibleWindow`] when the interval is empty.
    pub fn feasible(self) -> Result<Self> {
        if self.is_feasible() {
            Ok(self)
        } else {
            Err(Error::InfeasibleWindow { w: self.w, w_min: self.w_min })
        }
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lower < d && d < self.upper
    }
}

/// Bounds on the drift at window `w`. The result may describe an empty
/// interval; call [`DriftBounds::feasible`] to reject it.
pub fn drift_bounds(k: usize, rho: f64, sigma2: f64, w: f64) -> Result<DriftBounds> {
    check_k(k)?;
    check_positive("rho", rho)?;
    check_positive("sigma2", sigma2)?;
    if !(w >= 1.0) {
        return Err(Error::invalid("w", format!("must be at least 1, got {w}")));
    }
    Ok(DriftBounds {
        lower: sigma2,
        upper: sigma2 * signal_factor(k, rho, w),
        w_min: min_window(k, rho),
        w,
    })
}

fn check_delta(delta: f64, sigma2: f64) -> Result<()> {
    check_positive("sigma2", sigma2)?;
    let upper = 1.0 / (2.0 * sigma2);
    if !(delta > 0.0 && delta < upper) {
        return Err(Error::DeltaOutOfDomain { delta, upper });
    }
    Ok(())
}

/// Pre-change MGF of the Subspace-CUSUM increment,
/// `E_inf[exp(delta ((u^T x)^2 - d))] = exp(-delta d) / sqrt(1 - 2 sigma2 delta)`.
///
/// The value does not depend on the estimate `u`.
pub fn mgf_nominal(delta: f64, sigma2: f64, d: f64) -> Result<f64> {
    check_delta(delta, sigma2)?;
    Ok(log_mgf(delta, sigma2, d).exp())
}

fn log_mgf(delta: f64, sigma2: f64, d: f64) -> f64 {
    -delta * d - 0.5 * (-2.0 * sigma2 * delta).ln_1p()
}

/// Drift whose MGF root is `delta`: `d = -log(1 - 2 sigma2 delta) / (2 delta)`.
pub fn drift_for_delta(delta: f64, sigma2: f64) -> Result<f64> {
    check_delta(delta, sigma2)?;
    Ok(-(-2.0 * sigma2 * delta).ln_1p() / (2.0 * delta))
}

/// Positive root `delta_inf` of `mgf_nominal(delta, sigma2, d) = 1`.
///
/// Bisection on `(0, 1/(2 sigma2))`: the log-MGF is negative just above 0
/// when `d > sigma2` and diverges to `+inf` at the upper end.
pub fn solve_delta_inf(d: f64, sigma2: f64) -> Result<f64> {
    check_positive("sigma2", sigma2)?;
    if !d.is_finite() {
        return Err(Error::NonFinite("drift"));
    }
    if d <= sigma2 {
        return Err(Error::NoPositiveRoot { d, sigma2 });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0 / (2.0 * sigma2));
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_mgf(mid, sigma2, d) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    if root <= 0.0 {
        // d so close to sigma2 that the root underflows.
        return Err(Error::NoPositiveRoot { d, sigma2 });
    }
    Ok(root)
}

/// Denominator of the first-order EDD as a function of the tilt:
/// `sigma2 delta A + log(1 - 2 sigma2 delta) / 2`, concave in `delta`.
pub fn edd_denominator(delta: f64, k: usize, rho: f64, w: f64, sigma2: f64) -> Result<f64> {
    check_delta(delta, sigma2)?;
    Ok(sigma2 * delta * signal_factor(k, rho, w) + 0.5 * (-2.0 * sigma2 * delta).ln_1p())
}

/// First-order Subspace-CUSUM EDD at an arbitrary tilt `delta`.
pub fn predicted_edd_subspace_at(gamma: f64, k: usize, rho: f64, w: f64, sigma2: f64, delta: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let den = edd_denominator(delta, k, rho, w, sigma2)?;
    if den <= 0.0 {
        return Err(Error::invalid("delta", "EDD denominator is not positive"));
    }
    Ok(gamma.ln() / den + w)
}

/// Tilt maximizing [`edd_denominator`]:
/// `(1 - 1/A) / (2 sigma2)` with `A = (1 + rho)(1 - (k - 1)/(w rho))`.
pub fn optimal_delta(k: usize, rho: f64, w: f64, sigma2: f64) -> Result<f64> {
    drift_bounds(k, rho, sigma2, w)?.feasible()?;
    let a = signal_factor(k, rho, w);
    Ok((1.0 - 1.0 / a) / (2.0 * sigma2))
}

/// Drift matching [`optimal_delta`]: `sigma2 A / (A - 1) log A`.
pub fn optimal_drift(k: usize, rho: f64, sigma2: f64, w: f64) -> Result<f64> {
    drift_bounds(k, rho, sigma2, w)?.feasible()?;
    let a = signal_factor(k, rho, w);
    Ok(sigma2 * a / (a - 1.0) * a.ln())
}

/// First-order EDD of Subspace-CUSUM with the optimal drift at window `w`:
/// `2 log(gamma) / (A - 1 - log A) + w`.
pub fn predicted_edd_subspace(gamma: f64, k: usize, rho: f64, w: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_k(k)?;
    check_positive("rho", rho)?;
    let a = signal_factor(k, rho, w);
    if !(a > 1.0) {
        return Err(Error::InfeasibleWindow { w, w_min: min_window(k, rho) });
    }
    Ok(2.0 * gamma.ln() / (a - 1.0 - a.ln()) + w)
}

/// First-order EDD of the exact CUSUM: `2 log(gamma) / (rho - log(1 + rho))`.
pub fn predicted_edd_cusum(gamma: f64, rho: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(gamma.ln() / kl_number_checked(rho)?)
}

/// Kullback-Leibler number of the post- vs pre-change law: `(rho - log(1 + rho)) / 2`.
pub fn kl_number(rho: f64) -> f64 {
    0.5 * (rho - rho.ln_1p())
}

fn kl_number_checked(rho: f64) -> Result<f64> {
    check_positive("rho", rho)?;
    Ok(kl_number(rho))
}

/// Asymptotic EDD ratio `1 + sqrt((k - 1) / (2 log gamma))`.
pub fn predicted_ratio(gamma: f64, k: usize) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(1.0 + ((k as f64 - 1.0) / (2.0 * gamma.ln())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    /// Rounded and clamped above `w_min`.
    pub w: usize,
    /// `sqrt(log gamma) sqrt(2(k - 1)) / (rho - log(1 + rho))`.
    pub w_real: f64,
}

/// First-order optimal window.
pub fn optimal_window(gamma: f64, k: usize, rho: f64) -> Result<WindowChoice> {
    check_gamma(gamma)?;
    if gamma.ln() <= 1.0 {
        return Err(Error::invalid("gamma", format!("must exceed e, got {gamma}")));
    }
    check_k(k)?;
    check_positive("rho", rho)?;
    let w_real = gamma.ln().sqrt() * (2.0 * (k as f64 - 1.0)).sqrt() / (2.0 * kl_number(rho));
    let floor = min_window(k, rho).ceil() as usize + 1;
    let w = (w_real.round() as usize).max(floor);
    Ok(WindowChoice { w, w_real })
}

/// `b = log(gamma)` for exact CUSUM on the log-likelihood scale.
pub fn predicted_threshold_cusum(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(gamma.ln())
}

/// `b = log(gamma) / delta_inf` for Subspace-CUSUM.
pub fn predicted_threshold_subspace(gamma: f64, delta_inf: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_positive("delta_inf", delta_inf)?;
    Ok(gamma.ln() / delta_inf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub gamma: f64,
    pub k: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub w_min: f64,
    pub w_star: usize,
    pub w_star_real: f64,
    pub d_star: f64,
    pub delta_star: f64,
    pub drift_lower: f64,
    pub drift_upper: f64,
    pub kl_number: f64,
    pub b_cusum: f64,
    pub b_subspace: f64,
    pub predicted_edd_subspace: f64,
    pub predicted_edd_cusum: f64,
    pub predicted_ratio: f64,
}

/// Optimal window, drift and tilt for a target ARL with the matching
/// first-order predictions.
pub fn tune(gamma: f64, k: usize, rho: f64, sigma2: f64) -> Result<TuningResult> {
    check_positive("sigma2", sigma2)?;
    let window = optimal_window(gamma, k, rho)?;
    let w = window.w as f64;
    let bounds = drift_bounds(k, rho, sigma2, w)?.feasible()?;
    let d_star = optimal_drift(k, rho, sigma2, w)?;
    let delta_star = optimal_delta(k, rho, w, sigma2)?;
    Ok(TuningResult {
        gamma,
        k,
        rho,
        sigma2,
        w_min: bounds.w_min,
        w_star: window.w,
        w_star_real: window.w_real,
        d_star,
        delta_star,
        drift_lower: bounds.lower,
        drift_upper: bounds.upper,
        kl_number: kl_number(rho),
        b_cusum: predicted_threshold_cusum(gamma)?,
        b_subspace: predicted_threshold_subspace(gamma, delta_star)?,
        predicted_edd_subspace: predicted_edd_subspace(gamma, k, rho, w)?,
        predicted_edd_cusum: predicted_edd_cusum(gamma, rho)?,
        predicted_ratio: predicted_ratio(gamma, k)?,
    })
}
