//! Forward sliding-window scatter matrix and its top eigenvector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::SpikedModel;
use crate::{Error, Result};

/// Pushes between full recomputations of the scatter matrix.
pub const REFRESH_INTERVAL: usize = 4096;

/// Ring buffer of the last `w` observations with their unnormalized scatter
/// `sum x_i x_i^T`.
#[derive(Debug, Clone)]
pub struct SlidingWindowCov {
    k: usize,
    w: usize,
    // Row-major ring of `w` samples; slot `head` is the next one overwritten.
    buffer: Vec<f64>,
    head: usize,
    len: usize,
    scatter: DMatrix<f64>,
    since_refresh: usize,
}

impl SlidingWindowCov {
    pub fn new(k: usize, w: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "dimension must be positive"));
        }
        if w == 0 {
            return Err(Error::invalid("w", "window length must be positive"));
        }
        Ok(Self {
            k,
            w,
            buffer: vec![0.0; k * w],
            head: 0,
            len: 0,
            scatter: DMatrix::zeros(k, k),
            since_refresh: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.w
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// Oldest buffered sample, the one the next push evicts once full.
    pub fn oldest(&self) -> Option<&[f64]> {
        if self.len == 0 {
            return None;
        }
        let slot = (self.head + self.w - self.len) % self.w;
        Some(&self.buffer[slot * self.k..(slot + 1) * self.k])
    }

    /// Buffered samples, oldest first.
    pub fn samples(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let start = (self.head + self.w - self.len) % self.w;
        (0..self.len).map(move |i| {
            let slot = (start + i) % self.w;
            &self.buffer[slot * self.k..(slot + 1) * self.k]
        })
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                actual: x.len(),
            });
        }
        let k = self.k;
        let slot = self.head * k;
        if self.len == self.w {
            let (buffer, scatter) = (&self.buffer, &mut self.scatter);
            rank_one_update(scatter, &buffer[slot..slot + k], -1.0);
        } else {
            self.len += 1;
        }
        self.buffer[slot..slot + k].copy_from_slice(x);
        rank_one_update(&mut self.scatter, x, 1.0);
        self.head = (self.head + 1) % self.w;

        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.recompute();
        }
        Ok(())
    }

    /// Rebuilds the scatter from the buffer, discarding accumulated rounding.
    pub fn recompute(&mut self) {
        let mut scatter = DMatrix::zeros(self.k, self.k);
        for x in self.samples() {
            rank_one_update(&mut scatter, x, 1.0);
        }
        self.scatter = scatter;
        self.since_refresh = 0;
    }
}

fn rank_one_update(m: &mut DMatrix<f64>, x: &[f64], sign: f64) {
    let k = x.len();
    let data = m.as_mut_slice();
    for (j, &xj) in x.iter().enumerate() {
        let scaled = sign * xj;
        let col = &mut data[j * k..(j + 1) * k];
        for (c, &xi) in col.iter_mut().zip(x) {
            *c += xi * scaled;
        }
    }
}

/// Power-iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    /// Relative residual `|S u - lambda u| <= tol * lambda` that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

impl PowerIteration {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be finite and > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopEigenEstimate {
    pub u_hat: DVector<f64>,
    pub lambda_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic start: `e_1` plus `1/k` on every coordinate, normalized.
pub fn cold_start(k: usize) -> DVector<f64> {
    let mut v = DVector::from_element(k, 1.0 / k as f64);
    v[0] += 1.0;
    v.normalize()
}

/// Top eigenpair of a symmetric positive semidefinite matrix.
///
/// Starts from `start` when given (warm start), otherwise from [`cold_start`].
/// The returned vector has unit norm and its largest-magnitude entry positive.
/// Exhausting `max_iter` is reported through `converged = false`, not an error.
pub fn power_iteration(
    matrix: &DMatrix<f64>,
    settings: &PowerIteration,
    start: Option<&DVector<f64>>,
) -> TopEigenEstimate {
    let k = matrix.nrows();
    let mut v = match start {
        Some(s) if s.len() == k && s.norm() > 0.0 => s.normalize(),
        _ => cold_start(k),
    };
    let mut y = DVector::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    let mut lambda = 0.0;
    while iterations < settings.max_iter {
        y.gemv(1.0, matrix, &v, 0.0);
        lambda = v.dot(&y);
        let residual = y
            .iter()
            .zip(v.iter())
            .map(|(yi, vi)| (yi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= settings.tol * lambda.abs() {
            converged = true;
            break;
        }
        let norm = y.norm();
        if norm == 0.0 {
            break;
        }
        v.copy_from(&y);
        v /= norm;
        iterations += 1;
    }
    if !converged {
        y.gemv(1.0, matrix, &v, 0.0);
        lambda = v.dot(&y);
    }
    fix_sign(&mut v);
    TopEigenEstimate {
        u_hat: v,
        lambda_hat: lambda.max(0.0),
        iterations,
        converged,
    }
}

fn fix_sign(v: &mut DVector<f64>) {
    let pivot = v.iamax();
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

/// Top eigenvector of a full window's scatter.
pub fn top_eigenvector(
    window: &SlidingWindowCov,
    settings: &PowerIteration,
    start: Option<&DVector<f64>>,
) -> Result<TopEigenEstimate> {
    if !window.is_full() {
        return Err(Error::WindowNotFull {
            len: window.len(),
            w: window.w(),
        });
    }
    settings.validate()?;
    Ok(power_iteration(window.scatter(), settings, start))
}

/// Smallest window for which the estimated direction is informative:
/// `(k - 1)(1 + rho) / rho^2`.
pub fn min_window(k: usize, rho: f64) -> f64 {
    (k as f64 - 1.0) * (1.0 + rho) / (rho * rho)
}

/// Large-window covariance of the eigenvector error `omega - u`:
/// `(1 + rho) / (w rho^2) * (I - u u^T)`.
pub fn eigenvector_error_cov(model: &SpikedModel, w: usize) -> Result<DMatrix<f64>> {
    let u = model
        .direction()
        .ok_or_else(|| Error::invalid("theta", "error covariance needs a spiked model"))?;
    let rho = model.rho();
    let w_min = min_window(model.k(), rho);
    if (w as f64) <= w_min {
        return Err(Error::InfeasibleWindow { w: w as f64, w_min });
    }
    let k = model.k();
    let mut m = DMatrix::identity(k, k);
    m.ger(-1.0, u, u, 1.0);
    Ok(m * ((1.0 + rho) / (w as f64 * rho * rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{basis_vector, seeded_rng, Scenario, StreamSampler};
    use approx::assert_abs_diff_eq;

    fn brute_force(samples: &[Vec<f64>]) -> DMatrix<f64> {
        let k = samples[0].len();
        let mut s = DMatrix::zeros(k, k);
        for x in samples {
            for i in 0..k {
                for j in 0..k {
                    s[(i, j)] += x[i] * x[j];
                }
            }
        }
        s
    }

    fn window_of(samples: &[Vec<f64>]) -> SlidingWindowCov {
        let mut win = SlidingWindowCov::new(samples[0].len(), samples.len()).unwrap();
        for x in samples {
            win.push(x).unwrap();
        }
        win
    }

    #[test]
    fn identical_pushes() {
        let v = vec![1.0, -2.0, 0.5];
        let win = window_of(&vec![v.clone(); 4]);
        let vv = DVector::from_vec(v);
        assert!((win.scatter() - (&vv * vv.transpose()) * 4.0).norm() < 1e-12);
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut win = SlidingWindowCov::new(2, 3).unwrap();
        let xs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]];
        for x in &xs {
            win.push(x).unwrap();
        }
        let expect = brute_force(&xs[1..].iter().map(|x| x.to_vec()).collect::<Vec<_>>());
        assert!((win.scatter() - expect).norm() < 1e-12);
        assert_eq!(win.oldest().unwrap(), &[0.0, 1.0]);
        let order: Vec<&[f64]> = win.samples().collect();
        assert_eq!(order, vec![&[0.0, 1.0][..], &[1.0, 1.0], &[2.0, 0.0]]);
    }

    #[test]
    fn push_rejects_wrong_dimension() {
        let mut win = SlidingWindowCov::new(3, 2).unwrap();
        assert_eq!(
            win.push(&[1.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 3, actual: 1 }
        );
    }

    #[test]
    fn long_run_matches_brute_force() {
        let post = SpikedModel::spiked(1.0, 2.0, basis_vector(4, 1)).unwrap();
        let sampler = StreamSampler::new(Scenario::emerging(post, 0).unwrap(), seeded_rng(3, 0));
        let xs: Vec<Vec<f64>> = sampler.take(1000).collect();
        let mut win = SlidingWindowCov::new(4, 37).unwrap();
        for x in &xs {
            win.push(x).unwrap();
        }
        let err = (win.scatter() - brute_force(&xs[1000 - 37..])).norm();
        assert!(err < 1e-8, "drift {err}");
    }

    #[test]
    fn refresh_keeps_scatter_exact_over_many_pushes() {
        let post = SpikedModel::spiked(1.0, 1e3, basis_vector(3, 0)).unwrap();
        let sampler = StreamSampler::new(Scenario::emerging(post, 0).unwrap(), seeded_rng(4, 0));
        let mut win = SlidingWindowCov::new(3, 10).unwrap();
        let mut last = Vec::new();
        for x in sampler.take(3 * REFRESH_INTERVAL + 17) {
            win.push(&x).unwrap();
            last.push(x);
            if last.len() > 10 {
                last.remove(0);
            }
        }
        let err = (win.scatter() - brute_force(&last)).norm();
        assert!(err < 1e-8, "drift {err}");
    }

    #[test]
    fn eigen_requires_full_window() {
        let mut win = SlidingWindowCov::new(2, 3).unwrap();
        win.push(&[1.0, 0.0]).unwrap();
        assert_eq!(
            top_eigenvector(&win, &PowerIteration::default(), None).unwrap_err(),
            Error::WindowNotFull { len: 1, w: 3 }
        );
    }

    #[test]
    fn diagonal_scatter() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 1.0]));
        let est = power_iteration(&m, &PowerIteration::default(), None);
        assert!(est.converged);
        assert_abs_diff_eq!(est.lambda_hat, 3.0, epsilon = 1e-8);
        assert!((&est.u_hat - basis_vector(3, 0)).norm() < 1e-8);
    }

    #[test]
    fn rank_one_scatter() {
        let win = window_of(&[vec![3.0, 4.0]]);
        let est = top_eigenvector(&win, &PowerIteration::default(), None).unwrap();
        assert_abs_diff_eq!(est.lambda_hat, 25.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.u_hat[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(est.u_hat[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let win = window_of(&[vec![-3.0, -4.0]]);
        let est = top_eigenvector(&win, &PowerIteration::default(), None).unwrap();
        assert!(est.u_hat[1] > 0.0);
    }

    #[test]
    fn matches_dense_eigensolver() {
        let mut rng = seeded_rng(21, 0);
        for k in 2..=8 {
            let post = SpikedModel::spiked(1.0, 1.5, crate::model::random_unit_vector(k, &mut rng)).unwrap();
            let sampler = StreamSampler::new(Scenario::emerging(post, 0).unwrap(), seeded_rng(22, k as u64));
            let xs: Vec<Vec<f64>> = sampler.take(50).collect();
            let win = window_of(&xs);
            let est = top_eigenvector(&win, &PowerIteration::default(), None).unwrap();

            let oracle = brute_force(&xs).symmetric_eigen();
            let top = oracle.eigenvalues.imax();
            let lambda = oracle.eigenvalues[top];
            let u = oracle.eigenvectors.column(top);
            assert!(est.converged);
            assert!((est.lambda_hat - lambda).abs() <= 1e-8 * lambda);
            assert!(est.u_hat.dot(&u).abs() >= 1.0 - 1e-8);
            assert_abs_diff_eq!(est.u_hat.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn isotropic_scatter_returns_start_direction() {
        let m = DMatrix::<f64>::identity(4, 4) * 7.0;
        let est = power_iteration(&m, &PowerIteration::default(), None);
        assert!(est.converged);
        assert_eq!(est.iterations, 0);
        assert!((&est.u_hat - cold_start(4)).norm() < 1e-15);
        let again = power_iteration(&m, &PowerIteration::default(), None);
        assert_eq!(est, again);
    }

    #[test]
    fn zero_scatter_is_deterministic() {
        let m = DMatrix::<f64>::zeros(3, 3);
        let est = power_iteration(&m, &PowerIteration::default(), None);
        assert_eq!(est.u_hat, cold_start(3));
        assert_eq!(est.lambda_hat, 0.0);
    }

    #[test]
    fn exhausted_iterations_return_best_iterate() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.999, 0.5]));
        let est = power_iteration(&m, &PowerIteration { tol: 1e-14, max_iter: 3 }, None);
        assert!(!est.converged);
        assert_eq!(est.iterations, 3);
        assert_abs_diff_eq!(est.u_hat.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_and_cold_start_agree_with_spectral_gap() {
        let mut rng = seeded_rng(8, 0);
        for _ in 0..20 {
            let q = crate::model::random_unit_vector(5, &mut rng);
            let mut m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.4, 0.3, 0.2, 0.1]));
            m.ger(2.0, &q, &q, 1.0);
            let start = crate::model::random_unit_vector(5, &mut rng);
            let cold = power_iteration(&m, &PowerIteration::default(), None);
            let warm = power_iteration(&m, &PowerIteration::default(), Some(&start));
            assert!(cold.u_hat.dot(&warm.u_hat).abs() >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn error_cov_formula() {
        let model = SpikedModel::spiked(1.0, 1.0, basis_vector(2, 0)).unwrap();
        let m = eigenvector_error_cov(&model, 100).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn error_cov_annihilates_direction() {
        let mut rng = seeded_rng(2, 0);
        let u = crate::model::random_unit_vector(6, &mut rng);
        let model = SpikedModel::spiked(2.0, 3.0, u.clone()).unwrap();
        let m = eigenvector_error_cov(&model, 50).unwrap();
        assert!((m * u).amax() < 1e-15);
    }

    #[test]
    fn error_cov_rejects_small_window() {
        let model = SpikedModel::spiked(1.0, 1.0, basis_vector(5, 0)).unwrap();
        assert!(matches!(
            eigenvector_error_cov(&model, 8),
            Err(Error::InfeasibleWindow { .. })
        ));
        assert!(eigenvector_error_cov(&SpikedModel::isotropic(3, 1.0).unwrap(), 50).is_err());
    }
}
