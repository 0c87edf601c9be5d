//! Spiked-covariance laws and the streams drawn from them.
//!
//! A [`SpikedModel`] is the zero-mean Gaussian law with covariance
//! `sigma2 * I_k + theta * u u^T`. A [`Scenario`] pairs a pre-change and a
//! post-change model with a change point `tau`: samples `1..=tau` follow the
//! pre-change law and samples from `tau + 1` on follow the post-change law.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-12;
const PROJECTION_UNIT_TOL: f64 = 1e-10;

/// Generator for replication `stream` under `master_seed`.
///
/// Every stochastic routine in the crate draws from generators built here, so a
/// `(master_seed, stream)` pair fully determines the samples it produces.
pub fn seeded_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Uniformly distributed unit vector in `R^k`.
pub fn random_unit_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Standard basis vector `e_index` in `R^k`.
pub fn basis_vector(k: usize, index: usize) -> DVector<f64> {
    let mut v = DVector::zeros(k);
    v[index] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedModel {
    k: usize,
    sigma2: f64,
    theta: f64,
    u: Option<DVector<f64>>,
}

impl SpikedModel {
    /// Pure-noise law `N(0, sigma2 * I_k)`.
    pub fn isotropic(k: usize, sigma2: f64) -> Result<Self> {
        check_common(k, sigma2)?;
        Ok(Self {
            k,
            sigma2,
            theta: 0.0,
            u: None,
        })
    }

    /// Spiked law `N(0, sigma2 * I_k + theta * u u^T)`.
    ///
    /// A zero `theta` yields the isotropic law and discards `u`.
    pub fn spiked(sigma2: f64, theta: f64, u: DVector<f64>) -> Result<Self> {
        let k = u.len();
        check_common(k, sigma2)?;
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::invalid("theta", format!("must be finite and >= 0, got {theta}")));
        }
        if theta == 0.0 {
            return Self::isotropic(k, sigma2);
        }
        let norm = u.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid("u", format!("must have unit norm, got {norm}")));
        }
        Ok(Self {
            k,
            sigma2,
            theta,
            u: Some(u),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Spike direction; `None` for the isotropic law.
    pub fn direction(&self) -> Option<&DVector<f64>> {
        self.u.as_ref()
    }

    /// Signal-to-noise ratio `theta / sigma2`.
    pub fn rho(&self) -> f64 {
        self.theta / self.sigma2
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = DMatrix::identity(self.k, self.k) * self.sigma2;
        if let Some(u) = &self.u {
            cov.ger(self.theta, u, u, 1.0);
        }
        cov
    }

    /// Writes one draw into `out` as `sigma * z + sqrt(theta) * g * u`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.k);
        let sigma = self.sigma2.sqrt();
        for x in out.iter_mut() {
            *x = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if let Some(u) = &self.u {
            let g = self.theta.sqrt() * rng.sample::<f64, _>(StandardNormal);
            for (x, ui) in out.iter_mut().zip(u.iter()) {
                *x += g * ui;
            }
        }
    }
}

fn check_common(k: usize, sigma2: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k", "dimension must be positive"));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", format!("must be finite and > 0, got {sigma2}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Emerging,
    Switching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    flavor: Flavor,
    pre: SpikedModel,
    post: SpikedModel,
    tau: u64,
}

impl Scenario {
    /// Noise `N(0, sigma2 I)` up to `tau`, then `post`.
    pub fn emerging(post: SpikedModel, tau: u64) -> Result<Self> {
        let pre = SpikedModel::isotropic(post.k, post.sigma2)?;
        Self::new(Flavor::Emerging, pre, post, tau)
    }

    /// Spike along `u1` up to `tau`, then the same spike strength along `u2`.
    pub fn switching(
        sigma2: f64,
        theta: f64,
        u1: DVector<f64>,
        u2: DVector<f64>,
        tau: u64,
    ) -> Result<Self> {
        let pre = SpikedModel::spiked(sigma2, theta, u1)?;
        let post = SpikedModel::spiked(sigma2, theta, u2)?;
        Self::new(Flavor::Switching, pre, post, tau)
    }

    pub fn new(flavor: Flavor, pre: SpikedModel, post: SpikedModel, tau: u64) -> Result<Self> {
        if pre.k != post.k {
            return Err(Error::DimensionMismatch {
                expected: pre.k,
                actual: post.k,
            });
        }
        if pre.sigma2 != post.sigma2 {
            return Err(Error::invalid("sigma2", "pre- and post-change noise power differ"));
        }
        match flavor {
            Flavor::Emerging => {
                if pre.theta != 0.0 {
                    return Err(Error::invalid("theta", "emerging scenario needs a pure-noise pre-change law"));
                }
            }
            Flavor::Switching => {
                if !(pre.theta > 0.0 && pre.theta == post.theta) {
                    return Err(Error::invalid(
                        "theta",
                        "switching scenario needs equal positive spike strengths",
                    ));
                }
            }
        }
        Ok(Self {
            flavor,
            pre,
            post,
            tau,
        })
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn pre(&self) -> &SpikedModel {
        &self.pre
    }

    pub fn post(&self) -> &SpikedModel {
        &self.post
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn k(&self) -> usize {
        self.pre.k
    }

    /// Same laws, different change point.
    pub fn with_tau(&self, tau: u64) -> Self {
        Self { tau, ..self.clone() }
    }

    /// Law in force at 1-based sample index `t`.
    pub fn law_at(&self, t: u64) -> &SpikedModel {
        if t <= self.tau {
            &self.pre
        } else {
            &self.post
        }
    }
}

/// Infinite sample stream of a scenario.
#[derive(Debug, Clone)]
pub struct StreamSampler {
    scenario: Scenario,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl StreamSampler {
    pub fn new(scenario: Scenario, rng: ChaCha8Rng) -> Self {
        Self {
            scenario,
            rng,
            emitted: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.scenario.k()
    }

    /// Number of samples drawn so far.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Draws the next sample into `out`.
    pub fn fill_next(&mut self, out: &mut [f64]) {
        self.emitted += 1;
        self.scenario.law_at(self.emitted).sample_into(&mut self.rng, out);
    }
}

impl Iterator for StreamSampler {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let mut x = vec![0.0; self.k()];
        self.fill_next(&mut x);
        Some(x)
    }
}

/// First `horizon` samples of `scenario`, reproducible from `seed`.
pub fn sample_stream(scenario: &Scenario, horizon: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    // Re-validate: deserialized scenarios bypass the constructors.
    let scenario = Scenario::new(scenario.flavor, scenario.pre.clone(), scenario.post.clone(), scenario.tau)?;
    Ok(StreamSampler::new(scenario, seeded_rng(seed, 0))
        .take(horizon)
        .collect())
}

/// Orthonormal map onto the complement of a known direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    q: DMatrix<f64>,
}

impl ProjectionOperator {
    /// The `(k-1) x k` matrix `Q`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn input_dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let y = &self.q * DVector::from_column_slice(x);
        Ok(y.as_slice().to_vec())
    }
}

/// Builds `Q` with `Q u1 = 0` and `Q Q^T = I` from a Householder reflector.
///
/// The reflector sends `u1` to a multiple of `e_1`; its remaining rows span the
/// orthogonal complement. Each row is signed so its first nonzero entry is
/// positive.
pub fn build_projection(u1: &DVector<f64>) -> Result<ProjectionOperator> {
    let k = u1.len();
    if k < 2 {
        return Err(Error::invalid("k", "projection needs k >= 2"));
    }
    let norm = u1.norm();
    if (norm - 1.0).abs() > PROJECTION_UNIT_TOL {
        return Err(Error::invalid("u1", format!("must have unit norm, got {norm}")));
    }
    // v = u1 - alpha e1 with alpha = -sign(u1[0]) avoids cancellation.
    let sign = if u1[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u1.clone();
    v[0] += sign;
    let vtv = v.norm_squared();
    let mut q = DMatrix::zeros(k - 1, k);
    for row in 1..k {
        for col in 0..k {
            let identity = if row == col { 1.0 } else { 0.0 };
            q[(row - 1, col)] = identity - 2.0 * v[row] * v[col] / vtv;
        }
        let lead = (0..k).map(|c| q[(row - 1, c)]).find(|x| x.abs() > 1e-12);
        if matches!(lead, Some(x) if x < 0.0) {
            q.row_mut(row - 1).neg_mut();
        }
    }
    Ok(ProjectionOperator { q })
}

/// Maps a switching scenario to the emerging scenario seen by `y = Q x`.
///
/// The reduced post-change spike has strength `theta * (1 - (u1.u2)^2)` and
/// direction `Q u2 / |Q u2|`.
pub fn reduce_switching(scenario: &Scenario) -> Result<(Scenario, ProjectionOperator)> {
    if scenario.flavor != Flavor::Switching {
        return Err(Error::invalid("flavor", "reduction applies to switching scenarios only"));
    }
    let u1 = scenario.pre.u.as_ref().ok_or_else(|| Error::invalid("u1", "missing"))?;
    let u2 = scenario.post.u.as_ref().ok_or_else(|| Error::invalid("u2", "missing"))?;
    let overlap = u1.dot(u2);
    let retained = 1.0 - overlap * overlap;
    if retained <= 1e-12 {
        return Err(Error::DegenerateChange);
    }
    let projection = build_projection(u1)?;
    let qu2 = projection.matrix() * u2;
    let direction = &qu2 / qu2.norm();
    let post = SpikedModel::spiked(scenario.pre.sigma2, scenario.post.theta * retained, direction)?;
    let reduced = Scenario::emerging(post, scenario.tau)?;
    Ok((reduced, projection))
}
