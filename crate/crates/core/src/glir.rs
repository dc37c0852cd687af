//! Gradient likelihood-ratio (GLiR) membership attack.
//!
//! The attacker sees the published (clipped, noised) batch mean `m` of one
//! SGD step and the gradient `θ` of a query point, estimates the gradient
//! distribution from background data, and asks how likely `m` is if `θ` was
//! *not* in the batch. Under that hypothesis the whitened distance between
//! `m` and `θ` follows a non-central χ² law, so a small left-tail
//! probability is evidence of membership. Per-step log p-values are summed
//! over steps.
//!
//! [`run_audit`] simulates the whole experiment with a known gradient model
//! to compare the attack with the analytical one-step trade-off.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain, StreamRng};
use crate::roc::RocEstimate;
use crate::sgd::clip_gradient;
use crate::specfun::NoncentralChiSq;

/// Clamp applied to log p-values of zero.
pub const LOG_P_FLOOR: f64 = -745.0;
/// Default covariance ridge, relative to trace/d.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Distribution family of simulated per-example gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    /// Mean plus a linear map of i.i.d. unit-variance uniforms.
    Uniform,
}

/// Law of per-example gradients: mean, covariance and family.
#[derive(Clone, Debug)]
pub struct GradientModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    family: Family,
    factor: Factor,
}

#[derive(Clone, Debug)]
enum Factor {
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

impl GradientModel {
    /// Requires a symmetric (within 1e-10) positive definite covariance.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, family: Family) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("mean", "dimension must be >= 1"));
        }
        if covariance.shape() != (d, d) {
            return Err(Error::invalid(
                "covariance",
                format!("shape {:?} does not match dimension {d}", covariance.shape()),
            ));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::invalid("covariance", format!("not symmetric (max gap {asym:e})")));
        }
        let is_diagonal = (0..d).all(|i| (0..d).all(|j| i == j || covariance[(i, j)] == 0.0));
        let factor = if is_diagonal {
            let diag = covariance.diagonal();
            if let Some(bad) = diag.iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::SingularCovariance { min_eigenvalue: *bad });
            }
            Factor::Diagonal(diag.map(f64::sqrt))
        } else {
            match covariance.clone().cholesky() {
                Some(c) => Factor::Lower(c.l()),
                None => {
                    let min = SymmetricEigen::new(covariance.clone()).eigenvalues.min();
                    return Err(Error::SingularCovariance { min_eigenvalue: min });
                }
            }
        };
        Ok(GradientModel {
            mean,
            covariance,
            family,
            factor,
        })
    }

    /// Zero mean, identity covariance.
    pub fn standard(d: usize, family: Family) -> Result<Self> {
        GradientModel::new(DVector::zeros(d), DMatrix::identity(d, d), family)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn family(&self) -> Family {
        self.family
    }

    fn shape(&self, z: DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Diagonal(s) => z.component_mul(s),
            Factor::Lower(l) => l * z,
        }
    }

    fn unit_draw(&self, rng: &mut StreamRng) -> DVector<f64> {
        let d = self.dim();
        match self.family {
            Family::Gaussian => DVector::from_iterator(d, (0..d).map(|_| rng.sample(StandardNormal))),
            Family::Uniform => {
                let r = 3f64.sqrt();
                DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-r..r)))
            }
        }
    }

    /// One gradient.
    pub fn sample(&self, rng: &mut StreamRng) -> DVector<f64> {
        let z = self.unit_draw(rng);
        self.shape(z) + &self.mean
    }

    /// Sum of `count` independent gradients. For the Gaussian family this
    /// is a single draw from N(count·μ, count·Σ).
    pub fn sample_sum(&self, count: usize, rng: &mut StreamRng) -> DVector<f64> {
        match self.family {
            Family::Gaussian => {
                let z = self.unit_draw(rng) * (count as f64).sqrt();
                self.shape(z) + &self.mean * count as f64
            }
            Family::Uniform => {
                let mut acc = DVector::zeros(self.dim());
                for _ in 0..count {
                    acc += self.sample(rng);
                }
                acc
            }
        }
    }
}

/// Estimated gradient mean and covariance with the symmetric whitener.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    mean_hat: DVector<f64>,
    cov_hat: DMatrix<f64>,
    whitener: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    sample_count: usize,
}

impl GradientEstimate {
    /// Uses the model's own parameters (the attacker knows them exactly).
    pub fn exact(model: &GradientModel) -> Result<Self> {
        GradientEstimate::from_moments(model.mean.clone(), model.covariance.clone(), 0)
    }

    fn from_moments(mean_hat: DVector<f64>, cov_hat: DMatrix<f64>, sample_count: usize) -> Result<Self> {
        let eig = SymmetricEigen::new(cov_hat.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 1e-13 * max.abs()) || !(max > 0.0) {
            return Err(Error::SingularCovariance { min_eigenvalue: min });
        }
        let whitener = spectral_function(&eig.eigenvectors, &eig.eigenvalues, |l| l.powf(-0.5));
        Ok(GradientEstimate {
            mean_hat,
            cov_hat,
            whitener,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            sample_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_hat.len()
    }

    pub fn mean_hat(&self) -> &DVector<f64> {
        &self.mean_hat
    }

    pub fn cov_hat(&self) -> &DMatrix<f64> {
        &self.cov_hat
    }

    /// Σ̂^{-1/2}, symmetric.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    /// Number of background samples (0 for exact parameters).
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// (Σ̂/n + τ²I)^{-1/2}: whitens the published mean of a batch of `n`
    /// under added noise of variance `tau2`.
    pub fn batch_whitener(&self, n: usize, tau2: f64) -> DMatrix<f64> {
        let n = n as f64;
        spectral_function(&self.eigenvectors, &self.eigenvalues, |l| (l / n + tau2).powf(-0.5))
    }
}

fn spectral_function(v: &DMatrix<f64>, lambda: &DVector<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * f(lambda[j]));
    let m = scaled * v.transpose();
    0.5 * (&m + m.transpose())
}

/// Sample mean and covariance (divisor m − 1) of background gradients,
/// plus `ridge·(trace/d)·I`.
pub fn estimate_distribution(background: &[DVector<f64>], ridge: f64) -> Result<GradientEstimate> {
    let m = background.len();
    if m < 2 {
        return Err(Error::invalid("background", "needs at least 2 samples"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge", format!("{ridge} must be finite and >= 0")));
    }
    let d = background[0].len();
    if d == 0 || background.iter().any(|g| g.len() != d) {
        return Err(Error::invalid("background", "samples must share a positive dimension"));
    }
    let mut mean = DVector::zeros(d);
    for g in background {
        mean += g;
    }
    mean /= m as f64;
    let centered = DMatrix::from_fn(d, m, |i, j| background[j][i] - mean[i]);
    let mut cov = &centered * centered.transpose() / (m as f64 - 1.0);
    let shift = ridge * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += shift;
    }
    GradientEstimate::from_moments(mean, cov, m)
}

/// Ŝ = (n−1)(m − θ)ᵀ Σ̂⁻¹ (m − θ).
pub fn glir_statistic(
    published_mean: &DVector<f64>,
    query: &DVector<f64>,
    estimate: &GradientEstimate,
    n: usize,
) -> f64 {
    let w = estimate.whitener() * (published_mean - query);
    (n as f64 - 1.0) * w.norm_squared()
}

/// K̂ = ‖Σ̂^{-1/2}(θ − μ̂)‖².
pub fn susceptibility(query: &DVector<f64>, estimate: &GradientEstimate) -> f64 {
    (estimate.whitener() * (query - estimate.mean_hat())).norm_squared()
}

/// log F_{χ²_d(nK̂)}( n/(n−1) · Ŝ ), clamped at −745.
///
/// Without the query in the batch, n/(n−1)·Ŝ is exactly χ²_d(nK̂)
/// distributed, so this is the left-tail p-value of the nonmember law.
pub fn glir_log_pvalue(statistic: f64, d: u32, n: usize, k_hat: f64) -> Result<f64> {
    if !(statistic >= 0.0) {
        return Err(Error::invalid("statistic", format!("{statistic} must be >= 0")));
    }
    if n < 2 {
        return Err(Error::invalid("n", "must be >= 2"));
    }
    let n = n as f64;
    let law = NoncentralChiSq::new(d, n * k_hat)?;
    law.log_cdf(n / (n - 1.0) * statistic)
}

/// Per-step scorer for a fixed estimate, batch size and noise level.
///
/// With W = (Σ̂/n + τ²I)^{-1/2} the score is log F_{χ²_d(‖W(θ−μ̂)‖²)}(‖W(m−θ)‖²).
/// For τ = 0 this equals [`glir_log_pvalue`] of [`glir_statistic`] and
/// [`susceptibility`].
#[derive(Clone, Debug)]
pub struct GlirScorer {
    whitener: DMatrix<f64>,
    white_mean: DVector<f64>,
    d: u32,
}

impl GlirScorer {
    pub fn new(estimate: &GradientEstimate, n: usize, tau2: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", "must be >= 2"));
        }
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::invalid("tau2", format!("{tau2} must be finite and >= 0")));
        }
        let whitener = estimate.batch_whitener(n, tau2);
        let white_mean = &whitener * estimate.mean_hat();
        Ok(GlirScorer {
            whitener,
            white_mean,
            d: estimate.dim() as u32,
        })
    }

    /// Log p-value of one step; small means strong member evidence.
    pub fn log_pvalue(&self, published_mean: &DVector<f64>, query: &DVector<f64>) -> f64 {
        let wq = &self.whitener * query;
        let wm = &self.whitener * published_mean;
        let gamma = (&wq - &self.white_mean).norm_squared();
        let stat = (wm - wq).norm_squared();
        NoncentralChiSq::new(self.d, gamma)
            .and_then(|law| law.log_cdf(stat))
            .unwrap_or(LOG_P_FLOOR)
            .max(LOG_P_FLOOR)
    }
}

/// Where the attacker's distribution estimate comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimation {
    /// The true model parameters.
    Exact,
    /// `samples` background gradients with the given ridge.
    Estimated { samples: usize, ridge: f64 },
}

/// Settings of a simulated audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Batch size n.
    pub n: usize,
    /// SGD steps T; scores are summed over steps.
    pub steps: usize,
    /// Trials per class.
    pub trials: usize,
    pub tau2: f64,
    /// Per-example clipping norm; `+∞` disables clipping.
    pub clip: f64,
    pub estimation: Estimation,
    pub seed: u64,
}

impl AuditConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", "must be >= 2"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be >= 1"));
        }
        if self.trials < 100 {
            return Err(Error::invalid("trials", format!("{} must be >= 100", self.trials)));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(Error::invalid("tau2", "must be finite and >= 0"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip", "must be positive"));
        }
        if let Estimation::Estimated { samples, ridge } = self.estimation {
            if samples < 2 || !(ridge >= 0.0) {
                return Err(Error::invalid("estimation", "needs >= 2 samples and ridge >= 0"));
            }
        }
        Ok(())
    }
}

/// Scores and ROC of a simulated audit.
#[derive(Clone, Debug)]
pub struct AuditOutcome {
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
    pub roc: RocEstimate,
}

/// Simulates the membership experiment `trials` times per class.
///
/// Each trial draws a query gradient; members have it in every batch
/// alongside n − 1 fresh draws, nonmembers see n fresh draws. The published
/// mean is the clipped average plus N(0, τ²I). Trial `i` of class `c` uses
/// random stream `2i + c`, so results do not depend on thread count.
pub fn run_audit(model: &GradientModel, config: &AuditConfig) -> Result<AuditOutcome> {
    config.validate()?;
    let estimate = match config.estimation {
        Estimation::Exact => GradientEstimate::exact(model)?,
        Estimation::Estimated { samples, ridge } => {
            let mut rng = rng::stream(config.seed, Domain::AuditBackground, 0);
            let bg: Vec<DVector<f64>> = (0..samples)
                .map(|_| clipped(model.sample(&mut rng), config.clip))
                .collect();
            estimate_distribution(&bg, ridge)?
        }
    };
    let scorer = GlirScorer::new(&estimate, config.n, config.tau2)?;

    let scores: Vec<f64> = (0..2 * config.trials as u64)
        .into_par_iter()
        .map(|stream| {
            let member = stream % 2 == 0;
            let mut rng = rng::stream(config.seed, Domain::AuditTrial, stream);
            simulate_trial(model, config, &scorer, member, &mut rng)
        })
        .collect();
    let member_scores: Vec<f64> = scores.iter().step_by(2).copied().collect();
    let nonmember_scores: Vec<f64> = scores.iter().skip(1).step_by(2).copied().collect();
    let roc = RocEstimate::from_scores(&member_scores, &nonmember_scores)?;
    Ok(AuditOutcome {
        member_scores,
        nonmember_scores,
        roc,
    })
}

fn clipped(g: DVector<f64>, clip: f64) -> DVector<f64> {
    if clip.is_finite() {
        clip_gradient(&g, clip)
    } else {
        g
    }
}

fn simulate_trial(
    model: &GradientModel,
    config: &AuditConfig,
    scorer: &GlirScorer,
    member: bool,
    rng: &mut StreamRng,
) -> f64 {
    let n = config.n;
    let query = clipped(model.sample(rng), config.clip);
    let others = if member { n - 1 } else { n };
    let mut total = 0.0;
    for _ in 0..config.steps {
        let mut sum = if config.clip.is_finite() {
            let mut acc = DVector::zeros(model.dim());
            for _ in 0..others {
                acc += clipped(model.sample(rng), config.clip);
            }
            acc
        } else {
            model.sample_sum(others, rng)
        };
        if member {
            sum += &query;
        }
        let mut mean = sum / n as f64;
        if config.tau2 > 0.0 {
            let tau = config.tau2.sqrt();
            for v in mean.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += tau * z;
            }
        }
        total += scorer.log_pvalue(&mean, &query);
    }
    total
}
