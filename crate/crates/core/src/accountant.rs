//! Closed-form privacy accounting.
//!
//! Per-step Gaussian levels for noisy SGD, multi-step and subsampled
//! composition, and the parametric conversion between μ-GDP and μ-GMIP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tradeoff::OneStepParams;

/// Largest per-step μ accepted by [`compose_subsampled`].
pub const MAX_SUBSAMPLED_MU_STEP: f64 = 40.0;

/// Which threat model a μ refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Notion {
    /// Membership-inference privacy with a Gaussian trade-off.
    Gmip,
    /// Gaussian differential privacy.
    Gdp,
}

impl std::fmt::Display for Notion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Notion::Gmip => "MIP",
            Notion::Gdp => "DP",
        })
    }
}

/// A Gaussian privacy level under a given notion. `mu` may be `+∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyLevel {
    pub notion: Notion,
    pub mu: f64,
}

impl PrivacyLevel {
    pub fn new(notion: Notion, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::invalid("mu", format!("{mu} must be >= 0")));
        }
        Ok(PrivacyLevel { notion, mu })
    }
}

/// Dataset size, batch size and number of epochs of a subsampled run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsamplingPlan {
    dataset_size: u64,
    batch_size: u64,
    epochs: f64,
}

impl SubsamplingPlan {
    pub fn new(dataset_size: u64, batch_size: u64, epochs: f64) -> Result<Self> {
        if dataset_size == 0 {
            return Err(Error::invalid("dataset_size", "must be >= 1"));
        }
        if batch_size == 0 || batch_size > dataset_size {
            return Err(Error::invalid(
                "batch_size",
                format!("{batch_size} must lie in [1, {dataset_size}]"),
            ));
        }
        if !(epochs > 0.0 && epochs.is_finite()) {
            return Err(Error::invalid("epochs", format!("{epochs} must be positive")));
        }
        Ok(SubsamplingPlan {
            dataset_size,
            batch_size,
            epochs,
        })
    }

    pub fn dataset_size(&self) -> u64 {
        self.dataset_size
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn epochs(&self) -> f64 {
        self.epochs
    }

    /// Iteration count T = E·N/n, kept real-valued.
    pub fn iterations(&self) -> f64 {
        self.epochs * self.dataset_size as f64 / self.batch_size as f64
    }

    /// Composition ratio c = n·√T/N. With `strict`, T is floored first.
    pub fn ratio(&self, strict: bool) -> f64 {
        let t = if strict {
            self.iterations().floor()
        } else {
            self.iterations()
        };
        self.batch_size as f64 * t.sqrt() / self.dataset_size as f64
    }
}

/// Batch size inflated by the noise: n + τ²n²/C².
pub fn n_effective(n: u64, tau2: f64, clip: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("n", format!("{n} must be >= 2")));
    }
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::invalid("tau2", format!("{tau2} must be finite and >= 0")));
    }
    if !(clip > 0.0) {
        return Err(Error::invalid("clip", format!("{clip} must be positive")));
    }
    let n = n as f64;
    if tau2 == 0.0 {
        return Ok(n);
    }
    if clip.is_infinite() {
        return Err(Error::invalid(
            "clip",
            "noise without a finite clipping norm has no effective batch size",
        ));
    }
    Ok(n + tau2 * n * n / (clip * clip))
}

/// Per-step μ of the Gaussian approximation to the one-step trade-off:
/// (d + (2n_eff − 1)K) / (n_eff·√(2d + 4n_eff·K)).
pub fn mu_step(params: &OneStepParams) -> f64 {
    mu_step_raw(params.n_effective(), params.d() as f64, params.susceptibility())
}

pub(crate) fn mu_step_raw(ne: f64, d: f64, k: f64) -> f64 {
    (d + (2.0 * ne - 1.0) * k) / (ne * (2.0 * d + 4.0 * ne * k).sqrt())
}

/// μ of `k` identical Gaussian steps: √k·μ_step.
pub fn compose_k_steps(mu_step: f64, k: u64) -> Result<f64> {
    check_mu("mu_step", mu_step)?;
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    Ok((k as f64).sqrt() * mu_step)
}

/// Asymptotic μ of subsampled composition with ratio `c`:
/// √2·c·√(exp(μs²)Φ(1.5μs) + 3Φ(−0.5μs) − 2).
///
/// The result can overflow to `+∞` for μs close to the 40 limit.
pub fn compose_subsampled(mu_step: f64, c: f64) -> Result<f64> {
    check_mu("mu_step", mu_step)?;
    if mu_step > MAX_SUBSAMPLED_MU_STEP {
        return Err(Error::invalid(
            "mu_step",
            format!("{mu_step} exceeds {MAX_SUBSAMPLED_MU_STEP}; exp(mu_step^2) overflows"),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("c", format!("{c} must be positive")));
    }
    Ok(std::f64::consts::SQRT_2 * c * subsampling_bracket(mu_step).sqrt())
}

/// exp(m²)Φ(1.5m) + 3Φ(−0.5m) − 2, written without the cancellation at small m.
fn subsampling_bracket(m: f64) -> f64 {
    use libm::erf;
    let a = 1.5 * m / std::f64::consts::SQRT_2;
    let b = 0.5 * m / std::f64::consts::SQRT_2;
    if m < 5.0 {
        let ea = erf(a);
        0.5 * libm::expm1(m * m) * (1.0 + ea) + 0.5 * (ea - 3.0 * erf(b))
    } else {
        // the exp term dominates; factor it out to postpone overflow
        let phi_a = crate::specfun::std_normal_cdf(1.5 * m).get();
        let rest = 3.0 * crate::specfun::std_normal_cdf(-0.5 * m).get() - 2.0;
        let ln = m * m + (phi_a + rest * (-m * m).exp()).ln();
        ln.exp()
    }
}

/// Composition ratio √(E·n/N) of a plan.
pub fn subsampling_ratio(plan: &SubsamplingPlan) -> f64 {
    plan.ratio(false)
}

/// μ-GDP → μ-GMIP for one step with K = d:
/// min{√(d/(n + 4C²/μ_DP² + ½)), μ_DP}.
pub fn dp_to_mip(mu_dp: f64, n: u64, d: u64, clip: f64) -> Result<f64> {
    if !(mu_dp > 0.0) {
        return Err(Error::invalid("mu_dp", format!("{mu_dp} must be positive")));
    }
    check_conversion(n, d, clip)?;
    let inv = 4.0 * clip * clip / (mu_dp * mu_dp);
    let mip = (d as f64 / (n as f64 + inv + 0.5)).sqrt();
    Ok(mip.min(mu_dp))
}

/// μ-GMIP → μ-GDP for one step with K = d:
/// 2/√(d/μ² − n − ½) below the threshold √(2d/(2n+1)), `+∞` otherwise.
///
/// The finite branch carries no C; `clip` is validated but not used.
pub fn mip_to_dp(mu_mip: f64, n: u64, d: u64, clip: f64) -> Result<f64> {
    if !(mu_mip > 0.0) {
        return Err(Error::invalid("mu_mip", format!("{mu_mip} must be positive")));
    }
    check_conversion(n, d, clip)?;
    let (n, d) = (n as f64, d as f64);
    if mu_mip >= (2.0 * d / (2.0 * n + 1.0)).sqrt() {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 / (d / (mu_mip * mu_mip) - n - 0.5).sqrt())
}

fn check_mu(name: &'static str, mu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid(name, format!("{mu} must be finite and >= 0")));
    }
    Ok(())
}

fn check_conversion(n: u64, d: u64, clip: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    if !(clip > 0.0 && clip.is_finite()) {
        return Err(Error::invalid("clip", format!("{clip} must be positive and finite")));
    }
    Ok(())
}
