//! Loss-based likelihood-ratio membership test for ordinary least squares.
//!
//! With Gaussian label noise of variance σ² and a fitted OLS model, the
//! residual of a query x′ with leverage h = x′ᵀ(XᵀX)⁻¹x′ is
//!
//! * N(0, v0) with v0 = σ²(1 − h) when x′ was in the training set,
//! * N(0, v1) with v1 = σ²(1 + h) when it was not.
//!
//! The squared loss ℓ therefore satisfies ℓ/v0 ~ χ²₁ for members and
//! ℓ/v1 ~ χ²₁ for nonmembers, and thresholding ℓ is the most powerful test.
//!
//! Two hypothesis conventions coexist. [`loss_lrt_power`] takes "x′ is a
//! member" as the null and rejects it when ℓ ≥ γ; its power is the rate of
//! correctly flagged nonmembers. [`member_tpr`] and the experiment harness
//! take "x′ is a nonmember" as the null, predict membership when ℓ ≤ γ, and
//! report the usual member TPR at a given nonmember FPR. The two curves
//! describe the same test with the roles of the classes exchanged.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::roc::{CiMode, RocEstimate};
use crate::specfun::{std_normal_quantile_upper, Probability};

/// FPRs at which the experiment checks the closed form.
pub const AUDIT_FPRS: [f64; 3] = [0.05, 0.1, 0.25];

/// Designs whose Gram matrix has a larger condition number are redrawn.
pub const MAX_CONDITION: f64 = 1e12;

/// Describes which hypothesis is the null in reported curves.
pub const REPORTED_CONVENTION: &str =
    "null = nonmember; member predicted when loss <= threshold; tpr = member detection rate";

/// An ordinary least-squares fit with known noise variance.
#[derive(Clone, Debug)]
pub struct OlsFit {
    design: DMatrix<f64>,
    targets: DVector<f64>,
    params: DVector<f64>,
    gram_inverse: DMatrix<f64>,
    noise_var: f64,
    condition_number: f64,
}

impl OlsFit {
    /// Solves the normal equations. Fails with [`Error::SingularDesign`]
    /// when XᵀX is not positive definite or its condition number exceeds
    /// [`MAX_CONDITION`].
    pub fn fit(design: DMatrix<f64>, targets: DVector<f64>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid("noise_var", "must be positive and finite"));
        }
        if design.nrows() != targets.len() || design.ncols() == 0 {
            return Err(Error::invalid("design", "needs p >= 1 columns and one row per target"));
        }
        let gram = design.tr_mul(&design);
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::SingularDesign);
        }
        let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
        let params = chol.solve(&design.tr_mul(&targets));
        let gram_inverse = chol.inverse();
        Ok(OlsFit {
            design,
            targets,
            params,
            gram_inverse,
            noise_var,
            condition_number: hi / lo,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Condition number of XᵀX.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Relative residual ‖Xᵀ(y − Xθ)‖ / ‖Xᵀy‖ of the normal equations.
    pub fn normal_equation_residual(&self) -> f64 {
        let r = &self.targets - &self.design * &self.params;
        let num = self.design.tr_mul(&r).norm();
        let den = self.design.tr_mul(&self.targets).norm();
        if den == 0.0 { num } else { num / den }
    }

    /// h = x′ᵀ(XᵀX)⁻¹x′.
    pub fn leverage(&self, query: &DVector<f64>) -> Result<f64> {
        if query.len() != self.params.len() {
            return Err(Error::invalid("query", "dimension differs from the design"));
        }
        Ok(query.dot(&(&self.gram_inverse * query)))
    }

    /// Squared residual (y − θᵀx)².
    pub fn loss(&self, query: &DVector<f64>, target: f64) -> f64 {
        let r = target - self.params.dot(query);
        r * r
    }
}

/// Residual variances of a query under the member and nonmember hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossTestSpec {
    v0: f64,
    v1: f64,
}

impl LossTestSpec {
    /// Requires `0 < v0 <= v1`.
    pub fn new(v0: f64, v1: f64) -> Result<Self> {
        if !(v0 > 0.0 && v0 <= v1 && v1.is_finite()) {
            return Err(Error::invalid("v0, v1", format!("need 0 < v0 <= v1 < inf, got ({v0}, {v1})")));
        }
        Ok(LossTestSpec { v0, v1 })
    }

    /// The pair σ²(1 − h), σ²(1 + h).
    pub fn from_leverage(noise_var: f64, h: f64) -> Result<Self> {
        if h >= 1.0 {
            return Err(Error::LeverageOverflow(h));
        }
        if !(h >= 0.0) {
            return Err(Error::invalid("h", "leverage must be non-negative"));
        }
        LossTestSpec::new(noise_var * (1.0 - h), noise_var * (1.0 + h))
    }

    /// Member residual variance.
    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Nonmember residual variance.
    pub fn v1(&self) -> f64 {
        self.v1
    }

    pub fn ratio(&self) -> f64 {
        self.v0 / self.v1
    }
}

/// Variance pair for `query` under `fit`.
pub fn loss_variances(query: &DVector<f64>, fit: &OlsFit) -> Result<LossTestSpec> {
    LossTestSpec::from_leverage(fit.noise_var(), fit.leverage(query)?)
}

/// CDF of χ²₁.
pub fn chi2_1_cdf(x: f64) -> f64 {
    if x <= 0.0 { 0.0 } else { libm::erf((0.5 * x).sqrt()) }
}

/// Survival function of χ²₁.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 { 1.0 } else { libm::erfc((0.5 * x).sqrt()) }
}

/// χ²₁ quantile at upper-tail mass `q`: the x with P(χ²₁ > x) = q.
fn chi2_1_quantile_upper(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return 0.0;
    }
    let z = std_normal_quantile_upper(Probability::clamped(0.5 * q)).expect("0 < q/2 < 1/2");
    z * z
}

/// Power of the loss test with null "member": the probability of rejecting
/// membership for a nonmember when members are rejected at rate `alpha`,
/// i.e. 1 − CDF_{χ²₁}((v0/v1)·CDF⁻¹_{χ²₁}(1 − α)).
pub fn loss_lrt_power(spec: &LossTestSpec, alpha: Probability) -> Probability {
    let q = chi2_1_quantile_upper(alpha.get());
    if q.is_infinite() {
        return Probability::ZERO;
    }
    Probability::clamped(chi2_1_sf(spec.ratio() * q))
}

/// Companion miss rate CDF_{χ²₁}((v0/v1)·CDF⁻¹_{χ²₁}(1 − α)) = 1 − power.
pub fn loss_lrt_fnr(spec: &LossTestSpec, alpha: Probability) -> Probability {
    loss_lrt_power(spec, alpha).complement()
}

/// Member detection rate at nonmember false-positive rate `fpr` when
/// membership is predicted for ℓ ≤ γ: CDF_{χ²₁}((v1/v0)·CDF⁻¹_{χ²₁}(fpr)).
pub fn member_tpr(spec: &LossTestSpec, fpr: Probability) -> Probability {
    let q = chi2_1_quantile_upper(1.0 - fpr.get());
    if q.is_infinite() {
        return Probability::ONE;
    }
    Probability::clamped(chi2_1_cdf(q / spec.ratio()))
}

/// Member TPR at `fpr` for a threshold shared across queries with varying
/// variances: γ solves mean_j CDF(γ/v1_j) = fpr and the TPR is
/// mean_i CDF(γ/v0_i).
pub fn pooled_member_tpr(member_v0: &[f64], nonmember_v1: &[f64], fpr: f64) -> f64 {
    if fpr <= 0.0 {
        return 0.0;
    }
    if fpr >= 1.0 {
        return 1.0;
    }
    let q = chi2_1_quantile_upper(1.0 - fpr);
    let (mut lo, mut hi) = nonmember_v1
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v * q), b.max(v * q)));
    let pooled_fpr = |g: f64| nonmember_v1.iter().map(|&v| chi2_1_cdf(g / v)).sum::<f64>() / nonmember_v1.len() as f64;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if pooled_fpr(mid) < fpr {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let gamma = 0.5 * (lo + hi);
    member_v0.iter().map(|&v| chi2_1_cdf(gamma / v)).sum::<f64>() / member_v0.len() as f64
}

/// Experiment settings. Design entries and true coefficients are drawn
/// i.i.d. standard normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinregConfig {
    pub n: usize,
    pub p: usize,
    pub sigma2: f64,
    pub trials: usize,
    pub seed: u64,
}

impl LinregConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("p", "must be >= 1"));
        }
        if self.n <= self.p + 1 {
            return Err(Error::invalid("n", "must exceed p + 1"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid("sigma2", "must be positive and finite"));
        }
        if self.trials < 1000 {
            return Err(Error::invalid("trials", "must be >= 1000"));
        }
        Ok(())
    }
}

/// Closed form vs empirical TPR at one FPR.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinregRow {
    pub fpr: f64,
    pub tpr_empirical: f64,
    /// Pooled over the per-query variances actually drawn.
    pub tpr_analytical: f64,
    /// Single-query formula at the mean member and nonmember leverages.
    pub tpr_mean_leverage: f64,
    pub se: f64,
    pub pass: bool,
}

/// Everything one run of the experiment produces.
#[derive(Clone, Debug, Serialize)]
pub struct LinregExperiment {
    pub config: LinregConfig,
    pub convention: &'static str,
    /// ROC over squared losses, lower loss predicting membership.
    pub roc: RocEstimate,
    pub member_losses: Vec<f64>,
    pub nonmember_losses: Vec<f64>,
    pub member_leverages: Vec<f64>,
    pub nonmember_leverages: Vec<f64>,
    pub singular_redraws: usize,
    pub mean_leverage_spec: LossTestSpec,
    pub rows: Vec<LinregRow>,
    /// Kolmogorov–Smirnov distance of member ℓ/v0 from χ²₁.
    pub ks_statistic: f64,
    /// 1% critical value 1.628/√N.
    pub ks_critical: f64,
}

impl LinregExperiment {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.ks_statistic < self.ks_critical
    }

    pub fn member_v0(&self) -> Vec<f64> {
        self.member_leverages.iter().map(|h| self.config.sigma2 * (1.0 - h)).collect()
    }

    pub fn nonmember_v1(&self) -> Vec<f64> {
        self.nonmember_leverages.iter().map(|h| self.config.sigma2 * (1.0 + h)).collect()
    }

    /// Rows at arbitrary FPRs with slack `k` standard errors.
    pub fn rows_at(&self, fprs: &[f64], k: f64, mode: CiMode) -> Vec<LinregRow> {
        let (v0, v1) = (self.member_v0(), self.nonmember_v1());
        let m = self.roc.members() as f64;
        let nm = self.roc.nonmembers() as f64;
        fprs.iter()
            .map(|&a| {
                let tpr = pooled_member_tpr(&v0, &v1, a);
                let h = 1e-4 * a.min(1.0 - a).max(1e-9);
                let slope = (pooled_member_tpr(&v0, &v1, a + h) - pooled_member_tpr(&v0, &v1, a - h)) / (2.0 * h);
                let se = (tpr * (1.0 - tpr) / m + slope * slope * a * (1.0 - a) / nm).sqrt();
                let emp = 1.0 - self.roc.fnr_at(a);
                let pass = match mode {
                    CiMode::TwoSided => (emp - tpr).abs() <= k * se,
                    CiMode::Bound => emp <= tpr + k * se,
                };
                LinregRow {
                    fpr: a,
                    tpr_empirical: emp,
                    tpr_analytical: tpr,
                    tpr_mean_leverage: member_tpr(&self.mean_leverage_spec, Probability::clamped(a)).get(),
                    se,
                    pass,
                }
            })
            .collect()
    }

    /// CSV `fpr,tpr_empirical,tpr_analytical` on `fprs`.
    pub fn write_csv<W: Write>(&self, mut out: W, fprs: &[f64]) -> Result<()> {
        writeln!(out, "fpr,tpr_empirical,tpr_analytical")?;
        for r in self.rows_at(fprs, 3.0, CiMode::TwoSided) {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", r.fpr, r.tpr_empirical, r.tpr_analytical)?;
        }
        Ok(())
    }
}

struct TrialResult {
    member_loss: f64,
    nonmember_loss: f64,
    member_h: f64,
    nonmember_h: f64,
    redraws: usize,
}

fn run_trial(cfg: &LinregConfig, index: u64) -> Result<TrialResult> {
    let mut rng = stream(cfg.seed, Domain::Linreg, index);
    let sigma = cfg.sigma2.sqrt();
    let normal = |rng: &mut crate::rng::StreamRng| rng.sample::<f64, _>(StandardNormal);
    let mut redraws = 0;
    loop {
        let beta = DVector::from_fn(cfg.p, |_, _| normal(&mut rng));
        let x = DMatrix::from_fn(cfg.n, cfg.p, |_, _| normal(&mut rng));
        let y = DVector::from_fn(cfg.n, |i, _| x.row(i).transpose().dot(&beta) + sigma * normal(&mut rng));
        let out_x = DVector::from_fn(cfg.p, |_, _| normal(&mut rng));
        let out_y = out_x.dot(&beta) + sigma * normal(&mut rng);
        let fit = match OlsFit::fit(x, y, cfg.sigma2) {
            Ok(fit) => fit,
            Err(Error::SingularDesign) => {
                redraws += 1;
                if redraws > 1000 {
                    return Err(Error::NoConvergence { what: "non-singular design draw", iterations: redraws });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let in_x: DVector<f64> = fit.design().row(0).transpose();
        let in_y = fit.targets()[0];
        return Ok(TrialResult {
            member_loss: fit.loss(&in_x, in_y),
            nonmember_loss: fit.loss(&out_x, out_y),
            member_h: fit.leverage(&in_x)?,
            nonmember_h: fit.leverage(&out_x)?,
            redraws,
        });
    }
}

/// Kolmogorov–Smirnov distance between the sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut u: Vec<f64> = sample.iter().map(|&x| cdf(x)).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Runs `trials` independent fits, each scoring one training point and one
/// fresh point by squared loss, and compares against the closed form at
/// [`AUDIT_FPRS`] with 3 standard errors of slack.
pub fn run_linreg_experiment(n: usize, p: usize, sigma2: f64, trials: usize, seed: u64) -> Result<LinregExperiment> {
    let config = LinregConfig { n, p, sigma2, trials, seed };
    config.validate()?;
    let results: Vec<TrialResult> = (0..trials as u64)
        .into_par_iter()
        .map(|i| run_trial(&config, i))
        .collect::<Result<_>>()?;

    let member_losses: Vec<f64> = results.iter().map(|r| r.member_loss).collect();
    let nonmember_losses: Vec<f64> = results.iter().map(|r| r.nonmember_loss).collect();
    let member_leverages: Vec<f64> = results.iter().map(|r| r.member_h).collect();
    let nonmember_leverages: Vec<f64> = results.iter().map(|r| r.nonmember_h).collect();
    if let Some(&h) = member_leverages.iter().find(|&&h| h >= 1.0) {
        return Err(Error::LeverageOverflow(h));
    }
    let singular_redraws = results.iter().map(|r| r.redraws).sum();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_leverage_spec =
        LossTestSpec::new(sigma2 * (1.0 - mean(&member_leverages)), sigma2 * (1.0 + mean(&nonmember_leverages)))?;

    let standardized: Vec<f64> = member_losses
        .iter()
        .zip(&member_leverages)
        .map(|(l, h)| l / (sigma2 * (1.0 - h)))
        .collect();
    let ks = ks_statistic(&standardized, chi2_1_cdf);

    let roc = RocEstimate::from_scores(&member_losses, &nonmember_losses)?;
    let mut exp = LinregExperiment {
        config,
        convention: REPORTED_CONVENTION,
        roc,
        member_losses,
        nonmember_losses,
        member_leverages,
        nonmember_leverages,
        singular_redraws,
        mean_leverage_spec,
        rows: Vec::new(),
        ks_statistic: ks,
        ks_critical: 1.628 / (trials as f64).sqrt(),
    };
    exp.rows = exp.rows_at(&AUDIT_FPRS, 3.0, CiMode::TwoSided);
    Ok(exp)
}
