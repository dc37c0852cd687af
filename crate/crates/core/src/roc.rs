//! Empirical ROC curves from attack scores, and binomial confidence checks
//! against analytical trade-off curves.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tradeoff::TradeoffCurve;

/// Empirical (FPR, FNR) points of a threshold test.
///
/// Points start at FPR 0 (FNR 1 unless some member scores below every
/// nonmember), have strictly increasing FPR and
/// non-increasing FNR, and end at `(1, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocEstimate {
    points: Vec<(f64, f64)>,
    members: usize,
    nonmembers: usize,
}

impl RocEstimate {
    /// Sweeps a threshold η over all observed scores, predicting "member"
    /// when `score ≤ η`. Equal scores form one threshold.
    pub fn from_scores(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<Self> {
        if member_scores.is_empty() || nonmember_scores.is_empty() {
            return Err(Error::invalid("scores", "both classes need at least one score"));
        }
        if member_scores.iter().chain(nonmember_scores).any(|s| s.is_nan()) {
            return Err(Error::invalid("scores", "NaN score"));
        }
        let mut all: Vec<(f64, bool)> = member_scores
            .iter()
            .map(|&s| (s, true))
            .chain(nonmember_scores.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));

        let (n1, n0) = (member_scores.len() as f64, nonmember_scores.len() as f64);
        let mut points: Vec<(f64, f64)> = vec![(0.0, 1.0)];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < all.len() {
            let s = all[i].0;
            while i < all.len() && all[i].0 == s {
                if all[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            let point = (fp as f64 / n0, 1.0 - tp as f64 / n1);
            let last = points.last_mut().expect("non-empty");
            if point.0 == last.0 {
                last.1 = last.1.min(point.1);
            } else {
                points.push(point);
            }
        }
        Ok(RocEstimate {
            points,
            members: member_scores.len(),
            nonmembers: nonmember_scores.len(),
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Number of member trials.
    pub fn members(&self) -> usize {
        self.members
    }

    /// Number of nonmember trials.
    pub fn nonmembers(&self) -> usize {
        self.nonmembers
    }

    /// Trials per class when both classes have the same size, otherwise
    /// the smaller one.
    pub fn trials_per_class(&self) -> usize {
        self.members.min(self.nonmembers)
    }

    /// Smallest FNR among thresholds whose FPR does not exceed `fpr`.
    pub fn fnr_at(&self, fpr: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 <= fpr + 1e-12);
        self.points[i.max(1) - 1].1
    }

    /// Area under the TPR-vs-FPR curve (step interpolation).
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (1.0 - w[1].1 + 1.0 - w[0].1) * 0.5)
            .sum()
    }

    /// CSV `fpr,fnr,tpr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "fpr,fnr,tpr")?;
        for &(a, b) in &self.points {
            writeln!(out, "{a:.16e},{b:.16e},{:.16e}", 1.0 - b)?;
        }
        Ok(())
    }
}

/// Binomial standard error of a proportion.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Whether the comparison is two-sided or only guards the bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMode {
    /// |empirical − analytical| ≤ k·SE.
    TwoSided,
    /// empirical ≥ analytical − k·SE: the attack does not beat the bound.
    Bound,
}

/// One audited FPR.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CiRow {
    pub fpr: f64,
    pub empirical_fnr: f64,
    pub analytical_fnr: f64,
    pub se: f64,
    pub pass: bool,
}

/// Compares an empirical ROC to `curve` at each FPR with slack `k·SE`.
///
/// The SE combines the binomial noise of the FNR estimate with the noise of
/// the empirical threshold's FPR, propagated through the curve's slope:
/// SE² = β(1−β)/n₁ + β′(α)²·α(1−α)/n₀.
pub fn ci_check(
    roc: &RocEstimate,
    curve: &TradeoffCurve,
    fprs: &[f64],
    k: f64,
    mode: CiMode,
) -> Vec<CiRow> {
    fprs.iter()
        .map(|&a| {
            let beta = curve.eval(a);
            let h = 1e-4 * a.min(1.0 - a).max(1e-9);
            let slope = (curve.eval(a + h) - curve.eval(a - h)) / (2.0 * h);
            let se = (beta * (1.0 - beta) / roc.members() as f64
                + slope * slope * a * (1.0 - a) / roc.nonmembers() as f64)
                .sqrt();
            let emp = roc.fnr_at(a);
            let pass = match mode {
                CiMode::TwoSided => (emp - beta).abs() <= k * se,
                CiMode::Bound => emp >= beta - k * se,
            };
            CiRow {
                fpr: a,
                empirical_fnr: emp,
                analytical_fnr: beta,
                se,
                pass,
            }
        })
        .collect()
}
