//! Noise calibration: the smallest τ meeting a target μ.
//!
//! Under GDP a step with noise τ is (2C/(nτ))-GDP. Under GMIP the per-step
//! level comes from the one-step trade-off with n_eff = n + τ²n²/C². Both are
//! lifted to the whole run with the subsampled composition bound and the
//! resulting map τ ↦ μ, which is strictly decreasing, is inverted by
//! bisection on log τ.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{self, Notion, SubsamplingPlan, MAX_SUBSAMPLED_MU_STEP};
use crate::error::{Error, Result};

/// Bisection bracket for τ.
pub const TAU_BRACKET: (f64, f64) = (1e-8, 1e6);
/// Relative width at which the bisection on log τ stops.
pub const TAU_RELATIVE_WIDTH: f64 = 1e-12;

/// What to calibrate for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub notion: Notion,
    pub target_mu: f64,
    pub plan: SubsamplingPlan,
    pub d: u32,
    pub clip: f64,
    /// Gradient susceptibility; the usual choice is K = d.
    pub k: f64,
}

impl CalibrationTarget {
    pub fn new(
        notion: Notion,
        target_mu: f64,
        plan: SubsamplingPlan,
        d: u32,
        clip: f64,
        k: Option<f64>,
    ) -> Result<Self> {
        if !(target_mu > 0.0 && target_mu.is_finite()) {
            return Err(Error::invalid("target_mu", format!("{target_mu} must be positive")));
        }
        if d == 0 {
            return Err(Error::invalid("d", "must be >= 1"));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::invalid("clip", format!("{clip} must be positive and finite")));
        }
        if plan.batch_size() < 2 {
            return Err(Error::invalid("batch_size", "must be >= 2"));
        }
        let k = k.unwrap_or(d as f64);
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("{k} must be finite and >= 0")));
        }
        Ok(CalibrationTarget {
            notion,
            target_mu,
            plan,
            d,
            clip,
            k,
        })
    }

    /// Same hyperparameters, different notion or μ.
    pub fn with(&self, notion: Notion, target_mu: f64) -> Result<Self> {
        CalibrationTarget::new(notion, target_mu, self.plan, self.d, self.clip, Some(self.k))
    }

    fn ratio(&self) -> f64 {
        accountant::subsampling_ratio(&self.plan)
    }

    /// Whole-run GDP level at noise τ (`+∞` as τ → 0).
    pub fn gdp_mu(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return f64::INFINITY;
        }
        let step = 2.0 * self.clip / (self.plan.batch_size() as f64 * tau);
        composed(step, self.ratio())
    }

    /// Whole-run GMIP level at noise τ.
    pub fn gmip_mu(&self, tau: f64) -> f64 {
        let n = self.plan.batch_size() as f64;
        let ne = n + tau * tau * n * n / (self.clip * self.clip);
        let step = accountant::mu_step_raw(ne, self.d as f64, self.k);
        composed(step, self.ratio())
    }

    /// Whole-run level at noise τ under this target's notion. A GDP
    /// guarantee also bounds GMIP, so the GMIP level is the smaller of both.
    pub fn achieved_mu(&self, tau: f64) -> f64 {
        match self.notion {
            Notion::Gdp => self.gdp_mu(tau),
            Notion::Gmip => self.gmip_mu(tau).min(self.gdp_mu(tau)),
        }
    }
}

fn composed(step: f64, c: f64) -> f64 {
    if !(step <= MAX_SUBSAMPLED_MU_STEP) {
        return f64::INFINITY;
    }
    accountant::compose_subsampled(step, c).unwrap_or(f64::INFINITY)
}

/// Bisection on log τ for a decreasing `mu_of`.
fn solve_decreasing(target: f64, mu_of: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (TAU_BRACKET.0.ln(), TAU_BRACKET.1.ln());
    let floor = mu_of(TAU_BRACKET.1);
    if floor > target {
        return Err(Error::Unreachable {
            target,
            infimum: floor,
        });
    }
    if mu_of(TAU_BRACKET.0) <= target {
        return Ok(TAU_BRACKET.0);
    }
    // relative width in τ is e^{hi − lo} − 1 ≈ hi − lo
    let mut iterations = 0;
    while hi - lo > TAU_RELATIVE_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mu_of(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NoConvergence {
                what: "noise calibration",
                iterations,
            });
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// τ so that the run is `target_mu`-GDP. Always positive.
pub fn tau_for_gdp(target: &CalibrationTarget) -> Result<f64> {
    solve_decreasing(target.target_mu, |t| target.gdp_mu(t))
}

/// τ so that the run is `target_mu`-GMIP, capped by the GDP answer
/// (GDP implies GMIP, so more noise is never needed).
///
/// Returns 0 when the noiseless run already meets the target.
pub fn tau_for_gmip(target: &CalibrationTarget) -> Result<f64> {
    if target.gmip_mu(0.0) <= target.target_mu {
        return Ok(0.0);
    }
    let mip = solve_decreasing(target.target_mu, |t| target.gmip_mu(t));
    let dp = tau_for_gdp(target);
    match (mip, dp) {
        (Ok(m), Ok(d)) => Ok(m.min(d)),
        (Ok(m), Err(_)) => Ok(m),
        (Err(_), Ok(d)) => Ok(d),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Dispatches on the target's notion.
pub fn calibrate(target: &CalibrationTarget) -> Result<f64> {
    match target.notion {
        Notion::Gdp => tau_for_gdp(target),
        Notion::Gmip => tau_for_gmip(target),
    }
}

/// Hyperparameters of a named utility-experiment configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub label: &'static str,
    pub dataset_size: u64,
    pub batch_size: u64,
    pub epochs: f64,
    pub clip: f64,
    pub d: u32,
}

pub const PRESETS: [DatasetPreset; 3] = [
    DatasetPreset {
        name: "cifar10",
        label: "CIFAR-10",
        dataset_size: 48000,
        batch_size: 400,
        epochs: 10.0,
        clip: 500.0,
        d: 650,
    },
    DatasetPreset {
        name: "purchase",
        label: "Purchase",
        dataset_size: 54855,
        batch_size: 795,
        epochs: 3.0,
        clip: 2000.0,
        d: 2580,
    },
    DatasetPreset {
        name: "adult",
        label: "Adult",
        dataset_size: 43000,
        batch_size: 1000,
        epochs: 20.0,
        clip: 800.0,
        d: 1026,
    },
];

/// Looks up a preset by name; a trailing `-preset` is accepted.
pub fn preset(name: &str) -> Option<DatasetPreset> {
    let key = name.trim().to_ascii_lowercase();
    let key = key.strip_suffix("-preset").unwrap_or(&key);
    let key = if key == "cifar-10" { "cifar10" } else { key };
    PRESETS.iter().copied().find(|p| p.name == key)
}

impl DatasetPreset {
    pub fn plan(&self) -> SubsamplingPlan {
        SubsamplingPlan::new(self.dataset_size, self.batch_size, self.epochs)
            .expect("preset plans are valid")
    }

    /// Target with K = d.
    pub fn target(&self, notion: Notion, mu: f64) -> Result<CalibrationTarget> {
        CalibrationTarget::new(notion, mu, self.plan(), self.d, self.clip, None)
    }
}

/// The 20 table levels μ_k = 0.4·(50/0.4)^{k/19}.
pub fn table_mus() -> Vec<f64> {
    (0..20)
        .map(|k| 0.4 * (50.0f64 / 0.4).powf(k as f64 / 19.0))
        .collect()
}

/// Printed reference values, rows in [`TAU_TABLE_ROWS`] order.
pub const REFERENCE_TAU_TABLE: [[f64; 20]; 6] = [
    [2.84, 2.44, 2.13, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],
    [2.84, 2.44, 2.13, 1.89, 1.70, 1.55, 1.42, 1.32, 1.24, 1.17, 1.11, 1.06, 1.02, 0.98, 0.94, 0.91, 0.88, 0.85, 0.83, 0.81],
    [4.72, 4.14, 3.68, 3.32, 3.04, 2.81, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],
    [4.72, 4.14, 3.68, 3.32, 3.04, 2.81, 2.62, 2.46, 2.32, 2.21, 2.11, 2.02, 1.94, 1.87, 1.81, 1.75, 1.70, 1.65, 1.61, 1.57],
    [3.38, 2.77, 2.30, 1.93, 1.65, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00],
    [3.38, 2.77, 2.30, 1.93, 1.65, 1.43, 1.26, 1.13, 1.02, 0.94, 0.87, 0.81, 0.77, 0.73, 0.69, 0.66, 0.63, 0.61, 0.59, 0.57],
];

/// Row order of the τ table: each preset under MIP, then DP.
pub const TAU_TABLE_ROWS: [(usize, Notion); 6] = [
    (0, Notion::Gmip),
    (0, Notion::Gdp),
    (1, Notion::Gmip),
    (1, Notion::Gdp),
    (2, Notion::Gmip),
    (2, Notion::Gdp),
];

/// One cell of the reproduced τ table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauCell {
    pub dataset: &'static str,
    pub notion: Notion,
    pub mu: f64,
    pub tau: f64,
    /// Printed reference value.
    pub reference: f64,
}

impl TauCell {
    /// Whether `tau` is within ±0.01 of the reference.
    pub fn matches(&self) -> bool {
        (self.tau - self.reference).abs() <= 0.01 + 1e-12
    }
}

/// Rounds half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// The 6 × 20 table, row-major in [`TAU_TABLE_ROWS`] order.
pub fn reproduce_tau_table() -> Result<Vec<TauCell>> {
    let mus = table_mus();
    let cells: Vec<(usize, usize)> = (0..6).flat_map(|r| (0..20).map(move |c| (r, c))).collect();
    cells
        .par_iter()
        .map(|&(r, c)| {
            let (p, notion) = TAU_TABLE_ROWS[r];
            let preset = PRESETS[p];
            let tau = calibrate(&preset.target(notion, mus[c])?)?;
            Ok(TauCell {
                dataset: preset.name,
                notion,
                mu: mus[c],
                tau,
                reference: REFERENCE_TAU_TABLE[r][c],
            })
        })
        .collect()
}

/// CSV `dataset,notion,mu,tau` at full precision.
pub fn write_tau_csv<W: Write>(cells: &[TauCell], mut out: W) -> Result<()> {
    writeln!(out, "dataset,notion,mu,tau")?;
    for c in cells {
        writeln!(out, "{},{},{:.16e},{:.16e}", c.dataset, c.notion, c.mu, c.tau)?;
    }
    Ok(())
}

/// Aligned text with two-decimal entries, one row per dataset and notion.
pub fn format_tau_table(cells: &[TauCell]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<16}", "mu =");
    for m in table_mus() {
        let _ = write!(s, "{:>7.2}", round2(m));
    }
    s.push('\n');
    for row in cells.chunks(20) {
        let label = PRESETS
            .iter()
            .find(|p| p.name == row[0].dataset)
            .map_or(row[0].dataset, |p| p.label);
        let _ = write!(s, "{:<16}", format!("{label} ({})", row[0].notion));
        for c in row {
            let _ = write!(s, "{:>7.2}", round2(c.tau));
        }
        s.push('\n');
    }
    s
}
