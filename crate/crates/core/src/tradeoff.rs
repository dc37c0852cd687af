//! Trade-off curves α ↦ β and the operators that combine them.
//!
//! A trade-off curve maps an attacker's false positive rate α to the
//! smallest false negative rate β any test can reach at that α. Three
//! closed forms are supported (Gaussian, the exact one-step curve of noisy
//! SGD, and stochastic compositions of weighted families) plus tabulated
//! piecewise-linear curves.

use std::io::Write;

use crate::accountant;
use crate::error::{Error, Result};
use crate::specfun::{
    std_normal_cdf, std_normal_quantile_upper, std_normal_sf, NoncentralChiSq, Probability,
};

/// Number of log-spaced points of the evaluation grid, in `[1e-6, 0.1)`.
pub const GRID_LOG_POINTS: usize = 500;
/// Number of linearly spaced points of the evaluation grid, in `[0.1, 1]`.
pub const GRID_LINEAR_POINTS: usize = 501;
/// Absolute slack used by [`compare`] and [`check_axioms`].
pub const COMPARE_TOLERANCE: f64 = 1e-9;
/// Default atom count when discretizing a continuous susceptibility law.
pub const DEFAULT_ATOMS: usize = 64;

/// Relative step of the numerical derivative used by the water-filling solver.
const DERIVATIVE_STEP: f64 = 1e-5;

/// The 1001-point α grid: dense log spacing below 0.1, linear above.
pub fn evaluation_grid() -> Vec<f64> {
    mixed_grid(GRID_LOG_POINTS, GRID_LINEAR_POINTS)
}

fn mixed_grid(n_log: usize, n_lin: usize) -> Vec<f64> {
    let mut grid = Vec::with_capacity(n_log + n_lin);
    let (lo, hi) = (1e-6f64.ln(), 0.1f64.ln());
    for i in 0..n_log {
        grid.push((lo + (hi - lo) * i as f64 / n_log as f64).exp());
    }
    for i in 0..n_lin {
        let t = if n_lin == 1 { 1.0 } else { i as f64 / (n_lin - 1) as f64 };
        grid.push(0.1 + 0.9 * t);
    }
    if let Some(last) = grid.last_mut() {
        *last = 1.0;
    }
    grid
}

/// Parameters of one noisy SGD step as seen by a membership attacker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneStepParams {
    n: u64,
    d: u32,
    tau2: f64,
    clip: f64,
    k: f64,
    n_effective: f64,
}

impl OneStepParams {
    /// `clip` may be `+∞` only when `tau2 == 0`.
    pub fn new(n: u64, d: u32, tau2: f64, clip: f64, k: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "must be >= 1"));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("{k} must be finite and >= 0")));
        }
        let n_effective = accountant::n_effective(n, tau2, clip)?;
        Ok(OneStepParams {
            n,
            d,
            tau2,
            clip,
            k,
            n_effective,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn susceptibility(&self) -> f64 {
        self.k
    }

    pub fn n_effective(&self) -> f64 {
        self.n_effective
    }

    /// Same step with a different susceptibility.
    pub fn with_susceptibility(&self, k: f64) -> Result<Self> {
        OneStepParams::new(self.n, self.d, self.tau2, self.clip, k)
    }

    /// Statistic law when the query is not in the batch, scaled by n_eff − 1.
    pub fn nonmember_law(&self) -> NoncentralChiSq {
        NoncentralChiSq::new(self.d, self.n_effective * self.k)
            .expect("validated parameters give a valid law")
    }

    /// Statistic law when the query is in the batch, scaled by n_eff.
    pub fn member_law(&self) -> NoncentralChiSq {
        NoncentralChiSq::new(self.d, (self.n_effective - 1.0) * self.k)
            .expect("validated parameters give a valid law")
    }
}

/// One entry of a [`WeightedTestFamily`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCurve {
    pub weight: f64,
    pub curve: TradeoffCurve,
}

/// A finite distribution over instance-specific trade-off curves.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTestFamily {
    entries: Vec<WeightedCurve>,
}

impl WeightedTestFamily {
    /// Weights must be positive and sum to one within 1e-9.
    pub fn new(entries: Vec<(f64, TradeoffCurve)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("family", "needs at least one entry"));
        }
        let mut total = 0.0;
        for (w, _) in &entries {
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(Error::invalid("weight", format!("{w} must lie in (0, 1]")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weight", format!("weights sum to {total}, not 1")));
        }
        Ok(WeightedTestFamily {
            entries: entries
                .into_iter()
                .map(|(weight, curve)| WeightedCurve { weight, curve })
                .collect(),
        })
    }

    /// Equal-weight family of one-step curves whose susceptibilities are the
    /// mid-point quantiles `(i + ½)/atoms` of a continuous law.
    pub fn from_susceptibility_quantiles(
        base: &OneStepParams,
        atoms: usize,
        quantile: impl Fn(f64) -> Result<f64>,
    ) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::invalid("atoms", "must be >= 1"));
        }
        let w = 1.0 / atoms as f64;
        let entries = (0..atoms)
            .map(|i| {
                let k = quantile((i as f64 + 0.5) * w)?;
                Ok((w, TradeoffCurve::OneStep(base.with_susceptibility(k)?)))
            })
            .collect::<Result<Vec<_>>>()?;
        WeightedTestFamily::new(entries)
    }

    /// Susceptibility K ~ χ²_d, the law expected when query gradients come
    /// from the same distribution as the batch.
    pub fn chi2_susceptibility(base: &OneStepParams, atoms: usize) -> Result<Self> {
        let law = NoncentralChiSq::central(base.d())?;
        Self::from_susceptibility_quantiles(base, atoms, |p| {
            law.quantile(Probability::clamped(p))
        })
    }

    pub fn entries(&self) -> &[WeightedCurve] {
        &self.entries
    }

    /// Replaces every member by its tabulation, which makes repeated
    /// composition much cheaper for one-step curves.
    pub fn tabulated(&self, grid_size: usize) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| Ok((e.weight, tabulate(&e.curve, grid_size)?)))
            .collect::<Result<Vec<_>>>()?;
        WeightedTestFamily::new(entries)
    }
}

/// A piecewise-linear convex trade-off curve through sorted points.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedCurve {
    points: Vec<(f64, f64)>,
}

impl TabulatedCurve {
    /// Builds a curve from `(fpr, fnr)` points with strictly increasing fpr.
    ///
    /// Missing endpoints `(0, 1)` and `(1, 0)` are added, values are capped
    /// at `1 − fpr`, and the values are projected onto the lower convex hull.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("points", "empty"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(
                    "points",
                    format!("fpr must be strictly increasing ({} then {})", w[0].0, w[1].0),
                ));
            }
        }
        for &(a, b) in &points {
            Probability::new(a)?;
            Probability::new(b)?;
        }
        let mut pts = points;
        if pts[0].0 > 0.0 {
            pts.insert(0, (0.0, 1.0));
        }
        if pts[pts.len() - 1].0 < 1.0 {
            pts.push((1.0, 0.0));
        }
        let mut running = f64::INFINITY;
        for p in pts.iter_mut() {
            running = running.min(p.1).min(1.0 - p.0);
            p.1 = running;
        }
        project_lower_hull(&mut pts);
        Ok(TabulatedCurve { points: pts })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Linear interpolation between the stored points.
    pub fn eval(&self, alpha: f64) -> f64 {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.0 <= alpha);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        y0 + (y1 - y0) * (alpha - x0) / (x1 - x0)
    }

    /// Slope of the segment starting at or before `alpha` (the last
    /// segment at `alpha = 1`).
    pub fn slope(&self, alpha: f64) -> f64 {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.0 <= alpha).clamp(1, pts.len() - 1);
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        (y1 - y0) / (x1 - x0)
    }
}

/// Replaces each value by the lower convex hull evaluated at its abscissa.
fn project_lower_hull(pts: &mut [(f64, f64)]) {
    let mut hull: Vec<usize> = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        while hull.len() >= 2 {
            let (a, b) = (pts[hull[hull.len() - 2]], pts[hull[hull.len() - 1]]);
            let c = pts[i];
            // drop b when it lies on or above the chord a–c
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    for seg in hull.windows(2) {
        let (x0, y0) = pts[seg[0]];
        let (x1, y1) = pts[seg[1]];
        for p in &mut pts[seg[0] + 1..seg[1]] {
            p.1 = y0 + (y1 - y0) * (p.0 - x0) / (x1 - x0);
        }
    }
}

/// A trade-off function.
#[derive(Clone, Debug, PartialEq)]
pub enum TradeoffCurve {
    /// g_μ(α) = Φ(Φ⁻¹(1 − α) − μ).
    Gaussian { mu: f64 },
    /// Exact one-step curve of noisy SGD.
    OneStep(OneStepParams),
    /// Piecewise-linear curve.
    Tabulated(TabulatedCurve),
    /// Optimal FPR allocation over a weighted family.
    Stochastic(WeightedTestFamily),
}

impl TradeoffCurve {
    pub fn gaussian(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu", format!("{mu} must be finite and >= 0")));
        }
        Ok(TradeoffCurve::Gaussian { mu })
    }

    /// β at `alpha`.
    pub fn beta(&self, alpha: Probability) -> Probability {
        match self {
            TradeoffCurve::Gaussian { mu } => gaussian_beta(*mu, alpha),
            TradeoffCurve::OneStep(p) => onestep_beta(p, alpha),
            TradeoffCurve::Tabulated(t) => Probability::clamped(t.eval(alpha.get())),
            TradeoffCurve::Stochastic(f) => stochastic_compose(f, alpha),
        }
    }

    /// β at a raw α, clamped into `[0, 1]`.
    pub fn eval(&self, alpha: f64) -> f64 {
        self.beta(Probability::clamped(alpha)).get()
    }

    /// 1 − β at a raw α, accurate where β is close to one.
    pub fn eval_complement(&self, alpha: f64) -> f64 {
        let a = alpha.clamp(0.0, 1.0);
        if a <= 0.0 {
            return 0.0;
        }
        if a >= 1.0 {
            return 1.0;
        }
        match self {
            TradeoffCurve::Gaussian { mu } if *mu == 0.0 => a,
            TradeoffCurve::Gaussian { mu } => {
                let z = std_normal_quantile_upper(Probability::clamped(a)).expect("0 < alpha < 1");
                std_normal_sf(z - mu)
            }
            TradeoffCurve::OneStep(p) => {
                let threshold = p.nonmember_law().quantile(Probability::clamped(a)).unwrap_or(f64::INFINITY);
                let ne = p.n_effective();
                p.member_law().cdf_raw(ne / (ne - 1.0) * threshold)
            }
            TradeoffCurve::Tabulated(_) | TradeoffCurve::Stochastic(_) => 1.0 - self.eval(a),
        }
    }

    /// Writes `alpha,beta` rows at the given α values; tabulated curves
    /// ignore `alphas` and write their own points.
    pub fn write_csv<W: Write>(&self, mut out: W, alphas: &[f64]) -> Result<()> {
        writeln!(out, "alpha,beta")?;
        match self {
            TradeoffCurve::Tabulated(t) => {
                for &(a, b) in t.points() {
                    writeln!(out, "{a:.16e},{b:.16e}")?;
                }
            }
            _ => {
                for &a in alphas {
                    writeln!(out, "{a:.16e},{:.16e}", self.eval(a))?;
                }
            }
        }
        Ok(())
    }
}

/// Gaussian trade-off g_μ(α). `g_0` is the diagonal `1 − α`.
pub fn gaussian_beta(mu: f64, alpha: Probability) -> Probability {
    let a = alpha.get();
    if a <= 0.0 {
        return Probability::ONE;
    }
    if a >= 1.0 {
        return Probability::ZERO;
    }
    if mu == 0.0 {
        return alpha.complement();
    }
    let z = std_normal_quantile_upper(alpha).expect("0 < alpha < 1");
    std_normal_cdf(z - mu)
}

/// Exact one-step trade-off:
/// β(α) = 1 − F_{χ²_d((n_eff−1)K)}( n_eff/(n_eff−1) · F⁻¹_{χ²_d(n_eff K)}(α) ).
pub fn onestep_beta(params: &OneStepParams, alpha: Probability) -> Probability {
    let a = alpha.get();
    if a <= 0.0 {
        return Probability::ONE;
    }
    if a >= 1.0 {
        return Probability::ZERO;
    }
    let ne = params.n_effective();
    let threshold = params
        .nonmember_law()
        .quantile(alpha)
        .unwrap_or(f64::INFINITY);
    let scaled = ne / (ne - 1.0) * threshold;
    Probability::clamped(params.member_law().sf_raw(scaled))
}

/// sup over the evaluation grid of |f(α) − g(α)|.
pub fn sup_distance(f: &TradeoffCurve, g: &TradeoffCurve) -> f64 {
    evaluation_grid()
        .into_iter()
        .map(|a| (f.eval(a) - g.eval(a)).abs())
        .fold(0.0, f64::max)
}

/// Distance between the exact one-step curve and its Gaussian
/// approximation g_{μ_step}.
pub fn gaussian_limit_gap(params: &OneStepParams) -> f64 {
    let g = TradeoffCurve::Gaussian {
        mu: accountant::mu_step(params),
    };
    sup_distance(&TradeoffCurve::OneStep(*params), &g)
}

/// Outcome of [`compare`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveOrdering {
    /// The first curve is pointwise at least as high: it is the harder test.
    FDominates,
    GDominates,
    Incomparable,
    Equal,
}

/// Compares two curves on the evaluation grid with slack 1e-9.
pub fn compare(f: &TradeoffCurve, g: &TradeoffCurve) -> CurveOrdering {
    compare_with_tolerance(f, g, COMPARE_TOLERANCE)
}

pub fn compare_with_tolerance(f: &TradeoffCurve, g: &TradeoffCurve, tol: f64) -> CurveOrdering {
    let (mut f_above, mut g_above) = (false, false);
    for a in evaluation_grid() {
        let diff = f.eval(a) - g.eval(a);
        if diff > tol {
            f_above = true;
        } else if diff < -tol {
            g_above = true;
        }
    }
    match (f_above, g_above) {
        (false, false) => CurveOrdering::Equal,
        (true, false) => CurveOrdering::FDominates,
        (false, true) => CurveOrdering::GDominates,
        (true, true) => CurveOrdering::Incomparable,
    }
}

/// μ of the tensor product of Gaussian trade-offs: √(Σ μᵢ²).
pub fn tensor_compose_gaussian(mus: &[f64]) -> Result<f64> {
    if mus.is_empty() {
        return Err(Error::invalid("mus", "needs at least one level"));
    }
    let mut acc = 0.0f64;
    for &m in mus {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::invalid("mu", format!("{m} must be finite and >= 0")));
        }
        acc = acc.hypot(m);
    }
    Ok(acc)
}

/// Stochastic composition: min of Σ wᵢ fᵢ(ᾱᵢ) over ᾱ ∈ [0,1]^k with
/// Σ wᵢ ᾱᵢ = α.
///
/// Each fᵢ is convex, so the optimum equalizes slopes. The common slope λ is
/// found by bisection; for each λ, ᾱᵢ(λ) is the largest α whose secant slope
/// does not exceed λ. The final allocation interpolates the two bracketing
/// allocations so that the budget is met exactly.
pub fn stochastic_compose(family: &WeightedTestFamily, alpha: Probability) -> Probability {
    let entries = family.entries();
    if entries.len() == 1 {
        return entries[0].curve.beta(alpha);
    }
    let a = alpha.get();
    if a <= 0.0 {
        let v: f64 = entries.iter().map(|e| e.weight * e.curve.eval(0.0)).sum();
        return Probability::clamped(v);
    }
    if a >= 1.0 {
        let v: f64 = entries.iter().map(|e| e.weight * e.curve.eval(1.0)).sum();
        return Probability::clamped(v);
    }

    let allocate = |lambda: f64| -> (Vec<f64>, f64) {
        let alloc: Vec<f64> = entries
            .iter()
            .map(|e| allocation_at_slope(&e.curve, lambda))
            .collect();
        let spent = entries.iter().zip(&alloc).map(|(e, x)| e.weight * x).sum();
        (alloc, spent)
    };

    // λ = −exp(s); larger s means a steeper slope and a smaller allocation
    let (mut s_lo, mut s_hi) = (-60.0f64, 60.0f64);
    let (mut small, mut small_spent) = allocate(-s_hi.exp());
    let (mut large, mut large_spent) = allocate(-s_lo.exp());
    if small_spent >= a {
        large = small.clone();
        large_spent = small_spent;
    } else if large_spent <= a {
        small = large.clone();
        small_spent = large_spent;
    } else {
        for _ in 0..90 {
            let mid = 0.5 * (s_lo + s_hi);
            let (alloc, spent) = allocate(-mid.exp());
            if spent <= a {
                small = alloc;
                small_spent = spent;
                s_hi = mid;
            } else {
                large = alloc;
                large_spent = spent;
                s_lo = mid;
            }
            if s_hi - s_lo < 1e-13 {
                break;
            }
        }
    }

    let theta = if large_spent > small_spent {
        ((a - small_spent) / (large_spent - small_spent)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let v: f64 = entries
        .iter()
        .zip(small.iter().zip(&large))
        .map(|(e, (&x0, &x1))| {
            let x = (x0 + theta * (x1 - x0)).clamp(0.0, 1.0);
            e.weight * e.curve.eval(x)
        })
        .sum();
    Probability::clamped(v)
}

/// Secant slope of `f` over a small window around `x` (relative width
/// [`DERIVATIVE_STEP`]); exact segment slopes for tabulated curves.
/// Non-decreasing in `x` for convex `f`.
fn secant_slope(f: &TradeoffCurve, x: f64) -> f64 {
    if let TradeoffCurve::Tabulated(t) = f {
        return t.slope(x);
    }
    let h = DERIVATIVE_STEP * x.max(1e-12);
    let lo = (x - h).max(0.0);
    let hi = (x + h).min(1.0);
    let (f_lo, f_hi) = (f.eval(lo), f.eval(hi));
    let analytic = matches!(f, TradeoffCurve::Gaussian { .. } | TradeoffCurve::OneStep(_));
    if f_hi > 0.5 && analytic {
        // β ≈ 1 loses the difference to rounding; use 1 − β instead
        (f.eval_complement(lo) - f.eval_complement(hi)) / (hi - lo)
    } else {
        (f_hi - f_lo) / (hi - lo)
    }
}

/// Largest x in [0, 1] with secant slope ≤ λ, by bisection.
fn allocation_at_slope(f: &TradeoffCurve, lambda: f64) -> f64 {
    if secant_slope(f, 1.0) <= lambda {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if secant_slope(f, 0.0) > lambda {
        return 0.0;
    }
    // bisect on log x below 1e-3 to resolve the steep region
    for _ in 0..80 {
        let mid = if hi < 1e-3 && lo > 0.0 {
            (lo * hi).sqrt()
        } else if hi < 1e-3 {
            hi * 1e-3
        } else {
            0.5 * (lo + hi)
        };
        if secant_slope(f, mid) <= lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) + 1e-300 {
            break;
        }
    }
    lo
}

/// Samples `curve` on a grid and returns a convex piecewise-linear curve.
///
/// Below 101 points the grid is linear, `k/(grid_size − 1)`. Otherwise it
/// holds α = 0 followed by a log-spaced block in `[1e-6, 0.1)` and a linear
/// block in `[0.1, 1]`.
pub fn tabulate(curve: &TradeoffCurve, grid_size: usize) -> Result<TradeoffCurve> {
    if grid_size < 3 {
        return Err(Error::invalid("grid_size", format!("{grid_size} must be >= 3")));
    }
    let grid: Vec<f64> = if grid_size < 101 {
        (0..grid_size)
            .map(|k| k as f64 / (grid_size - 1) as f64)
            .collect()
    } else {
        let rest = grid_size - 1;
        let n_log = rest / 2;
        let mut g = vec![0.0];
        g.extend(mixed_grid(n_log, rest - n_log));
        g
    };
    let points = grid.into_iter().map(|a| (a, curve.eval(a))).collect();
    Ok(TradeoffCurve::Tabulated(TabulatedCurve::new(points)?))
}

/// Largest violation of each trade-off axiom on the evaluation grid
/// (extended by α = 0). A value ≤ 1e-9 counts as satisfied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxiomReport {
    pub convexity: f64,
    pub monotonicity: f64,
    pub diagonal: f64,
    pub range: f64,
}

impl AxiomReport {
    pub fn holds(&self) -> bool {
        self.convexity <= COMPARE_TOLERANCE
            && self.monotonicity <= COMPARE_TOLERANCE
            && self.diagonal <= COMPARE_TOLERANCE
            && self.range <= COMPARE_TOLERANCE
    }
}

/// Checks convexity, monotonicity and β ≤ 1 − α on the evaluation grid.
pub fn check_axioms(curve: &TradeoffCurve) -> AxiomReport {
    let mut xs = vec![0.0];
    xs.extend(evaluation_grid());
    let ys: Vec<f64> = xs.iter().map(|&a| curve.eval(a)).collect();
    axioms_on(&xs, &ys)
}

pub(crate) fn axioms_on(xs: &[f64], ys: &[f64]) -> AxiomReport {
    let mut report = AxiomReport {
        convexity: 0.0,
        monotonicity: 0.0,
        diagonal: 0.0,
        range: 0.0,
    };
    for (&x, &y) in xs.iter().zip(ys) {
        report.diagonal = report.diagonal.max(y - (1.0 - x));
        report.range = report.range.max(-y).max(y - 1.0);
    }
    for w in ys.windows(2) {
        report.monotonicity = report.monotonicity.max(w[1] - w[0]);
    }
    for i in 1..xs.len().saturating_sub(1) {
        let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
        let chord = ((x2 - x1) * ys[i - 1] + (x1 - x0) * ys[i + 1]) / (x2 - x0);
        report.convexity = report.convexity.max(ys[i] - chord);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    fn onestep(n: u64, d: u32, tau2: f64, clip: f64, k: f64) -> TradeoffCurve {
        TradeoffCurve::OneStep(OneStepParams::new(n, d, tau2, clip, k).unwrap())
    }

    #[test]
    fn grid_shape() {
        let g = evaluation_grid();
        assert_eq!(g.len(), 1001);
        assert_abs_diff_eq!(g[0], 1e-6, epsilon = 1e-18);
        assert!(g[499] < 0.1);
        assert_abs_diff_eq!(g[500], 0.1, epsilon = 1e-15);
        assert_eq!(g[1000], 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gaussian_values() {
        assert_abs_diff_eq!(gaussian_beta(0.0, p(0.3)).get(), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_beta(1.0, p(0.5)).get(), 0.158_655_253_931_457, epsilon = 1e-12);
        let z95 = 1.644_853_626_951_472_2;
        let want = std_normal_cdf(z95 - 1.14).get();
        assert_abs_diff_eq!(gaussian_beta(1.14, p(0.05)).get(), want, epsilon = 1e-12);
        assert_eq!(gaussian_beta(2.0, Probability::ZERO).get(), 1.0);
        assert_eq!(gaussian_beta(2.0, Probability::ONE).get(), 0.0);
    }

    #[test]
    fn gaussian_self_inverse() {
        for &mu in &[0.0, 0.3, 1.0, 3.0, 10.0] {
            for &a in &[1e-6, 0.01, 0.2, 0.5, 0.9, 0.999] {
                let b = gaussian_beta(mu, p(a));
                let back = gaussian_beta(mu, b).get();
                assert!((back - a).abs() <= 1e-8, "mu {mu} a {a}: {back}");
            }
        }
    }

    #[test]
    fn onestep_endpoints_and_inverse_form() {
        let params = OneStepParams::new(40, 6, 0.0, f64::INFINITY, 6.0).unwrap();
        assert_eq!(onestep_beta(&params, Probability::ZERO).get(), 1.0);
        assert_eq!(onestep_beta(&params, Probability::ONE).get(), 0.0);
        let ne = params.n_effective();
        for &a in &[0.01, 0.1, 0.4, 0.8] {
            let b = onestep_beta(&params, p(a));
            // invert: α = F_nonmember((ne−1)/ne · F⁻¹_member(1 − β))
            let q = params.member_law().quantile(b.complement()).unwrap();
            let back = params.nonmember_law().cdf((ne - 1.0) / ne * q).unwrap().get();
            assert!((back - a).abs() < 1e-6, "{a} -> {back}");
        }
    }

    #[test]
    fn onestep_near_gaussian_limit() {
        let f = onestep(500, 650, 0.0, f64::INFINITY, 650.0);
        let g = TradeoffCurve::Gaussian { mu: 1.1396 };
        assert!(sup_distance(&f, &g) < 0.02);
    }

    #[test]
    fn compare_examples() {
        let g1 = TradeoffCurve::Gaussian { mu: 1.0 };
        let g2 = TradeoffCurve::Gaussian { mu: 2.0 };
        assert_eq!(compare(&g1, &g2), CurveOrdering::FDominates);
        assert_eq!(compare(&g2, &g1), CurveOrdering::GDominates);
        assert_eq!(compare(&g1, &g1), CurveOrdering::Equal);
        let plain = onestep(500, 650, 0.0, f64::INFINITY, 650.0);
        let noisy = onestep(500, 650, 1.0, 10.0, 650.0);
        assert_eq!(compare(&plain, &noisy), CurveOrdering::GDominates);
        let tab = tabulate(&g1, 11).unwrap();
        assert_eq!(compare(&g1, &tab), CurveOrdering::GDominates);
    }

    #[test]
    fn tensor() {
        assert_eq!(tensor_compose_gaussian(&[0.7]).unwrap(), 0.7);
        assert_abs_diff_eq!(tensor_compose_gaussian(&[3.0, 4.0]).unwrap(), 5.0, epsilon = 1e-15);
        let five = tensor_compose_gaussian(&[1.1396; 5]).unwrap();
        assert_abs_diff_eq!(five, 2.548, epsilon = 1e-3);
        assert!(tensor_compose_gaussian(&[]).is_err());
    }

    #[test]
    fn tabulated_diagonal() {
        let t = tabulate(&TradeoffCurve::Gaussian { mu: 0.0 }, 11).unwrap();
        let TradeoffCurve::Tabulated(t) = t else { unreachable!() };
        assert_eq!(t.points().len(), 11);
        for (k, &(a, b)) in t.points().iter().enumerate() {
            assert_abs_diff_eq!(a, k as f64 / 10.0, epsilon = 1e-15);
            assert_abs_diff_eq!(b, 1.0 - k as f64 / 10.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tabulated_gaussian_close() {
        let g = TradeoffCurve::Gaussian { mu: 1.0 };
        let t = tabulate(&g, 1001).unwrap();
        assert_eq!(compare_with_tolerance(&g, &t, 2e-3), CurveOrdering::Equal);
        assert!(check_axioms(&t).holds());
    }

    #[test]
    fn hull_projection_repairs_dent() {
        let t = TabulatedCurve::new(vec![(0.0, 1.0), (0.5, 0.6), (1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(t.eval(0.5), 0.5, epsilon = 1e-15);
        assert!(TabulatedCurve::new(vec![(0.2, 0.5), (0.2, 0.4)]).is_err());
        let padded = TabulatedCurve::new(vec![(0.5, 0.2)]).unwrap();
        assert_eq!(padded.points().len(), 3);
    }

    #[test]
    fn stochastic_single_entry() {
        let g = TradeoffCurve::Gaussian { mu: 1.3 };
        let fam = WeightedTestFamily::new(vec![(1.0, g.clone())]).unwrap();
        for &a in &[0.0, 0.01, 0.3, 1.0] {
            assert_eq!(stochastic_compose(&fam, p(a)), g.beta(p(a)));
        }
    }

    #[test]
    fn stochastic_two_gaussians_against_grid() {
        let f1 = TradeoffCurve::Gaussian { mu: 0.5 };
        let f2 = TradeoffCurve::Gaussian { mu: 2.0 };
        let fam = WeightedTestFamily::new(vec![(0.5, f1.clone()), (0.5, f2.clone())]).unwrap();
        let alpha = 0.1;
        let mut best = f64::INFINITY;
        for i in 0..=10_000 {
            let a1 = i as f64 / 10_000.0;
            let a2 = (alpha - 0.5 * a1) / 0.5;
            if !(0.0..=1.0).contains(&a2) {
                continue;
            }
            best = best.min(0.5 * f1.eval(a1) + 0.5 * f2.eval(a2));
        }
        let got = stochastic_compose(&fam, p(alpha)).get();
        assert!((got - best).abs() < 1e-3, "{got} vs {best}");
        assert!(got <= best + 1e-12);
    }

    #[test]
    fn stochastic_with_linear_member() {
        // the diagonal has a constant slope; allocation jumps across it
        let fam = WeightedTestFamily::new(vec![
            (0.3, TradeoffCurve::Gaussian { mu: 0.0 }),
            (0.7, TradeoffCurve::Gaussian { mu: 1.0 }),
        ])
        .unwrap();
        let c = TradeoffCurve::Stochastic(fam);
        assert!(check_axioms(&c).holds(), "{:?}", check_axioms(&c));
    }

    #[test]
    fn family_validation() {
        let g = TradeoffCurve::Gaussian { mu: 1.0 };
        assert!(WeightedTestFamily::new(vec![]).is_err());
        assert!(WeightedTestFamily::new(vec![(0.5, g.clone())]).is_err());
        assert!(WeightedTestFamily::new(vec![(0.0, g.clone()), (1.0, g)]).is_err());
    }

    #[test]
    fn chi2_family_is_well_formed() {
        let base = OneStepParams::new(50, 5, 0.0, f64::INFINITY, 5.0).unwrap();
        let fam = WeightedTestFamily::chi2_susceptibility(&base, 8).unwrap();
        assert_eq!(fam.entries().len(), 8);
        let ks: Vec<f64> = fam
            .entries()
            .iter()
            .map(|e| match &e.curve {
                TradeoffCurve::OneStep(p) => p.susceptibility(),
                _ => unreachable!(),
            })
            .collect();
        assert!(ks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        TradeoffCurve::Gaussian { mu: 0.0 }
            .write_csv(&mut buf, &[0.25, 0.5])
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "alpha,beta");
        assert_eq!(lines[1], "2.5000000000000000e-1,7.5000000000000000e-1");
        assert_eq!(lines.len(), 3);
    }
}
