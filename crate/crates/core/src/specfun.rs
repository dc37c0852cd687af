//! Scalar special functions: the standard normal law, regularized incomplete
//! gamma functions, and the central and non-central chi-squared laws.
//!
//! Everything here is evaluated in double precision. Where a probability is
//! close to one, a complementary (survival) form is exposed as well so that
//! deep-tail computations do not lose their significant digits to `1 - p`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use libm::{erfc, lgamma as ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Neglected Poisson mass allowed when truncating the non-central mixture.
const MIXTURE_TAIL_MASS: f64 = 1e-14;

/// A probability, guaranteed to lie in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::invalid("probability", format!("{value} is outside [0, 1]")))
        }
    }

    /// Clamps round-off excursions back into `[0, 1]`. NaN maps to zero.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Probability(0.0)
        } else {
            Probability(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Probability(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

// ---------------------------------------------------------------------------
// Standard normal
// ---------------------------------------------------------------------------

/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> Probability {
    Probability::clamped(0.5 * erfc(-x / SQRT_2))
}

/// Standard normal survival function 1 − Φ(x), accurate in the upper tail.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal quantile Φ⁻¹(p) for `0 < p < 1`.
pub fn std_normal_quantile(p: Probability) -> Result<f64> {
    let p = p.get();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::UnboundedQuantile(p));
    }
    if p <= 0.5 {
        Ok(lower_tail_quantile(p))
    } else {
        Ok(-lower_tail_quantile(1.0 - p))
    }
}

/// Φ⁻¹(1 − q), taking the upper-tail mass `q` directly.
pub fn std_normal_quantile_upper(q: Probability) -> Result<f64> {
    let q = q.get();
    if q <= 0.0 || q >= 1.0 {
        return Err(Error::UnboundedQuantile(1.0 - q));
    }
    if q <= 0.5 {
        Ok(-lower_tail_quantile(q))
    } else {
        Ok(lower_tail_quantile(1.0 - q))
    }
}

/// Acklam's rational approximation followed by one Halley step on Φ.
/// Requires `0 < p <= 0.5`.
fn lower_tail_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let e = 0.5 * erfc(-x / SQRT_2) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

// ---------------------------------------------------------------------------
// Gamma kernels
// ---------------------------------------------------------------------------

fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/m) + m − x`, computed without cancellation when x ≈ m.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `y^s e^{-y} / Γ(s + 1)` for `s > −1`, `y ≥ 0`; the Poisson mass function
/// extended to real `s`.
pub(crate) fn gamma_kernel(s: f64, y: f64) -> f64 {
    if y == 0.0 {
        return if s == 0.0 {
            1.0
        } else if s > 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    if s == 0.0 {
        return (-y).exp();
    }
    if s < 1.0 {
        return (s * y.ln() - y - ln_gamma(s + 1.0)).exp();
    }
    (-stirling_error(s) - deviance(s, y)).exp() / (2.0 * PI * s).sqrt()
}

/// Returns `(P(s, x), Q(s, x))`, the regularized lower and upper incomplete
/// gamma functions.
fn reg_gamma_pair(s: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let max_iter = 1000 + (60.0 * s.max(x).sqrt()) as usize;
    if x < s + 1.0 {
        // Power series for P.
        let mut sum = 1.0;
        let mut term = 1.0;
        for n in 1..max_iter {
            term *= x / (s + n as f64);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        let p = (gamma_kernel(s, x) * sum).min(1.0);
        (p, 1.0 - p)
    } else {
        // Modified Lentz continued fraction for Q.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..max_iter {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (s * gamma_kernel(s, x) * h).min(1.0);
        (1.0 - q, q)
    }
}

/// Regularized lower incomplete gamma function P(s, x).
pub fn reg_lower_gamma(s: f64, x: f64) -> Result<Probability> {
    check_gamma_args(s, x)?;
    Ok(Probability::clamped(reg_gamma_pair(s, x).0))
}

/// Regularized upper incomplete gamma function Q(s, x) = 1 − P(s, x).
pub fn reg_upper_gamma(s: f64, x: f64) -> Result<Probability> {
    check_gamma_args(s, x)?;
    Ok(Probability::clamped(reg_gamma_pair(s, x).1))
}

fn check_gamma_args(s: f64, x: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("s", format!("shape must be positive and finite, got {s}")));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid("x", format!("must be non-negative, got {x}")));
    }
    Ok(())
}

/// Central chi-squared CDF with `dof` degrees of freedom.
pub fn chi2_cdf(dof: u32, x: f64) -> Result<Probability> {
    NoncentralChiSq::new(dof, 0.0)?.cdf(x)
}

// ---------------------------------------------------------------------------
// Non-central chi-squared
// ---------------------------------------------------------------------------

/// The non-central chi-squared law χ′²_d(γ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoncentralChiSq {
    dof: u32,
    noncentrality: f64,
}

/// Poisson mixing weights `w_j`, `j = lo..=hi`, for `Pois(λ)`.
struct PoissonWindow {
    lo: usize,
    weights: Vec<f64>,
}

impl PoissonWindow {
    fn new(lambda: f64) -> Self {
        if lambda == 0.0 {
            return PoissonWindow {
                lo: 0,
                weights: vec![1.0],
            };
        }
        let mode = lambda.floor() as usize;
        let w_mode = gamma_kernel(mode as f64, lambda);
        let half = 0.5 * MIXTURE_TAIL_MASS;

        let mut below = Vec::new();
        let mut j = mode;
        let mut w = w_mode;
        while j > 0 {
            let r = j as f64 / lambda;
            if r < 1.0 && w * r / (1.0 - r) < half {
                break;
            }
            w *= r;
            j -= 1;
            below.push(w);
        }
        let lo = j;

        let mut weights: Vec<f64> = below.into_iter().rev().collect();
        weights.push(w_mode);
        let mut j = mode;
        let mut w = w_mode;
        loop {
            let r = lambda / (j + 1) as f64;
            if r < 1.0 && w * r / (1.0 - r) < half {
                break;
            }
            w *= r;
            j += 1;
            weights.push(w);
        }
        PoissonWindow { lo, weights }
    }

    fn hi(&self) -> usize {
        self.lo + self.weights.len() - 1
    }
}

/// Gamma kernels `t_k = kernel(a + k, y)` for `k = first..=last`, generated by
/// recurrence outward from the largest term so underflow only hits negligible
/// entries.
fn kernel_run(a: f64, y: f64, first: i64, last: i64) -> Vec<f64> {
    let len = (last - first + 1) as usize;
    let mut t = vec![0.0; len];
    let peak = ((y - a).round() as i64).clamp(first, last);
    let start = (peak - first) as usize;
    t[start] = gamma_kernel(a + peak as f64, y);
    for i in start + 1..len {
        let k = first + i as i64;
        t[i] = t[i - 1] * y / (a + k as f64);
    }
    for i in (0..start).rev() {
        let k = first + i as i64;
        t[i] = t[i + 1] * (a + (k + 1) as f64) / y;
    }
    t
}

impl NoncentralChiSq {
    pub fn new(dof: u32, noncentrality: f64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::invalid("dof", "degrees of freedom must be at least 1"));
        }
        if !(noncentrality >= 0.0 && noncentrality.is_finite()) {
            return Err(Error::invalid(
                "noncentrality",
                format!("must be finite and non-negative, got {noncentrality}"),
            ));
        }
        Ok(NoncentralChiSq { dof, noncentrality })
    }

    pub fn central(dof: u32) -> Result<Self> {
        Self::new(dof, 0.0)
    }

    pub fn dof(&self) -> u32 {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }

    pub fn mean(&self) -> f64 {
        self.dof as f64 + self.noncentrality
    }

    pub fn variance(&self) -> f64 {
        2.0 * (self.dof as f64 + 2.0 * self.noncentrality)
    }

    /// CDF via the Poisson mixture of central laws, summed in the all-positive
    /// form `Σ_k t_k W_k` where `W_k` is the partial Poisson mass.
    pub fn cdf(&self, x: f64) -> Result<Probability> {
        check_x(x)?;
        Ok(Probability::clamped(self.cdf_raw(x)))
    }

    /// Survival function 1 − CDF, accurate when the CDF is close to one.
    pub fn sf(&self, x: f64) -> Result<Probability> {
        check_x(x)?;
        Ok(Probability::clamped(self.sf_raw(x)))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        check_x(x)?;
        Ok(self.pdf_raw(x))
    }

    /// Natural log of the CDF, clamped below at −745 (log of the smallest
    /// subnormal).
    pub fn log_cdf(&self, x: f64) -> Result<f64> {
        let p = self.cdf(x)?.get();
        Ok(if p > 0.0 { p.ln().max(-745.0) } else { -745.0 })
    }

    pub(crate) fn cdf_raw(&self, x: f64) -> f64 {
        self.eval_with(&PoissonWindow::new(0.5 * self.noncentrality), x, false).0
    }

    pub(crate) fn sf_raw(&self, x: f64) -> f64 {
        self.eval_with(&PoissonWindow::new(0.5 * self.noncentrality), x, true).0
    }

    pub(crate) fn pdf_raw(&self, x: f64) -> f64 {
        if x < 0.0 || x.is_infinite() {
            return 0.0;
        }
        if x == 0.0 {
            return match self.dof {
                1 => f64::INFINITY,
                2 => 0.5 * (-0.5 * self.noncentrality).exp(),
                _ => 0.0,
            };
        }
        self.eval_with(&PoissonWindow::new(0.5 * self.noncentrality), x, false).1
    }

    /// CDF (or SF when `upper`) and density at `x > 0` from one pass over
    /// the mixture window.
    fn eval_with(&self, window: &PoissonWindow, x: f64, upper: bool) -> (f64, f64) {
        if x <= 0.0 {
            return (if upper { 1.0 } else { 0.0 }, 0.0);
        }
        if x.is_infinite() {
            return (if upper { 0.0 } else { 1.0 }, 0.0);
        }
        let a = 0.5 * self.dof as f64;
        let y = 0.5 * x;
        let (lo, hi) = (window.lo as i64, window.hi() as i64);
        let t = kernel_run(a, y, lo, hi);
        // chi-squared density with dof + 2j at x is ½·kernel(a + j − 1, y),
        // and kernel(a + k − 1, y) = kernel(a + k, y)·(a + k)/y
        let density = 0.5
            * window
                .weights
                .iter()
                .zip(&t)
                .enumerate()
                .map(|(i, (w, tk))| w * tk * (a + (lo + i as i64) as f64) / y)
                .sum::<f64>();
        // suffix = Σ_{j > k} w_j inside the window
        let mut upper_sum = 0.0;
        let mut suffix = 0.0;
        for i in (0..t.len()).rev() {
            upper_sum += t[i] * suffix;
            suffix += window.weights[i];
        }
        let (_, q_bottom) = reg_gamma_pair(a + lo as f64, y);
        let sf = upper_sum + suffix * q_bottom;
        let mut partial = 0.0;
        let mut lower_sum = 0.0;
        for (w, tk) in window.weights.iter().zip(&t) {
            partial += w;
            lower_sum += tk * partial;
        }
        let (p_top, _) = reg_gamma_pair(a + (hi + 1) as f64, y);
        let cdf = lower_sum + partial * p_top;
        // the truncated window loses a few ulps of mass, so the larger tail
        // is taken as the complement of the smaller one
        let prob = match (upper, cdf < sf) {
            (false, true) => cdf,
            (false, false) => 1.0 - sf,
            (true, true) => 1.0 - cdf,
            (true, false) => sf,
        };
        (prob, density)
    }

    /// Quantile for `0 ≤ p < 1`; `quantile(0) = 0`.
    pub fn quantile(&self, p: Probability) -> Result<f64> {
        let p = p.get();
        if p >= 1.0 {
            return Err(Error::UnboundedQuantile(p));
        }
        if p <= 0.0 {
            return Ok(0.0);
        }
        if p <= 0.5 {
            self.solve(p, false)
        } else {
            self.solve(1.0 - p, true)
        }
    }

    /// The point whose survival probability is `q`, for `0 < q ≤ 1`.
    pub fn quantile_upper(&self, q: Probability) -> Result<f64> {
        let q = q.get();
        if q <= 0.0 {
            return Err(Error::UnboundedQuantile(1.0));
        }
        if q >= 1.0 {
            return Ok(0.0);
        }
        if q <= 0.5 {
            self.solve(q, true)
        } else {
            self.solve(1.0 - q, false)
        }
    }

    /// Finds x with `cdf(x) = target` (or `sf(x) = target` when `upper`),
    /// using Newton steps on the analytic density inside a shrinking bracket,
    /// falling back to bisection whenever a step leaves the bracket.
    fn solve(&self, target: f64, upper: bool) -> Result<f64> {
        let window = PoissonWindow::new(0.5 * self.noncentrality);
        // residual > 0 means x is too large; also returns the density
        let eval = |x: f64| {
            let (p, density) = self.eval_with(&window, x, upper);
            (if upper { target - p } else { p - target }, density)
        };
        let residual = |x: f64| eval(x).0;

        let mean = self.mean();
        let sd = self.variance().sqrt();
        let mut lo = 0.0;
        let mut hi = mean + 20.0 * sd;
        let mut expansions = 0;
        while residual(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return Err(Error::NoConvergence {
                    what: "non-central chi-squared quantile bracket",
                    iterations: expansions,
                });
            }
        }

        let z = if upper {
            std_normal_quantile_upper(Probability::clamped(target))
        } else {
            std_normal_quantile(Probability::clamped(target))
        }
        .unwrap_or(0.0);
        let mut x = (mean + sd * z).clamp(lo, hi);
        if x <= lo || x >= hi {
            x = 0.5 * (lo + hi);
        }

        const MAX_ITER: usize = 400;
        for _ in 0..MAX_ITER {
            let (r, density) = eval(x);
            if r == 0.0 {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = if density > 0.0 && density.is_finite() {
                let delta = r / density;
                // a converged Newton correction can be below one ulp of x
                if delta.abs() <= 1e-14 * x {
                    return Ok(x);
                }
                x - delta
            } else {
                f64::NAN
            };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step <= 1e-14 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence {
            what: "non-central chi-squared quantile",
            iterations: MAX_ITER,
        })
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::invalid("x", "NaN"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn normal_cdf_symmetry_and_center() {
        assert_eq!(std_normal_cdf(0.0).get(), 0.5);
        for &x in &[0.1, 0.5, 1.0, 3.0, 7.5, 12.0] {
            let s = std_normal_cdf(x).get() + std_normal_cdf(-x).get();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            std_normal_cdf(-3.0).get(),
            1.0 - std_normal_cdf(3.0).get(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn normal_quantile_edges() {
        assert!(matches!(std_normal_quantile(p(0.0)), Err(Error::UnboundedQuantile(_))));
        assert!(matches!(std_normal_quantile(p(1.0)), Err(Error::UnboundedQuantile(_))));
        assert_abs_diff_eq!(std_normal_quantile(p(0.5)).unwrap(), 0.0, epsilon = 1e-15);
        let a = std_normal_quantile(p(0.1)).unwrap();
        let b = std_normal_quantile(p(0.9)).unwrap();
        assert_abs_diff_eq!(a, -b, epsilon = 1e-13);
    }

    #[test]
    fn normal_quantile_roundtrip_deep_tail() {
        for &q in &[1e-300, 1e-100, 1e-20, 1e-8, 1e-3, 0.02, 0.3, 0.49] {
            let x = std_normal_quantile(p(q)).unwrap();
            let back = std_normal_cdf(x).get();
            assert!(((back - q) / q).abs() < 1e-10, "q={q} back={back}");
            let xu = std_normal_quantile_upper(p(q)).unwrap();
            assert_abs_diff_eq!(xu, -x, epsilon = 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_identities() {
        assert_eq!(reg_lower_gamma(0.5, 0.0).unwrap().get(), 0.0);
        assert_abs_diff_eq!(
            reg_lower_gamma(1.0, 1.0).unwrap().get(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-15
        );
        // P(1/2, x) = erf(√x)
        for &x in &[0.01f64, 0.7, 2.0, 9.0] {
            let erf = 1.0 - erfc(x.sqrt());
            assert_abs_diff_eq!(reg_lower_gamma(0.5, x).unwrap().get(), erf, epsilon = 1e-14);
        }
        assert_eq!(reg_lower_gamma(3.0, f64::INFINITY).unwrap().get(), 1.0);
        assert!(reg_lower_gamma(0.0, 1.0).is_err());
        assert!(reg_lower_gamma(1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_matches_statrs_on_a_grid() {
        use statrs::function::gamma::gamma_lr;
        for &s in &[0.5, 1.5, 4.0, 25.0, 300.0, 5000.0] {
            for &f in &[0.3, 0.9, 1.0, 1.1, 2.0] {
                let x = s * f;
                let ours = reg_lower_gamma(s, x).unwrap().get();
                let theirs = gamma_lr(s, x);
                assert_abs_diff_eq!(ours, theirs, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn gamma_large_shape_is_accurate_near_mode() {
        // reference values from a 30-digit evaluation
        let s: f64 = 1.0e6;
        let cases = [
            (-2.0, 0.022_696_114_006_736_803),
            (0.0, 0.500_132_980_760_872_6),
            (1.5, 0.933_138_895_764_102_2),
        ];
        for (z, reference) in cases {
            let x = s + z * s.sqrt();
            assert_abs_diff_eq!(reg_lower_gamma(s, x).unwrap().get(), reference, epsilon = 1e-12);
            // first Edgeworth correction to the normal limit
            let edgeworth = std_normal_cdf(z).get() - (z * z - 1.0) * std_normal_pdf(z) / (3.0 * s.sqrt());
            assert_abs_diff_eq!(reference, edgeworth, epsilon = 1e-6);
        }
    }

    #[test]
    fn gamma_kernel_is_poisson_pmf() {
        for &(k, lam) in &[(0u32, 3.0f64), (3, 3.0), (20, 7.5), (1000, 990.0)] {
            let direct = (k as f64 * lam.ln() - lam - ln_gamma(k as f64 + 1.0)).exp();
            let ours = gamma_kernel(k as f64, lam);
            assert!(((ours - direct) / direct).abs() < 1e-10);
        }
    }

    #[test]
    fn noncentral_reduces_to_central() {
        let law = NoncentralChiSq::new(3, 0.0).unwrap();
        for &x in &[0.1, 1.0, 3.0, 10.0] {
            let expected = reg_lower_gamma(1.5, x / 2.0).unwrap().get();
            assert_abs_diff_eq!(law.cdf(x).unwrap().get(), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn noncentral_one_dof_closed_form() {
        for &g in &[0.0f64, 0.3, 1.0, 5.0, 40.0, 650.0] {
            let law = NoncentralChiSq::new(1, g).unwrap();
            for &s in &[1e-4f64, 0.2, 1.0, 4.0, 30.0, 900.0] {
                let expected = std_normal_cdf(s.sqrt() - g.sqrt()).get()
                    - std_normal_cdf(-s.sqrt() - g.sqrt()).get();
                assert_abs_diff_eq!(law.cdf(s).unwrap().get(), expected, epsilon = 1e-9);
                assert_abs_diff_eq!(law.sf(s).unwrap().get(), 1.0 - expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pdf_integrates_to_cdf_increment() {
        let law = NoncentralChiSq::new(4, 7.0).unwrap();
        let (a, b) = (3.0, 9.0);
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * law.pdf(a + i as f64 * h).unwrap();
        }
        integral *= h / 3.0;
        let diff = law.cdf(b).unwrap().get() - law.cdf(a).unwrap().get();
        assert_abs_diff_eq!(integral, diff, epsilon = 1e-10);
    }

    #[test]
    fn quantile_examples() {
        let law = NoncentralChiSq::new(10, 5.0).unwrap();
        assert_eq!(law.quantile(p(0.0)).unwrap(), 0.0);
        assert!(matches!(law.quantile(p(1.0)), Err(Error::UnboundedQuantile(_))));
        for &q in &[0.01, 0.5, 0.99] {
            let x = law.quantile(p(q)).unwrap();
            assert_abs_diff_eq!(law.cdf(x).unwrap().get(), q, epsilon = 1e-8);
        }
        let z = std_normal_quantile(p(0.975)).unwrap();
        let chi = NoncentralChiSq::central(1).unwrap().quantile(p(0.95)).unwrap();
        assert_abs_diff_eq!(chi, z * z, epsilon = 1e-9);
        assert_abs_diff_eq!(chi, 3.841459, epsilon = 1e-4);
    }

    #[test]
    fn upper_quantile_in_deep_tail() {
        let law = NoncentralChiSq::new(20, 100.0).unwrap();
        for &q in &[1e-15, 1e-9, 1e-3] {
            let x = law.quantile_upper(p(q)).unwrap();
            let back = law.sf(x).unwrap().get();
            assert!(((back - q) / q).abs() < 1e-8, "q={q} back={back}");
        }
    }

    #[test]
    fn cdf_decreases_in_noncentrality() {
        for &d in &[1u32, 10, 650] {
            let x = d as f64 * 1.5;
            let mut prev = 1.0;
            for i in 0..=40 {
                let g = 10.0 * d as f64 * i as f64 / 40.0;
                let c = NoncentralChiSq::new(d, g).unwrap().cdf(x).unwrap().get();
                assert!(c <= prev + 1e-15, "d={d} g={g}");
                prev = c;
            }
        }
    }

    #[test]
    fn probability_rejects_out_of_range() {
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(1.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::clamped(1.0 + 1e-16).get(), 1.0);
    }
}
