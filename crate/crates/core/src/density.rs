//! Predictive densities and the operations the rest of the pipeline
//! needs from them: pdf/cdf evaluation, quantile inversion, moments,
//! central prediction intervals, truncation to the unit interval, and
//! the continuous ranked probability score of a single forecast.
//!
//! Four density families are supported — Gaussian, Beta, Gaussian
//! mixture, and a weighted combination of other densities — plus a
//! truncation wrapper that restricts any of them to [0, 1] and
//! renormalizes. Normalized wind power lives in [0, 1], so members
//! producing real-line densities are truncated before combination and
//! scoring. Densities are immutable after construction and all
//! operations are pure.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Grid resolution for numerical CRPS integration and moment fallbacks.
pub const CRPS_GRID_POINTS: usize = 2001;
/// Quantile inversion stops when |cdf(q) - p| falls below this.
pub const QUANTILE_TOL: f64 = 1e-8;
const QUANTILE_MAX_ITER: usize = 200;
/// Truncation fails when the inner density has less mass than this on [0, 1].
pub const TRUNCATION_MIN_MASS: f64 = 1e-6;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn require_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {value}")))
    }
}

/// Conditional Gaussian density over normalized power.
///
/// The mean is nominally in [0, 1] but mathematically unbounded; the
/// variance must be strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    mean: f64,
    variance: f64,
}

impl GaussianDensity {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        require_finite(mean, "gaussian mean")?;
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Domain(format!(
                "gaussian variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Analytic CRPS of a Gaussian forecast against an observation.
    pub fn crps_closed_form(&self, y_obs: f64) -> f64 {
        let sigma = self.std_dev();
        let z = (y_obs - self.mean) / sigma;
        sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI)
    }

    /// Mean, variance, and mass of this Gaussian restricted to [0, 1].
    ///
    /// Returns `None` when effectively no mass lies inside the interval.
    fn unit_truncated_moments(&self) -> Option<(f64, f64, f64)> {
        let sigma = self.std_dev();
        let a = (0.0 - self.mean) / sigma;
        let b = (1.0 - self.mean) / sigma;
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        if mass <= 0.0 {
            return None;
        }
        let pa = std_normal_pdf(a);
        let pb = std_normal_pdf(b);
        let ratio = (pa - pb) / mass;
        let mean = self.mean + sigma * ratio;
        let variance = self.variance * (1.0 + (a * pa - b * pb) / mass - ratio * ratio);
        Some((mean, variance.max(0.0), mass))
    }
}

/// Beta density with strictly positive shape parameters, supported on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaDensity {
    alpha: f64,
    beta: f64,
}

impl BetaDensity {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Domain(format!(
                "beta shape alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Domain(format!(
                "beta shape beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    fn pdf(&self, y: f64) -> f64 {
        if !(0.0..=1.0).contains(&y) {
            return 0.0;
        }
        // Boundary limits: the log form below would produce 0 * -inf.
        if y == 0.0 {
            return match self.alpha {
                a if a < 1.0 => f64::INFINITY,
                a if a == 1.0 => self.beta,
                _ => 0.0,
            };
        }
        if y == 1.0 {
            return match self.beta {
                b if b < 1.0 => f64::INFINITY,
                b if b == 1.0 => self.alpha,
                _ => 0.0,
            };
        }
        ((self.alpha - 1.0) * y.ln() + (self.beta - 1.0) * (-y).ln_1p()
            - ln_beta(self.alpha, self.beta))
        .exp()
    }

    fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else if y >= 1.0 {
            1.0
        } else {
            beta_reg(self.alpha, self.beta, y)
        }
    }
}

/// Gaussian kernel mixture: equal-bandwidth Gaussians at `centers`
/// weighted by `weights`.
///
/// Serialized as parallel arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureDensity {
    centers: Vec<f64>,
    weights: Vec<f64>,
    bandwidth: f64,
}

impl GaussianMixtureDensity {
    pub fn new(centers: Vec<f64>, weights: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Domain("mixture needs at least one center".into()));
        }
        if centers.len() != weights.len() {
            return Err(Error::Domain(format!(
                "mixture has {} centers but {} weights",
                centers.len(),
                weights.len()
            )));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Domain(format!(
                "mixture bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        for &c in &centers {
            require_finite(c, "mixture center")?;
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Domain(format!(
                    "mixture weight must be non-negative, got {w}"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "mixture weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self {
            centers,
            weights,
            bandwidth,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(w, c)| w * c)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        // Law of total variance with per-component variance h².
        let mean = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(&self.centers)
            .map(|(w, c)| w * (c * c + self.bandwidth * self.bandwidth))
            .sum();
        second - mean * mean
    }

    fn pdf(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(w, c)| w * std_normal_pdf((y - c) / h) / h)
            .sum()
    }

    fn cdf(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        self.weights
            .iter()
            .zip(&self.centers)
            .map(|(w, c)| w * std_normal_cdf((y - c) / h))
            .sum()
    }

    fn unit_truncated_moments(&self) -> Option<(f64, f64, f64)> {
        let h = self.bandwidth;
        let mut mass = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for (&w, &c) in self.weights.iter().zip(&self.centers) {
            let comp = GaussianDensity {
                mean: c,
                variance: h * h,
            };
            if let Some((m, v, z)) = comp.unit_truncated_moments() {
                mass += w * z;
                first += w * z * m;
                second += w * z * (v + m * m);
            }
        }
        if mass <= 0.0 {
            return None;
        }
        let mean = first / mass;
        let variance = (second / mass - mean * mean).max(0.0);
        Some((mean, variance, mass))
    }
}

/// Convex combination of member densities: the multi-model law
/// `p(y) = Σ_k w_k p_k(y)` with weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedDensity {
    members: Vec<(f64, PredictiveDensity)>,
}

impl CombinedDensity {
    pub fn new(members: Vec<(f64, PredictiveDensity)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Domain(
                "combined density needs at least one member".into(),
            ));
        }
        let mut sum = 0.0;
        for (w, _) in &members {
            if !(w.is_finite() && (0.0..=1.0).contains(w)) {
                return Err(Error::Domain(format!(
                    "combination weight must lie in [0, 1], got {w}"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "combination weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[(f64, PredictiveDensity)] {
        &self.members
    }

    pub fn mean(&self) -> f64 {
        self.members.iter().map(|(w, d)| w * d.mean()).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .members
            .iter()
            .map(|(w, d)| {
                let m = d.mean();
                w * (d.variance() + m * m)
            })
            .sum();
        second - mean * mean
    }
}

/// A density restricted to [0, 1] and renormalized so it integrates to 1.
///
/// `lower_mass` caches the inner CDF at 0 so truncated CDF evaluations
/// cost one inner evaluation instead of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedDensity {
    inner: Box<PredictiveDensity>,
    normalization: f64,
    lower_mass: f64,
}

impl TruncatedDensity {
    pub fn inner(&self) -> &PredictiveDensity {
        &self.inner
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn lower(&self) -> f64 {
        0.0
    }

    pub fn upper(&self) -> f64 {
        1.0
    }
}

/// Tagged union over every density family in the system. The universal
/// currency between member models, the combiner, and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictiveDensity {
    Gaussian(GaussianDensity),
    Beta(BetaDensity),
    Mixture(GaussianMixtureDensity),
    Combined(CombinedDensity),
    Truncated(TruncatedDensity),
}

impl From<GaussianDensity> for PredictiveDensity {
    fn from(d: GaussianDensity) -> Self {
        Self::Gaussian(d)
    }
}

impl From<BetaDensity> for PredictiveDensity {
    fn from(d: BetaDensity) -> Self {
        Self::Beta(d)
    }
}

impl From<GaussianMixtureDensity> for PredictiveDensity {
    fn from(d: GaussianMixtureDensity) -> Self {
        Self::Mixture(d)
    }
}

impl From<CombinedDensity> for PredictiveDensity {
    fn from(d: CombinedDensity) -> Self {
        Self::Combined(d)
    }
}

impl PredictiveDensity {
    /// Density value at `y`.
    pub fn pdf_at(&self, y: f64) -> Result<f64> {
        require_finite(y, "pdf argument")?;
        Ok(self.pdf_unchecked(y))
    }

    fn pdf_unchecked(&self, y: f64) -> f64 {
        match self {
            Self::Gaussian(g) => {
                let sigma = g.std_dev();
                std_normal_pdf((y - g.mean) / sigma) / sigma
            }
            Self::Beta(b) => b.pdf(y),
            Self::Mixture(m) => m.pdf(y),
            Self::Combined(c) => c.members.iter().map(|(w, d)| w * d.pdf_unchecked(y)).sum(),
            Self::Truncated(t) => {
                if (0.0..=1.0).contains(&y) {
                    t.inner.pdf_unchecked(y) / t.normalization
                } else {
                    0.0
                }
            }
        }
    }

    /// Cumulative distribution function at `y`, monotone non-decreasing.
    pub fn cdf_at(&self, y: f64) -> Result<f64> {
        require_finite(y, "cdf argument")?;
        Ok(self.cdf_unchecked(y))
    }

    fn cdf_unchecked(&self, y: f64) -> f64 {
        match self {
            Self::Gaussian(g) => std_normal_cdf((y - g.mean) / g.std_dev()),
            Self::Beta(b) => b.cdf(y),
            Self::Mixture(m) => m.cdf(y),
            Self::Combined(c) => c.members.iter().map(|(w, d)| w * d.cdf_unchecked(y)).sum(),
            Self::Truncated(t) => {
                if y < 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    ((t.inner.cdf_unchecked(y) - t.lower_mass) / t.normalization).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Expectation of the density.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.mean,
            Self::Beta(b) => b.mean(),
            Self::Mixture(m) => m.mean(),
            Self::Combined(c) => c.mean(),
            Self::Truncated(t) => match t.inner.as_ref() {
                Self::Gaussian(g) => g
                    .unit_truncated_moments()
                    .map(|(m, _, _)| m)
                    .unwrap_or(g.mean),
                Self::Beta(b) => b.mean(),
                Self::Mixture(m) => m
                    .unit_truncated_moments()
                    .map(|(mean, _, _)| mean)
                    .unwrap_or_else(|| m.mean()),
                _ => self.grid_moments().0,
            },
        }
    }

    /// Variance of the density (law of total variance for mixtures and
    /// combinations).
    pub fn variance(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.variance,
            Self::Beta(b) => b.variance(),
            Self::Mixture(m) => m.variance(),
            Self::Combined(c) => c.variance(),
            Self::Truncated(t) => match t.inner.as_ref() {
                Self::Gaussian(g) => g
                    .unit_truncated_moments()
                    .map(|(_, v, _)| v)
                    .unwrap_or(g.variance),
                Self::Beta(b) => b.variance(),
                Self::Mixture(m) => m
                    .unit_truncated_moments()
                    .map(|(_, v, _)| v)
                    .unwrap_or_else(|| m.variance()),
                _ => self.grid_moments().1,
            },
        }
    }

    /// Trapezoid-rule moments on [0, 1]; fallback for nested truncations.
    fn grid_moments(&self) -> (f64, f64) {
        let n = CRPS_GRID_POINTS;
        let step = 1.0 / (n - 1) as f64;
        let mut mass = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for i in 0..n {
            let y = i as f64 * step;
            let p = self.pdf_unchecked(y);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            mass += w * p;
            first += w * p * y;
            second += w * p * y * y;
        }
        let mean = first / mass;
        let variance = (second / mass - mean * mean).max(0.0);
        (mean, variance)
    }

    /// A finite interval carrying all but a negligible tail of the mass.
    pub fn support_bounds(&self) -> (f64, f64) {
        match self {
            Self::Gaussian(g) => {
                let spread = 9.0 * g.std_dev();
                (g.mean - spread, g.mean + spread)
            }
            Self::Beta(_) | Self::Truncated(_) => (0.0, 1.0),
            Self::Mixture(m) => {
                let spread = 9.0 * m.bandwidth;
                let lo = m.centers.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = m.centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo - spread, hi + spread)
            }
            Self::Combined(c) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (_, d) in &c.members {
                    let (l, h) = d.support_bounds();
                    lo = lo.min(l);
                    hi = hi.max(h);
                }
                (lo, hi)
            }
        }
    }

    /// Inverse CDF by bisection on the support.
    ///
    /// Terminates when |cdf(q) - p| ≤ [`QUANTILE_TOL`]; fails after 200
    /// iterations without reaching that tolerance.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !p.is_finite() || p <= 0.0 || p >= 1.0 {
            return Err(Error::Domain(format!(
                "quantile probability must lie in (0, 1), got {p}"
            )));
        }
        let (mut lo, mut hi) = self.support_bounds();
        // Widen defensively; the bracket already covers all but ~1e-19 mass.
        let mut widen = hi - lo;
        for _ in 0..64 {
            if self.cdf_unchecked(lo) <= p {
                break;
            }
            lo -= widen;
            widen *= 2.0;
        }
        widen = hi - lo;
        for _ in 0..64 {
            if self.cdf_unchecked(hi) >= p {
                break;
            }
            hi += widen;
            widen *= 2.0;
        }
        for _ in 0..QUANTILE_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf_unchecked(mid);
            if (f - p).abs() <= QUANTILE_TOL {
                return Ok(mid);
            }
            if f < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::Numerical(format!(
            "quantile bisection did not converge for p = {p}"
        )))
    }

    /// Central prediction interval with nominal coverage `1 - 2α`.
    pub fn central_interval(&self, nominal: f64) -> Result<(f64, f64)> {
        if !nominal.is_finite() || nominal <= 0.0 || nominal >= 1.0 {
            return Err(Error::Domain(format!(
                "nominal coverage must lie in (0, 1), got {nominal}"
            )));
        }
        let alpha = 0.5 * (1.0 - nominal);
        Ok((self.quantile(alpha)?, self.quantile(1.0 - alpha)?))
    }

    /// Restrict the density to [0, 1] and renormalize.
    ///
    /// Densities already supported on the unit interval are returned
    /// unchanged; wrapping them again would only add indirection.
    pub fn truncate_renormalize(&self) -> Result<PredictiveDensity> {
        if self.supported_on_unit_interval() {
            return Ok(self.clone());
        }
        let lower_mass = self.cdf_unchecked(0.0);
        let normalization = self.cdf_unchecked(1.0) - lower_mass;
        if normalization <= TRUNCATION_MIN_MASS {
            return Err(Error::Degenerate(format!(
                "density has mass {normalization:.3e} on [0, 1]; cannot renormalize"
            )));
        }
        Ok(PredictiveDensity::Truncated(TruncatedDensity {
            inner: Box::new(self.clone()),
            normalization,
            lower_mass,
        }))
    }

    fn supported_on_unit_interval(&self) -> bool {
        match self {
            Self::Beta(_) | Self::Truncated(_) => true,
            Self::Gaussian(_) | Self::Mixture(_) => false,
            Self::Combined(c) => c
                .members
                .iter()
                .all(|(_, d)| d.supported_on_unit_interval()),
        }
    }

    /// Continuous ranked probability score against a single observation,
    /// `∫ (F(y) - H(y - y_obs))² dy` with `H` the unit step.
    ///
    /// A Gaussian density uses the analytic formula; everything else is
    /// integrated by the trapezoid rule on a uniform grid over the
    /// support (exactly [0, 1] for unit-supported densities), with the
    /// cell containing the observation split at the discontinuity.
    pub fn crps(&self, y_obs: f64) -> Result<f64> {
        self.crps_with_grid(y_obs, CRPS_GRID_POINTS)
    }

    pub fn crps_with_grid(&self, y_obs: f64, grid_points: usize) -> Result<f64> {
        if !y_obs.is_finite() || !(0.0..=1.0).contains(&y_obs) {
            return Err(Error::Domain(format!(
                "observation must lie in [0, 1], got {y_obs}"
            )));
        }
        if let Self::Gaussian(g) = self {
            return Ok(g.crps_closed_form(y_obs));
        }
        let (blo, bhi) = self.support_bounds();
        let lo = blo.min(0.0);
        let hi = bhi.max(1.0);
        let n = grid_points.max(2);
        let step = (hi - lo) / (n - 1) as f64;
        let cdf_vals: Vec<f64> = (0..n)
            .map(|i| self.cdf_unchecked(lo + i as f64 * step))
            .collect();
        Ok(crps_from_cdf_grid(
            &cdf_vals,
            lo,
            step,
            y_obs,
            self.cdf_unchecked(y_obs),
        ))
    }
}

/// Trapezoid integration of `(F - H)²` given CDF values on a uniform
/// grid, splitting the cell containing the observation at the step.
///
/// Shared by [`PredictiveDensity::crps`] and the combiner's cached
/// refinement objective so both compute identical scores.
pub(crate) fn crps_from_cdf_grid(
    cdf_vals: &[f64],
    lo: f64,
    step: f64,
    y_obs: f64,
    cdf_at_obs: f64,
) -> f64 {
    let n = cdf_vals.len();
    let mut total = 0.0;
    for i in 0..n - 1 {
        let y_left = lo + i as f64 * step;
        let y_right = lo + (i + 1) as f64 * step;
        let f_left = cdf_vals[i];
        let f_right = cdf_vals[i + 1];
        if y_obs <= y_left {
            // Step already passed: integrand is (F - 1)².
            let a = f_left - 1.0;
            let b = f_right - 1.0;
            total += 0.5 * (a * a + b * b) * step;
        } else if y_obs >= y_right {
            total += 0.5 * (f_left * f_left + f_right * f_right) * step;
        } else {
            // The observation splits this cell.
            let f_obs = cdf_at_obs;
            total += 0.5 * (f_left * f_left + f_obs * f_obs) * (y_obs - y_left);
            let a = f_obs - 1.0;
            let b = f_right - 1.0;
            total += 0.5 * (a * a + b * b) * (y_right - y_obs);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(mean: f64, variance: f64) -> PredictiveDensity {
        GaussianDensity::new(mean, variance).unwrap().into()
    }

    fn beta(a: f64, b: f64) -> PredictiveDensity {
        BetaDensity::new(a, b).unwrap().into()
    }

    #[test]
    fn pdf_standard_normal_peak() {
        let d = gaussian(0.0, 1.0);
        assert_abs_diff_eq!(d.pdf_at(0.0).unwrap(), 0.39894, epsilon = 1e-5);
    }

    #[test]
    fn pdf_uniform_beta() {
        let d = beta(1.0, 1.0);
        assert_abs_diff_eq!(d.pdf_at(0.3).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pdf_combined_of_identical_members() {
        let d: PredictiveDensity = CombinedDensity::new(vec![
            (0.5, beta(1.0, 1.0)),
            (0.5, beta(1.0, 1.0)),
        ])
        .unwrap()
        .into();
        assert_abs_diff_eq!(d.pdf_at(0.7).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pdf_rejects_non_finite_argument() {
        let d = beta(2.0, 2.0);
        assert!(matches!(d.pdf_at(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_uniform_beta() {
        let d = beta(1.0, 1.0);
        assert_abs_diff_eq!(d.cdf_at(0.25).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn cdf_gaussian_symmetry() {
        let d = gaussian(0.0, 1.0);
        assert_abs_diff_eq!(d.cdf_at(0.0).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cdf_symmetric_beta_median() {
        let d = beta(2.0, 2.0);
        assert_abs_diff_eq!(d.cdf_at(0.5).unwrap(), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn quantile_uniform() {
        let d = beta(1.0, 1.0);
        assert_abs_diff_eq!(d.quantile(0.9).unwrap(), 0.9, epsilon = 1e-7);
    }

    #[test]
    fn quantile_gaussian_median() {
        let d = gaussian(0.5, 0.01);
        assert_abs_diff_eq!(d.quantile(0.5).unwrap(), 0.5, epsilon = 1e-7);
    }

    #[test]
    fn quantile_symmetric_mixture_median() {
        let d: PredictiveDensity = GaussianMixtureDensity::new(
            vec![0.2, 0.8],
            vec![0.5, 0.5],
            0.05,
        )
        .unwrap()
        .into();
        assert_abs_diff_eq!(d.quantile(0.5).unwrap(), 0.5, epsilon = 1e-7);
    }

    #[test]
    fn quantile_rejects_out_of_range_probability() {
        let d = beta(1.0, 1.0);
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
        assert!(d.quantile(-0.2).is_err());
    }

    #[test]
    fn mean_of_combined_is_weighted_average() {
        let d: PredictiveDensity = CombinedDensity::new(vec![
            (0.5, gaussian(0.2, 0.01)),
            (0.5, gaussian(0.4, 0.01)),
        ])
        .unwrap()
        .into();
        assert_abs_diff_eq!(d.mean(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn beta_2_2_moments() {
        let d = beta(2.0, 2.0);
        assert_abs_diff_eq!(d.mean(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.variance(), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn mixture_mean_is_center_average() {
        let d: PredictiveDensity = GaussianMixtureDensity::new(
            vec![0.1, 0.3],
            vec![0.5, 0.5],
            0.02,
        )
        .unwrap()
        .into();
        assert_abs_diff_eq!(d.mean(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn crps_point_mass_limit() {
        let d = gaussian(0.4, 1e-12);
        assert!(d.crps(0.4).unwrap() < 1e-5);
    }

    #[test]
    fn crps_uniform_at_zero() {
        // ∫ (y - 1)² dy over [0, 1] = 1/3.
        let d = beta(1.0, 1.0);
        assert_abs_diff_eq!(d.crps(0.0).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn crps_gaussian_closed_form_value() {
        // σ (2φ(0) - 1/√π) with σ = 0.1.
        let d = gaussian(0.6, 0.01);
        assert_abs_diff_eq!(d.crps(0.6).unwrap(), 0.0233694, epsilon = 1e-6);
    }

    #[test]
    fn central_interval_uniform() {
        let d = beta(1.0, 1.0);
        let (lo, hi) = d.central_interval(0.8).unwrap();
        assert_abs_diff_eq!(lo, 0.1, epsilon = 1e-7);
        assert_abs_diff_eq!(hi, 0.9, epsilon = 1e-7);
    }

    #[test]
    fn central_interval_gaussian_half() {
        // ±0.674σ around the mean at 50% nominal coverage.
        let d = gaussian(0.5, 0.01);
        let (lo, hi) = d.central_interval(0.5).unwrap();
        assert_abs_diff_eq!(lo, 0.4326, epsilon = 5e-4);
        assert_abs_diff_eq!(hi, 0.5674, epsilon = 5e-4);
    }

    #[test]
    fn central_interval_shrinks_to_median() {
        let d = gaussian(0.5, 0.01);
        let (lo, hi) = d.central_interval(1e-6).unwrap();
        assert_abs_diff_eq!(lo, 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(hi, 0.5, epsilon = 1e-4);
    }

    #[test]
    fn truncate_beta_unchanged() {
        let d = beta(2.0, 2.0);
        let t = d.truncate_renormalize().unwrap();
        assert_eq!(d, t);
    }

    #[test]
    fn truncate_concentrated_gaussian_near_unit_mass() {
        let d = gaussian(0.5, 1e-6);
        match d.truncate_renormalize().unwrap() {
            PredictiveDensity::Truncated(t) => {
                assert_abs_diff_eq!(t.normalization(), 1.0, epsilon = 1e-9);
            }
            other => panic!("expected truncated density, got {other:?}"),
        }
    }

    #[test]
    fn truncate_boundary_gaussian_half_mass() {
        let d = gaussian(0.0, 0.04);
        match d.truncate_renormalize().unwrap() {
            PredictiveDensity::Truncated(t) => {
                assert_abs_diff_eq!(t.normalization(), 0.5, epsilon = 1e-6);
            }
            other => panic!("expected truncated density, got {other:?}"),
        }
    }

    #[test]
    fn truncate_rejects_negligible_mass() {
        let d = gaussian(50.0, 1e-4);
        assert!(matches!(
            d.truncate_renormalize(),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn truncated_pdf_integrates_to_one() {
        let d = gaussian(0.1, 0.04).truncate_renormalize().unwrap();
        let n = 20_001;
        let step = 1.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * d.pdf_at(i as f64 * step).unwrap();
        }
        assert_abs_diff_eq!(total * step, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn truncated_gaussian_moments_match_grid() {
        let d = gaussian(0.15, 0.05).truncate_renormalize().unwrap();
        let n = 200_001;
        let step = 1.0 / (n - 1) as f64;
        let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let y = i as f64 * step;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let p = d.pdf_at(y).unwrap();
            mass += w * p;
            first += w * p * y;
            second += w * p * y * y;
        }
        let mean = first / mass;
        let var = second / mass - mean * mean;
        assert_abs_diff_eq!(d.mean(), mean, epsilon = 1e-8);
        assert_abs_diff_eq!(d.variance(), var, epsilon = 1e-8);
    }

    #[test]
    fn serialization_round_trip() {
        let d: PredictiveDensity = CombinedDensity::new(vec![
            (0.25, gaussian(0.2, 0.01).truncate_renormalize().unwrap()),
            (0.75, beta(3.0, 1.5)),
        ])
        .unwrap()
        .into();
        let text = serde_json::to_string(&d).unwrap();
        let back: PredictiveDensity = serde_json::from_str(&text).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn mixture_weight_validation() {
        assert!(GaussianMixtureDensity::new(vec![0.5], vec![0.9], 0.1).is_err());
        assert!(GaussianMixtureDensity::new(vec![0.5, 0.6], vec![0.5], 0.1).is_err());
        assert!(GaussianMixtureDensity::new(vec![], vec![], 0.1).is_err());
        assert!(GaussianMixtureDensity::new(vec![0.5], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn beta_boundary_pdf_limits() {
        assert_eq!(beta(0.5, 2.0).pdf_at(0.0).unwrap(), f64::INFINITY);
        assert_abs_diff_eq!(beta(1.0, 3.0).pdf_at(0.0).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(beta(2.0, 2.0).pdf_at(0.0).unwrap(), 0.0);
        assert_eq!(beta(2.0, 0.5).pdf_at(1.0).unwrap(), f64::INFINITY);
    }
}
