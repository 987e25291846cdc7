//! Sparse Bayesian learning regressor.
//!
//! A kernel regression model `y = Σ_i ω_i K(x, x_i) + ω_0 + ε` with one
//! Gaussian kernel per training sample plus a bias term, zero-mean
//! Gaussian priors `N(0, α_i⁻¹)` on the weights, and Gaussian residual
//! noise. Given precisions `A = diag(α)` and noise variance `σ_ε²`, the
//! weight posterior is Gaussian with
//!
//! ```text
//! Σ = (σ_ε⁻² Φᵀ Φ + A)⁻¹,     μ = σ_ε⁻² Σ Φᵀ y
//! ```
//!
//! The hyperparameters are estimated by evidence maximization with the
//! classical fixed-point updates `α_i ← γ_i / μ_i²`, `γ_i = 1 - α_i Σ_ii`
//! and `σ_ε² ← ‖y - Φμ‖² / (N - Σ_i γ_i)`; bases whose precision
//! diverges are pruned, which is where the sparsity comes from. A new
//! input gets the conditional Gaussian `N(μᵀφ(x), σ_ε² + φ(x)ᵀ Σ φ(x))`.

use ndarray::prelude::*;
use ndarray_linalg::{DeterminantC, FactorizeC, InverseCInto, SolveC, UPLO};
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::density::GaussianDensity;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_6;
/// Noise variance is floored here to keep precisions finite.
const NOISE_FLOOR: f64 = 1e-12;
/// Evidence may decrease by at most this much between accepted iterations.
const EVIDENCE_SLACK: f64 = 1e-8;

/// Gaussian kernel `exp(-‖x1 - x2‖² / (2 width²))`.
pub fn gaussian_kernel(x1: &[f64], x2: &[f64], width: f64) -> f64 {
    assert_eq!(x1.len(), x2.len(), "kernel inputs must share a dimension");
    let sq_dist: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq_dist / (2.0 * width * width)).exp()
}

/// Median of all pairwise Euclidean distances; the default kernel width.
pub fn median_pairwise_distance(features: &[Vec<f64>]) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::Data(
            "median pairwise distance needs at least two points".into(),
        ));
    }
    let mut distances = Vec::with_capacity(features.len() * (features.len() - 1) / 2);
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let sq: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            distances.push(sq.sqrt());
        }
    }
    let mid = distances.len() / 2;
    let (_, median, _) = distances.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median <= 0.0 {
        return Err(Error::Data(
            "median pairwise distance is zero; features are degenerate".into(),
        ));
    }
    Ok(median)
}

/// Fit settings. The kernel width defaults to the median pairwise
/// distance of the training features when unset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SblFitConfig {
    pub kernel_width: Option<f64>,
    pub max_iterations: usize,
    /// Convergence threshold on the largest relative precision change.
    pub tolerance: f64,
    /// Bases with precision above this are pruned.
    pub alpha_max: f64,
}

impl Default for SblFitConfig {
    fn default() -> Self {
        Self {
            kernel_width: None,
            max_iterations: 500,
            tolerance: 1e-6,
            alpha_max: 1e12,
        }
    }
}

/// A fitted sparse Bayesian regressor.
///
/// `posterior_mean`, `posterior_cov`, and `alphas` are aligned: the bias
/// basis first when retained, then one entry per relevance input in
/// training order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SblModel {
    relevance_inputs: Vec<Vec<f64>>,
    posterior_mean: Vec<f64>,
    posterior_cov: Array2<f64>,
    noise_variance: f64,
    kernel_width: f64,
    has_bias: bool,
    alphas: Vec<f64>,
    evidence_trace: Vec<f64>,
    feature_dim: usize,
}

impl SblModel {
    pub fn relevance_inputs(&self) -> &[Vec<f64>] {
        &self.relevance_inputs
    }

    pub fn posterior_mean(&self) -> &[f64] {
        &self.posterior_mean
    }

    pub fn posterior_cov(&self) -> &Array2<f64> {
        &self.posterior_cov
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Evidence (marginal log-likelihood) per accepted iteration.
    pub fn evidence_trace(&self) -> &[f64] {
        &self.evidence_trace
    }

    /// Retained basis count including the bias.
    pub fn basis_count(&self) -> usize {
        self.posterior_mean.len()
    }

    /// Basis response `φ(x)` over the retained bases.
    fn basis_vector(&self, x: &[f64]) -> Array1<f64> {
        let mut phi = Vec::with_capacity(self.basis_count());
        if self.has_bias {
            phi.push(1.0);
        }
        for center in &self.relevance_inputs {
            phi.push(gaussian_kernel(x, center, self.kernel_width));
        }
        Array1::from(phi)
    }

    /// Conditional Gaussian predictive density at a new input.
    pub fn predict(&self, x: &[f64]) -> Result<GaussianDensity> {
        if x.len() != self.feature_dim {
            return Err(Error::Domain(format!(
                "expected {} features, got {}",
                self.feature_dim,
                x.len()
            )));
        }
        let phi = self.basis_vector(x);
        let mut mean = 0.0;
        for (m, p) in self.posterior_mean.iter().zip(phi.iter()) {
            mean += m * p;
        }
        let variance = self.noise_variance + phi.dot(&self.posterior_cov.dot(&phi));
        GaussianDensity::new(mean, variance)
    }
}

/// Weight posterior for fixed hyperparameters: covariance, mean, and the
/// log-determinant of the precision matrix.
pub fn posterior_update(
    phi: &Array2<f64>,
    y: &Array1<f64>,
    alphas: &[f64],
    noise_variance: f64,
) -> Result<(Array2<f64>, Array1<f64>, f64)> {
    let gram = phi.t().dot(phi);
    let projection = phi.t().dot(y);
    posterior_from_gram(&gram, &projection, alphas, noise_variance)
}

fn posterior_from_gram(
    gram: &Array2<f64>,
    projection: &Array1<f64>,
    alphas: &[f64],
    noise_variance: f64,
) -> Result<(Array2<f64>, Array1<f64>, f64)> {
    let m = alphas.len();
    let inv_noise = 1.0 / noise_variance;
    let mut precision = gram * inv_noise;
    for (i, &alpha) in alphas.iter().enumerate() {
        precision[[i, i]] += alpha;
    }
    let factorized = match precision.factorizec(UPLO::Upper) {
        Ok(f) => f,
        Err(_) => {
            // One jitter retry before giving up.
            let trace: f64 = (0..m).map(|i| precision[[i, i]]).sum();
            let jitter = 1e-10 * (trace / m as f64).max(1.0);
            for i in 0..m {
                precision[[i, i]] += jitter;
            }
            precision.factorizec(UPLO::Upper).map_err(|e| {
                Error::Numerical(format!("posterior precision factorization failed: {e}"))
            })?
        }
    };
    let ln_det_precision = factorized.ln_detc();
    let mean = factorized
        .solvec(&(projection * inv_noise))
        .map_err(|e| Error::Numerical(format!("posterior mean solve failed: {e}")))?;
    let covariance = factorized
        .invc_into()
        .map_err(|e| Error::Numerical(format!("posterior covariance inversion failed: {e}")))?;
    Ok((covariance, mean, ln_det_precision))
}

/// Fit by evidence maximization on pre-scaled training samples.
pub fn sbl_fit(samples: &[Sample], config: &SblFitConfig) -> Result<SblModel> {
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "sparse Bayesian fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len();
    let feature_dim = samples[0].features.len();
    let features: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let y = Array1::from_iter(samples.iter().map(|s| s.target));

    let width = match config.kernel_width {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => {
            return Err(Error::Config(format!(
                "kernel width must be positive, got {w}"
            )))
        }
        None => median_pairwise_distance(&features)?,
    };

    // Design matrix: bias column followed by one kernel column per sample.
    let total_bases = n + 1;
    let mut phi = Array2::zeros((n, total_bases));
    for i in 0..n {
        phi[[i, 0]] = 1.0;
        for j in 0..n {
            phi[[i, j + 1]] = gaussian_kernel(&features[i], &features[j], width);
        }
    }
    let gram = phi.t().dot(&phi);
    let projection = phi.t().dot(&y);
    let y_sq = y.dot(&y);

    let y_mean = y.sum() / n as f64;
    let y_var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / (n as f64 - 1.0);

    let mut active: Vec<usize> = (0..total_bases).collect();
    let mut alphas = vec![1.0; total_bases];
    let mut noise_variance = (0.1 * y_var).max(NOISE_FLOOR);

    let mut evidence_trace: Vec<f64> = Vec::new();
    let mut previous: Option<(Vec<usize>, Vec<f64>, f64)> = None;

    let select = |source: &Array2<f64>, idx: &[usize]| -> Array2<f64> {
        source.select(Axis(0), idx).select(Axis(1), idx)
    };

    for _ in 0..config.max_iterations {
        let gram_active = select(&gram, &active);
        let proj_active = Array1::from_iter(active.iter().map(|&j| projection[j]));
        let alpha_active: Vec<f64> = active.iter().map(|&j| alphas[j]).collect();
        let (covariance, mean, ln_det_precision) =
            posterior_from_gram(&gram_active, &proj_active, &alpha_active, noise_variance)?;

        // Marginal log-likelihood of the current hyperparameters.
        let ln_alpha_sum: f64 = alpha_active.iter().map(|a| a.ln()).sum();
        let ln_det_c = n as f64 * noise_variance.ln() - ln_alpha_sum + ln_det_precision;
        let data_fit = (y_sq - proj_active.dot(&mean)) / noise_variance;
        let evidence = -0.5 * (n as f64 * LN_2PI + ln_det_c + data_fit);
        if !evidence.is_finite() {
            return Err(Error::Numerical(
                "marginal likelihood became non-finite".into(),
            ));
        }
        if let Some(last) = evidence_trace.last() {
            if evidence < last - EVIDENCE_SLACK {
                // The previous update decreased the evidence; revert to
                // the last accepted hyperparameters and stop.
                let (prev_active, prev_alphas, prev_noise) =
                    previous.expect("an accepted iteration precedes any revert");
                return finalize(
                    &gram,
                    &projection,
                    &features,
                    prev_active,
                    prev_alphas,
                    prev_noise,
                    width,
                    feature_dim,
                    evidence_trace,
                );
            }
        }
        evidence_trace.push(evidence);
        previous = Some((active.clone(), alpha_active.clone(), noise_variance));

        // Evidence fixed-point updates.
        let gammas: Vec<f64> = alpha_active
            .iter()
            .enumerate()
            .map(|(i, &a)| 1.0 - a * covariance[[i, i]])
            .collect();
        let mut new_alphas = alphas.clone();
        for (&j, (&g, &m)) in active.iter().zip(gammas.iter().zip(mean.iter())) {
            new_alphas[j] = if m == 0.0 { f64::INFINITY } else { g / (m * m) };
        }

        let phi_active = phi.select(Axis(1), &active);
        let residual = &y - &phi_active.dot(&mean);
        let gamma_sum: f64 = gammas.iter().sum();
        let denom = (n as f64 - gamma_sum).max(1e-10);
        let new_noise = (residual.dot(&residual) / denom).max(NOISE_FLOOR);

        // Prune diverged bases and check convergence on the survivors.
        let survivors: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&j| new_alphas[j].is_finite() && new_alphas[j] <= config.alpha_max)
            .collect();
        if survivors.is_empty() {
            return Err(Error::Degenerate(
                "all bases pruned during sparse Bayesian fit".into(),
            ));
        }
        let mut max_rel_change: f64 = 0.0;
        for &j in &survivors {
            let rel = (new_alphas[j] - alphas[j]).abs() / alphas[j];
            max_rel_change = max_rel_change.max(rel);
        }
        let noise_rel_change = (new_noise - noise_variance).abs() / noise_variance;

        alphas = new_alphas;
        noise_variance = new_noise;
        active = survivors;

        if max_rel_change.max(noise_rel_change) <= config.tolerance {
            break;
        }
    }

    let alpha_active: Vec<f64> = active.iter().map(|&j| alphas[j]).collect();
    finalize(
        &gram,
        &projection,
        &features,
        active,
        alpha_active,
        noise_variance,
        width,
        feature_dim,
        evidence_trace,
    )
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    gram: &Array2<f64>,
    projection: &Array1<f64>,
    features: &[Vec<f64>],
    active: Vec<usize>,
    alpha_active: Vec<f64>,
    noise_variance: f64,
    width: f64,
    feature_dim: usize,
    evidence_trace: Vec<f64>,
) -> Result<SblModel> {
    let gram_active = gram.select(Axis(0), &active).select(Axis(1), &active);
    let proj_active = Array1::from_iter(active.iter().map(|&j| projection[j]));
    let (covariance, mean, _) =
        posterior_from_gram(&gram_active, &proj_active, &alpha_active, noise_variance)?;

    let has_bias = active.first() == Some(&0);
    let relevance_inputs: Vec<Vec<f64>> = active
        .iter()
        .filter(|&&j| j > 0)
        .map(|&j| features[j - 1].clone())
        .collect();

    Ok(SblModel {
        relevance_inputs,
        posterior_mean: mean.to_vec(),
        posterior_cov: covariance,
        noise_variance,
        kernel_width: width,
        has_bias,
        alphas: alpha_active,
        evidence_trace,
        feature_dim,
    })
}
