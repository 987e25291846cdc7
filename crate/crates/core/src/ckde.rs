//! Conditional kernel density estimation.
//!
//! A nonparametric member: the predictive density at a new input `x*`
//! is a Gaussian mixture over the training targets,
//!
//! ```text
//! p(y | x*) = Σ_m ω_m(x*) · N(y; y_m, h_Y²)
//! ```
//!
//! where the weights follow feature-space proximity through a product
//! of per-dimension Gaussian kernels with a diagonal bandwidth matrix,
//! normalized over the training set. All bandwidths come from
//! Silverman's rule of thumb, applied per dimension.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::density::GaussianMixtureDensity;
use crate::error::{Error, Result};

/// Mixture components below this weight are dropped (and the rest
/// renormalized) when building a predictive density; the distortion is
/// orders of magnitude below every scoring tolerance, while evaluation
/// cost drops from thousands of components to the relevant few.
const WEIGHT_PRUNE_EPS: f64 = 1e-12;

/// Silverman's rule of thumb: `1.06 · σ̂ · n^(-1/5)` with the sample
/// standard deviation `σ̂`.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "bandwidth selection needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std_dev = variance.sqrt();
    if !(std_dev.is_finite() && std_dev > 0.0) {
        return Err(Error::Data(
            "bandwidth undefined for a constant column".into(),
        ));
    }
    Ok(1.06 * std_dev * n.powf(-0.2))
}

/// A fitted conditional KDE: the training data plus one bandwidth per
/// feature dimension and one for the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkdeModel {
    training_features: Vec<Vec<f64>>,
    training_targets: Vec<f64>,
    feature_bandwidths: Vec<f64>,
    target_bandwidth: f64,
}

/// Fit on pre-scaled samples: stores the data and selects bandwidths.
pub fn ckde_fit(samples: &[Sample]) -> Result<CkdeModel> {
    let Some(first) = samples.first() else {
        return Err(Error::Data("conditional KDE needs training data".into()));
    };
    let dim = first.features.len();
    let mut feature_bandwidths = Vec::with_capacity(dim);
    for d in 0..dim {
        let column: Vec<f64> = samples.iter().map(|s| s.features[d]).collect();
        let bandwidth =
            silverman_bandwidth(&column).map_err(|e| Error::Data(format!("feature {d}: {e}")))?;
        feature_bandwidths.push(bandwidth);
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let target_bandwidth =
        silverman_bandwidth(&targets).map_err(|e| Error::Data(format!("target column: {e}")))?;
    Ok(CkdeModel {
        training_features: samples.iter().map(|s| s.features.clone()).collect(),
        training_targets: targets,
        feature_bandwidths,
        target_bandwidth,
    })
}

impl CkdeModel {
    pub fn len(&self) -> usize {
        self.training_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training_targets.is_empty()
    }

    pub fn feature_bandwidths(&self) -> &[f64] {
        &self.feature_bandwidths
    }

    pub fn target_bandwidth(&self) -> f64 {
        self.target_bandwidth
    }

    /// Rebuild a model from persisted bandwidths and the training
    /// partition they were fitted on.
    pub fn from_parts(
        samples: &[Sample],
        feature_bandwidths: Vec<f64>,
        target_bandwidth: f64,
    ) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Data("conditional KDE needs training data".into()));
        };
        if feature_bandwidths.len() != first.features.len() {
            return Err(Error::Data(format!(
                "bandwidth count {} does not match feature dimension {}",
                feature_bandwidths.len(),
                first.features.len()
            )));
        }
        if feature_bandwidths.iter().any(|&h| !(h > 0.0)) || !(target_bandwidth > 0.0) {
            return Err(Error::Data("bandwidths must be positive".into()));
        }
        Ok(Self {
            training_features: samples.iter().map(|s| s.features.clone()).collect(),
            training_targets: samples.iter().map(|s| s.target).collect(),
            feature_bandwidths,
            target_bandwidth,
        })
    }

    /// Normalized kernel weights of every training point at a query.
    ///
    /// Computed in log space and shifted by the maximum before
    /// exponentiation; when every other kernel underflows, the nearest
    /// training point in the scaled metric keeps weight 1.
    pub fn kernel_weights(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.feature_bandwidths.len() {
            return Err(Error::Domain(format!(
                "expected {} features, got {}",
                self.feature_bandwidths.len(),
                query.len()
            )));
        }
        let mut log_kernels = Vec::with_capacity(self.training_features.len());
        let mut best = f64::NEG_INFINITY;
        let mut best_index = 0;
        for (m, features) in self.training_features.iter().enumerate() {
            let mut exponent = 0.0;
            for ((&x, &c), &h) in query.iter().zip(features).zip(&self.feature_bandwidths) {
                let z = (x - c) / h;
                exponent -= 0.5 * z * z;
            }
            if exponent > best {
                best = exponent;
                best_index = m;
            }
            log_kernels.push(exponent);
        }
        if !best.is_finite() {
            // Every kernel value underflowed outright; fall back to the
            // nearest neighbor in the scaled metric.
            let mut weights = vec![0.0; self.training_features.len()];
            weights[self.nearest_in_scaled_metric(query)] = 1.0;
            return Ok(weights);
        }
        let mut weights: Vec<f64> = log_kernels.iter().map(|&lk| (lk - best).exp()).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            let mut fallback = vec![0.0; weights.len()];
            fallback[best_index] = 1.0;
            return Ok(fallback);
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(weights)
    }

    fn nearest_in_scaled_metric(&self, query: &[f64]) -> usize {
        let mut best = f64::INFINITY;
        let mut best_index = 0;
        for (m, features) in self.training_features.iter().enumerate() {
            let mut dist = 0.0;
            for ((&x, &c), &h) in query.iter().zip(features).zip(&self.feature_bandwidths) {
                let z = (x - c) / h;
                dist += z * z;
            }
            if dist < best {
                best = dist;
                best_index = m;
            }
        }
        best_index
    }

    /// Predictive density at a query: a Gaussian mixture over the
    /// training targets with proximity weights and bandwidth `h_Y`.
    pub fn predict(&self, query: &[f64]) -> Result<GaussianMixtureDensity> {
        let weights = self.kernel_weights(query)?;
        let mut kept_centers = Vec::new();
        let mut kept_weights = Vec::new();
        for (&w, &c) in weights.iter().zip(&self.training_targets) {
            if w >= WEIGHT_PRUNE_EPS {
                kept_weights.push(w);
                kept_centers.push(c);
            }
        }
        let total: f64 = kept_weights.iter().sum();
        for w in &mut kept_weights {
            *w /= total;
        }
        GaussianMixtureDensity::new(kept_centers, kept_weights, self.target_bandwidth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;

    fn sample(features: Vec<f64>, target: f64) -> Sample {
        Sample {
            features,
            target,
            issue_time: NaiveDate::from_ymd_opt(2012, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
            horizon: 1,
        }
    }

    #[test]
    fn silverman_reference_value() {
        // σ̂ = 1, n = 100 → 1.06 · 100^(-0.2) = 0.42199…
        let raw: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let unit: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
        let h = silverman_bandwidth(&unit).unwrap();
        assert_abs_diff_eq!(h, 0.4219936, epsilon = 1e-6);
    }

    #[test]
    fn silverman_linear_in_spread() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let halved: Vec<f64> = values.iter().map(|v| v * 0.5).collect();
        let h1 = silverman_bandwidth(&values).unwrap();
        let h2 = silverman_bandwidth(&halved).unwrap();
        assert_abs_diff_eq!(h2, 0.5 * h1, epsilon = 1e-12);
    }

    #[test]
    fn silverman_rejects_single_value() {
        assert!(silverman_bandwidth(&[0.4]).is_err());
    }

    #[test]
    fn fit_produces_positive_bandwidths() {
        let samples: Vec<Sample> = (0..100)
            .map(|i| {
                let t = i as f64 / 100.0;
                sample(
                    (0..7).map(|d| (t * (d + 1) as f64).sin()).collect(),
                    0.5 + 0.3 * (t * 5.0).cos(),
                )
            })
            .collect();
        let model = ckde_fit(&samples).unwrap();
        assert_eq!(model.feature_bandwidths().len(), 7);
        assert!(model.feature_bandwidths().iter().all(|&h| h > 0.0));
        assert!(model.target_bandwidth() > 0.0);
    }

    #[test]
    fn fit_rejects_constant_feature_naming_dimension() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| sample(vec![i as f64, 3.0], 0.1 + 0.01 * i as f64))
            .collect();
        match ckde_fit(&samples) {
            Err(Error::Data(message)) => assert!(message.contains("feature 1")),
            other => panic!("expected constant-column error, got {other:?}"),
        }
    }

    #[test]
    fn fit_is_order_free() {
        let samples: Vec<Sample> = (0..50)
            .map(|i| {
                let t = i as f64;
                sample(vec![t.sin(), t.cos()], 0.5 + 0.2 * (t * 0.3).sin())
            })
            .collect();
        let mut reversed = samples.clone();
        reversed.reverse();
        let a = ckde_fit(&samples).unwrap();
        let b = ckde_fit(&reversed).unwrap();
        for (ha, hb) in a.feature_bandwidths().iter().zip(b.feature_bandwidths()) {
            assert_abs_diff_eq!(ha, hb, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(
            a.target_bandwidth(),
            b.target_bandwidth(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn weights_split_evenly_between_equidistant_points() {
        let samples = vec![sample(vec![-1.0, 0.5], 0.2), sample(vec![1.0, 0.5], 0.8)];
        let model = CkdeModel::from_parts(&samples, vec![1.0, 1.0], 0.05).unwrap();
        let weights = model.kernel_weights(&[0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(weights[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn weight_concentrates_on_matching_point() {
        let samples = vec![
            sample(vec![0.0], 0.3),
            sample(vec![50.0], 0.7),
            sample(vec![80.0], 0.9),
        ];
        let model = CkdeModel::from_parts(&samples, vec![1.0], 0.05).unwrap();
        let weights = model.kernel_weights(&[0.0]).unwrap();
        assert!(weights[0] > 1.0 - 1e-6);
    }

    #[test]
    fn single_training_point_gets_unit_weight() {
        let samples = vec![sample(vec![0.3], 0.4)];
        let model = CkdeModel::from_parts(&samples, vec![0.5], 0.05).unwrap();
        assert_eq!(model.kernel_weights(&[10.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn far_query_falls_back_to_nearest_neighbor() {
        let samples = vec![sample(vec![0.0], 0.3), sample(vec![5.0], 0.8)];
        let model = CkdeModel::from_parts(&samples, vec![0.01], 0.05).unwrap();
        // Raw kernels underflow at this distance in the scaled metric;
        // all weight should land on the nearer point.
        let weights = model.kernel_weights(&[1e4]).unwrap();
        assert_eq!(weights, vec![0.0, 1.0]);
    }

    #[test]
    fn predict_single_pair_is_single_kernel() {
        let samples = vec![sample(vec![0.3], 0.4)];
        let model = CkdeModel::from_parts(&samples, vec![0.5], 0.07).unwrap();
        let mixture = model.predict(&[0.3]).unwrap();
        assert_eq!(mixture.centers(), &[0.4]);
        assert_eq!(mixture.weights(), &[1.0]);
        assert_abs_diff_eq!(mixture.bandwidth(), 0.07, epsilon = 1e-15);
    }

    #[test]
    fn predict_symmetric_pair_has_mid_mean() {
        let samples = vec![sample(vec![-1.0], 0.2), sample(vec![1.0], 0.8)];
        let model = CkdeModel::from_parts(&samples, vec![1.0], 0.05).unwrap();
        let mixture = model.predict(&[0.0]).unwrap();
        assert_abs_diff_eq!(mixture.mean(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn predicted_mixture_truncates_to_unit_mass() {
        let samples = vec![
            sample(vec![-0.5], 0.02),
            sample(vec![0.0], 0.5),
            sample(vec![0.5], 0.98),
        ];
        let model = CkdeModel::from_parts(&samples, vec![1.0], 0.08).unwrap();
        let density: crate::density::PredictiveDensity = model.predict(&[0.1]).unwrap().into();
        let truncated = density.truncate_renormalize().unwrap();
        let n = 40_001;
        let step = 1.0 / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * truncated.pdf_at(i as f64 * step).unwrap();
        }
        assert_abs_diff_eq!(total * step, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn locality_weight_increases_toward_training_point() {
        // Five points on a line; walking the query toward point 3 must
        // strictly increase its weight.
        let samples: Vec<Sample> = (0..5).map(|i| sample(vec![i as f64], 0.2)).collect();
        let model = CkdeModel::from_parts(&samples, vec![1.0], 0.05).unwrap();
        let mut last = 0.0;
        for step in 0..=10 {
            let q = step as f64 * 0.3; // 0.0 → 3.0
            let w = model.kernel_weights(&[q]).unwrap()[3];
            if step > 0 {
                assert!(w > last, "weight not increasing at step {step}");
            }
            last = w;
        }
    }
}
