//! Multi-model combination: weight estimation and the combined forecaster.
//!
//! Extends Bayesian model averaging to members with different density
//! families. The combined predictive density is the weighted average
//! `p(y | F_1..F_K) = Σ_k w_k p_k(y | F_k)` with the weights on the
//! simplex. Weights and the Beta member's variance σ² are estimated on
//! a held-out partition by maximizing the log-likelihood
//! `Σ_n log Σ_k w_k p_k(y_n | F_k)` with expectation maximization:
//! the E-step computes responsibilities, the M-step averages them into
//! weights and pools responsibility-weighted squared residuals into σ².
//!
//! Because EM can stop in a local optimum of the likelihood rather than
//! of distribution quality, the parameters are then optionally refined
//! by minimizing the mean training CRPS with a seeded particle swarm
//! searching a box around the EM solution; the EM point seeds one
//! particle, so refinement never returns anything worse.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bde::{beta_shape_from_moments, BdeModel, SpotForecaster};
use crate::ckde::CkdeModel;
use crate::data::Sample;
use crate::density::{
    crps_from_cdf_grid, BetaDensity, CombinedDensity, PredictiveDensity, CRPS_GRID_POINTS,
};
use crate::error::{Error, Result};
use crate::sbl::SblModel;
use crate::DensityForecaster;

/// Member densities at an observed target are floored here so the
/// log-likelihood stays finite.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// ... and capped here: a Beta shape below 1 has infinite density at an
/// observed 0 or 1, which would break the likelihood the other way.
pub const DENSITY_CEIL: f64 = 1e300;
/// Smallest admissible Beta member variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Log-likelihood may drop by at most this much per accepted iteration.
pub const LIKELIHOOD_SLACK: f64 = 1e-9;

/// The ordered member models of a combination: sparse Bayesian
/// regressor, conditional KDE, and the Beta member's spot forecaster
/// (its variance lives on the combined model).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Members {
    pub sbl: SblModel,
    pub ckde: CkdeModel,
    pub spot: SpotForecaster,
}

pub const MEMBER_COUNT: usize = 3;
pub const MEMBER_NAMES: [&str; MEMBER_COUNT] = ["sbl", "ckde", "bde"];

impl Members {
    /// Truncated predictive density of member `index` at a feature
    /// vector; the Beta member takes the current σ².
    pub fn member_density(
        &self,
        index: usize,
        features: &[f64],
        bde_variance: f64,
    ) -> Result<PredictiveDensity> {
        match index {
            0 => PredictiveDensity::from(self.sbl.predict(features)?).truncate_renormalize(),
            1 => PredictiveDensity::from(self.ckde.predict(features)?).truncate_renormalize(),
            2 => {
                let mu = self.spot.predict(features)?;
                let (alpha, beta) = beta_shape_from_moments(mu, bde_variance);
                Ok(BetaDensity::new(alpha, beta)?.into())
            }
            _ => Err(Error::Domain(format!("no member with index {index}"))),
        }
    }

    /// Floored density value of a member at an observed target.
    pub fn member_density_at(
        &self,
        index: usize,
        sample: &Sample,
        bde_variance: f64,
    ) -> Result<f64> {
        let density = self.member_density(index, &sample.features, bde_variance)?;
        Ok(density_value_at_target(&density, sample.target))
    }
}

/// Evaluate a (truncated) member density at an observed target, clamped
/// into `[DENSITY_FLOOR, DENSITY_CEIL]` so likelihood sums stay finite.
///
/// The target itself is nudged off the exact boundary first: Beta
/// members with a shape below 1 are singular at 0 and 1.
pub fn density_value_at_target(density: &PredictiveDensity, target: f64) -> f64 {
    let y = target.clamp(1e-12, 1.0 - 1e-12);
    let value = density.pdf_at(y).unwrap_or(0.0);
    if value.is_nan() {
        DENSITY_FLOOR
    } else {
        value.clamp(DENSITY_FLOOR, DENSITY_CEIL)
    }
}

/// Which residuals feed the σ² update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceUpdate {
    /// Pool responsibility-weighted residuals of every member and
    /// divide by N (the update as printed in the estimation scheme).
    AllMembers,
    /// Restrict to the Beta member's responsibilities.
    BdeOnly,
}

/// EM settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub variance_update: VarianceUpdate,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
            variance_update: VarianceUpdate::AllMembers,
        }
    }
}

/// Per-sample evaluations of one member, the only thing EM needs.
///
/// Members whose density does not depend on σ² are fixed up front; the
/// Beta member re-evaluates from its spot expectations as σ² moves.
#[derive(Debug, Clone)]
pub enum MemberEval {
    Fixed { pdf: Vec<f64>, mean: Vec<f64> },
    BetaSpot { mu: Vec<f64> },
}

impl MemberEval {
    fn len(&self) -> usize {
        match self {
            Self::Fixed { pdf, .. } => pdf.len(),
            Self::BetaSpot { mu } => mu.len(),
        }
    }

    fn pdf_at(&self, n: usize, target: f64, variance: f64) -> f64 {
        match self {
            Self::Fixed { pdf, .. } => pdf[n],
            Self::BetaSpot { mu } => {
                let (alpha, beta) = beta_shape_from_moments(mu[n], variance);
                match BetaDensity::new(alpha, beta) {
                    Ok(d) => density_value_at_target(&PredictiveDensity::from(d), target),
                    Err(_) => DENSITY_FLOOR,
                }
            }
        }
    }

    fn mean_at(&self, n: usize) -> f64 {
        match self {
            // Moment matching pins the Beta mean at the spot expectation
            // regardless of σ².
            Self::Fixed { mean, .. } => mean[n],
            Self::BetaSpot { mu } => mu[n],
        }
    }
}

/// Row-stochastic E-step responsibilities: `z[n][k]` is the posterior
/// probability that member `k` generated observation `n`.
#[derive(Debug, Clone)]
pub struct ResponsibilityMatrix {
    values: Vec<f64>,
    members: usize,
}

impl ResponsibilityMatrix {
    /// Compute from weights and the member density values `pdf[k][n]`.
    pub fn compute(weights: &[f64], member_pdfs: &[Vec<f64>]) -> Self {
        let k = weights.len();
        let n = member_pdfs.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * k);
        for row in 0..n {
            let denom: f64 = weights
                .iter()
                .zip(member_pdfs)
                .map(|(w, pdf)| w * pdf[row])
                .sum();
            for (w, pdf) in weights.iter().zip(member_pdfs) {
                values.push(w * pdf[row] / denom);
            }
        }
        Self { values, members: k }
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.members..(n + 1) * self.members]
    }

    pub fn rows(&self) -> usize {
        if self.members == 0 {
            0
        } else {
            self.values.len() / self.members
        }
    }

    pub fn members(&self) -> usize {
        self.members
    }
}

/// EM result: weights on the simplex, the Beta variance, and the
/// accepted log-likelihood trace (initial value first).
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub weights: Vec<f64>,
    pub bde_variance: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn log_likelihood(weights: &[f64], member_pdfs: &[Vec<f64>], n: usize) -> f64 {
    let mut total = 0.0;
    for row in 0..n {
        let mixture: f64 = weights
            .iter()
            .zip(member_pdfs)
            .map(|(w, pdf)| w * pdf[row])
            .sum();
        total += mixture.ln();
    }
    total
}

/// Maximum-likelihood estimation of the combination weights and the
/// Beta variance by EM.
///
/// Alternates the responsibility E-step with the weight average and
/// pooled-residual σ² update. An iteration is accepted only when the
/// log-likelihood does not decrease (beyond [`LIKELIHOOD_SLACK`]); a σ²
/// candidate that would lower it is dropped while the weight update,
/// which cannot lower it, is kept. Stops when no parameter moves more
/// than `tolerance` or after `max_iterations`.
pub fn em_fit(
    members: &[MemberEval],
    targets: &[f64],
    init_weights: &[f64],
    init_variance: f64,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    let k = members.len();
    let n = targets.len();
    if k < 2 {
        return Err(Error::Data(format!(
            "combination needs at least 2 members, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::Data("cannot estimate weights on no samples".into()));
    }
    if init_weights.len() != k {
        return Err(Error::Data(format!(
            "{k} members but {} initial weights",
            init_weights.len()
        )));
    }
    for member in members {
        if member.len() != n {
            return Err(Error::Data(
                "member evaluations and targets differ in length".into(),
            ));
        }
    }
    let weight_sum: f64 = init_weights.iter().sum();
    if init_weights.iter().any(|w| *w < 0.0) || (weight_sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!(
            "initial weights must lie on the simplex, sum {weight_sum}"
        )));
    }
    let mut weights: Vec<f64> = init_weights.iter().map(|w| w / weight_sum).collect();
    let mut variance = init_variance.max(VARIANCE_FLOOR);

    let evaluate = |variance: f64| -> Vec<Vec<f64>> {
        members
            .iter()
            .map(|m| (0..n).map(|row| m.pdf_at(row, targets[row], variance)).collect())
            .collect()
    };

    let mut pdfs = evaluate(variance);
    let mut likelihood = log_likelihood(&weights, &pdfs, n);
    if !likelihood.is_finite() {
        return Err(Error::Numerical(
            "log-likelihood is not finite at the initial parameters".into(),
        ));
    }
    let mut trace = vec![likelihood];
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let responsibilities = ResponsibilityMatrix::compute(&weights, &pdfs);

        let mut weight_sums = vec![0.0; k];
        let mut pooled_residuals = vec![0.0; k];
        for row in 0..n {
            let z = responsibilities.row(row);
            for (j, &zj) in z.iter().enumerate() {
                weight_sums[j] += zj;
                let err = targets[row] - members[j].mean_at(row);
                pooled_residuals[j] += zj * err * err;
            }
        }
        let new_weights: Vec<f64> = weight_sums.iter().map(|s| s / n as f64).collect();

        let beta_members: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m, MemberEval::BetaSpot { .. }))
            .map(|(j, _)| j)
            .collect();
        let candidate_variance = match cfg.variance_update {
            VarianceUpdate::AllMembers => {
                (pooled_residuals.iter().sum::<f64>() / n as f64).max(VARIANCE_FLOOR)
            }
            VarianceUpdate::BdeOnly => {
                let resp: f64 = beta_members.iter().map(|&j| weight_sums[j]).sum();
                if resp > 0.0 {
                    let resid: f64 = beta_members.iter().map(|&j| pooled_residuals[j]).sum();
                    (resid / resp).max(VARIANCE_FLOOR)
                } else {
                    variance
                }
            }
        };

        // Accept the σ² candidate only if it does not hurt the
        // likelihood; the weight update alone is a guaranteed ascent.
        let variance_moved = (candidate_variance - variance).abs() > 0.0 && !beta_members.is_empty();
        let (new_pdfs, new_likelihood, new_variance) = if variance_moved {
            let candidate_pdfs = evaluate(candidate_variance);
            let candidate_ll = log_likelihood(&new_weights, &candidate_pdfs, n);
            if candidate_ll.is_finite() && candidate_ll >= likelihood - LIKELIHOOD_SLACK {
                (candidate_pdfs, candidate_ll, candidate_variance)
            } else {
                let fallback_ll = log_likelihood(&new_weights, &pdfs, n);
                (pdfs.clone(), fallback_ll, variance)
            }
        } else {
            let ll = log_likelihood(&new_weights, &pdfs, n);
            (pdfs.clone(), ll, variance)
        };
        if !new_likelihood.is_finite() {
            return Err(Error::Numerical("log-likelihood became non-finite".into()));
        }
        if new_likelihood < likelihood - LIKELIHOOD_SLACK {
            // No admissible update improves the likelihood; stop at the
            // current parameters.
            iterations -= 1;
            break;
        }

        let mut change: f64 = (new_variance - variance).abs();
        for (w_new, w_old) in new_weights.iter().zip(&weights) {
            change = change.max((w_new - w_old).abs());
        }

        weights = new_weights;
        variance = new_variance;
        pdfs = new_pdfs;
        likelihood = new_likelihood;
        trace.push(likelihood);

        if change <= cfg.tolerance {
            break;
        }
    }

    Ok(EmOutcome {
        weights,
        bde_variance: variance,
        trace,
        iterations,
    })
}

/// Particle swarm settings for the CRPS refinement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Half-width of the search box around each EM weight coordinate.
    pub weight_radius: f64,
    /// Multiplicative half-range around the EM σ².
    pub variance_scale: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            iterations: 100,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            weight_radius: 0.2,
            variance_scale: 0.5,
            seed: 42,
        }
    }
}

/// Minimize a function over a box with a standard constriction-style
/// particle swarm. One particle starts at `seed_point`, so the returned
/// value never exceeds the seed's objective. Deterministic for a fixed
/// seed. A zero swarm or iteration budget returns the seed unchanged.
pub fn pso_minimize<F: Fn(&[f64]) -> f64>(
    objective: F,
    bounds: &[(f64, f64)],
    seed_point: &[f64],
    cfg: &PsoConfig,
) -> (Vec<f64>, f64) {
    use rand::Rng;
    use rand::SeedableRng;

    let dim = bounds.len();
    assert_eq!(seed_point.len(), dim, "seed point must match the bounds");
    let clamp_to_box = |point: &mut [f64]| {
        for (x, &(lo, hi)) in point.iter_mut().zip(bounds) {
            *x = x.clamp(lo, hi);
        }
    };
    let mut seed = seed_point.to_vec();
    clamp_to_box(&mut seed);
    let seed_value = objective(&seed);
    if cfg.swarm_size == 0 || cfg.iterations == 0 {
        return (seed, seed_value);
    }

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut sample_in = |lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha12Rng| -> f64 {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };

    let mut positions = Vec::with_capacity(cfg.swarm_size);
    positions.push(seed.clone());
    for _ in 1..cfg.swarm_size {
        let point: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| sample_in(lo, hi, &mut rng))
            .collect();
        positions.push(point);
    }
    let mut velocities = vec![vec![0.0; dim]; cfg.swarm_size];
    let mut best_positions = positions.clone();
    let mut best_values: Vec<f64> = positions.iter().map(|p| objective(p)).collect();

    let mut global_best = 0;
    for i in 1..cfg.swarm_size {
        if best_values[i] < best_values[global_best] {
            global_best = i;
        }
    }
    let mut global_best_position = best_positions[global_best].clone();
    let mut global_best_value = best_values[global_best];

    for _ in 0..cfg.iterations {
        for p in 0..cfg.swarm_size {
            for d in 0..dim {
                let (lo, hi) = bounds[d];
                let span = (hi - lo).max(0.0);
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let mut v = cfg.inertia * velocities[p][d]
                    + cfg.cognitive * r1 * (best_positions[p][d] - positions[p][d])
                    + cfg.social * r2 * (global_best_position[d] - positions[p][d]);
                v = v.clamp(-span, span);
                velocities[p][d] = v;
                positions[p][d] = (positions[p][d] + v).clamp(lo, hi);
            }
            let value = objective(&positions[p]);
            if value < best_values[p] {
                best_values[p] = value;
                best_positions[p] = positions[p].clone();
                if value < global_best_value {
                    global_best_value = value;
                    global_best_position = positions[p].clone();
                }
            }
        }
    }
    (global_best_position, global_best_value)
}

/// Map unconstrained swarm coordinates onto the feasible region:
/// clamped non-negative weight parts normalized to the simplex, and a
/// floored variance.
pub fn feasible_point(raw: &[f64]) -> (Vec<f64>, f64) {
    let k = raw.len() - 1;
    let mut weights: Vec<f64> = raw[..k].iter().map(|w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    } else {
        weights = vec![1.0 / k as f64; k];
    }
    (weights, raw[k].max(VARIANCE_FLOOR))
}

/// Per-member inputs to the refinement objective, in member order.
pub enum RefineMember {
    /// σ²-independent member: its truncated densities per sample.
    Fixed(Vec<PredictiveDensity>),
    /// Beta member: spot expectations per sample.
    BetaSpot(Vec<f64>),
}

enum CachedMember {
    /// CDF values per sample on the grid, plus the CDF at the target.
    Grid {
        cdf: Vec<Vec<f64>>,
        cdf_at_obs: Vec<f64>,
    },
    BetaSpot {
        mu: Vec<f64>,
    },
}

/// Mean training CRPS of the combined density as a function of
/// (weights, σ²), with the σ²-independent member CDFs precomputed on
/// the integration grid.
///
/// By mixture linearity the combined CDF is the weighted sum of member
/// CDFs, so the cached evaluation reproduces
/// [`PredictiveDensity::crps`] of the combined density exactly.
pub struct RefineObjective {
    members: Vec<CachedMember>,
    targets: Vec<f64>,
    grid: Vec<f64>,
    grid_step: f64,
}

impl RefineObjective {
    pub fn new(
        members: Vec<RefineMember>,
        targets: &[f64],
        grid_points: usize,
    ) -> Result<Self> {
        let n_points = grid_points.max(2);
        let step = 1.0 / (n_points - 1) as f64;
        let grid: Vec<f64> = (0..n_points).map(|i| i as f64 * step).collect();
        let cached = members
            .into_iter()
            .map(|member| -> Result<CachedMember> {
                match member {
                    RefineMember::BetaSpot(mu) => {
                        if mu.len() != targets.len() {
                            return Err(Error::Data(
                                "spot expectations and targets differ in length".into(),
                            ));
                        }
                        Ok(CachedMember::BetaSpot { mu })
                    }
                    RefineMember::Fixed(densities) => {
                        if densities.len() != targets.len() {
                            return Err(Error::Data(
                                "member densities and targets differ in length".into(),
                            ));
                        }
                        let rows: Vec<(Vec<f64>, f64)> = densities
                            .par_iter()
                            .zip(targets.par_iter())
                            .map(|(density, &target)| {
                                let row: Vec<f64> = grid
                                    .iter()
                                    .map(|&y| density.cdf_at(y).unwrap_or(f64::NAN))
                                    .collect();
                                let at_obs = density.cdf_at(target).unwrap_or(f64::NAN);
                                (row, at_obs)
                            })
                            .collect();
                        let mut cdf = Vec::with_capacity(rows.len());
                        let mut cdf_at_obs = Vec::with_capacity(rows.len());
                        for (row, at_obs) in rows {
                            if at_obs.is_nan() || row.iter().any(|v| v.is_nan()) {
                                return Err(Error::Numerical(
                                    "member CDF evaluation failed on the grid".into(),
                                ));
                            }
                            cdf.push(row);
                            cdf_at_obs.push(at_obs);
                        }
                        Ok(CachedMember::Grid { cdf, cdf_at_obs })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members: cached,
            targets: targets.to_vec(),
            grid,
            grid_step: step,
        })
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn sample_count(&self) -> usize {
        self.targets.len()
    }

    /// Mean CRPS over the training partition at the given parameters.
    pub fn mean_crps(&self, weights: &[f64], variance: f64) -> f64 {
        assert_eq!(weights.len(), self.members.len());
        let n = self.targets.len();
        let scores: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|row| self.sample_crps(row, weights, variance))
            .collect();
        scores.iter().sum::<f64>() / n as f64
    }

    fn sample_crps(&self, row: usize, weights: &[f64], variance: f64) -> f64 {
        let target = self.targets[row];
        let beta_densities: Vec<Option<BetaDensity>> = self
            .members
            .iter()
            .map(|member| match member {
                CachedMember::BetaSpot { mu } => {
                    let (alpha, beta) = beta_shape_from_moments(mu[row], variance);
                    BetaDensity::new(alpha, beta).ok()
                }
                CachedMember::Grid { .. } => None,
            })
            .collect();

        let combined_cdf = |grid_index: Option<usize>, y: f64| -> f64 {
            let mut acc = 0.0;
            for (k, member) in self.members.iter().enumerate() {
                let f = match member {
                    CachedMember::Grid { cdf, cdf_at_obs } => match grid_index {
                        Some(g) => cdf[row][g],
                        None => cdf_at_obs[row],
                    },
                    CachedMember::BetaSpot { .. } => beta_densities[k]
                        .as_ref()
                        .map(|d| PredictiveDensity::from(d.clone()).cdf_at(y).unwrap_or(1.0))
                        .unwrap_or(1.0),
                };
                acc += weights[k] * f;
            }
            acc
        };

        let cdf_vals: Vec<f64> = self
            .grid
            .iter()
            .enumerate()
            .map(|(g, &y)| combined_cdf(Some(g), y))
            .collect();
        let cdf_at_obs = combined_cdf(None, target);
        crps_from_cdf_grid(&cdf_vals, 0.0, self.grid_step, target, cdf_at_obs)
    }
}

/// Refinement result.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub weights: Vec<f64>,
    pub bde_variance: f64,
    /// Mean training CRPS at the returned parameters.
    pub objective: f64,
    /// Mean training CRPS at the EM seed.
    pub em_objective: f64,
}

/// Minimize mean training CRPS over (weights, σ²) in a box around the
/// EM solution. Every evaluation is mapped to the simplex first; the EM
/// point seeds the swarm, so the returned objective never exceeds it.
pub fn crps_refine(
    objective: &RefineObjective,
    em_weights: &[f64],
    em_variance: f64,
    cfg: &PsoConfig,
) -> RefineOutcome {
    let k = objective.member_count();
    assert_eq!(em_weights.len(), k, "EM weights must match member count");
    let em_objective = objective.mean_crps(em_weights, em_variance);
    if cfg.swarm_size == 0 || cfg.iterations == 0 {
        return RefineOutcome {
            weights: em_weights.to_vec(),
            bde_variance: em_variance,
            objective: em_objective,
            em_objective,
        };
    }

    let mut bounds: Vec<(f64, f64)> = em_weights
        .iter()
        .map(|&w| {
            (
                (w - cfg.weight_radius).max(0.0),
                (w + cfg.weight_radius).min(1.0),
            )
        })
        .collect();
    bounds.push((
        (em_variance * (1.0 - cfg.variance_scale)).max(VARIANCE_FLOOR),
        em_variance * (1.0 + cfg.variance_scale),
    ));
    let mut seed: Vec<f64> = em_weights.to_vec();
    seed.push(em_variance);

    let (best_raw, best_value) = pso_minimize(
        |raw| {
            let (weights, variance) = feasible_point(raw);
            objective.mean_crps(&weights, variance)
        },
        &bounds,
        &seed,
        cfg,
    );
    if best_value <= em_objective {
        let (weights, bde_variance) = feasible_point(&best_raw);
        RefineOutcome {
            weights,
            bde_variance,
            objective: best_value,
            em_objective,
        }
    } else {
        RefineOutcome {
            weights: em_weights.to_vec(),
            bde_variance: em_variance,
            objective: em_objective,
            em_objective,
        }
    }
}

/// Combiner settings: EM, refinement, and the CRPS integration grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinerConfig {
    pub em: EmConfig,
    pub pso: PsoConfig,
    pub refine: bool,
    pub crps_grid_points: usize,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            pso: PsoConfig::default(),
            refine: true,
            crps_grid_points: CRPS_GRID_POINTS,
        }
    }
}

/// The combined forecaster: member handles, simplex weights, the Beta
/// variance, and the estimation trace. The EM solution is kept next to
/// the refined one so both can be benchmarked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MmcModel {
    pub members: Members,
    pub weights: Vec<f64>,
    pub bde_variance: f64,
    pub em_weights: Vec<f64>,
    pub em_variance: f64,
    /// EM log-likelihood per accepted iteration, initial value first.
    pub trace: Vec<f64>,
    pub refined: bool,
    /// Mean training CRPS at the EM solution, when refinement ran.
    pub train_crps_em: Option<f64>,
    /// Mean training CRPS after refinement, when it ran.
    pub train_crps_refined: Option<f64>,
}

impl MmcModel {
    /// Combined predictive density at a feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<PredictiveDensity> {
        combined_density(&self.members, &self.weights, self.bde_variance, features)
    }

    /// View of the same members under the plain EM solution.
    pub fn as_em(&self) -> MmcEmView<'_> {
        MmcEmView { model: self }
    }

    /// The Beta member as a standalone forecaster, using the
    /// EM-estimated variance.
    pub fn bde_model(&self) -> Result<BdeModel> {
        BdeModel::new(self.members.spot.clone(), self.em_variance)
    }
}

fn combined_density(
    members: &Members,
    weights: &[f64],
    bde_variance: f64,
    features: &[f64],
) -> Result<PredictiveDensity> {
    let mut parts = Vec::with_capacity(MEMBER_COUNT);
    for (k, &w) in weights.iter().enumerate() {
        parts.push((w, members.member_density(k, features, bde_variance)?));
    }
    Ok(CombinedDensity::new(parts)?.into())
}

/// The combined model restricted to its EM parameters.
pub struct MmcEmView<'a> {
    model: &'a MmcModel,
}

impl DensityForecaster for MmcEmView<'_> {
    fn predict_density(&self, features: &[f64]) -> Result<PredictiveDensity> {
        combined_density(
            &self.model.members,
            &self.model.em_weights,
            self.model.em_variance,
            features,
        )
    }
}

impl DensityForecaster for MmcModel {
    fn predict_density(&self, features: &[f64]) -> Result<PredictiveDensity> {
        self.predict(features)
    }
}

impl DensityForecaster for SblModel {
    fn predict_density(&self, features: &[f64]) -> Result<PredictiveDensity> {
        PredictiveDensity::from(self.predict(features)?).truncate_renormalize()
    }
}

impl DensityForecaster for CkdeModel {
    fn predict_density(&self, features: &[f64]) -> Result<PredictiveDensity> {
        PredictiveDensity::from(self.predict(features)?).truncate_renormalize()
    }
}

impl DensityForecaster for BdeModel {
    fn predict_density(&self, features: &[f64]) -> Result<PredictiveDensity> {
        Ok(self.predict(features)?.into())
    }
}

/// Train the combination on the weight-fitting partition: evaluate the
/// members once, run EM from uniform weights, then optionally refine by
/// CRPS. σ² is initialized at the spot forecaster's mean squared
/// residual.
pub fn fit_mmc(members: Members, train_b: &[Sample], cfg: &CombinerConfig) -> Result<MmcModel> {
    if train_b.is_empty() {
        return Err(Error::Data(
            "weight estimation needs a non-empty partition".into(),
        ));
    }
    let targets: Vec<f64> = train_b.iter().map(|s| s.target).collect();

    let sbl_densities = member_densities(&members, 0, train_b)?;
    let ckde_densities = member_densities(&members, 1, train_b)?;
    let spot_mu: Vec<f64> = train_b
        .iter()
        .map(|s| members.spot.predict(&s.features))
        .collect::<Result<_>>()?;

    let fixed_eval = |densities: &[PredictiveDensity]| MemberEval::Fixed {
        pdf: densities
            .iter()
            .zip(&targets)
            .map(|(d, &y)| density_value_at_target(d, y))
            .collect(),
        mean: densities.iter().map(|d| d.mean()).collect(),
    };
    let evals = vec![
        fixed_eval(&sbl_densities),
        fixed_eval(&ckde_densities),
        MemberEval::BetaSpot {
            mu: spot_mu.clone(),
        },
    ];

    let init_weights = vec![1.0 / MEMBER_COUNT as f64; MEMBER_COUNT];
    let init_variance = spot_mu
        .iter()
        .zip(&targets)
        .map(|(mu, y)| (y - mu) * (y - mu))
        .sum::<f64>()
        / targets.len() as f64;

    let em = em_fit(&evals, &targets, &init_weights, init_variance, &cfg.em)?;

    let (weights, bde_variance, refined, train_crps_em, train_crps_refined) = if cfg.refine {
        let objective = RefineObjective::new(
            vec![
                RefineMember::Fixed(sbl_densities),
                RefineMember::Fixed(ckde_densities),
                RefineMember::BetaSpot(spot_mu),
            ],
            &targets,
            cfg.crps_grid_points,
        )?;
        let outcome = crps_refine(&objective, &em.weights, em.bde_variance, &cfg.pso);
        (
            outcome.weights,
            outcome.bde_variance,
            true,
            Some(outcome.em_objective),
            Some(outcome.objective),
        )
    } else {
        (em.weights.clone(), em.bde_variance, false, None, None)
    };

    Ok(MmcModel {
        members,
        weights,
        bde_variance,
        em_weights: em.weights,
        em_variance: em.bde_variance,
        trace: em.trace,
        refined,
        train_crps_em,
        train_crps_refined,
    })
}

fn member_densities(
    members: &Members,
    index: usize,
    samples: &[Sample],
) -> Result<Vec<PredictiveDensity>> {
    samples
        .par_iter()
        .map(|s| members.member_density(index, &s.features, 1.0))
        .collect()
}
