//! Local surrogate explanations over quartile-binned features.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_target, Attribution, AttributionMetadata, ExplainError, Method, ScoreSpace};
use crate::data::{FeatureSchema, FeatureStats, FeatureSummary, Features, N_FEATURES};
use crate::models::Classifier;

const N_BINS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_perturbations: usize,
    pub kernel_width: f64,
    pub top_k: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 5000,
            kernel_width: 0.75 * (N_FEATURES as f64).sqrt(),
            top_k: N_FEATURES,
            ridge: 1.0,
            seed: 0,
        }
    }
}

/// A quartile condition on one feature with its surrogate weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeRule {
    pub feature: usize,
    /// Exclusive lower bound, absent for the first quartile bin.
    pub lower: Option<f64>,
    /// Inclusive upper bound, absent for the last quartile bin.
    pub upper: Option<f64>,
    pub condition: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub target: usize,
    pub rules: Vec<LimeRule>,
    pub intercept: f64,
    /// Surrogate prediction at the explained sample.
    pub local_prediction: f64,
    /// Model probability of the target class at the explained sample.
    pub model_output: f64,
    /// Weighted R^2 of the surrogate; `None` when the model output does not
    /// vary over the perturbations.
    pub fidelity: Option<f64>,
    pub config: LimeConfig,
}

impl LimeExplanation {
    /// Surrogate weights as an attribution (all 7 features, schema order).
    pub fn to_attribution(&self, weights: &[f64; N_FEATURES]) -> Attribution {
        Attribution {
            method: Method::Lime,
            space: ScoreSpace::Probability,
            target: Some(self.target),
            baseline: Some(self.intercept),
            output: Some(self.model_output),
            contributions: *weights,
            metadata: AttributionMetadata {
                n_samples: Some(self.config.n_perturbations),
                seed: Some(self.config.seed),
                kernel_width: Some(self.config.kernel_width),
                ..Default::default()
            },
        }
    }
}

fn edges(s: &FeatureSummary) -> [f64; N_BINS + 1] {
    [s.min, s.q1, s.median, s.q3, s.max]
}

/// Quartile bin of `v`: 0 for `v <= q1`, ..., 3 for `v > q3`.
fn bin_of(s: &FeatureSummary, v: f64) -> usize {
    [s.q1, s.median, s.q3].iter().filter(|&&q| v > q).count()
}

fn condition(name: &str, s: &FeatureSummary, bin: usize) -> (Option<f64>, Option<f64>, String) {
    let e = edges(s);
    match bin {
        0 => (None, Some(e[1]), format!("{name} <= {:.2}", e[1])),
        b if b == N_BINS - 1 => (Some(e[b]), None, format!("{name} > {:.2}", e[b])),
        b => (
            Some(e[b]),
            Some(e[b + 1]),
            format!("{:.2} < {name} <= {:.2}", e[b], e[b + 1]),
        ),
    }
}

/// Fits a weighted ridge surrogate on "same bin as the sample" indicators.
///
/// Perturbations redraw each feature's quartile bin uniformly and then a
/// value uniformly within that bin's training bounds. The first
/// perturbation is the sample itself. Weights are `exp(-d^2 / width^2)`
/// with `d` the number of features whose bin differs from the sample's.
/// The intercept is not penalized.
pub fn lime_explain(
    model: &impl Classifier,
    x: &Features,
    stats: &FeatureStats,
    schema: &FeatureSchema,
    config: &LimeConfig,
    target: usize,
) -> Result<(LimeExplanation, Attribution), ExplainError> {
    check_target(target, model.n_classes())?;
    if !(config.kernel_width > 0.0 && config.kernel_width.is_finite()) {
        return Err(ExplainError::Config(format!(
            "kernel width must be positive, got {}",
            config.kernel_width
        )));
    }
    if config.n_perturbations < 50 {
        return Err(ExplainError::Config(format!(
            "at least 50 perturbations are needed, got {}",
            config.n_perturbations
        )));
    }
    if !(config.ridge >= 0.0 && config.ridge.is_finite()) {
        return Err(ExplainError::Config("ridge strength must be >= 0".into()));
    }
    let summaries: Vec<&FeatureSummary> = (0..N_FEATURES).map(|j| stats.get(j)).collect();
    let query_bins: [usize; N_FEATURES] = std::array::from_fn(|j| bin_of(summaries[j], x[j]));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_perturbations;
    let mut z = DMatrix::<f64>::zeros(n, N_FEATURES);
    let mut weights = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(n);
    let width2 = config.kernel_width * config.kernel_width;
    for r in 0..n {
        let mut point = *x;
        if r > 0 {
            for j in 0..N_FEATURES {
                let bin = rng.random_range(0..N_BINS);
                let e = edges(summaries[j]);
                point[j] = if e[bin + 1] > e[bin] {
                    rng.random_range(e[bin]..=e[bin + 1])
                } else {
                    e[bin]
                };
            }
        }
        let mut same = 0;
        for j in 0..N_FEATURES {
            if bin_of(summaries[j], point[j]) == query_bins[j] {
                z[(r, j)] = 1.0;
                same += 1;
            }
        }
        let d = (N_FEATURES - same) as f64;
        weights[r] = (-d * d / width2).exp();
        y[r] = model.predict_proba(&point)[target];
    }

    let w_sum = weights.sum();
    let z_mean = DVector::from_fn(N_FEATURES, |j, _| z.column(j).dot(&weights) / w_sum);
    let y_mean = y.dot(&weights) / w_sum;
    let zc = DMatrix::from_fn(n, N_FEATURES, |r, j| z[(r, j)] - z_mean[j]);
    let yc = y.add_scalar(-y_mean);
    let zw = DMatrix::from_fn(n, N_FEATURES, |r, j| zc[(r, j)] * weights[r]);
    let mut gram = zw.transpose() * &zc;
    for j in 0..N_FEATURES {
        gram[(j, j)] += config.ridge;
    }
    let rhs = zw.transpose() * &yc;
    let beta = gram
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|b| b.iter().all(|v| v.is_finite()))
        .ok_or_else(|| ExplainError::Numerical("surrogate system is singular".into()))?;
    let intercept = y_mean - z_mean.dot(&beta);

    let fitted = &z * &beta;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for r in 0..n {
        let pred = intercept + fitted[r];
        ss_res += weights[r] * (y[r] - pred).powi(2);
        ss_tot += weights[r] * (y[r] - y_mean).powi(2);
    }
    let fidelity = (ss_tot > 1e-12 * w_sum).then(|| 1.0 - ss_res / ss_tot);

    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    let rules = order
        .into_iter()
        .take(config.top_k)
        .map(|j| {
            let (lower, upper, condition) = condition(&schema.names[j], summaries[j], query_bins[j]);
            LimeRule {
                feature: j,
                lower,
                upper,
                condition,
                weight: beta[j],
            }
        })
        .collect();
    let explanation = LimeExplanation {
        target,
        rules,
        intercept,
        local_prediction: intercept + beta.sum(),
        model_output: y[0],
        fidelity,
        config: config.clone(),
    };
    let beta_arr: [f64; N_FEATURES] = std::array::from_fn(|j| beta[j]);
    let attribution = explanation.to_attribution(&beta_arr);
    Ok((explanation, attribution))
}
