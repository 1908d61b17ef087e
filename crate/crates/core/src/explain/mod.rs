//! Global and local explanations of crop predictions.
//!
//! Every explainer takes its randomness from an explicit seed and produces
//! the same output for the same inputs, regardless of thread scheduling.

mod counterfactual;
mod importance;
mod lime;
mod path;
mod shapley;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, FeatureSchema, N_FEATURES};
use crate::models::{ModelError, ModelKind};

pub use counterfactual::{
    counterfactual_delta_report, counterfactual_search, Counterfactual, CounterfactualConfig,
    CounterfactualResult, CounterfactualStatus, DeltaReport, DeltaRow,
};
pub use importance::{gain_importance, permutation_importance};
pub use lime::{lime_explain, LimeConfig, LimeExplanation, LimeRule};
pub use path::path_contributions;
pub use shapley::{shapley_exact, shapley_kernel, MIN_KERNEL_SAMPLES};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{method} is not supported for {kind} models")]
    Unsupported { method: Method, kind: ModelKind },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("target class {target} is outside the {n_classes}-class label space")]
    UnknownTarget { target: usize, n_classes: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Permutation,
    Gain,
    Path,
    ShapleyExact,
    ShapleyKernel,
    Lime,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Permutation => "permutation",
            Method::Gain => "gain",
            Method::Path => "path",
            Method::ShapleyExact => "shapley_exact",
            Method::ShapleyKernel => "shapley_kernel",
            Method::Lime => "lime",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which model score the contributions add up to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    Probability,
    Margin,
    Accuracy,
    Gain,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_coalitions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Signed per-feature contributions in schema order.
///
/// For local methods `baseline + sum(contributions)` approximates (or, for
/// path and Shapley attributions, equals) `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub space: ScoreSpace,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<f64>,
    pub contributions: [f64; N_FEATURES],
    pub metadata: AttributionMetadata,
}

impl Attribution {
    /// Feature indices ordered by decreasing |contribution|, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..N_FEATURES).collect();
        order.sort_by(|&a, &b| {
            self.contributions[b]
                .abs()
                .total_cmp(&self.contributions[a].abs())
                .then(a.cmp(&b))
        });
        order
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.ranking().into_iter().take(k).collect()
    }

    /// `baseline + sum(contributions)`, when a baseline exists.
    pub fn reconstructed(&self) -> Option<f64> {
        self.baseline
            .map(|b| b + self.contributions.iter().sum::<f64>())
    }

    /// Horizontal signed bars scaled to the largest |contribution|.
    pub fn render_bars(&self, schema: &FeatureSchema, half_width: usize) -> String {
        let scale = self
            .contributions
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let name_width = schema.names.iter().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for j in self.ranking() {
            let v = self.contributions[j];
            let len = if scale > 0.0 {
                (v.abs() / scale * half_width as f64).round() as usize
            } else {
                0
            };
            let (left, right) = if v < 0.0 {
                (format!("{:>half_width$}", "-".repeat(len)), String::new())
            } else {
                (" ".repeat(half_width), "+".repeat(len))
            };
            out.push_str(&format!(
                "{:<name_width$} {left}|{right:<half_width$} {v:+.6}\n",
                schema.names[j]
            ));
        }
        out
    }
}

/// Top-k features of several attributions side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub k: usize,
    pub rows: Vec<(Method, Vec<usize>)>,
    /// Features in the top-k of every method.
    pub consensus: Vec<usize>,
    /// Whether all methods produced the same top-k set.
    pub agree: bool,
}

pub fn compare_methods(attributions: &[Attribution], k: usize) -> MethodComparison {
    let rows: Vec<(Method, Vec<usize>)> = attributions.iter().map(|a| (a.method, a.top_k(k))).collect();
    let consensus: Vec<usize> = (0..N_FEATURES)
        .filter(|j| rows.iter().all(|(_, top)| top.contains(j)))
        .collect();
    let agree = rows.iter().all(|(_, top)| {
        let mut a = top.clone();
        let mut b = rows[0].1.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    });
    MethodComparison {
        k,
        rows,
        consensus,
        agree,
    }
}

impl MethodComparison {
    pub fn render(&self, schema: &FeatureSchema) -> String {
        let mut out = String::new();
        for (method, top) in &self.rows {
            let names: Vec<&str> = top.iter().map(|&j| schema.names[j].as_str()).collect();
            out.push_str(&format!("{:<15} {}\n", method.as_str(), names.join(", ")));
        }
        let shared: Vec<&str> = self.consensus.iter().map(|&j| schema.names[j].as_str()).collect();
        out.push_str(&format!("{:<15} {}\n", "shared", shared.join(", ")));
        out
    }
}

pub(crate) fn check_target(target: usize, n_classes: usize) -> Result<(), ExplainError> {
    if target >= n_classes {
        Err(ExplainError::UnknownTarget { target, n_classes })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attribution(c: [f64; N_FEATURES], method: Method) -> Attribution {
        Attribution {
            method,
            space: ScoreSpace::Probability,
            target: Some(0),
            baseline: Some(0.1),
            output: None,
            contributions: c,
            metadata: AttributionMetadata::default(),
        }
    }

    #[test]
    fn ranking_uses_magnitude_then_index() {
        let a = attribution([0.1, -0.5, 0.5, 0.0, 0.2, 0.0, -0.3], Method::Path);
        assert_eq!(a.ranking(), vec![1, 2, 6, 4, 0, 3, 5]);
        assert!((a.reconstructed().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn comparison_reports_disagreement() {
        let a = attribution([0.9, 0.8, 0.7, 0.0, 0.0, 0.0, 0.0], Method::Path);
        let b = attribution([0.9, 0.0, 0.7, 0.0, 0.8, 0.0, 0.0], Method::Lime);
        let c = compare_methods(&[a.clone(), b], 3);
        assert_eq!(c.consensus, vec![0, 2]);
        assert!(!c.agree);
        assert!(compare_methods(&[a.clone(), a], 3).agree);
    }

    #[test]
    fn bars_point_by_sign() {
        let a = attribution([0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.5], Method::ShapleyExact);
        let text = a.render_bars(&FeatureSchema::crop(), 10);
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("humidity") && first.contains("----------|"));
        let second = text.lines().nth(1).unwrap();
        assert!(second.contains("|+++++ "), "{second}");
    }
}
