//! Confusion matrices and macro-averaged classification reports.
//!
//! All metrics are percentages. A ratio with a zero denominator is 0, and
//! every class of the label space takes part in the macro average, including
//! classes that never occur in the evaluated data.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::models::{ModelError, TrainedModel};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("test set is empty")]
    Empty,
    #[error("test sample {index} has no label")]
    Unlabeled { index: usize },
    #[error("label {label} is outside the {n_classes}-class label space")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("test data has {data} classes but the model knows {model}")]
    ClassMismatch { data: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counts indexed as `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_pairs(
        n_classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, EvaluationError> {
        let mut m = Self::new(n_classes);
        for (truth, predicted) in pairs {
            for label in [truth, predicted] {
                if label >= n_classes {
                    return Err(EvaluationError::LabelOutOfRange { label, n_classes });
                }
            }
            m.counts[truth][predicted] += 1;
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    fn column_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true samples of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl ClassificationReport {
    pub fn from_confusion(confusion: ConfusionMatrix, class_names: &[String]) -> Self {
        let n = confusion.n_classes();
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|k| {
                let tp = confusion.counts[k][k];
                let precision = percent(tp, confusion.column_sum(k));
                let recall = percent(tp, confusion.row_sum(k));
                ClassMetrics {
                    class: class_names.get(k).cloned().unwrap_or_else(|| k.to_string()),
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support: confusion.row_sum(k),
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            accuracy: percent(confusion.trace(), confusion.total()),
            per_class,
            confusion,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores `model` on a labeled test set.
pub fn evaluate(model: &TrainedModel, test: &Dataset) -> Result<ClassificationReport, EvaluationError> {
    if test.is_empty() {
        return Err(EvaluationError::Empty);
    }
    if test.n_classes() != model.classes.len() {
        return Err(EvaluationError::ClassMismatch {
            data: test.n_classes(),
            model: model.classes.len(),
        });
    }
    let mut pairs = Vec::with_capacity(test.len());
    for (index, s) in test.samples.iter().enumerate() {
        let truth = s.label.ok_or(EvaluationError::Unlabeled { index })?;
        pairs.push((truth, model.try_predict(&s.features)?));
    }
    let confusion = ConfusionMatrix::from_pairs(model.classes.len(), pairs)?;
    Ok(ClassificationReport::from_confusion(confusion, &model.classes))
}

/// Side-by-side summary of several models, one row per model.
pub fn render_comparison(rows: &[(&str, &ClassificationReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Model".len());
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "Model", "Precision", "Recall", "F1-Score", "Accuracy"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}\n",
            name, r.precision, r.recall, r.f1, r.accuracy
        ));
    }
    out
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_class
            .iter()
            .map(|m| m.class.len())
            .max()
            .unwrap_or(0)
            .max("macro avg".len());
        writeln!(
            f,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "", "Precision", "Recall", "F1-Score", "Support"
        )?;
        for m in &self.per_class {
            writeln!(
                f,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
                m.class, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            "macro avg",
            self.precision,
            self.recall,
            self.f1,
            self.confusion.total()
        )?;
        write!(f, "{:<width$}  {:>9.4}", "accuracy", self.accuracy)
    }
}
