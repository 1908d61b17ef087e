//! Dispatch from an explanation request to the core explainers.

use cropwise_core::data::{Dataset, Features, Sample};
use cropwise_core::explain::{
    counterfactual_search, gain_importance, lime_explain, path_contributions, permutation_importance,
    shapley_exact, shapley_kernel, Attribution, CounterfactualConfig, CounterfactualResult,
    CounterfactualStatus, ExplainError, LimeConfig, LimeExplanation,
};
use cropwise_core::models::{argmax, ModelError, TrainedModel};
use serde::Serialize;

use crate::request::ExplainMethod;

pub const DEFAULT_COALITIONS: usize = 2048;
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone)]
pub struct ExplainRequest {
    pub method: ExplainMethod,
    pub features: Features,
    pub target: usize,
    pub seed: u64,
    pub coalitions: usize,
    pub perturbations: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainOutput {
    pub attribution: Attribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lime: Option<LimeExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassProbability {
    pub class: String,
    pub probability: f64,
}

/// Predicted crop with the full class distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub predicted: String,
    pub predicted_index: usize,
    pub probabilities: Vec<ClassProbability>,
    pub model_kind: &'static str,
    pub artifact_sha256: String,
}

pub fn predict(model: &TrainedModel, x: &Features, artifact_sha256: &str) -> Result<Prediction, ModelError> {
    let probabilities = model.try_predict_proba(x)?;
    let predicted_index = argmax(&probabilities);
    Ok(Prediction {
        predicted: model.classes[predicted_index].clone(),
        predicted_index,
        probabilities: model
            .classes
            .iter()
            .zip(probabilities)
            .map(|(class, probability)| ClassProbability {
                class: class.clone(),
                probability,
            })
            .collect(),
        model_kind: model.kind().as_str(),
        artifact_sha256: artifact_sha256.to_string(),
    })
}

fn labeled(background: &[Sample]) -> Option<Dataset> {
    background
        .iter()
        .all(|s| s.label.is_some())
        .then(|| Dataset::from_samples(background.to_vec()))
}

/// Runs every method except counterfactual search.
///
/// Permutation importance scores the labeled `background` rows; Shapley
/// methods use them as the interventional background.
pub fn explain(
    model: &TrainedModel,
    background: &[Sample],
    request: &ExplainRequest,
) -> Result<ExplainOutput, ExplainError> {
    let bg: Vec<Features> = background.iter().map(|s| s.features).collect();
    let x = &request.features;
    let attribution = match request.method {
        ExplainMethod::Permutation => {
            let mut data = labeled(background).ok_or_else(|| {
                ExplainError::Config("permutation importance needs labeled background rows".into())
            })?;
            data.classes = model.classes.clone();
            data.schema = model.schema.clone();
            permutation_importance(model, &data, request.repeats, request.seed)?
        }
        ExplainMethod::Gain => gain_importance(model)?,
        ExplainMethod::Path => path_contributions(model, x, request.target)?,
        ExplainMethod::ShapExact => shapley_exact(model, x, &bg, request.target)?,
        ExplainMethod::ShapKernel => shapley_kernel(model, x, &bg, request.target, request.coalitions, request.seed)?,
        ExplainMethod::Lime => {
            let config = LimeConfig {
                n_perturbations: request.perturbations,
                seed: request.seed,
                ..LimeConfig::default()
            };
            let (lime, attribution) = lime_explain(model, x, &model.stats, &model.schema, &config, request.target)?;
            return Ok(ExplainOutput {
                attribution,
                lime: Some(lime),
            });
        }
        ExplainMethod::Counterfactual => {
            return Err(ExplainError::Config(
                "counterfactual search does not produce an attribution".into(),
            ))
        }
    };
    Ok(ExplainOutput {
        attribution,
        lime: None,
    })
}

/// Counterfactual search followed by an independent validity check of
/// every candidate against the same model.
pub fn counterfactuals(
    model: &TrainedModel,
    query: &Features,
    config: &CounterfactualConfig,
) -> Result<CounterfactualResult, ExplainError> {
    let mut result = counterfactual_search(model, query, config, &model.stats, &model.schema)?;
    let before = result.counterfactuals.len();
    result
        .counterfactuals
        .retain(|c| model.try_predict(&c.candidate.features).ok() == Some(config.target));
    if result.counterfactuals.len() != before {
        tracing::warn!(
            dropped = before - result.counterfactuals.len(),
            "counterfactual candidates failed re-validation"
        );
    }
    if result.counterfactuals.is_empty() && result.status == CounterfactualStatus::Found {
        result.status = CounterfactualStatus::NotFound;
    }
    Ok(result)
}

