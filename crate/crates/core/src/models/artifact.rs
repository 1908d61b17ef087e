//! Versioned JSON container for trained models.

use serde::{Deserialize, Serialize};

use super::{Hyperparameters, ModelError, ModelKind, ModelParameters, TrainedModel};
use crate::data::{FeatureSchema, FeatureStats, Sample, Scaler};

pub const FORMAT_VERSION: u32 = 1;

/// On-disk layout of a trained model.
///
/// The optional `background` rows let a service compute Shapley values
/// without access to the training CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub class_names: Vec<String>,
    pub schema: FeatureSchema,
    pub scaler: Option<Scaler>,
    pub parameters: ModelParameters,
    pub seed: u64,
    pub created_at: Option<String>,
    pub feature_stats: FeatureStats,
    pub n_train: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub background: Vec<Sample>,
}

impl ModelArtifact {
    pub fn new(model: &TrainedModel, background: Vec<Sample>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            hyperparameters: model.hyperparameters.clone(),
            class_names: model.classes.clone(),
            schema: model.schema.clone(),
            scaler: model.scaler.clone(),
            parameters: model.parameters.clone(),
            seed: model.seed,
            created_at: model.created_at.clone(),
            feature_stats: model.stats.clone(),
            n_train: model.n_train,
            background,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("artifact serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| ModelError::Artifact(format!("unreadable artifact: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(ModelError::Artifact(format!(
                "unsupported format version {} (this build reads {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let artifact: ModelArtifact = serde_json::from_slice(bytes)
            .map_err(|e| ModelError::Artifact(format!("malformed artifact: {e}")))?;
        artifact.check()?;
        Ok(artifact)
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Artifact(m.to_string()));
        if self.hyperparameters.kind() != self.kind {
            return bad("hyperparameters do not match the model kind");
        }
        let param_kind = match &self.parameters {
            ModelParameters::Knn(_) => ModelKind::Knn,
            ModelParameters::Rf(_) => ModelKind::Rf,
            ModelParameters::Dt(_) => ModelKind::Dt,
            ModelParameters::Svm(_) => ModelKind::Svm,
            ModelParameters::Lgbm(_) => ModelKind::Lgbm,
            ModelParameters::Mlp(_) => ModelKind::Mlp,
        };
        if param_kind != self.kind {
            return bad("parameters do not match the model kind");
        }
        if self.kind.uses_scaler() != self.scaler.is_some() {
            return bad("scaler presence does not match the model kind");
        }
        if self.class_names.len() < 2 {
            return bad("artifact needs at least two classes");
        }
        self.schema
            .validate()
            .map_err(|e| ModelError::Artifact(e.to_string()))
    }

    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            hyperparameters: self.hyperparameters,
            classes: self.class_names,
            schema: self.schema,
            scaler: self.scaler,
            parameters: self.parameters,
            stats: self.feature_stats,
            seed: self.seed,
            n_train: self.n_train,
            created_at: self.created_at,
        }
    }
}

pub fn save_model(model: &TrainedModel) -> Vec<u8> {
    ModelArtifact::new(model, Vec::new()).to_bytes()
}

pub fn load_model(bytes: &[u8]) -> Result<TrainedModel, ModelError> {
    Ok(ModelArtifact::from_bytes(bytes)?.into_model())
}
