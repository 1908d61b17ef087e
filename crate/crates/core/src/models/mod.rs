//! The six crop classifiers, their training entry point and persistence.

mod artifact;
pub mod boosting;
pub mod forest;
mod grid;
pub mod knn;
pub mod mlp;
mod params;
pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    check_features, compute_stats, DataError, Dataset, FeatureSchema, FeatureStats, Features, Scaler,
};

pub use artifact::{load_model, save_model, ModelArtifact, FORMAT_VERSION};
pub use grid::{grid_search, GridPoint, GridSearchResult};
pub use params::{
    default_grid, Activation, Criterion, DistanceMetric, DtParams, Hyperparameters, KnnParams,
    LearningRateSchedule, LgbmParams, MlpParams, ModelKind, RfParams, Solver, Splitter, SvmKernel,
    SvmParams,
};

use boosting::{Booster, BoosterConfig};
use forest::{Forest, ForestConfig};
use knn::KnnModel;
use mlp::Mlp;
use svm::SvmModel;
use tree::{grow_classification_tree, CartConfig, Tree};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Anything that maps a reading to a class-probability vector.
///
/// Explainers only rely on this trait, so test doubles and trained models
/// are interchangeable.
pub trait Classifier: Sync {
    fn n_classes(&self) -> usize;

    fn predict_proba(&self, x: &Features) -> Vec<f64>;

    /// Argmax of [`Classifier::predict_proba`], lowest index on ties.
    fn predict(&self, x: &Features) -> usize {
        argmax(&self.predict_proba(x))
    }
}

impl<F> Classifier for (usize, F)
where
    F: Fn(&Features) -> Vec<f64> + Sync,
{
    fn n_classes(&self) -> usize {
        self.0
    }

    fn predict_proba(&self, x: &Features) -> Vec<f64> {
        (self.1)(x)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(z)` against `label`, computed stably.
pub fn log_softmax_loss(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fitted parameters of each model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParameters {
    Knn(KnnModel),
    Rf(Forest),
    Dt(Tree),
    Svm(SvmModel),
    Lgbm(Booster),
    Mlp(Mlp),
}

/// A trained classifier together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub hyperparameters: Hyperparameters,
    pub classes: Vec<String>,
    pub schema: FeatureSchema,
    /// Present for models that consume standardized features.
    pub scaler: Option<Scaler>,
    pub parameters: ModelParameters,
    /// Statistics of the training features.
    pub stats: FeatureStats,
    pub seed: u64,
    pub n_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

/// Training switches beyond the hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Features tree learners may not split on.
    pub excluded_features: Vec<usize>,
    /// Bootstrap resampling for random forests.
    pub bootstrap: bool,
    /// Candidate features per forest split; `None` uses floor(sqrt(7)).
    pub max_features: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            excluded_features: Vec::new(),
            bootstrap: true,
            max_features: None,
        }
    }
}

pub fn train_model(
    kind: ModelKind,
    params: &Hyperparameters,
    train: &Dataset,
    seed: u64,
) -> Result<TrainedModel, ModelError> {
    train_model_with(kind, params, train, seed, &TrainOptions::default())
}

pub fn train_model_with(
    kind: ModelKind,
    params: &Hyperparameters,
    train: &Dataset,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainedModel, ModelError> {
    if params.kind() != kind {
        return Err(ModelError::Config(format!(
            "{} hyperparameters cannot configure a {kind} model",
            params.kind()
        )));
    }
    params.validate()?;
    if !options.excluded_features.is_empty() && !kind.is_tree_based() {
        return Err(ModelError::Config(format!(
            "feature exclusion is only supported by tree models, not {kind}"
        )));
    }
    if train.is_empty() {
        return Err(ModelError::DegenerateData("training set is empty".into()));
    }
    let y = train.labels()?;
    if train.n_present_classes() < 2 {
        return Err(ModelError::DegenerateData(
            "training data must contain at least two classes".into(),
        ));
    }
    let n_classes = train.n_classes();
    let stats = compute_stats(train)?;
    let raw = train.features();
    let scaler = if kind.uses_scaler() {
        Some(Scaler::fit(train)?)
    } else {
        None
    };
    let scaled: Vec<Features> = match &scaler {
        Some(s) => raw.iter().map(|x| s.transform(x)).collect(),
        None => Vec::new(),
    };

    let parameters = match params {
        Hyperparameters::Knn(p) => ModelParameters::Knn(KnnModel {
            k: p.n_neighbours,
            metric: p.metric,
            points: scaled,
            labels: y,
            n_classes,
        }),
        Hyperparameters::Dt(p) => {
            let config = CartConfig {
                criterion: p.criterion,
                splitter: p.splitter,
                max_depth: Some(p.max_depth),
                min_samples_split: p.min_samples_split,
                max_features: None,
                excluded_features: options.excluded_features.clone(),
            };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let weights = vec![1; raw.len()];
            ModelParameters::Dt(grow_classification_tree(&raw, &y, &weights, n_classes, &config, &mut rng).0)
        }
        Hyperparameters::Rf(p) => {
            let config = ForestConfig {
                n_estimators: p.n_estimators,
                max_depth: Some(p.max_depth),
                criterion: p.criterion,
                bootstrap: options.bootstrap,
                max_features: Some(options.max_features.unwrap_or_else(forest::default_max_features)),
                excluded_features: options.excluded_features.clone(),
            };
            ModelParameters::Rf(Forest::fit(&raw, &y, n_classes, &config, seed))
        }
        Hyperparameters::Lgbm(p) => {
            let config = BoosterConfig {
                num_leaves: p.num_leaves,
                learning_rate: p.learning_rate,
                n_estimators: p.n_estimators,
                excluded_features: options.excluded_features.clone(),
            };
            ModelParameters::Lgbm(Booster::fit(&raw, &y, n_classes, &config))
        }
        Hyperparameters::Svm(p) => ModelParameters::Svm(match p.kernel {
            SvmKernel::Linear => SvmModel::fit_linear(&raw, &y, n_classes, p.c, seed),
            SvmKernel::Rbf => {
                let gamma = p.gamma.expect("validated rbf gamma");
                SvmModel::fit_rbf(&raw, &y, n_classes, p.c, gamma, seed)
            }
        }),
        Hyperparameters::Mlp(p) => ModelParameters::Mlp(Mlp::fit(&scaled, &y, n_classes, p, seed).0),
    };

    Ok(TrainedModel {
        hyperparameters: params.clone(),
        classes: train.classes.clone(),
        schema: train.schema.clone(),
        scaler,
        parameters,
        stats,
        seed,
        n_train: train.len(),
        created_at: None,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.hyperparameters.kind()
    }

    /// Features as the underlying learner sees them.
    pub fn model_input(&self, x: &Features) -> Features {
        match &self.scaler {
            Some(s) => s.transform(x),
            None => *x,
        }
    }

    /// Per-class scores before normalization: boosting and SVM margins,
    /// MLP logits, class probabilities for the other kinds.
    pub fn raw_scores(&self, x: &Features) -> Vec<f64> {
        let z = self.model_input(x);
        match &self.parameters {
            ModelParameters::Knn(m) => m.predict_proba(&z),
            ModelParameters::Rf(f) => f.predict_proba(&z),
            ModelParameters::Dt(t) => t.predict(&z).to_vec(),
            ModelParameters::Svm(s) => s.margins(&z),
            ModelParameters::Lgbm(b) => b.margins(&z),
            ModelParameters::Mlp(n) => n.logits(&z),
        }
    }

    fn proba_unchecked(&self, x: &Features) -> Vec<f64> {
        let z = self.model_input(x);
        match &self.parameters {
            ModelParameters::Knn(m) => m.predict_proba(&z),
            ModelParameters::Rf(f) => f.predict_proba(&z),
            ModelParameters::Dt(t) => t.predict(&z).to_vec(),
            ModelParameters::Svm(s) => s.predict_proba(&z),
            ModelParameters::Lgbm(b) => b.predict_proba(&z),
            ModelParameters::Mlp(n) => n.predict_proba(&z),
        }
    }

    /// Class probabilities for a reading; rejects non-finite features.
    pub fn try_predict_proba(&self, x: &Features) -> Result<Vec<f64>, ModelError> {
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Input(format!(
                "feature `{}` is not a finite number",
                self.schema.names[j]
            )));
        }
        Ok(self.proba_unchecked(x))
    }

    pub fn try_predict(&self, x: &Features) -> Result<usize, ModelError> {
        Ok(argmax(&self.try_predict_proba(x)?))
    }

    /// Predicted crop name.
    pub fn predict_label(&self, x: &Features) -> Result<&str, ModelError> {
        Ok(&self.classes[self.try_predict(x)?])
    }

    /// Validates physical ranges as well as finiteness.
    pub fn check_input(&self, x: &Features) -> Result<(), ModelError> {
        check_features(x).map_err(|(j, reason)| {
            ModelError::Input(format!("{} = {} {reason}", self.schema.names[j], x[j]))
        })
    }

    pub fn trees(&self) -> Option<Vec<&Tree>> {
        match &self.parameters {
            ModelParameters::Dt(t) => Some(vec![t]),
            ModelParameters::Rf(f) => Some(f.trees.iter().collect()),
            ModelParameters::Lgbm(b) => Some(b.class_trees.iter().flatten().collect()),
            _ => None,
        }
    }
}

impl Classifier for TrainedModel {
    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn predict_proba(&self, x: &Features) -> Vec<f64> {
        self.proba_unchecked(x)
    }
}
