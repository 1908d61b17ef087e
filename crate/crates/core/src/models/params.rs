use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// The six classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Rf,
    Dt,
    Svm,
    Lgbm,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Knn,
        ModelKind::Rf,
        ModelKind::Dt,
        ModelKind::Svm,
        ModelKind::Lgbm,
        ModelKind::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Rf => "rf",
            ModelKind::Dt => "dt",
            ModelKind::Svm => "svm",
            ModelKind::Lgbm => "lgbm",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(self, ModelKind::Dt | ModelKind::Rf | ModelKind::Lgbm)
    }

    /// Whether the model consumes standardized features.
    pub fn uses_scaler(self) -> bool {
        matches!(self, ModelKind::Knn | ModelKind::Mlp)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(ModelKind::Knn),
            "rf" | "random_forest" => Ok(ModelKind::Rf),
            "dt" | "decision_tree" => Ok(ModelKind::Dt),
            "svm" => Ok(ModelKind::Svm),
            "lgbm" | "lightgbm" => Ok(ModelKind::Lgbm),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(ModelError::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Cityblock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitter {
    Best,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvmKernel {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRateSchedule {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub n_neighbours: usize,
    pub metric: DistanceMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub max_depth: usize,
    pub n_estimators: usize,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtParams {
    pub max_depth: usize,
    pub criterion: Criterion,
    pub splitter: Splitter,
    pub min_samples_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: SvmKernel,
    #[serde(rename = "C")]
    pub c: f64,
    /// RBF width; ignored by the linear kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgbmParams {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
}

fn default_learning_rate_init() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub activation: Activation,
    pub learning_rate: LearningRateSchedule,
    pub solver: Solver,
    pub alpha: f64,
    pub hidden_layer_sizes: Vec<usize>,
    #[serde(default = "default_learning_rate_init")]
    pub learning_rate_init: f64,
}

/// Hyperparameters tagged by model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparameters {
    Knn(KnnParams),
    Rf(RfParams),
    Dt(DtParams),
    Svm(SvmParams),
    Lgbm(LgbmParams),
    Mlp(MlpParams),
}

impl Hyperparameters {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparameters::Knn(_) => ModelKind::Knn,
            Hyperparameters::Rf(_) => ModelKind::Rf,
            Hyperparameters::Dt(_) => ModelKind::Dt,
            Hyperparameters::Svm(_) => ModelKind::Svm,
            Hyperparameters::Lgbm(_) => ModelKind::Lgbm,
            Hyperparameters::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Best parameters reported for each kind after tuning on the crop data.
    pub fn best(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Knn => Hyperparameters::Knn(KnnParams {
                n_neighbours: 11,
                metric: DistanceMetric::Cityblock,
            }),
            ModelKind::Rf => Hyperparameters::Rf(RfParams {
                max_depth: 9,
                n_estimators: 89,
                criterion: Criterion::Entropy,
            }),
            ModelKind::Dt => Hyperparameters::Dt(DtParams {
                max_depth: 131,
                criterion: Criterion::Gini,
                splitter: Splitter::Best,
                min_samples_split: 4,
            }),
            ModelKind::Svm => Hyperparameters::Svm(SvmParams {
                kernel: SvmKernel::Linear,
                c: 0.01,
                gamma: None,
            }),
            ModelKind::Lgbm => Hyperparameters::Lgbm(LgbmParams {
                num_leaves: 5,
                learning_rate: 0.1,
                n_estimators: 43,
            }),
            ModelKind::Mlp => Hyperparameters::Mlp(MlpParams {
                activation: Activation::Relu,
                learning_rate: LearningRateSchedule::Constant,
                solver: Solver::Adam,
                alpha: 0.5,
                hidden_layer_sizes: vec![10, 30, 50, 25],
                learning_rate_init: default_learning_rate_init(),
            }),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        match self {
            Hyperparameters::Knn(p) if p.n_neighbours < 1 => fail("n_neighbours must be >= 1".into()),
            Hyperparameters::Rf(p) if p.max_depth < 1 || p.n_estimators < 1 => {
                fail("max_depth and n_estimators must be >= 1".into())
            }
            Hyperparameters::Dt(p) if p.max_depth < 1 => fail("max_depth must be >= 1".into()),
            Hyperparameters::Dt(p) if p.min_samples_split < 2 => {
                fail("min_samples_split must be >= 2".into())
            }
            Hyperparameters::Svm(p) if !(p.c > 0.0 && p.c.is_finite()) => fail(format!("C must be > 0, got {}", p.c)),
            Hyperparameters::Svm(p) if p.kernel == SvmKernel::Rbf => match p.gamma {
                Some(g) if g > 0.0 && g.is_finite() => Ok(()),
                _ => fail("rbf kernel needs gamma > 0".into()),
            },
            Hyperparameters::Lgbm(p) if p.num_leaves < 2 => fail("num_leaves must be >= 2".into()),
            Hyperparameters::Lgbm(p) if p.n_estimators < 1 => fail("n_estimators must be >= 1".into()),
            Hyperparameters::Lgbm(p) if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) => {
                fail("learning_rate must be > 0".into())
            }
            Hyperparameters::Mlp(p) if !(p.alpha >= 0.0 && p.alpha.is_finite()) => fail("alpha must be >= 0".into()),
            Hyperparameters::Mlp(p) if p.hidden_layer_sizes.iter().any(|&h| h < 1) => {
                fail("hidden layer sizes must be >= 1".into())
            }
            Hyperparameters::Mlp(p) if !(p.learning_rate_init > 0.0) => {
                fail("learning_rate_init must be > 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// The tuning grid for each kind.
///
/// Integer ranges given as intervals are swept in full for KNN and LGBM
/// `num_leaves`; the wide tree-size ranges are swept with a step of 10.
pub fn default_grid(kind: ModelKind) -> Vec<Hyperparameters> {
    let mut grid = Vec::new();
    match kind {
        ModelKind::Knn => {
            for n_neighbours in 10..=50 {
                for metric in [DistanceMetric::Euclidean, DistanceMetric::Cityblock] {
                    grid.push(Hyperparameters::Knn(KnnParams { n_neighbours, metric }));
                }
            }
        }
        ModelKind::Rf => {
            for max_depth in 5..=10 {
                for n_estimators in (10..=150).step_by(10) {
                    for criterion in [Criterion::Gini, Criterion::Entropy] {
                        grid.push(Hyperparameters::Rf(RfParams {
                            max_depth,
                            n_estimators,
                            criterion,
                        }));
                    }
                }
            }
        }
        ModelKind::Dt => {
            for max_depth in (10..=150).step_by(10) {
                for criterion in [Criterion::Gini, Criterion::Entropy] {
                    for splitter in [Splitter::Best, Splitter::Random] {
                        for min_samples_split in [2, 4, 6, 8, 10, 12] {
                            grid.push(Hyperparameters::Dt(DtParams {
                                max_depth,
                                criterion,
                                splitter,
                                min_samples_split,
                            }));
                        }
                    }
                }
            }
        }
        ModelKind::Svm => {
            for c in [0.001, 1.0] {
                for gamma in [0.01, 0.1] {
                    grid.push(Hyperparameters::Svm(SvmParams {
                        kernel: SvmKernel::Rbf,
                        c,
                        gamma: Some(gamma),
                    }));
                }
            }
            for c in [0.001, 0.01, 0.1] {
                grid.push(Hyperparameters::Svm(SvmParams {
                    kernel: SvmKernel::Linear,
                    c,
                    gamma: None,
                }));
            }
        }
        ModelKind::Lgbm => {
            for num_leaves in 5..=20 {
                for learning_rate in [0.1, 0.01, 0.001] {
                    for n_estimators in (10..=50).step_by(10) {
                        grid.push(Hyperparameters::Lgbm(LgbmParams {
                            num_leaves,
                            learning_rate,
                            n_estimators,
                        }));
                    }
                }
            }
        }
        ModelKind::Mlp => {
            let layers: [&[usize]; 6] = [
                &[10, 10],
                &[10, 20],
                &[10, 30],
                &[10, 40],
                &[10, 30, 10],
                &[10, 30, 50, 25],
            ];
            for activation in [Activation::Tanh, Activation::Relu] {
                for learning_rate in [LearningRateSchedule::Constant, LearningRateSchedule::Adaptive] {
                    for solver in [Solver::Sgd, Solver::Adam] {
                        for alpha in [0.0001, 0.001, 0.1, 0.2, 0.3, 0.4, 0.5] {
                            for hidden in layers {
                                grid.push(Hyperparameters::Mlp(MlpParams {
                                    activation,
                                    learning_rate,
                                    solver,
                                    alpha,
                                    hidden_layer_sizes: hidden.to_vec(),
                                    learning_rate_init: default_learning_rate_init(),
                                }));
                            }
                        }
                    }
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_params_are_valid_and_in_grid_ranges() {
        for kind in ModelKind::ALL {
            let best = Hyperparameters::best(kind);
            assert_eq!(best.kind(), kind);
            best.validate().unwrap();
        }
        let knn = default_grid(ModelKind::Knn);
        assert_eq!(knn.len(), 82);
        assert!(knn.contains(&Hyperparameters::best(ModelKind::Knn)));
        assert_eq!(default_grid(ModelKind::Svm).len(), 7);
        assert_eq!(default_grid(ModelKind::Mlp).len(), 336);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = Hyperparameters::Dt(DtParams {
            max_depth: 3,
            criterion: Criterion::Gini,
            splitter: Splitter::Best,
            min_samples_split: 1,
        });
        assert!(bad.validate().is_err());
        let bad = Hyperparameters::Svm(SvmParams {
            kernel: SvmKernel::Rbf,
            c: 1.0,
            gamma: None,
        });
        assert!(bad.validate().is_err());
        let bad = Hyperparameters::Lgbm(LgbmParams {
            num_leaves: 1,
            learning_rate: 0.1,
            n_estimators: 5,
        });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kinds_parse_and_serialize() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("xgb".parse::<ModelKind>().is_err());
        let json = serde_json::to_string(&Hyperparameters::best(ModelKind::Svm)).unwrap();
        assert_eq!(json, r#"{"kind":"svm","kernel":"linear","C":0.01}"#);
    }
}
