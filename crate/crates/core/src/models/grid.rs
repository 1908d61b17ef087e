use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, train_model, Classifier, Hyperparameters, ModelError, ModelKind};
use crate::data::{stratified_folds, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: Hyperparameters,
    /// Mean held-out fold accuracy in [0, 1].
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: Hyperparameters,
    pub best_accuracy: f64,
    pub candidates: Vec<GridPoint>,
    pub folds: usize,
    pub seed: u64,
}

/// Exhaustive search with stratified k-fold cross-validation.
///
/// Every candidate sees the same folds and training seed. Candidates are
/// evaluated in parallel and collected in grid order; the first candidate
/// with the highest mean accuracy wins.
pub fn grid_search(
    kind: ModelKind,
    grid: &[Hyperparameters],
    train: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::Config("grid is empty".into()));
    }
    if let Some(p) = grid.iter().find(|p| p.kind() != kind) {
        return Err(ModelError::Config(format!(
            "grid for {kind} contains {} parameters",
            p.kind()
        )));
    }
    let assignment = stratified_folds(train, folds, seed)?;
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) =
                (0..train.len()).partition(|&i| assignment[i] == f);
            (train.subset(&kept), train.subset(&held))
        })
        .collect();

    let candidates = grid
        .par_iter()
        .map(|params| {
            let fold_accuracies = splits
                .iter()
                .map(|(fit, held)| {
                    let model = train_model(kind, params, fit, seed)?;
                    let correct = held
                        .samples
                        .iter()
                        .filter(|s| Some(argmax(&model.predict_proba(&s.features))) == s.label)
                        .count();
                    Ok(correct as f64 / held.len().max(1) as f64)
                })
                .collect::<Result<Vec<f64>, ModelError>>()?;
            Ok(GridPoint {
                params: params.clone(),
                mean_accuracy: fold_accuracies.iter().sum::<f64>() / folds as f64,
                fold_accuracies,
            })
        })
        .collect::<Result<Vec<GridPoint>, ModelError>>()?;

    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean_accuracy > candidates[best].mean_accuracy {
            best = i;
        }
    }
    Ok(GridSearchResult {
        best: candidates[best].params.clone(),
        best_accuracy: candidates[best].mean_accuracy,
        candidates,
        folds,
        seed,
    })
}
