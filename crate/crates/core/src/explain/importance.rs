use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Attribution, AttributionMetadata, ExplainError, Method, ScoreSpace};
use crate::data::{Dataset, Features, N_FEATURES};
use crate::models::{derive_seed, Classifier, TrainedModel};

fn count_correct(model: &impl Classifier, x: &[Features], y: &[usize]) -> u64 {
    x.iter().zip(y).filter(|(xi, &yi)| model.predict(xi) == yi).count() as u64
}

/// Mean accuracy drop (as a fraction) when one column is shuffled.
///
/// Repeat `r` of feature `j` shuffles with a seed derived from
/// `(seed, j * repeats + r)`, so the result does not depend on scheduling.
/// A column the model never reads scores exactly 0.
pub fn permutation_importance(
    model: &impl Classifier,
    data: &Dataset,
    repeats: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    if data.is_empty() {
        return Err(ExplainError::Empty("evaluation data"));
    }
    if repeats == 0 {
        return Err(ExplainError::Config("repeats must be at least 1".into()));
    }
    let x = data.features();
    let y = data.labels()?;
    let n = x.len();
    let base = count_correct(model, &x, &y);

    let jobs: Vec<(usize, usize)> = (0..N_FEATURES)
        .flat_map(|j| (0..repeats).map(move |r| (j, r)))
        .collect();
    let correct: Vec<u64> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (j * repeats + r) as u64));
            let mut column: Vec<f64> = x.iter().map(|row| row[j]).collect();
            column.shuffle(&mut rng);
            let permuted: Vec<Features> = x
                .iter()
                .zip(&column)
                .map(|(row, &v)| {
                    let mut p = *row;
                    p[j] = v;
                    p
                })
                .collect();
            count_correct(model, &permuted, &y)
        })
        .collect();

    let mut contributions = [0.0; N_FEATURES];
    for (j, c) in contributions.iter_mut().enumerate() {
        let shuffled: u64 = correct[j * repeats..(j + 1) * repeats].iter().sum();
        let drop = (base * repeats as u64) as i64 - shuffled as i64;
        *c = drop as f64 / (n * repeats) as f64;
    }
    Ok(Attribution {
        method: Method::Permutation,
        space: ScoreSpace::Accuracy,
        target: None,
        baseline: Some(base as f64 / n as f64),
        output: None,
        contributions,
        metadata: AttributionMetadata {
            n_samples: Some(n),
            seed: Some(seed),
            repeats: Some(repeats),
            ..Default::default()
        },
    })
}

/// Impurity (trees) or loss (boosting) decrease per feature, summed over
/// every split of every tree and normalized to sum to 1.
pub fn gain_importance(model: &TrainedModel) -> Result<Attribution, ExplainError> {
    let trees = model.trees().ok_or(ExplainError::Unsupported {
        method: Method::Gain,
        kind: model.kind(),
    })?;
    let mut total = [0.0; N_FEATURES];
    for tree in &trees {
        tree.accumulate_gain(&mut total);
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Attribution {
        method: Method::Gain,
        space: ScoreSpace::Gain,
        target: None,
        baseline: None,
        output: None,
        contributions: total,
        metadata: AttributionMetadata {
            n_samples: Some(model.n_train),
            note: (sum == 0.0).then(|| "model has no splits".to_string()),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{feature, fixture_dataset};
    use crate::models::{train_model, Hyperparameters, ModelKind, RfParams, Criterion};

    fn rainfall_rule(x: &Features) -> Vec<f64> {
        if x[feature::RAINFALL] > 150.0 {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        }
    }

    #[test]
    fn only_the_read_feature_matters() {
        let data = fixture_dataset();
        let labels: Vec<usize> = data
            .samples
            .iter()
            .map(|s| (s.features[feature::RAINFALL] > 150.0) as usize)
            .collect();
        let mut two = data.clone();
        two.classes = vec!["dry".into(), "wet".into()];
        for (s, l) in two.samples.iter_mut().zip(labels) {
            s.label = Some(l);
        }
        let a = permutation_importance(&(2usize, rainfall_rule), &two, 5, 3).unwrap();
        for j in 0..N_FEATURES {
            if j == feature::RAINFALL {
                assert!(a.contributions[j] > 0.0);
            } else {
                assert_eq!(a.contributions[j], 0.0);
            }
        }
        assert_eq!(a.baseline, Some(1.0));
    }

    #[test]
    fn seeded_and_validated() {
        let data = fixture_dataset();
        let model = (data.n_classes(), |_: &Features| {
            let mut p = vec![0.0; 22];
            p[0] = 1.0;
            p
        });
        assert_eq!(
            permutation_importance(&model, &data, 2, 9).unwrap(),
            permutation_importance(&model, &data, 2, 9).unwrap()
        );
        assert!(permutation_importance(&model, &data, 0, 9).is_err());
        assert!(permutation_importance(&model, &Dataset::empty(), 1, 9).is_err());
    }

    #[test]
    fn gain_requires_trees_and_normalizes() {
        let data = fixture_dataset();
        let knn = train_model(ModelKind::Knn, &Hyperparameters::best(ModelKind::Knn), &data, 0).unwrap();
        assert!(matches!(gain_importance(&knn), Err(ExplainError::Unsupported { .. })));
        let rf = train_model(
            ModelKind::Rf,
            &Hyperparameters::Rf(RfParams {
                max_depth: 4,
                n_estimators: 12,
                criterion: Criterion::Gini,
            }),
            &data,
            0,
        )
        .unwrap();
        let g = gain_importance(&rf).unwrap();
        assert!((g.contributions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(g.contributions.iter().all(|&v| v >= 0.0));
    }
}
