use super::{check_target, Attribution, AttributionMetadata, ExplainError, Method, ScoreSpace};
use crate::data::{Features, N_FEATURES};
use crate::models::tree::{Tree, TreeNode};
use crate::models::{ModelParameters, TrainedModel};

/// Adds `(child - parent)` of `output` along `x`'s path to the split
/// feature's entry and returns the root value.
fn walk(tree: &Tree, x: &Features, output: usize, acc: &mut [f64; N_FEATURES]) -> f64 {
    let path = tree.decision_path(x);
    for pair in path.windows(2) {
        let TreeNode::Internal { feature, value, .. } = &tree.nodes[pair[0]] else {
            unreachable!("only the last path node is a leaf");
        };
        acc[*feature] += tree.nodes[pair[1]].value()[output] - value[output];
    }
    tree.nodes[0].value()[output]
}

/// Parent-to-child contributions along each tree's decision path.
///
/// DT and RF attributions live in probability space (forest contributions
/// are averaged over trees); boosting attributions live in the pre-softmax
/// margin space of the target class, with the initial score folded into the
/// baseline.
pub fn path_contributions(
    model: &TrainedModel,
    x: &Features,
    target: usize,
) -> Result<Attribution, ExplainError> {
    check_target(target, model.classes.len())?;
    let mut contributions = [0.0; N_FEATURES];
    let (baseline, output, space, n_trees, note) = match &model.parameters {
        ModelParameters::Dt(tree) => {
            let base = walk(tree, x, target, &mut contributions);
            (base, tree.predict(x)[target], ScoreSpace::Probability, 1, None)
        }
        ModelParameters::Rf(forest) => {
            let n = forest.trees.len() as f64;
            let mut base = 0.0;
            for tree in &forest.trees {
                base += walk(tree, x, target, &mut contributions);
            }
            contributions.iter_mut().for_each(|c| *c /= n);
            let output = forest.predict_proba(x)[target];
            (base / n, output, ScoreSpace::Probability, forest.trees.len(), None)
        }
        ModelParameters::Lgbm(booster) => {
            let mut base = booster.init_score[target];
            for tree in &booster.class_trees[target] {
                base += walk(tree, x, 0, &mut contributions);
            }
            let output = booster.margins(x)[target];
            let note = "contributions sum to the target-class margin (log-odds before softmax), not its probability";
            (
                base,
                output,
                ScoreSpace::Margin,
                booster.class_trees[target].len(),
                Some(note.to_string()),
            )
        }
        _ => {
            return Err(ExplainError::Unsupported {
                method: Method::Path,
                kind: model.kind(),
            })
        }
    };
    Ok(Attribution {
        method: Method::Path,
        space,
        target: Some(target),
        baseline: Some(baseline),
        output: Some(output),
        contributions,
        metadata: AttributionMetadata {
            n_samples: Some(n_trees),
            note,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{feature, fixture_dataset, FeatureSchema, FeatureStats, FeatureSummary};
    use crate::models::{DtParams, Criterion, Hyperparameters, Splitter};

    fn wrap(tree: Tree) -> TrainedModel {
        let summary = FeatureSummary {
            min: 0.0,
            max: 1.0,
            mean: 0.5,
            std: 0.5,
            q1: 0.25,
            median: 0.5,
            q3: 0.75,
            mad: 0.25,
        };
        TrainedModel {
            hyperparameters: Hyperparameters::Dt(DtParams {
                max_depth: 2,
                criterion: Criterion::Gini,
                splitter: Splitter::Best,
                min_samples_split: 2,
            }),
            classes: vec!["a".into(), "b".into()],
            schema: FeatureSchema::crop(),
            scaler: None,
            parameters: ModelParameters::Dt(tree),
            stats: FeatureStats {
                features: vec![summary; N_FEATURES],
            },
            seed: 0,
            n_train: 8,
            created_at: None,
        }
    }

    fn internal(feature: usize, threshold: f64, left: usize, right: usize, value: Vec<f64>) -> TreeNode {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            value,
            n_samples: 0,
            gain: 0.0,
        }
    }

    fn leaf(value: Vec<f64>) -> TreeNode {
        TreeNode::Leaf { value, n_samples: 0 }
    }

    #[test]
    fn depth_two_tree_matches_hand_deltas() {
        // root (rainfall <= 100) value .5; left leaf .2; right (humidity <= 60) value .8
        // with leaves .6 and 1.0
        let tree = Tree {
            nodes: vec![
                internal(feature::RAINFALL, 100.0, 1, 2, vec![0.5, 0.5]),
                leaf(vec![0.8, 0.2]),
                internal(feature::HUMIDITY, 60.0, 3, 4, vec![0.2, 0.8]),
                leaf(vec![0.4, 0.6]),
                leaf(vec![0.0, 1.0]),
            ],
        };
        let model = wrap(tree);
        let mut x = [0.0; N_FEATURES];
        x[feature::RAINFALL] = 150.0;
        x[feature::HUMIDITY] = 50.0;
        let a = path_contributions(&model, &x, 1).unwrap();
        assert_eq!(a.baseline, Some(0.5));
        assert!((a.contributions[feature::RAINFALL] - 0.3).abs() < 1e-15);
        assert!((a.contributions[feature::HUMIDITY] - (-0.2)).abs() < 1e-15);
        assert_eq!(a.output, Some(0.6));
        assert!((a.reconstructed().unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn root_leaf_gives_zero_contributions() {
        let model = wrap(Tree::leaf(vec![0.25, 0.75], 4));
        let a = path_contributions(&model, &[1.0; N_FEATURES], 1).unwrap();
        assert_eq!(a.contributions, [0.0; N_FEATURES]);
        assert_eq!(a.baseline, a.output);
    }

    #[test]
    fn unknown_target_and_unsupported_kind() {
        let model = wrap(Tree::leaf(vec![0.25, 0.75], 4));
        assert!(matches!(
            path_contributions(&model, &[0.0; N_FEATURES], 2),
            Err(ExplainError::UnknownTarget { .. })
        ));
        let data = fixture_dataset();
        let knn = crate::models::train_model(
            crate::models::ModelKind::Knn,
            &Hyperparameters::best(crate::models::ModelKind::Knn),
            &data,
            0,
        )
        .unwrap();
        assert!(matches!(
            path_contributions(&knn, &data.samples[0].features, 0),
            Err(ExplainError::Unsupported { .. })
        ));
    }
}
