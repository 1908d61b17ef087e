use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classification_tree, CartConfig, Tree};
use super::{derive_seed, Criterion, Splitter};
use crate::data::{Features, N_FEATURES};

/// Bagged ensemble of CART trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Features drawn as split candidates in each tree.
    pub feature_log: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub criterion: Criterion,
    pub bootstrap: bool,
    pub max_features: Option<usize>,
    pub excluded_features: Vec<usize>,
}

/// floor(sqrt(7)) candidate features per split.
pub fn default_max_features() -> usize {
    (N_FEATURES as f64).sqrt().floor() as usize
}

impl Forest {
    /// Trees are grown in parallel, each from its own seed derived from
    /// `(seed, tree index)`, and collected in index order.
    pub fn fit(x: &[Features], y: &[usize], n_classes: usize, config: &ForestConfig, seed: u64) -> Self {
        let cart = CartConfig {
            criterion: config.criterion,
            splitter: Splitter::Best,
            max_depth: config.max_depth,
            min_samples_split: 2,
            max_features: config.max_features,
            excluded_features: config.excluded_features.clone(),
        };
        let grown: Vec<(Tree, Vec<usize>)> = (0..config.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let weights = if config.bootstrap {
                    let mut w = vec![0u32; x.len()];
                    for _ in 0..x.len() {
                        w[rng.random_range(0..x.len())] += 1;
                    }
                    w
                } else {
                    vec![1u32; x.len()]
                };
                grow_classification_tree(x, y, &weights, n_classes, &cart, &mut rng)
            })
            .collect();
        let (trees, feature_log) = grown.into_iter().unzip();
        Self { trees, feature_log }
    }

    /// Mean of the per-tree leaf class distributions.
    pub fn predict_proba(&self, x: &Features) -> Vec<f64> {
        let mut out = vec![0.0; self.trees[0].nodes[0].value().len()];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(tree.predict(x)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}
