//! Binary decision trees and the CART classification-tree learner.
//!
//! Trees are stored as a flat arena with the root at index 0. Every node,
//! internal or leaf, carries a `value` vector: class frequencies for
//! classification trees, a single output for boosting trees. Internal node
//! values are the sample-weighted mean of their children, so walking a
//! decision path telescopes from the root value to the leaf value.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Criterion, Splitter};
use crate::data::{Features, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        value: Vec<f64>,
        n_samples: usize,
        /// Impurity (or loss) decrease achieved by this split.
        gain: f64,
    },
    Leaf {
        value: Vec<f64>,
        n_samples: usize,
    },
}

impl TreeNode {
    pub fn value(&self) -> &[f64] {
        match self {
            TreeNode::Internal { value, .. } | TreeNode::Leaf { value, .. } => value,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            TreeNode::Internal { n_samples, .. } | TreeNode::Leaf { n_samples, .. } => *n_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: Vec<f64>, n_samples: usize) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value, n_samples }],
        }
    }

    /// Node indices from the root to the leaf reached by `x`.
    /// Samples with `x[feature] <= threshold` go left.
    pub fn decision_path(&self, x: &Features) -> Vec<usize> {
        let mut path = vec![0];
        let mut at = 0;
        while let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[at]
        {
            at = if x[*feature] <= *threshold { *left } else { *right };
            path.push(at);
        }
        path
    }

    pub fn leaf_index(&self, x: &Features) -> usize {
        let mut at = 0;
        while let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[at]
        {
            at = if x[*feature] <= *threshold { *left } else { *right };
        }
        at
    }

    pub fn predict(&self, x: &Features) -> &[f64] {
        self.nodes[self.leaf_index(x)].value()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Internal { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Adds each split's gain to `out[feature]`.
    pub fn accumulate_gain(&self, out: &mut [f64; N_FEATURES]) {
        for node in &self.nodes {
            if let TreeNode::Internal { feature, gain, .. } = node {
                out[*feature] += gain.max(0.0);
            }
        }
    }
}

/// Settings for growing one classification tree.
#[derive(Debug, Clone)]
pub struct CartConfig {
    pub criterion: Criterion,
    pub splitter: Splitter,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Number of candidate features drawn per split; `None` uses all of them.
    pub max_features: Option<usize>,
    /// Features never considered for a split.
    pub excluded_features: Vec<usize>,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Gini,
            splitter: Splitter::Best,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            excluded_features: Vec::new(),
        }
    }
}

fn impurity(criterion: Criterion, counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|c| {
                let p = c / total;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// CART learner for class-frequency trees.
///
/// `weights` are integer multiplicities (bootstrap counts); samples with
/// weight 0 are ignored. Returns the tree and the distinct features that were
/// drawn as split candidates.
pub fn grow_classification_tree(
    x: &[Features],
    y: &[usize],
    weights: &[u32],
    n_classes: usize,
    config: &CartConfig,
    rng: &mut ChaCha8Rng,
) -> (Tree, Vec<usize>) {
    let allowed: Vec<usize> = (0..N_FEATURES)
        .filter(|j| !config.excluded_features.contains(j))
        .collect();
    let root: Vec<usize> = (0..x.len()).filter(|&i| weights[i] > 0).collect();
    let mut builder = CartBuilder {
        x,
        y,
        weights,
        n_classes,
        config,
        allowed,
        nodes: Vec::new(),
        drawn: [false; N_FEATURES],
    };
    builder.build(root, rng);
    let drawn = (0..N_FEATURES).filter(|&j| builder.drawn[j]).collect();
    (Tree { nodes: builder.nodes }, drawn)
}

struct CartBuilder<'a> {
    x: &'a [Features],
    y: &'a [usize],
    weights: &'a [u32],
    n_classes: usize,
    config: &'a CartConfig,
    allowed: Vec<usize>,
    nodes: Vec<TreeNode>,
    drawn: [bool; N_FEATURES],
}

impl CartBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += self.weights[i] as f64;
        }
        let total = counts.iter().sum();
        (counts, total)
    }

    fn build(&mut self, root: Vec<usize>, rng: &mut ChaCha8Rng) {
        // Depth-first with an explicit stack; children are patched into the
        // parent once their arena index is known.
        struct Pending {
            idx: Vec<usize>,
            depth: usize,
            parent: Option<(usize, bool)>,
        }
        let mut stack = vec![Pending {
            idx: root,
            depth: 0,
            parent: None,
        }];
        while let Some(Pending { idx, depth, parent }) = stack.pop() {
            let (counts, total) = self.counts(&idx);
            let value: Vec<f64> = if total > 0.0 {
                counts.iter().map(|c| c / total).collect()
            } else {
                vec![0.0; self.n_classes]
            };
            let n_samples = total as usize;
            let node_impurity = impurity(self.config.criterion, &counts, total);
            let can_split = self.config.max_depth.is_none_or(|d| depth < d)
                && n_samples >= self.config.min_samples_split
                && node_impurity > 0.0;
            let split = if can_split {
                self.best_split(&idx, &counts, total, node_impurity, rng)
            } else {
                None
            };
            let at = self.nodes.len();
            if let Some((p, is_left)) = parent {
                if let TreeNode::Internal { left, right, .. } = &mut self.nodes[p] {
                    if is_left {
                        *left = at;
                    } else {
                        *right = at;
                    }
                }
            }
            match split {
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x[i][s.feature] <= s.threshold);
                    self.nodes.push(TreeNode::Internal {
                        feature: s.feature,
                        threshold: s.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                        value,
                        n_samples,
                        gain: s.gain,
                    });
                    // Right pushed first so the left subtree is laid out first.
                    stack.push(Pending {
                        idx: r,
                        depth: depth + 1,
                        parent: Some((at, false)),
                    });
                    stack.push(Pending {
                        idx: l,
                        depth: depth + 1,
                        parent: Some((at, true)),
                    });
                }
                None => self.nodes.push(TreeNode::Leaf { value, n_samples }),
            }
        }
    }

    fn best_split(
        &mut self,
        idx: &[usize],
        counts: &[f64],
        total: f64,
        node_impurity: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<SplitCandidate> {
        let mut order = self.allowed.clone();
        let budget = match self.config.max_features {
            Some(m) if m < order.len() => {
                order.shuffle(rng);
                m.max(1)
            }
            _ => order.len(),
        };
        let mut best: Option<SplitCandidate> = None;
        let mut visited_informative = 0;
        let mut sorted: Vec<usize> = Vec::with_capacity(idx.len());
        for &feature in &order {
            if visited_informative >= budget {
                break;
            }
            self.drawn[feature] = true;
            sorted.clear();
            sorted.extend_from_slice(idx);
            sorted.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
            let lo = self.x[sorted[0]][feature];
            let hi = self.x[sorted[sorted.len() - 1]][feature];
            if lo >= hi {
                // Constant features do not count towards the candidate budget.
                continue;
            }
            visited_informative += 1;
            let candidate = match self.config.splitter {
                Splitter::Best => self.scan_feature(feature, &sorted, counts, total, node_impurity),
                Splitter::Random => {
                    let mut t = rng.random_range(lo..hi);
                    if t >= hi {
                        t = lo;
                    }
                    self.evaluate_threshold(feature, &sorted, t, counts, total, node_impurity)
                }
            };
            if let Some(c) = candidate {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn children_gain(
        &self,
        left: &[f64],
        w_left: f64,
        counts: &[f64],
        total: f64,
        node_impurity: f64,
    ) -> f64 {
        let right: Vec<f64> = counts.iter().zip(left).map(|(c, l)| c - l).collect();
        let w_right = total - w_left;
        total * node_impurity
            - w_left * impurity(self.config.criterion, left, w_left)
            - w_right * impurity(self.config.criterion, &right, w_right)
    }

    fn scan_feature(
        &self,
        feature: usize,
        sorted: &[usize],
        counts: &[f64],
        total: f64,
        node_impurity: f64,
    ) -> Option<SplitCandidate> {
        let mut left = vec![0.0; self.n_classes];
        let mut w_left = 0.0;
        let mut best: Option<SplitCandidate> = None;
        for k in 0..sorted.len() - 1 {
            let i = sorted[k];
            let w = self.weights[i] as f64;
            left[self.y[i]] += w;
            w_left += w;
            let v = self.x[i][feature];
            let next = self.x[sorted[k + 1]][feature];
            if next <= v {
                continue;
            }
            let gain = self.children_gain(&left, w_left, counts, total, node_impurity);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    fn evaluate_threshold(
        &self,
        feature: usize,
        sorted: &[usize],
        threshold: f64,
        counts: &[f64],
        total: f64,
        node_impurity: f64,
    ) -> Option<SplitCandidate> {
        let mut left = vec![0.0; self.n_classes];
        let mut w_left = 0.0;
        for &i in sorted {
            if self.x[i][feature] > threshold {
                break;
            }
            left[self.y[i]] += self.weights[i] as f64;
            w_left += self.weights[i] as f64;
        }
        if w_left <= 0.0 || w_left >= total {
            return None;
        }
        Some(SplitCandidate {
            feature,
            threshold,
            gain: self.children_gain(&left, w_left, counts, total, node_impurity),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grow(x: &[Features], y: &[usize], config: &CartConfig) -> Tree {
        let w = vec![1; x.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        grow_classification_tree(x, y, &w, 2, config, &mut rng).0
    }

    fn row(v: f64, other: f64) -> Features {
        [other, 0.0, 0.0, 0.0, 0.0, 0.0, v]
    }

    #[test]
    fn separable_stump_is_exact() {
        let x: Vec<Features> = (0..10).map(|i| row(i as f64, (i % 3) as f64)).collect();
        let y: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        let tree = grow(
            &x,
            &y,
            &CartConfig {
                max_depth: Some(1),
                ..Default::default()
            },
        );
        assert_eq!(tree.depth(), 1);
        match &tree.nodes[0] {
            TreeNode::Internal { feature, threshold, .. } => {
                assert_eq!(*feature, 6);
                assert_eq!(*threshold, 4.5);
            }
            _ => panic!("expected a split"),
        }
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(tree.predict(xi)[yi], 1.0);
        }
    }

    #[test]
    fn xor_is_fit_when_unbounded() {
        let x = vec![
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let y = vec![0, 1, 1, 0];
        let tree = grow(&x, &y, &CartConfig::default());
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(tree.predict(xi)[yi], 1.0);
        }
    }

    #[test]
    fn node_values_are_weighted_child_means() {
        let data = crate::data::fixture_dataset();
        let x = data.features();
        let y = data.labels().unwrap();
        let w: Vec<u32> = (0..x.len()).map(|i| (i % 3) as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = CartConfig {
            criterion: Criterion::Entropy,
            max_features: Some(2),
            ..Default::default()
        };
        let (tree, _) = grow_classification_tree(&x, &y, &w, 22, &config, &mut rng);
        for node in &tree.nodes {
            if let TreeNode::Internal {
                left,
                right,
                value,
                n_samples,
                ..
            } = node
            {
                let (l, r) = (&tree.nodes[*left], &tree.nodes[*right]);
                assert_eq!(l.n_samples() + r.n_samples(), *n_samples);
                for k in 0..22 {
                    let mixed = (l.value()[k] * l.n_samples() as f64
                        + r.value()[k] * r.n_samples() as f64)
                        / *n_samples as f64;
                    assert!((mixed - value[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn excluded_features_never_split() {
        let data = crate::data::fixture_dataset();
        let config = CartConfig {
            excluded_features: vec![4, 6],
            ..Default::default()
        };
        let x = data.features();
        let y = data.labels().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tree, drawn) = grow_classification_tree(&x, &y, &vec![1; x.len()], 22, &config, &mut rng);
        assert!(!tree.split_features().contains(&4));
        assert!(!tree.split_features().contains(&6));
        assert!(!drawn.contains(&4));
    }

    #[test]
    fn entropy_and_gini_reference_values() {
        assert!((impurity(Criterion::Gini, &[1.0, 1.0], 2.0) - 0.5).abs() < 1e-15);
        assert!((impurity(Criterion::Entropy, &[1.0, 1.0], 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(impurity(Criterion::Entropy, &[3.0, 0.0], 3.0), 0.0);
    }
}
