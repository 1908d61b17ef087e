//! Multiclass gradient boosting with leaf-wise histogram trees.
//!
//! Each round fits one regression tree per class to the softmax
//! cross-entropy gradients (Newton leaf values), growing it by repeatedly
//! splitting the leaf with the largest loss reduction until `num_leaves`
//! leaves exist. Feature values are bucketed into at most 63 quantile bins.

use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeNode};
use super::{log_softmax_loss, softmax};
use crate::data::{quantile_linear, Features, N_FEATURES};

pub const MAX_BINS: usize = 63;
pub const MIN_SAMPLES_LEAF: usize = 5;
const MIN_HESSIAN_LEAF: f64 = 1e-3;
const MIN_PRIOR: f64 = 1e-6;

/// Upper bin edges of one feature; bin `b` holds values in `(cut[b-1], cut[b]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub cuts: Vec<f64>,
}

impl BinMapper {
    pub fn fit(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let mut cuts: Vec<f64> = if distinct.len() <= MAX_BINS {
            distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
        } else {
            (1..MAX_BINS)
                .map(|i| quantile_linear(&sorted, i as f64 / MAX_BINS as f64))
                .collect()
        };
        let max = distinct.last().copied().unwrap_or(0.0);
        cuts.retain(|&c| c < max);
        cuts.dedup();
        Self { cuts }
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin(&self, v: f64) -> usize {
        self.cuts.partition_point(|&c| c < v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub learning_rate: f64,
    pub init_score: Vec<f64>,
    /// `class_trees[k][round]` is the tree added to class `k`'s margin.
    pub class_trees: Vec<Vec<Tree>>,
}

#[derive(Debug, Clone)]
pub struct BoosterConfig {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub excluded_features: Vec<usize>,
}

#[derive(Clone, Copy, Default)]
struct BinStats {
    g: f64,
    h: f64,
    n: usize,
}

struct LeafSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct GrowingLeaf {
    rows: Vec<usize>,
    g: f64,
    h: f64,
    best: Option<LeafSplit>,
    /// Arena index of this leaf in the tree under construction.
    node: usize,
}

impl Booster {
    /// Fits the booster and returns it with the training loss after every
    /// round (index 0 is the loss of the initial scores).
    pub fn fit_with_history(
        x: &[Features],
        y: &[usize],
        n_classes: usize,
        config: &BoosterConfig,
    ) -> (Self, Vec<f64>) {
        let n = x.len();
        let mappers: Vec<BinMapper> = (0..N_FEATURES)
            .map(|j| BinMapper::fit(&x.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect();
        let binned: Vec<[u8; N_FEATURES]> = x
            .iter()
            .map(|r| std::array::from_fn(|j| mappers[j].bin(r[j]) as u8))
            .collect();
        let mut counts = vec![0usize; n_classes];
        for &l in y {
            counts[l] += 1;
        }
        let init_score: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 / n as f64).max(MIN_PRIOR).ln())
            .collect();
        let mut margins: Vec<Vec<f64>> = vec![init_score.clone(); n];
        let allowed: Vec<usize> = (0..N_FEATURES)
            .filter(|j| !config.excluded_features.contains(j))
            .collect();

        let mut history = vec![mean_loss(&margins, y)];
        let mut class_trees: Vec<Vec<Tree>> = vec![Vec::with_capacity(config.n_estimators); n_classes];
        for _ in 0..config.n_estimators {
            let probs: Vec<Vec<f64>> = margins.iter().map(|m| softmax(m)).collect();
            let mut round = Vec::with_capacity(n_classes);
            for k in 0..n_classes {
                let grad: Vec<f64> = (0..n)
                    .map(|i| probs[i][k] - if y[i] == k { 1.0 } else { 0.0 })
                    .collect();
                let hess: Vec<f64> = (0..n).map(|i| probs[i][k] * (1.0 - probs[i][k])).collect();
                round.push(grow_leafwise(
                    &binned, &mappers, &grad, &hess, &allowed, config,
                ));
            }
            for (i, m) in margins.iter_mut().enumerate() {
                for (k, tree) in round.iter().enumerate() {
                    m[k] += tree.predict(&x[i])[0];
                }
            }
            for (k, tree) in round.into_iter().enumerate() {
                class_trees[k].push(tree);
            }
            history.push(mean_loss(&margins, y));
        }
        (
            Self {
                learning_rate: config.learning_rate,
                init_score,
                class_trees,
            },
            history,
        )
    }

    pub fn fit(x: &[Features], y: &[usize], n_classes: usize, config: &BoosterConfig) -> Self {
        Self::fit_with_history(x, y, n_classes, config).0
    }

    /// Pre-softmax class scores.
    pub fn margins(&self, x: &Features) -> Vec<f64> {
        self.init_score
            .iter()
            .zip(&self.class_trees)
            .map(|(init, trees)| init + trees.iter().map(|t| t.predict(x)[0]).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &Features) -> Vec<f64> {
        softmax(&self.margins(x))
    }
}

fn mean_loss(margins: &[Vec<f64>], y: &[usize]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(m, &l)| log_softmax_loss(m, l))
        .sum::<f64>()
        / y.len() as f64
}

fn leaf_output(g: f64, h: f64, lr: f64) -> f64 {
    if h > 1e-12 {
        -g / h * lr
    } else {
        0.0
    }
}

fn find_best_split(
    leaf: &GrowingLeaf,
    binned: &[[u8; N_FEATURES]],
    mappers: &[BinMapper],
    grad: &[f64],
    hess: &[f64],
    allowed: &[usize],
) -> Option<LeafSplit> {
    if leaf.rows.len() < 2 * MIN_SAMPLES_LEAF {
        return None;
    }
    let parent_score = leaf.g * leaf.g / leaf.h.max(1e-12);
    let mut best: Option<LeafSplit> = None;
    for &j in allowed {
        let n_bins = mappers[j].n_bins();
        if n_bins < 2 {
            continue;
        }
        let mut hist = vec![BinStats::default(); n_bins];
        for &i in &leaf.rows {
            let b = &mut hist[binned[i][j] as usize];
            b.g += grad[i];
            b.h += hess[i];
            b.n += 1;
        }
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for (b, s) in hist.iter().enumerate().take(n_bins - 1) {
            gl += s.g;
            hl += s.h;
            nl += s.n;
            let nr = leaf.rows.len() - nl;
            if nl < MIN_SAMPLES_LEAF {
                continue;
            }
            if nr < MIN_SAMPLES_LEAF {
                break;
            }
            let (gr, hr) = (leaf.g - gl, leaf.h - hl);
            if hl < MIN_HESSIAN_LEAF || hr < MIN_HESSIAN_LEAF {
                continue;
            }
            let gain = gl * gl / hl + gr * gr / hr - parent_score;
            if gain > 0.0 && best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(LeafSplit {
                    feature: j,
                    bin: b,
                    gain,
                });
            }
        }
    }
    best
}

fn grow_leafwise(
    binned: &[[u8; N_FEATURES]],
    mappers: &[BinMapper],
    grad: &[f64],
    hess: &[f64],
    allowed: &[usize],
    config: &BoosterConfig,
) -> Tree {
    let lr = config.learning_rate;
    let rows: Vec<usize> = (0..binned.len()).collect();
    let g: f64 = grad.iter().sum();
    let h: f64 = hess.iter().sum();
    let mut nodes = vec![TreeNode::Leaf {
        value: vec![leaf_output(g, h, lr)],
        n_samples: rows.len(),
    }];
    let mut root = GrowingLeaf {
        rows,
        g,
        h,
        best: None,
        node: 0,
    };
    root.best = find_best_split(&root, binned, mappers, grad, hess, allowed);
    let mut leaves = vec![root];

    while leaves.len() < config.num_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.as_ref().map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, gain)| match acc {
                Some((_, g)) if g >= gain => acc,
                _ => Some((i, gain)),
            });
        let Some((pick, _)) = pick else { break };
        let leaf = leaves.swap_remove(pick);
        let split = leaf.best.as_ref().expect("picked leaf has a split");
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&i| (binned[i][split.feature] as usize) <= split.bin);
        let sum = |rows: &[usize], v: &[f64]| rows.iter().map(|&i| v[i]).sum::<f64>();
        let (gl, hl) = (sum(&left_rows, grad), sum(&left_rows, hess));
        let (gr, hr) = (sum(&right_rows, grad), sum(&right_rows, hess));
        let left_node = nodes.len();
        let right_node = left_node + 1;
        nodes.push(TreeNode::Leaf {
            value: vec![leaf_output(gl, hl, lr)],
            n_samples: left_rows.len(),
        });
        nodes.push(TreeNode::Leaf {
            value: vec![leaf_output(gr, hr, lr)],
            n_samples: right_rows.len(),
        });
        nodes[leaf.node] = TreeNode::Internal {
            feature: split.feature,
            threshold: mappers[split.feature].cuts[split.bin],
            left: left_node,
            right: right_node,
            value: vec![0.0],
            n_samples: leaf.rows.len(),
            gain: split.gain / 2.0,
        };
        for (rows, g, h, node) in [(left_rows, gl, hl, left_node), (right_rows, gr, hr, right_node)] {
            let mut child = GrowingLeaf {
                rows,
                g,
                h,
                best: None,
                node,
            };
            child.best = find_best_split(&child, binned, mappers, grad, hess, allowed);
            leaves.push(child);
        }
        // Equal gains resolve to the earliest-created leaf.
        leaves.sort_by_key(|l| l.node);
    }
    let mut tree = Tree { nodes };
    fill_internal_values(&mut tree, 0);
    tree
}

/// Sets every internal node value to the sample-weighted mean of its children.
fn fill_internal_values(tree: &mut Tree, at: usize) -> f64 {
    let (left, right) = match &tree.nodes[at] {
        TreeNode::Leaf { value, .. } => return value[0],
        TreeNode::Internal { left, right, .. } => (*left, *right),
    };
    let lv = fill_internal_values(tree, left);
    let rv = fill_internal_values(tree, right);
    let (nl, nr) = (
        tree.nodes[left].n_samples() as f64,
        tree.nodes[right].n_samples() as f64,
    );
    let mean = (lv * nl + rv * nr) / (nl + nr);
    if let TreeNode::Internal { value, .. } = &mut tree.nodes[at] {
        value[0] = mean;
    }
    mean
}
