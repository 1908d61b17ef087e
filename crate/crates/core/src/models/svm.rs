//! Pairwise (one-vs-one) support vector machines.
//!
//! Every pair of classes present in the training data gets a binary SVM
//! minimizing `0.5 * |w|^2 + C * sum(hinge)`, solved by dual coordinate
//! descent over the samples in a seeded random order each epoch. The
//! intercept is learned as the weight of a constant input. For the linear
//! kernel that input equals the root-mean-square norm of the training rows,
//! which keeps the intercept weakly penalized without hurting conditioning.
//!
//! Class scores combine the pairwise decisions as votes plus a bounded
//! confidence term, so the argmax is the majority vote and the softmax of the
//! scores is a smooth probability vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, softmax};
use crate::data::{Features, N_FEATURES};

pub const MAX_EPOCHS: usize = 2000;
pub const TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseLinear {
    pub positive: usize,
    pub negative: usize,
    /// 7 weights followed by the intercept.
    pub weights: [f64; N_FEATURES + 1],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKernel {
    pub positive: usize,
    pub negative: usize,
    /// `(support index, alpha * y)` for every non-zero dual variable.
    pub coef: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "lowercase")]
pub enum SvmModel {
    Linear {
        n_classes: usize,
        intercept_scale: f64,
        pairs: Vec<PairwiseLinear>,
    },
    Rbf {
        n_classes: usize,
        gamma: f64,
        support: Vec<Features>,
        pairs: Vec<PairwiseKernel>,
    },
}

fn rbf(gamma: f64, a: &Features, b: &Features) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d2).exp()
}

fn augmented(x: &Features, scale: f64) -> [f64; N_FEATURES + 1] {
    let mut a = [scale; N_FEATURES + 1];
    a[..N_FEATURES].copy_from_slice(x);
    a
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairs `(a, b)` with `a < b` of classes that have training samples.
fn class_pairs(y: &[usize], n_classes: usize) -> Vec<(usize, usize)> {
    let mut present = vec![false; n_classes];
    for &l in y {
        present[l] = true;
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&k| present[k]).collect();
    let mut pairs = Vec::new();
    for (i, &a) in classes.iter().enumerate() {
        for &b in &classes[i + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Dual coordinate descent for one binary problem.
///
/// `gram_diag[i]` is `K(i, i)`; `decision(i)` returns the current
/// `sum_j alpha_j y_j K(j, i)` and `apply(i, delta)` adds `delta * y_i`
/// times sample `i` to the primal state.
fn dual_descent(
    target: &[f64],
    c: f64,
    gram_diag: &[f64],
    seed: u64,
    mut decision: impl FnMut(usize) -> f64,
    mut apply: impl FnMut(usize, f64),
) -> Vec<f64> {
    let n = target.len();
    let mut alpha = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = target[i] * decision(i) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 && gram_diag[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / gram_diag[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * target[i];
                if delta != 0.0 {
                    apply(i, delta);
                }
            }
        }
        if pg_max - pg_min < TOLERANCE {
            break;
        }
    }
    alpha
}

impl SvmModel {
    pub fn fit_linear(x: &[Features], y: &[usize], n_classes: usize, c: f64, seed: u64) -> Self {
        let mean_sq = x.iter().map(|r| dot(r, r)).sum::<f64>() / x.len().max(1) as f64;
        let intercept_scale = if mean_sq > 0.0 { mean_sq.sqrt() } else { 1.0 };
        let inputs: Vec<[f64; N_FEATURES + 1]> = x.iter().map(|r| augmented(r, intercept_scale)).collect();
        let pairs = class_pairs(y, n_classes)
            .into_par_iter()
            .enumerate()
            .map(|(p, (a, b))| {
                let rows: Vec<usize> = (0..x.len()).filter(|&i| y[i] == a || y[i] == b).collect();
                let target: Vec<f64> = rows.iter().map(|&i| if y[i] == a { 1.0 } else { -1.0 }).collect();
                let diag: Vec<f64> = rows.iter().map(|&i| dot(&inputs[i], &inputs[i])).collect();
                let w = std::cell::RefCell::new([0.0; N_FEATURES + 1]);
                dual_descent(
                    &target,
                    c,
                    &diag,
                    derive_seed(seed, p as u64),
                    |i| dot(&*w.borrow(), &inputs[rows[i]]),
                    |i, delta| {
                        for (wj, xj) in w.borrow_mut().iter_mut().zip(&inputs[rows[i]]) {
                            *wj += delta * xj;
                        }
                    },
                );
                PairwiseLinear {
                    positive: a,
                    negative: b,
                    weights: w.into_inner(),
                }
            })
            .collect();
        SvmModel::Linear {
            n_classes,
            intercept_scale,
            pairs,
        }
    }

    pub fn fit_rbf(x: &[Features], y: &[usize], n_classes: usize, c: f64, gamma: f64, seed: u64) -> Self {
        let pairs = class_pairs(y, n_classes)
            .into_par_iter()
            .enumerate()
            .map(|(p, (a, b))| {
                let rows: Vec<usize> = (0..x.len()).filter(|&i| y[i] == a || y[i] == b).collect();
                let target: Vec<f64> = rows.iter().map(|&i| if y[i] == a { 1.0 } else { -1.0 }).collect();
                // The constant 1 added to the kernel plays the role of the intercept.
                let gram: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| rows.iter().map(|&j| rbf(gamma, &x[i], &x[j]) + 1.0).collect())
                    .collect();
                let diag: Vec<f64> = (0..rows.len()).map(|i| gram[i][i]).collect();
                let scores = std::cell::RefCell::new(vec![0.0; rows.len()]);
                let alpha = dual_descent(
                    &target,
                    c,
                    &diag,
                    derive_seed(seed, p as u64),
                    |i| scores.borrow()[i],
                    |i, delta| {
                        for (s, k) in scores.borrow_mut().iter_mut().zip(&gram[i]) {
                            *s += delta * k;
                        }
                    },
                );
                let coef = rows
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| alpha[*r] > 0.0)
                    .map(|(r, &i)| (i, alpha[r] * target[r]))
                    .collect();
                PairwiseKernel {
                    positive: a,
                    negative: b,
                    coef,
                }
            })
            .collect();
        SvmModel::Rbf {
            n_classes,
            gamma,
            support: x.to_vec(),
            pairs,
        }
    }

    /// Decision value of every pairwise machine, positive favouring the
    /// pair's first class.
    pub fn pairwise_decisions(&self, x: &Features) -> Vec<(usize, usize, f64)> {
        match self {
            SvmModel::Linear {
                intercept_scale,
                pairs,
                ..
            } => {
                let a = augmented(x, *intercept_scale);
                pairs
                    .iter()
                    .map(|p| (p.positive, p.negative, dot(&p.weights, &a)))
                    .collect()
            }
            SvmModel::Rbf {
                gamma,
                support,
                pairs,
                ..
            } => pairs
                .iter()
                .map(|p| {
                    let d = p
                        .coef
                        .iter()
                        .map(|&(i, c)| c * (rbf(*gamma, &support[i], x) + 1.0))
                        .sum();
                    (p.positive, p.negative, d)
                })
                .collect(),
        }
    }

    /// Per-class scores: pairwise votes plus `conf / (3 * (|conf| + 1))`,
    /// where `conf` sums the decision values in the class's favour.
    pub fn margins(&self, x: &Features) -> Vec<f64> {
        let n_classes = match self {
            SvmModel::Linear { n_classes, .. } | SvmModel::Rbf { n_classes, .. } => *n_classes,
        };
        let mut votes = vec![0.0; n_classes];
        let mut conf = vec![0.0; n_classes];
        for (a, b, d) in self.pairwise_decisions(x) {
            if d > 0.0 {
                votes[a] += 1.0;
            } else {
                votes[b] += 1.0;
            }
            conf[a] += d;
            conf[b] -= d;
        }
        votes
            .iter()
            .zip(&conf)
            .map(|(v, c)| v + c / (3.0 * (c.abs() + 1.0)))
            .collect()
    }

    pub fn predict_proba(&self, x: &Features) -> Vec<f64> {
        softmax(&self.margins(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Features>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let s = (i as f64) * 0.05;
            x.push([-1.5 - s, 0.3 * s, 0.0, 0.0, 0.0, 0.0, 0.0]);
            y.push(0);
            x.push([1.5 + s, -0.3 * s, 0.0, 0.0, 0.0, 0.0, 0.0]);
            y.push(1);
        }
        (x, y)
    }

    #[test]
    fn separable_data_reaches_zero_hinge_loss() {
        let (x, y) = separable();
        let model = SvmModel::fit_linear(&x, &y, 2, 1e3, 0);
        let hinge: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, &yi)| {
                let t = if yi == 0 { 1.0 } else { -1.0 };
                let d = model.pairwise_decisions(xi)[0].2;
                (1.0 - t * d).max(0.0)
            })
            .sum();
        assert!(hinge < 1e-3, "hinge loss {hinge}");
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(super::super::argmax(&model.predict_proba(xi)), yi);
        }
    }

    #[test]
    fn rbf_separates_and_normalizes() {
        let (x, y) = separable();
        let model = SvmModel::fit_rbf(&x, &y, 2, 1.0, 0.5, 0);
        for (xi, &yi) in x.iter().zip(&y) {
            let p = model.predict_proba(xi);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p[yi] > 0.5);
        }
    }

    #[test]
    fn absent_classes_get_no_machines() {
        let (x, mut y) = separable();
        y.iter_mut().for_each(|l| *l = if *l == 0 { 1 } else { 3 });
        let model = SvmModel::fit_linear(&x, &y, 5, 1.0, 0);
        let SvmModel::Linear { pairs, .. } = &model else { unreachable!() };
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].positive, pairs[0].negative), (1, 3));
        let p = model.predict_proba(&x[0]);
        assert_eq!(super::super::argmax(&p), 1);
    }
}
