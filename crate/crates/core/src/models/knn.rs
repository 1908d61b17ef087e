use serde::{Deserialize, Serialize};

use super::DistanceMetric;
use crate::data::Features;

/// Stores the (scaled) training set and votes among the nearest neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: DistanceMetric,
    pub points: Vec<Features>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl KnnModel {
    pub fn distance(&self, a: &Features, b: &Features) -> f64 {
        match self.metric {
            DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            DistanceMetric::Cityblock => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    /// Vote fractions among the `k` nearest points; equal distances are
    /// ordered by training index.
    pub fn predict_proba(&self, z: &Features) -> Vec<f64> {
        let k = self.k.min(self.points.len());
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (self.distance(p, z), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, cmp);
            dist.truncate(k);
        }
        let mut votes = vec![0.0; self.n_classes];
        for &(_, i) in &dist {
            votes[self.labels[i]] += 1.0;
        }
        votes.iter_mut().for_each(|v| *v /= k as f64);
        votes
    }
}
