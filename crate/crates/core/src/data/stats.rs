use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, N_FEATURES};

/// Summary statistics of one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Median absolute deviation from the median (unscaled).
    pub mad: f64,
}

impl FeatureSummary {
    fn of(values: &mut [f64]) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let median = quantile_linear(values, 0.5);
        let mut dev: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        Self {
            min: values[0],
            max: values[values.len() - 1],
            mean,
            std: var.sqrt(),
            q1: quantile_linear(values, 0.25),
            median,
            q3: quantile_linear(values, 0.75),
            mad: quantile_linear(&dev, 0.5),
        }
    }

    /// Scale used for normalized distances: MAD, or half the range when MAD is 0,
    /// or 1 for a constant column.
    pub fn robust_scale(&self) -> f64 {
        if self.mad > 0.0 {
            self.mad
        } else if self.max > self.min {
            (self.max - self.min) / 2.0
        } else {
            1.0
        }
    }
}

/// Per-feature statistics in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub features: Vec<FeatureSummary>,
}

impl FeatureStats {
    pub fn get(&self, j: usize) -> &FeatureSummary {
        &self.features[j]
    }
}

/// Quantile of sorted data by linear interpolation between closest ranks
/// (position `q * (n - 1)`).
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn compute_stats(dataset: &Dataset) -> Result<FeatureStats, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    let features = (0..N_FEATURES)
        .map(|j| {
            let mut col: Vec<f64> = dataset.samples.iter().map(|s| s.features[j]).collect();
            FeatureSummary::of(&mut col)
        })
        .collect();
    Ok(FeatureStats { features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fixture_dataset, Sample};
    use proptest::prelude::*;

    #[test]
    fn single_sample_stats_collapse() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let ds = Dataset::from_samples(vec![Sample::new(x)]);
        let st = compute_stats(&ds).unwrap();
        for (j, f) in st.features.iter().enumerate() {
            for v in [f.min, f.max, f.mean, f.q1, f.median, f.q3] {
                assert_eq!(v, x[j]);
            }
            assert_eq!(f.std, 0.0);
            assert_eq!(f.mad, 0.0);
        }
    }

    #[test]
    fn two_samples_mean_and_range() {
        let ds = Dataset::from_samples(vec![Sample::new([0.0; 7]), Sample::new([10.0; 7])]);
        let f = compute_stats(&ds).unwrap().features[0];
        assert_eq!((f.mean, f.min, f.max), (5.0, 0.0, 10.0));
        assert_eq!((f.q1, f.median, f.q3), (2.5, 5.0, 7.5));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(compute_stats(&Dataset::empty()), Err(DataError::Empty)));
    }

    #[test]
    fn linear_quantiles_match_numpy_default() {
        // numpy.percentile([1, 2, 3, 4], [25, 50, 75]) == [1.75, 2.5, 3.25]
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_linear(&v, 0.25), 1.75);
        assert_eq!(quantile_linear(&v, 0.5), 2.5);
        assert_eq!(quantile_linear(&v, 0.75), 3.25);
    }

    #[test]
    fn fixture_respects_physical_bounds() {
        let st = compute_stats(&fixture_dataset()).unwrap();
        assert!(st.features[crate::data::feature::HUMIDITY].max <= 100.0);
        assert!(st.features[crate::data::feature::PH].max <= 14.0);
    }

    proptest! {
        #[test]
        fn order_statistics_are_monotone(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            let ds = Dataset::from_samples(values.iter().map(|&v| Sample::new([v; 7])).collect());
            let f = compute_stats(&ds).unwrap().features[3];
            prop_assert!(f.min <= f.q1 && f.q1 <= f.median && f.median <= f.q3 && f.q3 <= f.max);
            prop_assert!(f.std >= 0.0 && f.mad >= 0.0);
        }
    }
}
