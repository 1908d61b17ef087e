use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Features, Sample, N_FEATURES};

/// Per-feature standardization fitted on training data.
///
/// Zero-variance columns keep a unit scale so they map to 0 instead of NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Features,
    pub std: Features,
}

impl Scaler {
    pub fn fit(train: &Dataset) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::Empty);
        }
        let n = train.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            let m = train.samples.iter().map(|s| s.features[j]).sum::<f64>() / n;
            let var = train
                .samples
                .iter()
                .map(|s| (s.features[j] - m).powi(2))
                .sum::<f64>()
                / n;
            mean[j] = m;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &Features) -> Features {
        std::array::from_fn(|j| (x[j] - self.mean[j]) / self.std[j])
    }

    pub fn inverse(&self, z: &Features) -> Features {
        std::array::from_fn(|j| z[j] * self.std[j] + self.mean[j])
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        Sample {
            features: self.transform(&sample.features),
            label: sample.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> Dataset {
        Dataset::from_samples(values.iter().map(|&v| Sample::new([v; 7])).collect())
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let s = Scaler::fit(&col(&[3.0, 3.0, 3.0])).unwrap();
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.transform(&[3.0; 7]), [0.0; 7]);
    }

    #[test]
    fn already_standard_values_unchanged() {
        let s = Scaler::fit(&col(&[-1.0, 1.0])).unwrap();
        assert_eq!(s.transform(&[-1.0; 7]), [-1.0; 7]);
        assert_eq!(s.transform(&[1.0; 7]), [1.0; 7]);
    }

    #[test]
    fn reference_instance_round_trips() {
        let train = crate::data::fixture_dataset();
        let s = Scaler::fit(&train).unwrap();
        let x = [44.0, 60.0, 55.0, 34.28046, 90.555618, 6.825371, 98.540474];
        let back = s.inverse(&s.transform(&x));
        for j in 0..7 {
            assert!((back[j] - x[j]).abs() <= 1e-9 * x[j].abs().max(1.0));
        }
    }

    #[test]
    fn transformed_training_data_is_standardized() {
        let train = crate::data::fixture_dataset();
        let s = Scaler::fit(&train).unwrap();
        let z: Vec<Features> = train.samples.iter().map(|x| s.transform(&x.features)).collect();
        let n = z.len() as f64;
        for j in 0..7 {
            let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_fit_fails() {
        assert!(Scaler::fit(&Dataset::empty()).is_err());
    }

    proptest! {
        #[test]
        fn inverse_recovers_input(
            train in prop::collection::vec(-1e4f64..1e4, 2..20),
            x in prop::array::uniform7(-1e6f64..1e6),
        ) {
            let s = Scaler::fit(&col(&train)).unwrap();
            let back = s.inverse(&s.transform(&x));
            for j in 0..7 {
                prop_assert!((back[j] - x[j]).abs() <= 1e-9 * x[j].abs().max(1.0));
            }
        }
    }
}
