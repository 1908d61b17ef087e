use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};

/// Per-class shuffled sample indices, classes in index order.
fn shuffled_by_class(dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>, DataError> {
    let labels = dataset.labels()?;
    let mut by_class = vec![Vec::new(); dataset.n_classes()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for idx in &mut by_class {
        idx.shuffle(rng);
    }
    Ok(by_class)
}

/// Splits into (train, test) keeping per-class proportions.
///
/// Each class contributes `round(count * test_fraction)` samples to the test
/// side. Both outputs keep the original sample order.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(dataset, &mut rng)?;
    let mut is_test = vec![false; dataset.len()];
    for (class, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == idx.len() {
            return Err(DataError::Split(format!(
                "class `{}` with {} samples leaves an empty side at fraction {test_fraction}",
                dataset.classes[class],
                idx.len()
            )));
        }
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_test[i]);
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Assigns each sample to one of `k` folds, stratified by class.
///
/// Returns the fold index of every sample.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if k < 2 {
        return Err(DataError::Split(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(dataset, &mut rng)?;
    let mut fold = vec![0; dataset.len()];
    // Rotating the starting fold per class keeps fold sizes within one sample.
    let mut offset = 0;
    for idx in &by_class {
        for (r, &i) in idx.iter().enumerate() {
            fold[i] = (offset + r) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(fold)
}

/// Draws `n` samples with per-class quotas proportional to class size
/// (largest-remainder rounding, ties to the lower class index).
pub fn stratified_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n >= dataset.len() {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(dataset, &mut rng)?;
    let total = dataset.len() as f64;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|idx| idx.len() as f64 * n as f64 / total)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for c in order {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut chosen: Vec<usize> = by_class
        .iter()
        .zip(&quota)
        .flat_map(|(idx, &q)| idx[..q].iter().copied())
        .collect();
    chosen.sort_unstable();
    Ok(dataset.subset(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fixture_dataset, Sample};
    use proptest::prelude::*;

    fn two_by_two() -> Dataset {
        Dataset::from_samples(vec![
            Sample::labeled([1.0; 7], 0),
            Sample::labeled([2.0; 7], 0),
            Sample::labeled([3.0; 7], 1),
            Sample::labeled([4.0; 7], 1),
        ])
    }

    #[test]
    fn half_split_of_four_takes_one_per_class() {
        let (train, test) = stratified_split(&two_by_two(), 0.5, 3).unwrap();
        assert_eq!(test.class_counts()[..2], [1, 1]);
        assert_eq!(train.class_counts()[..2], [1, 1]);
    }

    #[test]
    fn fixture_split_is_30_percent_per_class() {
        let ds = fixture_dataset();
        let (train, test) = stratified_split(&ds, 0.3, 42).unwrap();
        assert_eq!(test.len(), 12);
        assert_eq!(train.len(), 28);
        for (c, &n) in test.class_counts().iter().enumerate() {
            assert_eq!(n, if ds.class_counts()[c] > 0 { 3 } else { 0 });
        }
    }

    #[test]
    fn full_size_split_yields_660_test_rows() {
        // 22 classes x 100 rows, the shape of the public dataset.
        let samples = (0..2200)
            .map(|i| Sample::labeled([i as f64; 7], i / 100))
            .collect();
        let ds = Dataset::from_samples(samples);
        let (train, test) = stratified_split(&ds, 0.3, 42).unwrap();
        assert_eq!(test.len(), 660);
        assert_eq!(train.len(), 1540);
        assert!(test.class_counts().iter().all(|&c| c == 30));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = fixture_dataset();
        assert_eq!(stratified_split(&ds, 0.3, 9).unwrap(), stratified_split(&ds, 0.3, 9).unwrap());
    }

    #[test]
    fn empty_side_is_rejected() {
        assert!(matches!(stratified_split(&two_by_two(), 0.1, 0), Err(DataError::Split(_))));
        assert!(matches!(stratified_split(&two_by_two(), 0.9, 0), Err(DataError::Split(_))));
        assert!(stratified_split(&two_by_two(), 1.0, 0).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let ds = fixture_dataset();
        let folds = stratified_folds(&ds, 5, 1).unwrap();
        for f in 0..5 {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] == f).collect();
            let sub = ds.subset(&members);
            assert_eq!(sub.len(), 8);
            assert!(sub.class_counts().iter().all(|&c| c == 0 || c == 2));
        }
    }

    #[test]
    fn subset_hits_exact_size() {
        let ds = fixture_dataset();
        let sub = stratified_subset(&ds, 10, 4).unwrap();
        assert_eq!(sub.len(), 10);
        let counts: Vec<usize> = sub.class_counts().into_iter().filter(|&c| c > 0).collect();
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(seed in 0u64..1000, frac in 0.15f64..0.85) {
            let ds = fixture_dataset();
            let (train, test) = stratified_split(&ds, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), ds.len());
            let mut all: Vec<_> = train.samples.iter().chain(&test.samples)
                .map(|s| s.features.map(f64::to_bits)).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), ds.len());
            for (c, &n) in ds.class_counts().iter().enumerate() {
                let t = test.class_counts()[c] as f64;
                prop_assert!((t - n as f64 * frac).abs() <= 1.0);
            }
        }
    }
}
