//! Shapley values with an interventional value function:
//! `v(S) = mean_b f(x_S, b_rest)[target]` over background rows `b`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_target, Attribution, AttributionMetadata, ExplainError, Method, ScoreSpace};
use crate::data::{Features, N_FEATURES};
use crate::models::Classifier;

const N_COALITIONS: usize = 1 << N_FEATURES;
const FULL: usize = N_COALITIONS - 1;

/// Smallest coalition budget accepted by [`shapley_kernel`].
pub const MIN_KERNEL_SAMPLES: usize = 2 * N_FEATURES + 2;

fn coalition_value(
    model: &impl Classifier,
    x: &Features,
    background: &[Features],
    target: usize,
    mask: usize,
) -> f64 {
    let mut total = 0.0;
    for b in background {
        let mut z = *b;
        for j in 0..N_FEATURES {
            if mask & (1 << j) != 0 {
                z[j] = x[j];
            }
        }
        total += model.predict_proba(&z)[target];
    }
    total / background.len() as f64
}

/// `v` for the given masks, evaluated in parallel and returned in mask order.
/// The full coalition is the model output itself.
fn values(
    model: &impl Classifier,
    x: &Features,
    background: &[Features],
    target: usize,
    masks: &[usize],
) -> Vec<f64> {
    let fx = model.predict_proba(x)[target];
    masks
        .par_iter()
        .map(|&m| {
            if m == FULL {
                fx
            } else {
                coalition_value(model, x, background, target, m)
            }
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn validate(
    model: &impl Classifier,
    background: &[Features],
    target: usize,
) -> Result<(), ExplainError> {
    if background.is_empty() {
        return Err(ExplainError::Empty("background set"));
    }
    check_target(target, model.n_classes())
}

/// Exact Shapley values by enumerating all 128 coalitions.
pub fn shapley_exact(
    model: &impl Classifier,
    x: &Features,
    background: &[Features],
    target: usize,
) -> Result<Attribution, ExplainError> {
    validate(model, background, target)?;
    let masks: Vec<usize> = (0..N_COALITIONS).collect();
    let v = values(model, x, background, target, &masks);
    let weight: Vec<f64> = (0..N_FEATURES)
        .map(|s| factorial(s) * factorial(N_FEATURES - s - 1) / factorial(N_FEATURES))
        .collect();
    let mut phi = [0.0; N_FEATURES];
    for (j, p) in phi.iter_mut().enumerate() {
        let bit = 1 << j;
        for mask in (0..N_COALITIONS).filter(|m| m & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
        }
    }
    Ok(Attribution {
        method: Method::ShapleyExact,
        space: ScoreSpace::Probability,
        target: Some(target),
        baseline: Some(v[0]),
        output: Some(v[FULL]),
        contributions: phi,
        metadata: AttributionMetadata {
            n_samples: Some(background.len()),
            n_coalitions: Some(N_COALITIONS),
            ..Default::default()
        },
    })
}

/// Weighted least squares of `v(z) - v0 ~ phi . z` subject to
/// `sum(phi) = delta`. The constraint is eliminated by substituting
/// `phi_last = delta - sum(others)`.
fn constrained_fit(
    coalitions: &[usize],
    weights: &[f64],
    v: &[f64],
    v0: f64,
    delta: f64,
) -> Result<[f64; N_FEATURES], ExplainError> {
    let last = N_FEATURES - 1;
    let rows = coalitions.len();
    let bit = |r: usize, k: usize| ((coalitions[r] >> k) & 1) as f64;
    let design = DMatrix::from_fn(rows, last, |r, j| bit(r, j) - bit(r, last));
    let response = DVector::from_fn(rows, |r, _| v[r] - v0 - bit(r, last) * delta);
    let weighted = DMatrix::from_fn(rows, last, |r, j| design[(r, j)] * weights[r]);
    let normal = weighted.transpose() * &design;
    let rhs = weighted.transpose() * response;
    let singular = || {
        ExplainError::Numerical(format!(
            "coalition design is singular ({} coalitions)",
            rows
        ))
    };
    let scale = normal.diagonal().max();
    let chol = normal.cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    if (0..last).any(|i| l[(i, i)] * l[(i, i)] <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return Err(singular());
    }
    let solution = chol.solve(&rhs);
    let mut phi = [0.0; N_FEATURES];
    phi[..last].copy_from_slice(solution.as_slice());
    phi[last] = delta - solution.iter().sum::<f64>();
    Ok(phi)
}

/// Kernel SHAP: weighted least squares over coalitions, constrained so
/// that `baseline + sum(phi) = f(x)`.
///
/// With `n_coalitions >= 126` every non-trivial coalition is enumerated
/// with its exact kernel weight and the result equals [`shapley_exact`] up
/// to rounding. Smaller budgets draw coalition sizes in proportion to the
/// total kernel weight of each size and members uniformly within a size.
pub fn shapley_kernel(
    model: &impl Classifier,
    x: &Features,
    background: &[Features],
    target: usize,
    n_coalitions: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    validate(model, background, target)?;
    if n_coalitions < MIN_KERNEL_SAMPLES {
        return Err(ExplainError::Config(format!(
            "kernel Shapley needs at least {MIN_KERNEL_SAMPLES} coalitions, got {n_coalitions}"
        )));
    }
    let m = N_FEATURES;
    let kernel = |size: usize| (m - 1) as f64 / (binomial(m, size) * (size * (m - size)) as f64);

    let enumerate = n_coalitions >= N_COALITIONS - 2;
    let (coalitions, weights): (Vec<usize>, Vec<f64>) = if enumerate {
        (1..FULL)
            .map(|mask| (mask, kernel(mask.count_ones() as usize)))
            .unzip()
    } else {
        let size_mass: Vec<f64> = (1..m).map(|s| kernel(s) * binomial(m, s)).collect();
        let total: f64 = size_mass.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0.0; N_COALITIONS];
        for _ in 0..n_coalitions {
            let mut u = rng.random::<f64>() * total;
            let mut size = m - 1;
            for (i, &w) in size_mass.iter().enumerate() {
                if u < w {
                    size = i + 1;
                    break;
                }
                u -= w;
            }
            let mask = sample(&mut rng, m, size).iter().fold(0, |acc, j| acc | (1 << j));
            counts[mask] += 1.0;
        }
        (1..FULL)
            .filter(|&mask| counts[mask] > 0.0)
            .map(|mask| (mask, counts[mask]))
            .unzip()
    };

    let mut masks = vec![0, FULL];
    masks.extend(&coalitions);
    let v = values(model, x, background, target, &masks);
    let (v0, fx) = (v[0], v[1]);
    let delta = fx - v0;

    let phi = constrained_fit(&coalitions, &weights, &v[2..], v0, delta)?;
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(ExplainError::Numerical("non-finite Shapley estimate".into()));
    }
    Ok(Attribution {
        method: Method::ShapleyKernel,
        space: ScoreSpace::Probability,
        target: Some(target),
        baseline: Some(v0),
        output: Some(fx),
        contributions: phi,
        metadata: AttributionMetadata {
            n_samples: Some(background.len()),
            seed: (!enumerate).then_some(seed),
            n_coalitions: Some(coalitions.len()),
            note: enumerate.then(|| "all coalitions enumerated".to_string()),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::feature;

    fn two_class(f: impl Fn(&Features) -> f64 + Sync) -> (usize, impl Fn(&Features) -> Vec<f64> + Sync) {
        (2, move |x: &Features| {
            let p = f(x);
            vec![p, 1.0 - p]
        })
    }

    fn background() -> Vec<Features> {
        (0..6)
            .map(|i| std::array::from_fn(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0))
            .collect()
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let model = two_class(|_| 0.3);
        let x = [0.5; N_FEATURES];
        for a in [
            shapley_exact(&model, &x, &background(), 0).unwrap(),
            shapley_kernel(&model, &x, &background(), 0, 126, 0).unwrap(),
            shapley_kernel(&model, &x, &background(), 0, 40, 0).unwrap(),
        ] {
            for p in a.contributions {
                assert!(p.abs() < 1e-12, "{p}");
            }
        }
    }

    #[test]
    fn single_feature_model_single_background_row() {
        let model = two_class(|x| x[feature::RAINFALL] / 1000.0);
        let mut x = [0.0; N_FEATURES];
        x[feature::RAINFALL] = 300.0;
        let mut b = [1.0; N_FEATURES];
        b[feature::RAINFALL] = 120.0;
        let a = shapley_exact(&model, &x, &[b], 0).unwrap();
        for j in 0..N_FEATURES {
            let expected = if j == feature::RAINFALL { 0.18 } else { 0.0 };
            assert!((a.contributions[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_features_get_equal_values() {
        let model = two_class(|x| (x[0] * x[1] + x[2]).tanh() * 0.5 + 0.5);
        let bg: Vec<Features> = background()
            .into_iter()
            .flat_map(|b| {
                let mut s = b;
                s.swap(0, 1);
                [b, s]
            })
            .collect();
        let x = [0.9, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0];
        let a = shapley_exact(&model, &x, &bg, 0).unwrap();
        assert!((a.contributions[0] - a.contributions[1]).abs() > 1e-6);
        let x = [0.6, 0.6, 0.4, 0.0, 0.0, 0.0, 0.0];
        let a = shapley_exact(&model, &x, &bg, 0).unwrap();
        assert!((a.contributions[0] - a.contributions[1]).abs() < 1e-9);
    }

    #[test]
    fn efficiency_and_kernel_enumeration_match_exact() {
        let model = two_class(|x| {
            let s = x[0] * x[3] - x[5] + 0.3 * x[6] * x[6];
            1.0 / (1.0 + (-s).exp())
        });
        let x = [0.9, 0.2, 0.4, 0.7, 0.1, 0.8, 0.3];
        let bg = background();
        let exact = shapley_exact(&model, &x, &bg, 0).unwrap();
        assert!((exact.reconstructed().unwrap() - model.predict_proba(&x)[0]).abs() < 1e-12);
        let kernel = shapley_kernel(&model, &x, &bg, 0, 200, 0).unwrap();
        for j in 0..N_FEATURES {
            assert!((kernel.contributions[j] - exact.contributions[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_kernel_is_seeded_and_efficient() {
        let model = two_class(|x| (x[0] + x[1] * x[2]).sin() * 0.4 + 0.5);
        let x = [0.9, 0.2, 0.4, 0.7, 0.1, 0.8, 0.3];
        let a = shapley_kernel(&model, &x, &background(), 0, 60, 5).unwrap();
        let b = shapley_kernel(&model, &x, &background(), 0, 60, 5).unwrap();
        assert_eq!(a, b);
        assert!((a.reconstructed().unwrap() - a.output.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_coalitions_are_a_numerical_error() {
        let masks = vec![0b101; 20];
        let err = constrained_fit(&masks, &[1.0; 20], &[0.5; 20], 0.1, 0.4).unwrap_err();
        assert!(matches!(err, ExplainError::Numerical(_)), "{err}");
    }

    #[test]
    fn invalid_inputs() {
        let model = two_class(|_| 0.5);
        let x = [0.0; N_FEATURES];
        assert!(matches!(shapley_exact(&model, &x, &[], 0), Err(ExplainError::Empty(_))));
        assert!(matches!(
            shapley_exact(&model, &x, &background(), 2),
            Err(ExplainError::UnknownTarget { .. })
        ));
        assert!(matches!(
            shapley_kernel(&model, &x, &background(), 0, 10, 0),
            Err(ExplainError::Config(_))
        ));
    }
}
