//! Counterfactual search: small, valid changes that move a prediction to a
//! chosen crop.
//!
//! The search is a genetic algorithm over the mutable features. Candidates
//! the model assigns to the target class are archived; the final set is
//! refined toward the query one feature at a time and picked greedily for
//! low cost and mutual diversity.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_target, ExplainError};
use crate::data::{feature, FeatureSchema, FeatureStats, Features, Sample, N_FEATURES};
use crate::models::{argmax, Classifier};

const TOURNAMENT: usize = 3;
const ELITE_FRACTION: f64 = 0.1;
const REFINE_STEPS: usize = 40;
const REFINE_POOL: usize = 64;
/// Smallest normalized distance between two returned counterfactuals.
const MIN_SEPARATION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualConfig {
    pub target: usize,
    pub count: usize,
    pub immutable: Vec<usize>,
    /// Optional per-feature `(min, max)` limits, intersected with the
    /// training range.
    #[serde(default)]
    pub permitted: Vec<Option<(f64, f64)>>,
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub proximity_weight: f64,
    pub sparsity_weight: f64,
    pub diversity_weight: f64,
}

impl CounterfactualConfig {
    /// Shipped defaults: temperature and pH are treated as fixed.
    pub fn new(target: usize) -> Self {
        Self {
            target,
            count: 3,
            immutable: vec![feature::TEMPERATURE, feature::PH],
            permitted: Vec::new(),
            population: 200,
            generations: 300,
            seed: 0,
            proximity_weight: 1.0,
            sparsity_weight: 0.1,
            diversity_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualStatus {
    Found,
    NotFound,
    AlreadyTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub candidate: Sample,
    pub predicted: usize,
    pub target_probability: f64,
    pub deltas: [f64; N_FEATURES],
    /// Sum of |delta| / robust scale over features.
    pub distance: f64,
    pub n_changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub status: CounterfactualStatus,
    pub target: usize,
    pub query: Features,
    pub seed: u64,
    pub counterfactuals: Vec<Counterfactual>,
}

struct Search<'a, M: Classifier> {
    model: &'a M,
    query: Features,
    target: usize,
    mutable: Vec<usize>,
    bounds: [(f64, f64); N_FEATURES],
    scale: [f64; N_FEATURES],
    config: &'a CounterfactualConfig,
}

#[derive(Clone)]
struct Scored {
    x: Features,
    valid: bool,
    hinge: f64,
    cost: f64,
    target_probability: f64,
}

impl Scored {
    /// Valid candidates first, then by cost; invalid ones by hinge.
    fn key(&self) -> (u8, f64) {
        if self.valid {
            (0, self.cost)
        } else {
            (1, self.hinge + 1e-3 * self.cost)
        }
    }

    fn better_than(&self, other: &Scored) -> bool {
        let (a, b) = (self.key(), other.key());
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }
}

impl<M: Classifier> Search<'_, M> {
    fn distance(&self, a: &Features, b: &Features) -> f64 {
        (0..N_FEATURES).map(|j| (a[j] - b[j]).abs() / self.scale[j]).sum()
    }

    fn n_changed(&self, x: &Features) -> usize {
        (0..N_FEATURES).filter(|&j| x[j].to_bits() != self.query[j].to_bits()).count()
    }

    fn score(&self, x: Features) -> Scored {
        let p = self.model.predict_proba(&x);
        let best_other = p
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != self.target)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        let valid = argmax(&p) == self.target;
        let cost = self.config.proximity_weight * self.distance(&x, &self.query)
            + self.config.sparsity_weight * self.n_changed(&x) as f64;
        Scored {
            x,
            valid,
            hinge: (best_other - p[self.target]).max(0.0),
            cost,
            target_probability: p[self.target],
        }
    }

    fn random_value(&self, j: usize, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.bounds[j];
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    fn initial(&self, rng: &mut ChaCha8Rng) -> Features {
        let mut x = self.query;
        let k = rng.random_range(1..=self.mutable.len());
        for &j in self.mutable.choose_multiple(rng, k) {
            x[j] = self.random_value(j, rng);
        }
        x
    }

    fn mutate(&self, x: &mut Features, rng: &mut ChaCha8Rng) {
        let rate = 1.0 / self.mutable.len() as f64;
        for &j in &self.mutable {
            if rng.random::<f64>() >= rate {
                continue;
            }
            let r: f64 = rng.random();
            x[j] = if r < 0.3 {
                self.query[j]
            } else if r < 0.8 {
                let step = Normal::new(0.0, 0.5 * self.scale[j]).expect("positive scale");
                let (lo, hi) = self.bounds[j];
                (x[j] + step.sample(rng)).clamp(lo, hi)
            } else {
                self.random_value(j, rng)
            };
        }
    }

    fn in_bounds(&self, j: usize, v: f64) -> bool {
        v >= self.bounds[j].0 && v <= self.bounds[j].1
    }

    /// Moves changed features back toward the query while validity holds:
    /// first an exact reset, then a bisection on the segment to the query.
    fn refine(&self, start: &Scored) -> Scored {
        let mut best = start.clone();
        let mut order: Vec<usize> = self
            .mutable
            .iter()
            .copied()
            .filter(|&j| best.x[j].to_bits() != self.query[j].to_bits())
            .collect();
        order.sort_by(|&a, &b| {
            let da = (best.x[a] - self.query[a]).abs() / self.scale[a];
            let db = (best.x[b] - self.query[b]).abs() / self.scale[b];
            da.total_cmp(&db).then(a.cmp(&b))
        });
        for j in order {
            let mut reset = best.x;
            reset[j] = self.query[j];
            let s = self.score(reset);
            if s.valid {
                best = s;
                continue;
            }
            if !self.in_bounds(j, self.query[j]) {
                continue;
            }
            let (q, c) = (self.query[j], best.x[j]);
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..REFINE_STEPS {
                let mid = 0.5 * (lo + hi);
                let mut probe = best.x;
                probe[j] = q + mid * (c - q);
                if self.score(probe).valid {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut probe = best.x;
            probe[j] = q + hi * (c - q);
            let s = self.score(probe);
            if s.valid && self.in_bounds(j, probe[j]) && s.cost <= best.cost {
                best = s;
            }
        }
        best
    }
}

fn resolve_bounds(
    stats: &FeatureStats,
    schema: &FeatureSchema,
    permitted: &[Option<(f64, f64)>],
) -> Result<[(f64, f64); N_FEATURES], ExplainError> {
    if permitted.len() > N_FEATURES {
        return Err(ExplainError::Config(format!(
            "{} permitted ranges given for {N_FEATURES} features",
            permitted.len()
        )));
    }
    let mut bounds = [(0.0, 0.0); N_FEATURES];
    for (j, b) in bounds.iter_mut().enumerate() {
        let s = stats.get(j);
        let (mut lo, mut hi) = (s.min, s.max);
        if let Some(Some((plo, phi))) = permitted.get(j) {
            if !(plo <= phi) {
                return Err(ExplainError::Config(format!(
                    "permitted range for {} is empty ({plo} > {phi})",
                    schema.names[j]
                )));
            }
            lo = lo.max(*plo);
            hi = hi.min(*phi);
        }
        if lo > hi {
            return Err(ExplainError::Config(format!(
                "permitted range for {} does not overlap the training range [{}, {}]",
                schema.names[j], s.min, s.max
            )));
        }
        *b = (lo, hi);
    }
    Ok(bounds)
}

fn finish(search: &Search<'_, impl Classifier>, s: &Scored) -> Counterfactual {
    Counterfactual {
        candidate: Sample::labeled(s.x, search.target),
        predicted: search.target,
        target_probability: s.target_probability,
        deltas: std::array::from_fn(|j| s.x[j] - search.query[j]),
        distance: search.distance(&s.x, &search.query),
        n_changed: search.n_changed(&s.x),
    }
}

/// Greedily picks up to `k` candidates maximizing
/// `diversity_weight * (distance to the nearest pick) - cost`, skipping any
/// closer than `min_separation` to an earlier pick.
fn select_diverse(
    search: &Search<'_, impl Classifier>,
    mut pool: Vec<Scored>,
    k: usize,
    min_separation: f64,
) -> Vec<Scored> {
    let mut chosen: Vec<Scored> = Vec::new();
    let mut nearest = vec![f64::INFINITY; pool.len()];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in pool.iter().enumerate() {
            if nearest[i] <= min_separation && !chosen.is_empty() {
                continue;
            }
            let spread = if chosen.is_empty() { 0.0 } else { nearest[i] };
            let score = search.config.diversity_weight * spread - s.cost;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((i, _)) = best else { break };
        let pick = pool.swap_remove(i);
        nearest.swap_remove(i);
        for (n, s) in nearest.iter_mut().zip(&pool) {
            *n = n.min(search.distance(&s.x, &pick.x));
        }
        chosen.push(pick);
    }
    chosen
}

/// Searches for up to `config.count` valid counterfactuals.
///
/// Returned candidates are predicted as the target by `model`, keep every
/// immutable (and every unchanged) feature bit-identical to the query, keep
/// changed features inside the permitted training range, and are sorted by
/// distance.
pub fn counterfactual_search(
    model: &impl Classifier,
    query: &Features,
    config: &CounterfactualConfig,
    stats: &FeatureStats,
    schema: &FeatureSchema,
) -> Result<CounterfactualResult, ExplainError> {
    check_target(config.target, model.n_classes())?;
    if config.population < 2 || config.generations == 0 || config.count == 0 {
        return Err(ExplainError::Config(
            "population must be >= 2 and generations and count >= 1".into(),
        ));
    }
    for w in [config.proximity_weight, config.sparsity_weight, config.diversity_weight] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(ExplainError::Config(format!("weights must be finite and >= 0, got {w}")));
        }
    }
    if let Some(&j) = config.immutable.iter().find(|&&j| j >= N_FEATURES) {
        return Err(ExplainError::Config(format!("immutable feature index {j} out of range")));
    }
    if let Some(j) = query.iter().position(|v| !v.is_finite()) {
        return Err(ExplainError::Config(format!("query {} is not finite", schema.names[j])));
    }
    let bounds = resolve_bounds(stats, schema, &config.permitted)?;
    let search = Search {
        model,
        query: *query,
        target: config.target,
        mutable: (0..N_FEATURES).filter(|j| !config.immutable.contains(j)).collect(),
        bounds,
        scale: std::array::from_fn(|j| stats.get(j).robust_scale()),
        config,
    };
    let result = |status, counterfactuals| CounterfactualResult {
        status,
        target: config.target,
        query: *query,
        seed: config.seed,
        counterfactuals,
    };

    let here = search.score(*query);
    if here.valid {
        return Ok(result(CounterfactualStatus::AlreadyTarget, vec![finish(&search, &here)]));
    }
    if search.mutable.is_empty() {
        return Ok(result(CounterfactualStatus::NotFound, Vec::new()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let evaluate = |xs: Vec<Features>| -> Vec<Scored> { xs.into_par_iter().map(|x| search.score(x)).collect() };
    let mut population = evaluate((0..config.population).map(|_| search.initial(&mut rng)).collect());
    let mut seen: HashSet<[u64; N_FEATURES]> = HashSet::new();
    let mut archive: Vec<Scored> = Vec::new();
    let mut remember = |pop: &[Scored], archive: &mut Vec<Scored>| {
        for s in pop.iter().filter(|s| s.valid) {
            if seen.insert(s.x.map(f64::to_bits)) {
                archive.push(s.clone());
            }
        }
    };
    remember(&population, &mut archive);

    let n_elite = ((config.population as f64 * ELITE_FRACTION).ceil() as usize).max(1);
    for _ in 1..config.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| {
            let (ka, kb) = (population[a].key(), population[b].key());
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        });
        let mut children: Vec<Features> = ranked[..n_elite].iter().map(|&i| population[i].x).collect();
        while children.len() < config.population {
            let mut pick = || {
                let mut best = rng.random_range(0..population.len());
                for _ in 1..TOURNAMENT {
                    let c = rng.random_range(0..population.len());
                    if population[c].better_than(&population[best]) {
                        best = c;
                    }
                }
                best
            };
            let (a, b) = (pick(), pick());
            let mut child = population[a].x;
            for &j in &search.mutable {
                if rng.random::<bool>() {
                    child[j] = population[b].x[j];
                }
            }
            search.mutate(&mut child, &mut rng);
            children.push(child);
        }
        population = evaluate(children);
        remember(&population, &mut archive);
    }

    if archive.is_empty() {
        return Ok(result(CounterfactualStatus::NotFound, Vec::new()));
    }
    archive.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let seeds = select_diverse(&search, archive, REFINE_POOL, 0.0);
    let refined: Vec<Scored> = seeds.par_iter().map(|s| search.refine(s)).collect();
    let mut refined: Vec<Scored> = refined.into_iter().filter(|s| s.valid).collect();
    refined.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let chosen = select_diverse(&search, refined, config.count, MIN_SEPARATION);
    let mut counterfactuals: Vec<Counterfactual> = chosen.iter().map(|s| finish(&search, s)).collect();
    counterfactuals.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(result(CounterfactualStatus::Found, counterfactuals))
}

/// Signed per-feature changes of each counterfactual against the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub query: Features,
    pub rows: Vec<DeltaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub candidate: Features,
    pub deltas: [f64; N_FEATURES],
}

pub fn counterfactual_delta_report(query: &Features, counterfactuals: &[Features]) -> DeltaReport {
    DeltaReport {
        query: *query,
        rows: counterfactuals
            .iter()
            .map(|c| DeltaRow {
                candidate: *c,
                deltas: std::array::from_fn(|j| c[j] - query[j]),
            })
            .collect(),
    }
}

impl DeltaReport {
    /// One block per counterfactual with an up/down bar for every changed
    /// feature; unchanged features are omitted.
    pub fn render(&self, schema: &FeatureSchema, half_width: usize) -> String {
        let name_width = schema.names.iter().map(String::len).max().unwrap_or(0);
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("counterfactual {}\n", i + 1));
            let scaled: Vec<f64> = (0..N_FEATURES)
                .map(|j| {
                    let base = self.query[j].abs().max(1.0);
                    row.deltas[j] / base
                })
                .collect();
            let max = scaled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let changed: Vec<usize> = (0..N_FEATURES).filter(|&j| row.deltas[j] != 0.0).collect();
            if changed.is_empty() {
                out.push_str("  (no change)\n");
            }
            for j in changed {
                let len = ((scaled[j].abs() / max) * half_width as f64).round().max(1.0) as usize;
                let (left, right) = if row.deltas[j] < 0.0 {
                    (format!("{:>half_width$}", "v".repeat(len)), String::new())
                } else {
                    (" ".repeat(half_width), "^".repeat(len))
                };
                out.push_str(&format!(
                    "  {:<name_width$} {left}|{right:<half_width$} {:+.6} -> {:.6}\n",
                    schema.names[j], row.deltas[j], row.candidate[j]
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_stats, fixture_dataset};

    fn rain_model() -> (usize, impl Fn(&Features) -> Vec<f64> + Sync) {
        (2, |x: &Features| {
            if x[feature::RAINFALL] > 150.0 {
                vec![0.2, 0.8]
            } else {
                vec![0.8, 0.2]
            }
        })
    }

    fn stats() -> FeatureStats {
        compute_stats(&fixture_dataset()).unwrap()
    }

    fn small(target: usize, seed: u64) -> CounterfactualConfig {
        CounterfactualConfig {
            population: 60,
            generations: 40,
            seed,
            ..CounterfactualConfig::new(target)
        }
    }

    fn query() -> Features {
        let mut q = fixture_dataset().samples[0].features;
        q[feature::RAINFALL] = 100.0;
        q
    }

    #[test]
    fn threshold_model_crosses_minimally() {
        let stats = stats();
        assert!(stats.get(feature::RAINFALL).max > 150.0);
        let q = query();
        let r = counterfactual_search(&rain_model(), &q, &small(1, 3), &stats, &FeatureSchema::crop()).unwrap();
        assert_eq!(r.status, CounterfactualStatus::Found);
        let best = &r.counterfactuals[0];
        let rain = best.candidate.features[feature::RAINFALL];
        // brute force: the smallest grid value above the threshold
        let grid_min = (0..=40_000)
            .map(|i| 100.0 + i as f64 * 0.01)
            .find(|&v| v > 150.0)
            .unwrap();
        assert!(rain > 150.0 && rain <= grid_min, "rainfall {rain}");
        assert_eq!(best.n_changed, 1);
        for j in (0..N_FEATURES).filter(|&j| j != feature::RAINFALL) {
            assert_eq!(best.candidate.features[j].to_bits(), q[j].to_bits());
        }
    }

    #[test]
    fn current_class_returns_the_query() {
        let q = query();
        let r = counterfactual_search(&rain_model(), &q, &small(0, 0), &stats(), &FeatureSchema::crop()).unwrap();
        assert_eq!(r.status, CounterfactualStatus::AlreadyTarget);
        assert_eq!(r.counterfactuals[0].deltas, [0.0; N_FEATURES]);
    }

    #[test]
    fn unreachable_target_is_not_found() {
        let mut config = small(1, 0);
        config.immutable.push(feature::RAINFALL);
        let r = counterfactual_search(&rain_model(), &query(), &config, &stats(), &FeatureSchema::crop()).unwrap();
        assert_eq!(r.status, CounterfactualStatus::NotFound);
        assert!(r.counterfactuals.is_empty());
    }

    #[test]
    fn contradictory_ranges_are_config_errors() {
        let mut config = small(1, 0);
        config.permitted = vec![None, None, None, None, None, None, Some((300.0, 200.0))];
        let err = counterfactual_search(&rain_model(), &query(), &config, &stats(), &FeatureSchema::crop());
        assert!(matches!(err, Err(ExplainError::Config(_))));
        config.permitted = vec![None, None, None, None, None, None, Some((10_000.0, 20_000.0))];
        assert!(counterfactual_search(&rain_model(), &query(), &config, &stats(), &FeatureSchema::crop()).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = counterfactual_search(&rain_model(), &query(), &small(1, 11), &stats(), &FeatureSchema::crop()).unwrap();
        let b = counterfactual_search(&rain_model(), &query(), &small(1, 11), &stats(), &FeatureSchema::crop()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delta_report_matches_hand_values() {
        let actual = [44.0, 60.0, 55.0, 34.28046, 90.555618, 6.825371, 98.540474];
        let cf3 = [85.0, 60.0, 55.0, 34.28046, 85.29596, 6.825371, 295.154486];
        let r = counterfactual_delta_report(&actual, &[cf3, actual]);
        let d = r.rows[0].deltas;
        assert_eq!(d[feature::NITROGEN], 41.0);
        assert!((d[feature::HUMIDITY] - (-5.259658)).abs() < 1e-9);
        assert!((d[feature::RAINFALL] - 196.614012).abs() < 1e-9);
        assert_eq!(r.rows[1].deltas, [0.0; N_FEATURES]);
        let text = r.render(&FeatureSchema::crop(), 8);
        assert!(text.contains("rainfall") && !text.contains("potassium"));
        assert!(text.contains("(no change)"));
    }
}
