//! Simulated-annealing descriptor subset selection.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_full, Dataset};
use crate::error::{QsarError, Result};
use crate::regress::{FitSpec, Fitter, LinearModel};
use crate::validate::{loo_q2, r_squared};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    LooQ2,
    TrainR2,
}

impl FromStr for Objective {
    type Err = QsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "loo_q2" | "q2" => Ok(Objective::LooQ2),
            "train_r2" | "r2" => Ok(Objective::TrainR2),
            other => Err(QsarError::Config(format!("unknown objective '{other}'"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::LooQ2 => "loo_q2",
            Objective::TrainR2 => "train_r2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub subset_size: usize,
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub steps_per_temperature: usize,
    pub min_temperature: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            subset_size: 5,
            initial_temperature: 1.0,
            cooling_factor: 0.95,
            steps_per_temperature: 50,
            min_temperature: 1e-3,
            seed: 42,
            objective: Objective::LooQ2,
        }
    }
}

impl SaConfig {
    pub fn validate(&self, available: usize, spec: &FitSpec) -> Result<()> {
        if self.subset_size == 0 || self.subset_size >= available {
            return Err(QsarError::Config(format!(
                "subset size must satisfy 1 <= k < {available}, got {}",
                self.subset_size
            )));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(QsarError::Config(format!(
                "cooling factor must lie strictly between 0 and 1, got {}",
                self.cooling_factor
            )));
        }
        if !(self.initial_temperature > 0.0) || !(self.min_temperature > 0.0) {
            return Err(QsarError::Config("temperatures must be positive".into()));
        }
        if self.steps_per_temperature == 0 {
            return Err(QsarError::Config("steps_per_temperature must be at least 1".into()));
        }
        if spec.method.uses_components() && spec.n_components > self.subset_size {
            return Err(QsarError::Config(format!(
                "{} components cannot be extracted from {} descriptors",
                spec.n_components, self.subset_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub temperature: f64,
    /// `-inf` when the candidate subset could not be fitted.
    pub candidate: f64,
    pub accepted: bool,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SaTrace {
    pub entries: Vec<TraceEntry>,
}

impl SaTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "step",
            "temperature",
            "candidate_objective",
            "accepted",
            "best_objective",
        ])?;
        for e in &self.entries {
            w.write_record([
                e.step.to_string(),
                format_full(e.temperature),
                format_full(e.candidate),
                e.accepted.to_string(),
                format_full(e.best),
            ])?;
        }
        w.flush().map_err(|e| QsarError::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub selected: Vec<String>,
    pub objective: f64,
    pub model: LinearModel,
    pub trace: SaTrace,
}

/// Objective for one descriptor subset; any fit failure scores `-inf`.
pub fn score_subset(ds: &Dataset, cols: &[usize], spec: &FitSpec, objective: Objective) -> f64 {
    let sub = ds.select_columns(cols);
    let value = match objective {
        Objective::LooQ2 => loo_q2(&sub, spec).map(|o| o.q2),
        Objective::TrainR2 => spec.fit(&sub).and_then(|m| {
            let pred = m.predict_matrix(sub.x())?;
            r_squared(sub.y().as_slice(), pred.as_slice())
        }),
    };
    match value {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

struct Scorer<'a> {
    ds: &'a Dataset,
    spec: &'a FitSpec,
    objective: Objective,
    cache: HashMap<Vec<usize>, f64>,
}

impl Scorer<'_> {
    fn score(&mut self, subset: &[usize]) -> f64 {
        let mut key = subset.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let v = score_subset(self.ds, &key, self.spec, self.objective);
        self.cache.insert(key, v);
        v
    }
}

/// Anneal over fixed-size descriptor subsets. A move swaps one selected
/// descriptor for one unselected one, both chosen uniformly; improving or
/// equal moves are always taken, worse ones with probability exp(delta / T).
pub fn sa_select(ds: &Dataset, spec: &FitSpec, config: &SaConfig) -> Result<SaOutcome> {
    let m = ds.m();
    config.validate(m, spec)?;
    let k = config.subset_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scorer = Scorer {
        ds,
        spec,
        objective: config.objective,
        cache: HashMap::new(),
    };

    let mut current: Vec<usize> = sample(&mut rng, m, k).into_vec();
    current.sort_unstable();
    let mut current_score = scorer.score(&current);
    let mut best = (current.clone(), current_score);
    let mut trace = SaTrace::default();
    trace.entries.push(TraceEntry {
        step: 0,
        temperature: config.initial_temperature,
        candidate: current_score,
        accepted: true,
        best: current_score,
    });

    let mut temperature = config.initial_temperature;
    let mut step = 0;
    while temperature >= config.min_temperature {
        for _ in 0..config.steps_per_temperature {
            step += 1;
            let out_pos = rng.random_range(0..k);
            let unselected: Vec<usize> = (0..m).filter(|j| !current.contains(j)).collect();
            let incoming = unselected[rng.random_range(0..unselected.len())];
            let mut candidate = current.clone();
            candidate[out_pos] = incoming;
            candidate.sort_unstable();
            let cand_score = scorer.score(&candidate);
            let u: f64 = rng.random();
            let accepted = if cand_score == f64::NEG_INFINITY {
                false
            } else if current_score == f64::NEG_INFINITY {
                true
            } else {
                let delta = cand_score - current_score;
                delta >= 0.0 || u < (delta / temperature).exp()
            };
            if accepted {
                current = candidate;
                current_score = cand_score;
                if current_score > best.1 {
                    best = (current.clone(), current_score);
                }
            }
            trace.entries.push(TraceEntry {
                step,
                temperature,
                candidate: cand_score,
                accepted,
                best: best.1,
            });
        }
        temperature *= config.cooling_factor;
    }

    let sub = ds.select_columns(&best.0);
    let model = spec.fit(&sub)?;
    Ok(SaOutcome {
        selected: sub.descriptor_names().to_vec(),
        objective: best.1,
        model,
        trace,
    })
}

/// Independent chains, one per seed, merged by best objective; ties go to the
/// earlier seed.
pub fn sa_select_restarts(ds: &Dataset, spec: &FitSpec, config: &SaConfig, seeds: &[u64]) -> Result<SaOutcome> {
    if seeds.is_empty() {
        return Err(QsarError::Config("at least one seed is required".into()));
    }
    let runs: Vec<Result<SaOutcome>> = seeds
        .par_iter()
        .map(|&seed| sa_select(ds, spec, &SaConfig { seed, ..*config }))
        .collect();
    let mut best: Option<SaOutcome> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.objective > b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("non-empty seeds"))
}

/// Enumerate every k-subset (in lexicographic order) and return the best one.
/// Only practical for small m; used as the reference for the annealer.
pub fn exhaustive_select(ds: &Dataset, spec: &FitSpec, k: usize, objective: Objective) -> Result<(Vec<usize>, f64)> {
    let m = ds.m();
    if k == 0 || k > m {
        return Err(QsarError::Config(format!(
            "subset size {k} out of range for {m} descriptors"
        )));
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = (subset.clone(), f64::NEG_INFINITY);
    loop {
        let v = score_subset(ds, &subset, spec, objective);
        if v > best.1 {
            best = (subset.clone(), v);
        }
        // next combination
        let mut i = k;
        while i > 0 && subset[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn one_informative(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(20, 11, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(20, |i, _| 3.0 * x[(i, 7)] + 0.1 * rng.random_range(-1.0..1.0));
        Dataset::from_matrix(x, y).unwrap()
    }

    fn quick(seed: u64, k: usize) -> SaConfig {
        SaConfig {
            subset_size: k,
            steps_per_temperature: 10,
            cooling_factor: 0.8,
            seed,
            ..SaConfig::default()
        }
    }

    #[test]
    fn finds_the_informative_descriptor() {
        let ds = one_informative(5);
        let spec = FitSpec::mlr();
        let (oracle, _) = exhaustive_select(&ds, &spec, 1, Objective::LooQ2).unwrap();
        assert_eq!(oracle, vec![7]);
        let out = sa_select(&ds, &spec, &quick(1, 1)).unwrap();
        assert_eq!(out.selected, vec!["d8".to_string()]);
        assert_eq!(out.model.descriptor_names, out.selected);
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = one_informative(5);
        let spec = FitSpec::mlr();
        for cfg in [
            quick(1, 11),
            quick(1, 0),
            SaConfig {
                cooling_factor: 1.0,
                ..quick(1, 2)
            },
            SaConfig {
                cooling_factor: 0.0,
                ..quick(1, 2)
            },
            SaConfig {
                steps_per_temperature: 0,
                ..quick(1, 2)
            },
        ] {
            assert!(matches!(sa_select(&ds, &spec, &cfg), Err(QsarError::Config(_))));
        }
        assert!(matches!(
            sa_select(&ds, &FitSpec::pls(3), &quick(1, 2)),
            Err(QsarError::Config(_))
        ));
    }

    #[test]
    fn deterministic_with_monotone_best() {
        let ds = one_informative(9);
        let spec = FitSpec::pls(1);
        let a = sa_select(&ds, &spec, &quick(17, 2)).unwrap();
        let b = sa_select(&ds, &spec, &quick(17, 2)).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.entries.windows(2).all(|w| w[1].best >= w[0].best));
        let mut buf = Vec::new();
        a.trace.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            a.trace.entries.len() + 1
        );
    }

    #[test]
    fn cold_chain_never_accepts_worse_moves() {
        let ds = one_informative(12);
        let cfg = SaConfig {
            initial_temperature: 1e-9,
            min_temperature: 1e-9,
            ..quick(3, 2)
        };
        let out = sa_select(&ds, &FitSpec::mlr(), &cfg).unwrap();
        let mut current = out.trace.entries[0].candidate;
        for e in &out.trace.entries[1..] {
            if e.accepted {
                assert!(e.candidate >= current);
                current = e.candidate;
            }
        }
    }

    #[test]
    fn unfittable_candidates_score_neg_infinity() {
        // d2 duplicates d1, so MLR on {d1, d2} is singular
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(10, 4, |i, j| base[(i, j.saturating_sub(1))]);
        let y = DVector::from_fn(10, |i, _| 2.0 * base[(i, 1)] - base[(i, 2)]);
        let ds = Dataset::from_matrix(x, y).unwrap();
        assert_eq!(
            score_subset(&ds, &[0, 1], &FitSpec::mlr(), Objective::LooQ2),
            f64::NEG_INFINITY
        );
        let out = sa_select(&ds, &FitSpec::mlr(), &quick(4, 2)).unwrap();
        assert!(out.objective.is_finite());
    }

    #[test]
    fn exhaustive_enumerates_all_combinations() {
        let ds = one_informative(1);
        let (best, v) = exhaustive_select(&ds, &FitSpec::mlr(), 2, Objective::TrainR2).unwrap();
        assert!(best.contains(&7));
        let mut brute = f64::NEG_INFINITY;
        for a in 0..11 {
            for b in (a + 1)..11 {
                brute = brute.max(score_subset(&ds, &[a, b], &FitSpec::mlr(), Objective::TrainR2));
            }
        }
        assert_eq!(v, brute);
    }

    #[test]
    fn restarts_pick_best_seed() {
        let ds = one_informative(6);
        let spec = FitSpec::mlr();
        let seeds = [1, 2, 3];
        let merged = sa_select_restarts(&ds, &spec, &quick(0, 2), &seeds).unwrap();
        for s in seeds {
            assert!(merged.objective >= sa_select(&ds, &spec, &quick(s, 2)).unwrap().objective);
        }
    }
}
