//! Synthetic lifestyle-class data, validation-set construction and top-k
//! accuracy scoring.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};
use crate::linalg::KernelTimings;
use crate::solver::{fit, rank_categories, SolverConfig};
use crate::tensor::{CandidateSets, LowRankModel, ProblemDims};

/// Parameters of the synthetic lifestyle-class generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_slots: usize,
    pub n_categories: usize,
    pub n_classes: usize,
    /// Fraction of slots carrying an observation for each user.
    pub slot_density: f64,
    /// |Omega_ij| of every generated observation.
    pub candidates_per_update: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_slots: 50,
            n_categories: 20,
            n_classes: 10,
            slot_density: 0.2,
            candidates_per_update: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn dims(&self) -> Result<ProblemDims> {
        ProblemDims::new(self.n_users, self.n_slots, self.n_categories)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if self.n_classes == 0 || self.n_classes > self.n_users {
            return Err(NutfError::InvalidInput(format!(
                "n_classes must be in 1..=n_users (got {} for {} users)",
                self.n_classes, self.n_users
            )));
        }
        if self.candidates_per_update == 0 || self.candidates_per_update > self.n_categories {
            return Err(NutfError::InvalidInput(format!(
                "candidates_per_update must be in 1..=n_categories (got {} for {} categories)",
                self.candidates_per_update, self.n_categories
            )));
        }
        if !(self.slot_density > 0.0 && self.slot_density <= 1.0) {
            return Err(NutfError::InvalidInput(format!(
                "slot_density must be in (0, 1] (got {})",
                self.slot_density
            )));
        }
        Ok(())
    }

    /// Observed slots per user: round-half-up(density * T), at least one.
    pub fn slots_per_user(&self) -> usize {
        round_half_up(self.slot_density * self.n_slots as f64).clamp(1, self.n_slots)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// A (user, slot) pair with its true category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observation {
    #[serde(rename = "u")]
    pub user: usize,
    #[serde(rename = "j")]
    pub slot: usize,
    #[serde(rename = "cat")]
    pub category: usize,
}

/// True categories of the generated observations and each user's class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Sorted by (user, slot).
    pub observations: Vec<Observation>,
    pub classes: Vec<usize>,
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub omega: CandidateSets,
    pub truth: GroundTruth,
    pub dims: ProblemDims,
    /// class x slot -> category
    pub schedule: Vec<Vec<usize>>,
}

/// Draws class-structured candidate sets.
///
/// Each class gets a uniformly random category per slot, users are assigned
/// to classes uniformly, each user observes a uniform sample of
/// `slots_per_user` slots, and every observation's candidate set is the true
/// category plus `candidates_per_update - 1` distinct decoys drawn uniformly
/// from the other categories.
pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.n_categories;

    let schedule: Vec<Vec<usize>> = (0..cfg.n_classes)
        .map(|_| (0..cfg.n_slots).map(|_| rng.random_range(0..c)).collect())
        .collect();
    let classes: Vec<usize> = (0..cfg.n_users)
        .map(|_| rng.random_range(0..cfg.n_classes))
        .collect();

    let per_user = cfg.slots_per_user();
    let mut blocks = Vec::with_capacity(cfg.n_users * per_user);
    let mut observations = Vec::with_capacity(cfg.n_users * per_user);
    for (user, &class) in classes.iter().enumerate() {
        let mut slots = sample(&mut rng, cfg.n_slots, per_user).into_vec();
        slots.sort_unstable();
        for slot in slots {
            let truth = schedule[class][slot];
            let mut cats = Vec::with_capacity(cfg.candidates_per_update);
            cats.push(truth);
            // Decoys index the C-1 categories other than the truth.
            for d in sample(&mut rng, c - 1, cfg.candidates_per_update - 1) {
                cats.push(if d >= truth { d + 1 } else { d });
            }
            blocks.push((user, slot, cats));
            observations.push(Observation {
                user,
                slot,
                category: truth,
            });
        }
    }
    let omega = CandidateSets::from_blocks(dims, blocks)?;
    Ok(Synthetic {
        omega,
        truth: GroundTruth {
            observations,
            classes,
        },
        dims,
        schedule,
    })
}

/// Hides a random `fraction` of observations: their candidate sets become all
/// C categories and their truths form the validation list.
///
/// The count is round-half-up(fraction * |observations|), sampled without
/// replacement under `seed`.
pub fn mask_validation(
    omega: &CandidateSets,
    truth: &GroundTruth,
    fraction: f64,
    seed: u64,
) -> Result<(CandidateSets, Vec<Observation>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NutfError::InvalidInput(format!(
            "mask fraction must be in (0, 1) (got {fraction})"
        )));
    }
    let mut pool: Vec<Observation> = truth.observations.clone();
    pool.sort_unstable();
    let count = round_half_up(fraction * pool.len() as f64).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Observation> = sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    let all: Vec<usize> = (0..omega.dims().n_categories).collect();
    let masked = omega.with_replaced(picked.iter().map(|o| (o.user, o.slot, all.clone())))?;
    Ok((masked, picked))
}

/// Turns every singleton candidate set into a validation pair (its only
/// category is the truth) and replaces the set with all C categories.
pub fn certain_validation(omega: &CandidateSets) -> Result<(CandidateSets, Vec<Observation>)> {
    let picked: Vec<Observation> = omega
        .blocks()
        .filter(|b| b.len() == 1)
        .map(|b| Observation {
            user: b.user,
            slot: b.slot,
            category: b.cats[0],
        })
        .collect();
    if picked.is_empty() {
        return Ok((omega.clone(), picked));
    }
    let all: Vec<usize> = (0..omega.dims().n_categories).collect();
    let modified = omega.with_replaced(picked.iter().map(|o| (o.user, o.slot, all.clone())))?;
    Ok((modified, picked))
}

/// Top-k accuracies over a validation list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k_max: usize,
    pub evaluated: usize,
    /// hits[k-1] = pairs whose truth is among the first k predictions.
    pub hits: Vec<usize>,
    /// accuracy[k-1] = hits[k-1] / evaluated.
    pub accuracy: Vec<f64>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> f64 {
        self.accuracy[k - 1]
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>4}  {:>10}  {:>8}\n", "k", "accuracy", "hits");
        for (k, (acc, hits)) in self.accuracy.iter().zip(&self.hits).enumerate() {
            s.push_str(&format!("{:>4}  {:>9.4}%  {:>8}\n", k + 1, acc * 100.0, hits));
        }
        s.push_str(&format!("evaluated: {}\n", self.evaluated));
        s
    }
}

/// Scores `validation` against `model` for k = 1..=k_max.
///
/// With `restrict`, each pair is ranked only among its candidate set in that
/// support (pairs absent from it are ranked over all C categories); a pair
/// with fewer than k candidates counts its whole ranking at k.
pub fn score_topk(
    model: &LowRankModel,
    validation: &[Observation],
    k_max: usize,
    restrict: Option<&CandidateSets>,
) -> Result<EvalReport> {
    if validation.is_empty() {
        return Err(NutfError::EmptyValidation);
    }
    if k_max == 0 {
        return Err(NutfError::InvalidInput("k_max must be at least 1".into()));
    }
    if restrict.is_none() && k_max > model.dims().n_categories {
        return Err(NutfError::InvalidInput(format!(
            "k_max = {k_max} exceeds C = {}",
            model.dims().n_categories
        )));
    }
    let mut first_hit = vec![0usize; k_max];
    for obs in validation {
        let cats = restrict.and_then(|o| o.get(obs.user, obs.slot));
        let ranked = rank_categories(model, obs.user, obs.slot, cats)?;
        if let Some(pos) = ranked.iter().take(k_max).position(|&(k, _)| k == obs.category) {
            first_hit[pos] += 1;
        }
    }
    let mut hits = Vec::with_capacity(k_max);
    let mut acc = 0;
    for h in first_hit {
        acc += h;
        hits.push(acc);
    }
    let n = validation.len();
    Ok(EvalReport {
        k_max,
        evaluated: n,
        accuracy: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        hits,
    })
}

/// Writes observations as JSON lines `{"u":..,"j":..,"cat":..}`.
pub fn write_observations<W: Write>(obs: &[Observation], mut out: W) -> Result<()> {
    for o in obs {
        serde_json::to_writer(&mut out, o).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines observations, checking indices against `dims` when given.
pub fn read_observations<R: BufRead>(input: R, dims: Option<&ProblemDims>) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obs: Observation =
            serde_json::from_str(&line).map_err(|e| NutfError::parse(lineno, e.to_string()))?;
        if let Some(d) = dims {
            if obs.user >= d.n_users || obs.slot >= d.n_slots || obs.category >= d.n_categories {
                return Err(NutfError::parse(
                    lineno,
                    format!("observation {obs:?} out of range for {d:?}"),
                ));
            }
        }
        out.push(obs);
    }
    Ok(out)
}

/// Timing of one point of a scaling ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_users: usize,
    /// |Omega|: total number of candidate entries.
    pub omega_size: usize,
    /// Median wall time of one outer iteration.
    pub seconds_per_iter: f64,
    /// Mean per-iteration kernel times.
    pub kernels: KernelTimings,
    pub x_update_seconds: f64,
    pub iterations: usize,
}

/// Generates `synth`, runs `solver.outer_iters` iterations with early stopping
/// disabled, and reports per-iteration timings.
pub fn bench_point(synth: &SynthConfig, solver: &SolverConfig) -> Result<BenchRow> {
    let data = generate(synth)?;
    let omega_size = data.omega.total_size();
    let cfg = SolverConfig { tol: 0.0, ..*solver };
    let result = fit(data.omega, &cfg)?;
    let records = &result.trace.records;
    let n = records.len();
    let mut secs: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    secs.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        secs[n / 2]
    } else {
        0.5 * (secs[n / 2 - 1] + secs[n / 2])
    };
    let mut kernels = KernelTimings::default();
    let mut x_update = 0.0;
    for r in records {
        kernels += r.kernels;
        x_update += r.x_update_seconds;
    }
    let scale = 1.0 / n as f64;
    Ok(BenchRow {
        n_users: synth.n_users,
        omega_size,
        seconds_per_iter: median,
        kernels: KernelTimings {
            spmm: kernels.spmm * scale,
            spmm_t: kernels.spmm_t * scale,
            qr: kernels.qr * scale,
            materialize: kernels.materialize * scale,
        },
        x_update_seconds: x_update * scale,
        iterations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_users: 100,
            n_slots: 50,
            n_categories: 20,
            n_classes: 10,
            slot_density: 0.2,
            candidates_per_update: 4,
            seed: 3,
        }
    }

    #[test]
    fn generated_sets_have_fixed_size_and_contain_truth() {
        let s = generate(&small_cfg()).unwrap();
        assert_eq!(s.omega.n_blocks(), 100 * 10);
        for (b, o) in s.omega.blocks().zip(&s.truth.observations) {
            assert_eq!((b.user, b.slot), (o.user, o.slot));
            assert_eq!(b.len(), 4);
            assert!(b.cats.contains(&o.category));
        }
    }

    #[test]
    fn single_candidate_sets_are_the_truth() {
        let s = generate(&SynthConfig {
            candidates_per_update: 1,
            ..small_cfg()
        })
        .unwrap();
        for (b, o) in s.omega.blocks().zip(&s.truth.observations) {
            assert_eq!(b.cats, &[o.category]);
        }
    }

    #[test]
    fn classmates_share_truth() {
        let s = generate(&small_cfg()).unwrap();
        let obs = &s.truth.observations;
        for a in obs {
            for b in obs {
                if a.slot == b.slot && s.truth.classes[a.user] == s.truth.classes[b.user] {
                    assert_eq!(a.category, b.category);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        for cfg in [
            SynthConfig { n_classes: 101, ..small_cfg() },
            SynthConfig { candidates_per_update: 21, ..small_cfg() },
            SynthConfig { slot_density: 0.0, ..small_cfg() },
            SynthConfig { slot_density: 1.5, ..small_cfg() },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }

    fn ten_observations() -> (CandidateSets, GroundTruth) {
        let dims = ProblemDims::new(10, 2, 5).unwrap();
        let blocks: Vec<_> = (0..10).map(|i| (i, i % 2, vec![i % 5, (i + 1) % 5])).collect();
        let observations = (0..10)
            .map(|i| Observation { user: i, slot: i % 2, category: i % 5 })
            .collect();
        (
            CandidateSets::from_blocks(dims, blocks).unwrap(),
            GroundTruth { observations, classes: vec![0; 10] },
        )
    }

    #[test]
    fn mask_count_rounds_half_up() {
        let (omega, truth) = ten_observations();
        assert_eq!(mask_validation(&omega, &truth, 0.04, 1).unwrap().1.len(), 0);
        assert_eq!(mask_validation(&omega, &truth, 0.05, 1).unwrap().1.len(), 1);
        assert_eq!(mask_validation(&omega, &truth, 0.25, 1).unwrap().1.len(), 3);
        assert!(mask_validation(&omega, &truth, 0.0, 1).is_err());
        assert!(mask_validation(&omega, &truth, 1.0, 1).is_err());
    }

    #[test]
    fn masking_replaces_only_selected_blocks() {
        let (omega, truth) = ten_observations();
        let (masked, val) = mask_validation(&omega, &truth, 0.3, 9).unwrap();
        assert_eq!(val.len(), 3);
        for b in masked.blocks() {
            if val.iter().any(|o| (o.user, o.slot) == (b.user, b.slot)) {
                assert_eq!(b.cats, &[0, 1, 2, 3, 4]);
            } else {
                assert_eq!(Some(b.cats), omega.get(b.user, b.slot));
            }
        }
    }

    #[test]
    fn certain_validation_picks_singletons() {
        let dims = ProblemDims::new(3, 2, 4).unwrap();
        let omega =
            CandidateSets::from_blocks(dims, vec![(0, 0, vec![1, 2]), (2, 1, vec![0, 3])]).unwrap();
        let (same, val) = certain_validation(&omega).unwrap();
        assert!(val.is_empty());
        assert_eq!(same, omega);

        let omega = CandidateSets::from_blocks(
            dims,
            vec![(0, 0, vec![1, 2]), (1, 0, vec![3]), (2, 1, vec![2])],
        )
        .unwrap();
        let (modified, val) = certain_validation(&omega).unwrap();
        assert_eq!(
            val,
            vec![
                Observation { user: 1, slot: 0, category: 3 },
                Observation { user: 2, slot: 1, category: 2 }
            ]
        );
        assert_eq!(modified.get(1, 0), Some(&[0, 1, 2, 3][..]));
        assert_eq!(modified.get(0, 0), Some(&[1, 2][..]));
    }

    /// Rank-1 model whose scores at slot 0 are `scores` for user 0.
    fn scoring_model(scores: &[f64]) -> LowRankModel {
        let c = scores.len();
        let dims = ProblemDims::new(1, 1, c).unwrap();
        let q = Array2::from_elem((1, 1), 1.0);
        let coeffs = Array2::from_shape_vec((1, c), scores.to_vec()).unwrap();
        LowRankModel::new(dims, q, coeffs, false).unwrap()
    }

    #[test]
    fn accuracy_counts_rank_positions() {
        // Truths ranked 1st, 3rd and 7th by descending score.
        let scores = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0];
        let model = scoring_model(&scores);
        let val = [
            Observation { user: 0, slot: 0, category: 0 },
            Observation { user: 0, slot: 0, category: 2 },
            Observation { user: 0, slot: 0, category: 6 },
        ];
        let rep = score_topk(&model, &val, 5, None).unwrap();
        assert!((rep.at(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((rep.at(3) - 2.0 / 3.0).abs() < 1e-15);
        assert!((rep.at(5) - 2.0 / 3.0).abs() < 1e-15);
        assert!(rep.accuracy.windows(2).all(|w| w[0] <= w[1]));
        assert!(score_topk(&model, &[], 1, None).is_err());
    }

    #[test]
    fn full_coverage_at_k_equals_c() {
        let model = scoring_model(&[0.3, 0.1, 0.2]);
        let val: Vec<_> = (0..3).map(|k| Observation { user: 0, slot: 0, category: k }).collect();
        let rep = score_topk(&model, &val, 3, None).unwrap();
        assert_eq!(rep.at(3), 1.0);
    }

    #[test]
    fn observations_round_trip_through_jsonl() {
        let obs = vec![Observation { user: 3, slot: 1, category: 2 }];
        let mut buf = Vec::new();
        write_observations(&obs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "{\"u\":3,\"j\":1,\"cat\":2}\n");
        assert_eq!(read_observations(&buf[..], None).unwrap(), obs);
        let dims = ProblemDims::new(3, 2, 3).unwrap();
        assert!(read_observations(&buf[..], Some(&dims)).is_err());
    }
}
