//! Training behavior of the learned bidders: label derivation, convergence
//! on synthetic data, cold-start identities, and determinism.

use allocsim_core::bidding::{bid_b2, Bidder, HeuristicWeights};
use allocsim_core::domain::{MachineSpec, MachineState, TaskSpec, FEATURE_DIM};
use allocsim_core::learner::{
    derive_preferences, CandidateRecord, LearnedCore, Objective, RankingBidder, RegressionBidder,
    TrainConfig,
};
use allocsim_core::rng::{Stream, StreamId};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn record_with_outcomes(task: u64, outcomes: &[f64]) -> CandidateRecord {
    let k = outcomes.len();
    let mut s = Stream::new(task, StreamId::TaskAttrs);
    let features = (0..k)
        .map(|_| {
            let mut x = [0.0; FEATURE_DIM];
            for v in &mut x {
                *v = s.uniform(-1.0, 1.0);
            }
            x
        })
        .collect();
    CandidateRecord {
        task,
        candidates: (0..k as u32).collect(),
        features,
        outcomes: outcomes.to_vec(),
        winner: 0,
        realized_delay: outcomes[0],
    }
}

#[test]
fn identical_outcomes_yield_no_pairs() {
    let rec = record_with_outcomes(0, &[2.0, 2.0, 2.0]);
    assert!(derive_preferences(&rec, 1e-6).is_empty());
}

#[test]
fn total_order_yields_all_pairs() {
    let rec = record_with_outcomes(0, &[0.0, 2.0, 5.0]);
    let pairs = derive_preferences(&rec, 1e-6);
    assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
}

#[test]
fn near_ties_are_skipped() {
    let rec = record_with_outcomes(0, &[1.0, 1.0 + 5e-7, 3.0]);
    let pairs = derive_preferences(&rec, 1e-6);
    assert_eq!(pairs, vec![(0, 2), (1, 2)]);
}

proptest! {
    #[test]
    fn pair_count_is_choose_two_minus_ties(outcomes in proptest::collection::vec(0u8..6, 2..6)) {
        // Integer-valued outcomes: any two distinct values differ by >= 1,
        // so the pair count is C(k,2) minus the pairs lost to equal values.
        let floats: Vec<f64> = outcomes.iter().map(|&v| f64::from(v)).collect();
        let rec = record_with_outcomes(0, &floats);
        let pairs = derive_preferences(&rec, 1e-6);
        let k = floats.len();
        let ties = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .filter(|&(i, j)| floats[i] == floats[j])
            .count();
        prop_assert_eq!(pairs.len(), k * (k - 1) / 2 - ties);
    }

    #[test]
    fn preferences_form_a_strict_partial_order(outcomes in proptest::collection::vec(-10.0f64..10.0, 2..6)) {
        let rec = record_with_outcomes(0, &outcomes);
        let pairs = derive_preferences(&rec, 1e-6);
        let has = |a: usize, b: usize| pairs.contains(&(a, b));
        let k = outcomes.len();
        for a in 0..k {
            prop_assert!(!has(a, a));
            for b in 0..k {
                if has(a, b) {
                    prop_assert!(!has(b, a));
                    for c in 0..k {
                        if has(b, c) {
                            prop_assert!(has(a, c));
                        }
                    }
                }
            }
        }
    }
}

fn core_with(cfg: TrainConfig, objective: Objective, seed: u64) -> LearnedCore {
    LearnedCore::new(objective, HeuristicWeights::default(), cfg, 4, seed)
}

#[test]
fn single_pair_training_drives_loss_below_ln2() {
    let cfg = TrainConfig {
        recon_weight: 0.0,
        epochs: 40,
        learning_rate: 0.05,
        ..Default::default()
    };
    let mut core = core_with(cfg, Objective::Ranking, 1);
    core.push_record(record_with_outcomes(0, &[0.0, 5.0]));
    let mut last = f64::INFINITY;
    for _ in 0..5 {
        core.train_round();
        let point = *core.training_curve().last().unwrap();
        assert!(point.pairwise_loss < last);
        last = point.pairwise_loss;
    }
    assert!(last < std::f64::consts::LN_2, "loss {last} not below ln 2");
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    let mut core = core_with(cfg, Objective::Ranking, 2);
    core.push_record(record_with_outcomes(0, &[0.0, 3.0]));
    let before = core.export_models();
    core.train_round();
    let after = core.export_models();
    // Weights unchanged; only the normalizer may have been frozen.
    let weights_of = |texts: &[String]| -> Vec<String> {
        texts
            .iter()
            .flat_map(|t| {
                t.lines()
                    .skip_while(|l| !l.starts_with("layer"))
                    .map(String::from)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    assert_eq!(weights_of(&before), weights_of(&after));
}

#[test]
fn empty_buffer_training_is_a_noop() {
    let mut core = core_with(TrainConfig::default(), Objective::Ranking, 3);
    core.train_round();
    assert_eq!(core.rounds(), 0);
    assert!(core.training_curve().is_empty());
}

/// Synthetic linearly separable preference data: outcome is a fixed linear
/// functional of the features, so ordering by it is exactly learnable.
fn separable_records(n: usize, seed: u64) -> Vec<CandidateRecord> {
    let mut s = Stream::new(seed, StreamId::TaskAttrs);
    let w: Vec<f64> = (0..FEATURE_DIM).map(|_| s.uniform(-1.0, 1.0)).collect();
    (0..n as u64)
        .map(|task| {
            let k = 2 + s.pick(3);
            let features: Vec<[f64; FEATURE_DIM]> = (0..k)
                .map(|_| {
                    let mut x = [0.0; FEATURE_DIM];
                    for v in &mut x {
                        *v = s.uniform(-2.0, 2.0);
                    }
                    x
                })
                .collect();
            let outcomes: Vec<f64> = features
                .iter()
                .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect();
            CandidateRecord {
                task,
                candidates: (0..k as u32).collect(),
                features,
                outcomes,
                winner: 0,
                realized_delay: 0.0,
            }
        })
        .collect()
}

#[test]
fn separable_preferences_reach_high_pairwise_accuracy() {
    let mut core = core_with(TrainConfig::default(), Objective::Ranking, 4);
    // One pool so train and holdout share the same underlying functional.
    let mut pool = separable_records(200, 40);
    let holdout = pool.split_off(150);
    for rec in pool {
        core.push_record(rec);
    }
    // Default per-round budget, repeated until the separable set is learned.
    let before_holdout = holdout_loss(&core, &holdout);
    let mut accuracy = 0.0;
    for _ in 0..30 {
        core.train_round();
        accuracy = core.training_curve().last().unwrap().pairwise_accuracy;
        if accuracy > 0.95 {
            break;
        }
    }
    assert!(accuracy > 0.95, "train accuracy {accuracy}");

    // Held-out pairs must not get worse than the untrained scorer.
    let after = holdout_loss(&core, &holdout);
    assert!(after <= before_holdout);
    let acc = holdout_accuracy(&core, &holdout);
    assert!(acc > 0.9, "holdout accuracy {acc}");
}

fn holdout_pairs(core: &LearnedCore, recs: &[CandidateRecord]) -> Vec<(f64, f64)> {
    recs.iter()
        .flat_map(|rec| {
            derive_preferences(rec, 1e-6)
                .into_iter()
                .map(|(a, b)| {
                    (
                        core.scorer(rec.candidates[a]).score(&rec.features[a]),
                        core.scorer(rec.candidates[b]).score(&rec.features[b]),
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn holdout_loss(core: &LearnedCore, recs: &[CandidateRecord]) -> f64 {
    let pairs = holdout_pairs(core, recs);
    let n = pairs.len() as f64;
    pairs
        .iter()
        .map(|&(a, b)| allocsim_core::learner::net::pairwise_loss(a, b))
        .sum::<f64>()
        / n
}

fn holdout_accuracy(core: &LearnedCore, recs: &[CandidateRecord]) -> f64 {
    let pairs = holdout_pairs(core, recs);
    pairs.iter().filter(|&&(a, b)| a < b).count() as f64 / pairs.len() as f64
}

#[test]
fn regression_fits_constant_labels() {
    let cfg = TrainConfig {
        recon_weight: 0.0,
        epochs: 200,
        learning_rate: 0.05,
        ..Default::default()
    };
    let mut core = core_with(cfg, Objective::Regression, 5);
    for task in 0..20 {
        let mut rec = record_with_outcomes(task, &[3.0, 3.0, 3.0]);
        rec.outcomes = vec![3.0; 3];
        core.push_record(rec);
    }
    for _ in 0..5 {
        core.train_round();
    }
    let rec = record_with_outcomes(999, &[3.0, 3.0]);
    for (i, &m) in rec.candidates.iter().enumerate() {
        let pred = core.scorer(m).score(&rec.features[i]);
        assert!(
            (pred - 3.0).abs() < 1e-2,
            "prediction {pred} not close to the constant label"
        );
    }
}

#[test]
fn regression_training_mse_non_increasing() {
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let mut core = core_with(cfg, Objective::Regression, 6);
    for rec in separable_records(80, 50) {
        core.push_record(rec);
    }
    // MSE over the buffer, evaluated with the current weights and the
    // normalizer that training itself will freeze and use.
    let mse = |core: &LearnedCore, recs: &[CandidateRecord]| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for rec in recs {
            for (i, &m) in rec.candidates.iter().enumerate() {
                let f = core.scorer(m).score(&rec.features[i]);
                sum += (f - rec.outcomes[i]) * (f - rec.outcomes[i]);
                n += 1;
            }
        }
        sum / n as f64
    };
    let eval_set = separable_records(80, 50);
    core.train_round();
    let mut prev = mse(&core, &eval_set);
    for _ in 0..6 {
        core.train_round();
        let now = mse(&core, &eval_set);
        assert!(
            now <= prev + 1e-9,
            "training MSE went up: {prev} -> {now}"
        );
        prev = now;
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let build = || {
        let mut core = core_with(TrainConfig::default(), Objective::Ranking, 7);
        for rec in separable_records(60, 60) {
            core.push_record(rec);
        }
        core.train_round();
        core.train_round();
        core.export_models()
    };
    assert_eq!(build(), build());
}

fn idle_machines(n: u32) -> Vec<MachineState> {
    (0..n)
        .map(|id| {
            MachineState::new(
                MachineSpec::new(id, BTreeSet::from([0]), 1.0 + f64::from(id) * 0.2, 1.5).unwrap(),
            )
        })
        .collect()
}

#[test]
fn ranking_cold_start_equals_b2_exactly() {
    let weights = HeuristicWeights::default();
    let mut bidder = RankingBidder::new(weights.clone(), TrainConfig::default(), 3, 11);
    let task = TaskSpec::new(0, 0.0, 0, 2.0, 6.0, 2, true).unwrap();
    for m in idle_machines(3) {
        let got = bidder.bid(0.0, &task, &m, 2);
        let want = bid_b2(0.0, &task, &m, 2, &weights).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn regression_cold_start_delegates_to_b2() {
    let weights = HeuristicWeights::default();
    let mut bidder = RegressionBidder::new(weights.clone(), TrainConfig::default(), 3, 12);
    let task = TaskSpec::new(0, 0.0, 0, 2.0, 6.0, 2, false).unwrap();
    for m in idle_machines(3) {
        let got = bidder.bid(0.0, &task, &m, 0);
        let want = bid_b2(0.0, &task, &m, 0, &weights).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn bids_never_touch_the_decoder() {
    let mut bidder = RankingBidder::new(HeuristicWeights::default(), TrainConfig::default(), 2, 13);
    let task = TaskSpec::new(0, 0.0, 0, 2.0, 6.0, 1, false).unwrap();
    let machines = idle_machines(2);
    for m in &machines {
        let _ = bidder.bid(0.0, &task, m, 0);
    }
    let text = bidder.core.export_models();
    assert_eq!(text.len(), 1);
    // Two bids: exactly two encoder passes, zero decoder passes.
    assert_eq!(bidder.core.scorer(0).params.encoder_evals(), 2);
    assert_eq!(bidder.core.scorer(0).params.decoder_evals(), 0);
}

#[test]
fn per_machine_mode_keeps_separate_models() {
    let cfg = TrainConfig {
        per_machine_models: true,
        ..Default::default()
    };
    let mut core = core_with(cfg, Objective::Ranking, 14);
    for rec in separable_records(60, 70) {
        core.push_record(rec);
    }
    core.train_round();
    let models = core.export_models();
    assert_eq!(models.len(), 4);
    // Models diverge because each sees different gradient slices.
    assert_ne!(models[0], models[1]);
}
