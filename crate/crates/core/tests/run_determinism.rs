//! Whole-run determinism, the bid reduction chain across all five bidders,
//! and winner invariance under monotone bid transforms.

use allocsim_core::bidding::HeuristicWeights;
use allocsim_core::engine::winner;
use allocsim_core::rng::{Stream, StreamId};
use allocsim_core::workload::{generate_fleet, generate_tasks, FleetConfig, WorkloadConfig};
use allocsim_core::{engine, make_bidder, BidderKind, TrainConfig};

fn workload_cfg(seed: u64) -> WorkloadConfig {
    WorkloadConfig {
        max_interarrival: 1.5,
        rho_min: 2.0,
        rho_max: 6.0,
        deadline_scale: 2.0,
        resource_prob: 0.4,
        priority_levels: vec![1, 2, 3],
        type_count: 3,
        horizon: 100.0,
        seed,
    }
}

fn fleet_cfg() -> FleetConfig {
    FleetConfig {
        machine_count: 5,
        speed_range: [0.8, 1.5],
        energy_range: [1.0, 3.0],
        capability_rule: Default::default(),
    }
}

#[test]
fn learned_runs_are_bit_deterministic() {
    let cfg = workload_cfg(5);
    let tasks = generate_tasks(&cfg).unwrap();
    let fleet = generate_fleet(&fleet_cfg(), 3, 5).unwrap();
    for kind in [BidderKind::Ranking, BidderKind::Regression] {
        let run_once = || {
            let mut bidder = make_bidder(
                kind,
                &HeuristicWeights::default(),
                &TrainConfig::default(),
                fleet.len(),
                5,
            );
            engine::run(&tasks, &fleet, bidder.as_bidder(), cfg.horizon).unwrap()
        };
        let a = run_once();
        let b = run_once();
        assert_eq!(a, b, "{kind} run diverged");
        assert!(a.completions.len() > 10);
    }
}

#[test]
fn conservation_holds_across_seeds_and_bidders() {
    for seed in [1, 2, 3] {
        let cfg = workload_cfg(seed);
        let tasks = generate_tasks(&cfg).unwrap();
        let fleet = generate_fleet(&fleet_cfg(), 3, seed).unwrap();
        for kind in BidderKind::ALL {
            let mut bidder = make_bidder(
                kind,
                &HeuristicWeights::default(),
                &TrainConfig::default(),
                fleet.len(),
                seed,
            );
            let out = engine::run(&tasks, &fleet, bidder.as_bidder(), cfg.horizon).unwrap();
            assert_eq!(
                out.generated,
                out.completions.len() + out.unfinished + out.unassignable.len()
            );
        }
    }
}

#[test]
fn reduction_chain_all_five_bidders_agree() {
    // With the urgency, load, contention, and correction terms zeroed, and
    // no training round inside the horizon, every bidder prices pure b0.
    let weights = HeuristicWeights {
        delta: 0.0,
        eta: 0.0,
        lambda: 0.0,
        psi: 0.0,
        ..Default::default()
    };
    let train = TrainConfig {
        train_every: 1_000_000,
        ..Default::default()
    };
    for seed in [11, 12] {
        let cfg = workload_cfg(seed);
        let tasks = generate_tasks(&cfg).unwrap();
        let fleet = generate_fleet(&fleet_cfg(), 3, seed).unwrap();
        let mut logs = Vec::new();
        for kind in BidderKind::ALL {
            let mut bidder = make_bidder(kind, &weights, &train, fleet.len(), seed);
            let out = engine::run(&tasks, &fleet, bidder.as_bidder(), cfg.horizon).unwrap();
            logs.push((kind, out.assignment_log));
        }
        for (kind, log) in &logs[1..] {
            assert_eq!(log, &logs[0].1, "{kind} diverged from {}", logs[0].0);
        }
    }
}

#[test]
fn winner_is_invariant_under_monotone_transforms() {
    let mut s = Stream::new(77, StreamId::Training);
    for _ in 0..1000 {
        let n = 1 + s.pick(6);
        let bids: Vec<(u32, f64)> = (0..n as u32)
            .map(|m| (m, s.uniform(-20.0, 50.0)))
            .collect();
        let base = winner(&bids).unwrap();

        let scale = s.uniform(0.1, 5.0);
        let shift = s.uniform(-10.0, 10.0);
        let transforms: [&dyn Fn(f64) -> f64; 3] = [
            &|x: f64| x.exp(),
            &|x: f64| scale * x + shift,
            &|x: f64| x * x * x,
        ];
        for t in transforms {
            let mapped: Vec<(u32, f64)> = bids.iter().map(|&(m, b)| (m, t(b))).collect();
            assert_eq!(winner(&mapped).unwrap(), base);
        }
    }
}
