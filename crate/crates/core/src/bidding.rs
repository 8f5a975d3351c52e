//! The bidder contract, feature extraction, and the heuristic bid family.
//!
//! Bids are unbounded reals and lower wins; only their ordering matters.
//! The three heuristic levels nest: the base bid prices queue plus service
//! time, the urgency-aware bid adds deadline pressure and load, and the
//! resource-aware bid adds a contention penalty for tasks that need the
//! shared resource. Each level reduces to the previous one when its extra
//! coefficients are zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{
    processing_time, slack, BidFeatures, CompletionRecord, DomainError, MachineId, MachineState,
    TaskSpec,
};
use crate::ConfigError;

/// Coefficients of the heuristic bid family plus the learned-correction gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicWeights {
    /// Queueing-time coefficient.
    pub alpha: f64,
    /// Processing-time coefficient.
    pub beta: f64,
    /// Urgency coefficient.
    pub delta: f64,
    /// Load coefficient.
    pub eta: f64,
    /// Resource-contention penalty coefficient.
    pub lambda: f64,
    /// Urgency value when a deadline miss is predicted.
    pub gamma1: f64,
    /// Gain on the learned ranking correction.
    pub psi: f64,
    /// Priority -> weight. Missing levels fall back to the level itself.
    pub priority_weights: BTreeMap<i32, f64>,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            delta: 2.0,
            eta: 0.5,
            lambda: 1.0,
            gamma1: 10.0,
            psi: 1.0,
            priority_weights: BTreeMap::new(),
        }
    }
}

impl HeuristicWeights {
    /// Priority weight; must be positive and increase with priority.
    pub fn priority_weight(&self, priority: i32) -> f64 {
        self.priority_weights
            .get(&priority)
            .copied()
            .unwrap_or(f64::from(priority))
    }

    pub fn validate(&self, priority_levels: &[i32]) -> Result<(), ConfigError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("gamma1", self.gamma1),
            ("psi", self.psi),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(format!(
                    "weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let mut levels = priority_levels.to_vec();
        levels.sort_unstable();
        levels.dedup();
        let mut prev: Option<(i32, f64)> = None;
        for &level in &levels {
            let w = self.priority_weight(level);
            if !(w > 0.0 && w.is_finite()) {
                return Err(ConfigError::new(format!(
                    "priority weight for level {level} must be > 0, got {w}"
                )));
            }
            if let Some((pl, pw)) = prev {
                if w <= pw {
                    return Err(ConfigError::new(format!(
                        "priority weights must increase with priority ({pl} -> {pw}, {level} -> {w})"
                    )));
                }
            }
            prev = Some((level, w));
        }
        Ok(())
    }
}

/// Extracts the 9-component feature vector for one candidate machine.
pub fn features(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
    contention: usize,
) -> Result<BidFeatures, DomainError> {
    Ok(BidFeatures {
        queueing: machine.queueing_time(now),
        proc: processing_time(task, &machine.spec)?,
        slack: slack(now, task, machine)?,
        load: machine.load(),
        needs_resource: task.needs_resource,
        contention,
        priority: task.priority,
        speed: machine.spec.speed,
        energy_rate: machine.spec.energy_rate,
    })
}

/// Base bid: weighted queueing time plus service time.
pub fn bid_b0(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
    w: &HeuristicWeights,
) -> Result<f64, DomainError> {
    let p = processing_time(task, &machine.spec)?;
    Ok(w.alpha * machine.queueing_time(now) + w.beta * p)
}

/// Priority-weighted urgency: a flat penalty when a miss is predicted
/// (slack <= 0), otherwise decaying with available slack.
pub fn urgency(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
    w: &HeuristicWeights,
) -> Result<f64, DomainError> {
    let s = slack(now, task, machine)?;
    let wp = w.priority_weight(task.priority);
    Ok(if s <= 0.0 { wp * w.gamma1 } else { wp / (s + 1.0) })
}

/// Urgency- and load-aware bid.
pub fn bid_b1(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
    w: &HeuristicWeights,
) -> Result<f64, DomainError> {
    let base = bid_b0(now, task, machine, w)?;
    let u = urgency(now, task, machine, w)?;
    Ok(base + w.delta * u + w.eta * machine.load() as f64)
}

/// Contention penalty, active only for tasks that need the shared resource.
pub fn resource_penalty(task: &TaskSpec, contention: usize, w: &HeuristicWeights) -> f64 {
    let chi = f64::from(u8::from(task.needs_resource));
    w.lambda * chi * contention as f64
}

/// Resource-aware bid: the full heuristic.
pub fn bid_b2(
    now: f64,
    task: &TaskSpec,
    machine: &MachineState,
    contention: usize,
    w: &HeuristicWeights,
) -> Result<f64, DomainError> {
    Ok(bid_b1(now, task, machine, w)? + resource_penalty(task, contention, w))
}

/// One auction as logged by the engine, handed back to bidders on completion.
#[derive(Debug, Clone, Copy)]
pub struct BidContext<'a> {
    pub time: f64,
    pub task: &'a TaskSpec,
    pub candidates: &'a [MachineId],
    pub bids: &'a [f64],
    pub winner: MachineId,
}

/// A bidding policy evaluated locally per machine.
///
/// `bid` sees exactly one machine's state, the task, and the scalar
/// contention level; that parameter surface is what makes the negotiation
/// decentralized.
pub trait Bidder {
    fn name(&self) -> &'static str;

    fn bid(&mut self, now: f64, task: &TaskSpec, machine: &MachineState, contention: usize)
        -> f64;

    /// Completion feedback for a task this bidder priced earlier.
    fn observe(&mut self, _record: &CompletionRecord, _ctx: &BidContext<'_>) {}

    /// Called once per auctioned task; trains when a cadence fires.
    fn maybe_train(&mut self, _now: f64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicLevel {
    B0,
    B1,
    B2,
}

/// Stateless bidder computing one of the heuristic bid levels.
#[derive(Debug, Clone)]
pub struct HeuristicBidder {
    pub level: HeuristicLevel,
    pub weights: HeuristicWeights,
}

impl HeuristicBidder {
    pub fn new(level: HeuristicLevel, weights: HeuristicWeights) -> Self {
        Self { level, weights }
    }
}

impl Bidder for HeuristicBidder {
    fn name(&self) -> &'static str {
        match self.level {
            HeuristicLevel::B0 => "heuristic_b0",
            HeuristicLevel::B1 => "heuristic_b1",
            HeuristicLevel::B2 => "heuristic_b2",
        }
    }

    fn bid(
        &mut self,
        now: f64,
        task: &TaskSpec,
        machine: &MachineState,
        contention: usize,
    ) -> f64 {
        let w = &self.weights;
        match self.level {
            HeuristicLevel::B0 => bid_b0(now, task, machine, w),
            HeuristicLevel::B1 => bid_b1(now, task, machine, w),
            HeuristicLevel::B2 => bid_b2(now, task, machine, contention, w),
        }
        .expect("engine bids only on compatible machines")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{InService, MachineSpec, QueueEntry};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn task(id: u64, rho: f64, deadline: f64, priority: i32, chi: bool) -> TaskSpec {
        TaskSpec::new(id, 0.0, 0, rho, deadline, priority, chi).unwrap()
    }

    fn state(speed: f64, queued_procs: &[f64], in_service_remaining: Option<f64>) -> MachineState {
        let spec = MachineSpec::new(0, BTreeSet::from([0]), speed, 1.0).unwrap();
        let mut m = MachineState::new(spec);
        for (i, &p) in queued_procs.iter().enumerate() {
            m.queue.push_back(QueueEntry {
                task: task(100 + i as u64, p * speed, 1e9, 1, false),
                proc_time: p,
            });
        }
        if let Some(rem) = in_service_remaining {
            m.in_service = Some(InService {
                entry: QueueEntry {
                    task: task(99, rem * speed, 1e9, 1, false),
                    proc_time: rem,
                },
                start: 0.0,
                end: rem,
            });
        }
        m
    }

    #[test]
    fn features_on_idle_machine() {
        let m = state(1.0, &[], None);
        let f = features(0.0, &task(0, 2.0, 10.0, 2, false), &m, 3).unwrap();
        assert_eq!(f.queueing, 0.0);
        assert_eq!(f.load, 0);
        assert_eq!(f.proc, 2.0);
        assert_eq!(f.priority, 2);
        assert!(!f.needs_resource);
        assert_eq!(f.contention, 3);
    }

    #[test]
    fn chi_component_is_zero_for_non_resource_tasks() {
        let m = state(1.0, &[], None);
        for u in [0, 5, 50] {
            let f = features(0.0, &task(0, 2.0, 10.0, 1, false), &m, u).unwrap();
            assert_eq!(f.as_array()[4], 0.0);
        }
    }

    #[test]
    fn feature_components_match_domain_ops() {
        let m = state(1.25, &[2.0, 3.5], Some(1.5));
        let t = task(0, 5.0, 12.0, 3, true);
        let now = 0.0;
        let f = features(now, &t, &m, 2).unwrap();
        let arr = f.as_array();
        assert_eq!(arr[0], m.queueing_time(now));
        assert_eq!(arr[1], processing_time(&t, &m.spec).unwrap());
        assert_eq!(arr[2], slack(now, &t, &m).unwrap());
        assert_eq!(arr[3], m.load() as f64);
        assert_eq!(arr[4], 1.0);
        assert_eq!(arr[5], 2.0);
        assert_eq!(arr[6], 3.0);
        assert_eq!(arr[7], 1.25);
        assert_eq!(arr[8], 1.0);
    }

    #[test]
    fn b0_prices_queue_plus_service() {
        // q=3 (queued procs), p=2.
        let m = state(1.0, &[1.0, 2.0], None);
        let w = HeuristicWeights {
            alpha: 1.0,
            beta: 1.0,
            ..Default::default()
        };
        assert_eq!(bid_b0(0.0, &task(0, 2.0, 10.0, 1, false), &m, &w).unwrap(), 5.0);
    }

    #[test]
    fn b0_with_zero_alpha_ignores_queue() {
        let w = HeuristicWeights {
            alpha: 0.0,
            ..Default::default()
        };
        let t = task(0, 2.0, 10.0, 1, false);
        let empty = bid_b0(0.0, &t, &state(1.0, &[], None), &w).unwrap();
        let loaded = bid_b0(0.0, &t, &state(1.0, &[4.0, 4.0], None), &w).unwrap();
        assert_eq!(empty, loaded);
    }

    #[test]
    fn urgency_branches() {
        let w = HeuristicWeights::default(); // gamma1 = 10, w(1) = 1
        // Idle unit-speed machine: slack = d - p.
        let m = state(1.0, &[], None);
        // slack = -2
        assert_eq!(urgency(0.0, &task(0, 5.0, 3.0, 1, false), &m, &w).unwrap(), 10.0);
        // slack = 1 -> 1/(1+1)
        assert_eq!(urgency(0.0, &task(0, 5.0, 6.0, 1, false), &m, &w).unwrap(), 0.5);
        // slack = 0 takes the penalty branch
        assert_eq!(urgency(0.0, &task(0, 5.0, 5.0, 1, false), &m, &w).unwrap(), 10.0);
    }

    #[test]
    fn b1_reduces_to_b0_when_extras_vanish() {
        let w = HeuristicWeights {
            delta: 0.0,
            eta: 0.0,
            ..Default::default()
        };
        let m = state(1.0, &[2.0], Some(0.5));
        let t = task(0, 3.0, 4.0, 2, false);
        assert_eq!(bid_b1(0.0, &t, &m, &w).unwrap(), bid_b0(0.0, &t, &m, &w).unwrap());
    }

    #[test]
    fn b1_load_term_alone() {
        let w = HeuristicWeights {
            alpha: 0.0,
            beta: 0.0,
            delta: 0.0,
            eta: 1.0,
            ..Default::default()
        };
        // Load 4: four queued, idle.
        let m = state(1.0, &[1.0, 1.0, 1.0, 1.0], None);
        assert_eq!(bid_b1(0.0, &task(0, 1.0, 100.0, 1, false), &m, &w).unwrap(), 4.0);
    }

    #[test]
    fn resource_penalty_cases() {
        let w = HeuristicWeights {
            lambda: 1.0,
            ..Default::default()
        };
        assert_eq!(resource_penalty(&task(0, 1.0, 2.0, 1, false), 7, &w), 0.0);
        assert_eq!(resource_penalty(&task(0, 1.0, 2.0, 1, true), 0, &w), 0.0);
        assert_eq!(resource_penalty(&task(0, 1.0, 2.0, 1, true), 3, &w), 3.0);
    }

    #[test]
    fn b2_reduces_to_b1_when_lambda_zero() {
        let w = HeuristicWeights {
            lambda: 0.0,
            ..Default::default()
        };
        let m = state(1.0, &[2.0], None);
        let t = task(0, 3.0, 4.0, 2, true);
        assert_eq!(
            bid_b2(0.0, &t, &m, 5, &w).unwrap(),
            bid_b1(0.0, &t, &m, &w).unwrap()
        );
    }

    #[test]
    fn b2_strictly_increases_with_contention_for_resource_tasks() {
        let w = HeuristicWeights::default();
        let m = state(1.0, &[], None);
        let t = task(0, 3.0, 10.0, 1, true);
        let mut prev = f64::NEG_INFINITY;
        for u in 0..6 {
            let b = bid_b2(0.0, &t, &m, u, &w).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn priority_weight_overrides_and_validation() {
        let mut w = HeuristicWeights::default();
        assert_eq!(w.priority_weight(3), 3.0);
        w.priority_weights.insert(3, 9.0);
        assert_eq!(w.priority_weight(3), 9.0);

        assert!(w.validate(&[1, 2, 3]).is_ok());
        // Zero-level priority has no positive default weight.
        assert!(HeuristicWeights::default().validate(&[0, 1]).is_err());
        // Non-increasing weights are rejected.
        let mut bad = HeuristicWeights::default();
        bad.priority_weights.insert(1, 5.0);
        bad.priority_weights.insert(2, 4.0);
        assert!(bad.validate(&[1, 2]).is_err());
        let neg = HeuristicWeights {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(neg.validate(&[1]).is_err());
    }

    fn arb_state() -> impl Strategy<Value = MachineState> {
        (
            0.5f64..4.0,
            proptest::collection::vec(0.1f64..5.0, 0..4),
            proptest::option::of(0.1f64..3.0),
        )
            .prop_map(|(speed, queued, svc)| state(speed, &queued, svc))
    }

    fn arb_task() -> impl Strategy<Value = TaskSpec> {
        (0.5f64..8.0, 0.1f64..30.0, 1i32..4, any::<bool>())
            .prop_map(|(rho, d, pri, chi)| task(0, rho, d, pri, chi))
    }

    proptest! {
        #[test]
        fn reduction_chain_pointwise(m in arb_state(), t in arb_task(), u in 0usize..6) {
            let w = HeuristicWeights {
                delta: 0.0,
                eta: 0.0,
                lambda: 0.0,
                ..Default::default()
            };
            let b0 = bid_b0(0.0, &t, &m, &w).unwrap();
            let b1 = bid_b1(0.0, &t, &m, &w).unwrap();
            let b2 = bid_b2(0.0, &t, &m, u, &w).unwrap();
            prop_assert_eq!(b0, b1);
            prop_assert_eq!(b1, b2);
        }

        #[test]
        fn b1_decomposes_exactly(m in arb_state(), t in arb_task()) {
            let w = HeuristicWeights::default();
            let b0 = bid_b0(0.0, &t, &m, &w).unwrap();
            let v = urgency(0.0, &t, &m, &w).unwrap();
            let b1 = bid_b1(0.0, &t, &m, &w).unwrap();
            prop_assert_eq!(b1, b0 + w.delta * v + w.eta * m.load() as f64);
        }

        #[test]
        fn b2_decomposes_exactly(m in arb_state(), t in arb_task(), u in 0usize..8) {
            let w = HeuristicWeights::default();
            let b1 = bid_b1(0.0, &t, &m, &w).unwrap();
            let b2 = bid_b2(0.0, &t, &m, u, &w).unwrap();
            prop_assert_eq!(b2, b1 + resource_penalty(&t, u, &w));
        }

        #[test]
        fn urgency_positive_and_bounded(m in arb_state(), t in arb_task()) {
            let w = HeuristicWeights::default();
            let v = urgency(0.0, &t, &m, &w).unwrap();
            let cap = w.priority_weight(t.priority) * w.gamma1;
            prop_assert!(v > 0.0);
            prop_assert!(v <= cap);
        }

        #[test]
        fn urgency_non_increasing_in_slack(t_rho in 0.5f64..4.0, d1 in 10.0f64..20.0, extra in 0.1f64..20.0) {
            // Larger deadline => larger slack => urgency must not grow.
            let w = HeuristicWeights::default();
            let m = state(1.0, &[], None);
            let near = urgency(0.0, &task(0, t_rho, d1, 1, false), &m, &w).unwrap();
            let far = urgency(0.0, &task(0, t_rho, d1 + extra, 1, false), &m, &w).unwrap();
            prop_assert!(far <= near);
        }
    }
}
