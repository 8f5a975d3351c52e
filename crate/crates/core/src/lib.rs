//! Discrete-event simulator for decentralized, negotiation-based task
//! allocation among heterogeneous machines.
//!
//! Tasks arrive stochastically and are auctioned to compatible machines,
//! which price them from purely local state plus a scalar shared-resource
//! contention signal. Bidding policies range from a resource-aware
//! heuristic family to learned bidders trained online, including a
//! ranking-aware bidder whose pairwise objective matches the minimum-bid
//! winner rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod bidding;
pub mod domain;
pub mod engine;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod workload;

pub use bidding::{Bidder, HeuristicBidder, HeuristicLevel, HeuristicWeights};
pub use domain::{
    BidFeatures, CompletionRecord, MachineId, MachineSpec, MachineState, ResourceState, TaskId,
    TaskSpec, FEATURE_DIM,
};
pub use engine::{run, AuctionRecord, SimOutcome};
pub use learner::{RankingBidder, RegressionBidder, TrainConfig, TrainingPoint};
pub use metrics::{aggregate, paired_deltas, run_metrics, AggregateRow, RunMetrics};
pub use workload::{generate_fleet, generate_tasks, FleetConfig, WorkloadConfig};

/// Configuration rejected during validation.
#[derive(Debug, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// The five bidding policies under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidderKind {
    HeuristicB0,
    HeuristicB1,
    HeuristicB2,
    Regression,
    Ranking,
}

impl BidderKind {
    pub const ALL: [BidderKind; 5] = [
        BidderKind::HeuristicB0,
        BidderKind::HeuristicB1,
        BidderKind::HeuristicB2,
        BidderKind::Regression,
        BidderKind::Ranking,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            BidderKind::HeuristicB0 => "heuristic_b0",
            BidderKind::HeuristicB1 => "heuristic_b1",
            BidderKind::HeuristicB2 => "heuristic_b2",
            BidderKind::Regression => "regression",
            BidderKind::Ranking => "ranking",
        }
    }
}

impl std::str::FromStr for BidderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BidderKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| {
                ConfigError::new(format!(
                    "unknown bidder `{s}` (expected one of: {})",
                    BidderKind::ALL.map(|k| k.label()).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for BidderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A constructed bidding policy, concrete enough to expose training
/// diagnostics after a run.
pub enum AnyBidder {
    Heuristic(HeuristicBidder),
    Regression(RegressionBidder),
    Ranking(RankingBidder),
}

impl AnyBidder {
    pub fn as_bidder(&mut self) -> &mut dyn Bidder {
        match self {
            AnyBidder::Heuristic(b) => b,
            AnyBidder::Regression(b) => b,
            AnyBidder::Ranking(b) => b,
        }
    }

    /// Per-round training diagnostics; empty for heuristic bidders.
    pub fn training_curve(&self) -> &[TrainingPoint] {
        match self {
            AnyBidder::Heuristic(_) => &[],
            AnyBidder::Regression(b) => b.core.training_curve(),
            AnyBidder::Ranking(b) => b.core.training_curve(),
        }
    }

    /// Serialized model parameters; empty for heuristic bidders.
    pub fn export_models(&self) -> Vec<String> {
        match self {
            AnyBidder::Heuristic(_) => Vec::new(),
            AnyBidder::Regression(b) => b.core.export_models(),
            AnyBidder::Ranking(b) => b.core.export_models(),
        }
    }
}

/// Builds the bidder for one run. The model-init and training streams are
/// derived from the run seed, independent of workload and fleet streams.
pub fn make_bidder(
    kind: BidderKind,
    weights: &HeuristicWeights,
    train: &TrainConfig,
    fleet_size: usize,
    seed: u64,
) -> AnyBidder {
    match kind {
        BidderKind::HeuristicB0 => AnyBidder::Heuristic(HeuristicBidder::new(
            HeuristicLevel::B0,
            weights.clone(),
        )),
        BidderKind::HeuristicB1 => AnyBidder::Heuristic(HeuristicBidder::new(
            HeuristicLevel::B1,
            weights.clone(),
        )),
        BidderKind::HeuristicB2 => AnyBidder::Heuristic(HeuristicBidder::new(
            HeuristicLevel::B2,
            weights.clone(),
        )),
        BidderKind::Regression => AnyBidder::Regression(RegressionBidder::new(
            weights.clone(),
            train.clone(),
            fleet_size,
            seed,
        )),
        BidderKind::Ranking => AnyBidder::Ranking(RankingBidder::new(
            weights.clone(),
            train.clone(),
            fleet_size,
            seed,
        )),
    }
}
