//! Experiment harness for the allocsim simulator: configuration, the
//! scenario x bidder x seed sweep, CSV/figure emission, and the brute-force
//! oracle cross-check behind the `allocsim` binary.

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod figures;

/// Errors carrying the process exit code contract:
/// 1 config, 2 runtime, 3 oracle mismatch.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::OracleMismatch(_) => 3,
        }
    }
}

/// Engine-vs-oracle equivalence over random tiny instances; bids come from
/// the full heuristic and from a hash bidder that scrambles assignments.
pub fn oracle_check(instances: u64, seed: u64) -> Result<(), CliError> {
    use allocsim_core::bidding::{Bidder, HeuristicBidder, HeuristicLevel, HeuristicWeights};
    use allocsim_core::oracle::{random_tiny_instance, verify_instance, HashBidder};

    for i in 0..instances {
        let inst_seed = seed.wrapping_add(i);
        let inst = random_tiny_instance(inst_seed);
        verify_instance(&inst, || {
            Box::new(HeuristicBidder::new(
                HeuristicLevel::B2,
                HeuristicWeights::default(),
            )) as Box<dyn Bidder>
        })
        .map_err(|e| CliError::OracleMismatch(format!("instance seed {inst_seed} (b2): {e}")))?;
        verify_instance(&inst, || Box::new(HashBidder { salt: inst_seed }) as Box<dyn Bidder>)
            .map_err(|e| CliError::OracleMismatch(format!("instance seed {inst_seed} (hash): {e}")))?;
    }
    Ok(())
}
