//! Experiment configuration: defaults, TOML ingestion, and validation.
//!
//! The file mirrors the module structure: `[scenarios.*]`, `[fleet]`,
//! `[weights]`, `[train]`, `[experiment]`. Every knob has a default and the
//! full effective configuration can be dumped back as TOML, so a config
//! file only needs the overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use allocsim_core::bidding::HeuristicWeights;
use allocsim_core::workload::{CapabilityRule, FleetConfig, WorkloadConfig};
use allocsim_core::{BidderKind, TrainConfig};

use crate::CliError;

/// One scenario: the workload knobs shared by every (bidder, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub max_interarrival: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub deadline_scale: f64,
    pub resource_prob: f64,
    pub priority_levels: Vec<i32>,
    pub type_count: u32,
    pub horizon: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            max_interarrival: 1.5,
            rho_min: 2.0,
            rho_max: 6.0,
            deadline_scale: 2.0,
            resource_prob: 0.4,
            priority_levels: vec![1, 2, 3],
            type_count: 3,
            horizon: 100.0,
        }
    }
}

impl ScenarioConfig {
    pub fn workload(&self, seed: u64) -> WorkloadConfig {
        WorkloadConfig {
            max_interarrival: self.max_interarrival,
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            deadline_scale: self.deadline_scale,
            resource_prob: self.resource_prob,
            priority_levels: self.priority_levels.clone(),
            type_count: self.type_count,
            horizon: self.horizon,
            seed,
        }
    }
}

/// Seed set: either an explicit list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Range { base: u64, count: u64 },
    List { list: Vec<u64> },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Range { base: 1, count: 30 }
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Range { base, count } => (*base..base + count).collect(),
            SeedSpec::List { list } => list.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
    /// Also dump each scenario/seed workload as CSV for audit.
    pub dump_workload: bool,
    /// Also dump the final learned model parameters per run.
    pub dump_models: bool,
    /// Also dump per-run assignment logs and completion records as CSV.
    pub dump_logs: bool,
    /// Render the three SVG charts next to the figure CSVs.
    pub emit_charts: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".to_string(),
            dump_workload: false,
            dump_models: false,
            dump_logs: false,
            emit_charts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenarios: BTreeMap<String, ScenarioConfig>,
    pub fleet: FleetConfig,
    pub weights: HeuristicWeights,
    pub train: TrainConfig,
    pub bidders: Vec<BidderKind>,
    pub seeds: SeedSpec,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut scenarios = BTreeMap::new();
        scenarios.insert("high_load".to_string(), ScenarioConfig::default());
        scenarios.insert(
            "tight_deadlines".to_string(),
            ScenarioConfig {
                max_interarrival: 3.0,
                deadline_scale: 0.8,
                ..ScenarioConfig::default()
            },
        );
        Self {
            scenarios,
            fleet: FleetConfig {
                machine_count: 5,
                speed_range: [0.8, 1.5],
                energy_range: [1.0, 3.0],
                capability_rule: CapabilityRule::default(),
            },
            weights: HeuristicWeights::default(),
            train: TrainConfig::default(),
            bidders: BidderKind::ALL.to_vec(),
            seeds: SeedSpec::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: allocsim_core::ConfigError| CliError::Config(e.to_string());
        if self.scenarios.is_empty() {
            return Err(CliError::Config("at least one scenario is required".into()));
        }
        if self.bidders.is_empty() {
            return Err(CliError::Config("at least one bidder is required".into()));
        }
        let mut sorted = self.bidders.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.bidders.len() {
            return Err(CliError::Config("duplicate bidder in list".into()));
        }
        let seeds = self.seeds.seeds();
        if seeds.len() < 2 {
            return Err(CliError::Config(
                "at least two seeds are required (std over seeds is undefined otherwise)".into(),
            ));
        }
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            return Err(CliError::Config("duplicate seeds in list".into()));
        }
        for (name, scenario) in &self.scenarios {
            scenario
                .workload(0)
                .validate()
                .map_err(|e| CliError::Config(format!("scenario {name}: {e}")))?;
            self.weights
                .validate(&scenario.priority_levels)
                .map_err(|e| CliError::Config(format!("scenario {name}: {e}")))?;
        }
        self.fleet.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration, recorded in the manifest.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
