//! Seeded stochastic generation of task streams and machine fleets.
//!
//! Both generators are pure functions of (config, seed): arrivals follow a
//! renewal process with uniform inter-arrival gaps, deadlines scale with
//! workload, and the fleet covers every task type with at least two machines
//! so no task ever faces a single-candidate auction by construction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{MachineSpec, TaskSpec};
use crate::rng::{Stream, StreamId};
use crate::ConfigError;

/// Scenario knobs for one workload stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    /// Maximum inter-arrival gap; gaps are uniform in [0, max).
    pub max_interarrival: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Deadline scale: deadline = arrival + scale * workload.
    pub deadline_scale: f64,
    /// Probability that a task needs the shared resource.
    pub resource_prob: f64,
    pub priority_levels: Vec<i32>,
    pub type_count: u32,
    pub horizon: f64,
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.max_interarrival.is_finite() && self.max_interarrival > 0.0) {
            return Err(ConfigError::new("max_interarrival must be finite and > 0"));
        }
        if !(self.rho_min.is_finite() && self.rho_min > 0.0) {
            return Err(ConfigError::new("rho_min must be finite and > 0"));
        }
        if !(self.rho_max.is_finite() && self.rho_min <= self.rho_max) {
            return Err(ConfigError::new("rho range is inverted or not finite"));
        }
        if !(self.deadline_scale.is_finite() && self.deadline_scale > 0.0) {
            return Err(ConfigError::new("deadline_scale must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.resource_prob) {
            return Err(ConfigError::new("resource_prob must be in [0, 1]"));
        }
        if self.priority_levels.is_empty() {
            return Err(ConfigError::new("priority_levels must be nonempty"));
        }
        if self.type_count == 0 {
            return Err(ConfigError::new("type_count must be > 0"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::new("horizon must be finite and > 0"));
        }
        Ok(())
    }
}

/// Capability assignment policy for fleet generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapabilityRule {
    /// Every machine serves every type.
    Full,
    /// Deterministic double coverage of each type, plus random extras.
    Spread { extra_prob: f64 },
}

impl Default for CapabilityRule {
    fn default() -> Self {
        CapabilityRule::Spread { extra_prob: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub machine_count: usize,
    pub speed_range: [f64; 2],
    pub energy_range: [f64; 2],
    pub capability_rule: CapabilityRule,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            machine_count: 5,
            speed_range: [0.8, 1.5],
            energy_range: [1.0, 3.0],
            capability_rule: CapabilityRule::default(),
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.machine_count < 2 {
            return Err(ConfigError::new(
                "machine_count must be >= 2 (every type needs two capable machines)",
            ));
        }
        for (name, [lo, hi]) in [
            ("speed_range", self.speed_range),
            ("energy_range", self.energy_range),
        ] {
            if !(lo.is_finite() && lo > 0.0) {
                return Err(ConfigError::new(format!("{name} lower bound must be finite and > 0")));
            }
            if !(hi.is_finite() && lo <= hi) {
                return Err(ConfigError::new(format!("{name} is inverted or not finite")));
            }
        }
        if let CapabilityRule::Spread { extra_prob } = self.capability_rule {
            if !(0.0..=1.0).contains(&extra_prob) {
                return Err(ConfigError::new("extra_prob must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Generates the task stream for one run. Arrivals beyond the horizon are
/// dropped; ids are dense and follow arrival order.
pub fn generate_tasks(cfg: &WorkloadConfig) -> Result<Vec<TaskSpec>, ConfigError> {
    cfg.validate()?;
    let mut arrivals = Stream::new(cfg.seed, StreamId::Arrivals);
    let mut attrs = Stream::new(cfg.seed, StreamId::TaskAttrs);

    let mut levels = cfg.priority_levels.clone();
    levels.sort_unstable();
    levels.dedup();

    let mut tasks = Vec::new();
    let mut at = 0.0;
    loop {
        at += arrivals.uniform(0.0, cfg.max_interarrival);
        if at > cfg.horizon {
            break;
        }
        let rho = attrs.uniform(cfg.rho_min, cfg.rho_max);
        let task_type = attrs.pick(cfg.type_count as usize) as u32;
        let needs_resource = attrs.bernoulli(cfg.resource_prob);
        let priority = levels[attrs.pick(levels.len())];
        let id = tasks.len() as u64;
        let task = TaskSpec::new(
            id,
            at,
            task_type,
            rho,
            at + cfg.deadline_scale * rho,
            priority,
            needs_resource,
        )
        .map_err(|e| ConfigError::new(format!("generated invalid task: {e}")))?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// Generates a heterogeneous fleet. The spread rule assigns each type to two
/// fixed machines and then sprinkles extras, so coverage never depends on
/// random draws.
pub fn generate_fleet(
    cfg: &FleetConfig,
    type_count: u32,
    seed: u64,
) -> Result<Vec<MachineSpec>, ConfigError> {
    cfg.validate()?;
    if type_count == 0 {
        return Err(ConfigError::new("type_count must be > 0"));
    }
    let mut stream = Stream::new(seed, StreamId::Fleet);
    let m = cfg.machine_count;

    // One uniform draw per machine drives both attributes: faster machines
    // sit lower in the energy-rate range (newer equipment is quicker and
    // more frugal). Each marginal stays uniform over its configured range.
    let mut speeds = Vec::with_capacity(m);
    let mut energies = Vec::with_capacity(m);
    for _ in 0..m {
        let u = stream.unit();
        speeds.push(cfg.speed_range[0] + u * (cfg.speed_range[1] - cfg.speed_range[0]));
        energies.push(cfg.energy_range[1] - u * (cfg.energy_range[1] - cfg.energy_range[0]));
    }

    let mut capabilities: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); m];
    match cfg.capability_rule {
        CapabilityRule::Full => {
            for caps in &mut capabilities {
                caps.extend(0..type_count);
            }
        }
        CapabilityRule::Spread { extra_prob } => {
            for k in 0..type_count as usize {
                capabilities[(2 * k) % m].insert(k as u32);
                capabilities[(2 * k + 1) % m].insert(k as u32);
            }
            for caps in capabilities.iter_mut() {
                for k in 0..type_count {
                    if !caps.contains(&k) && stream.bernoulli(extra_prob) {
                        caps.insert(k);
                    }
                }
            }
        }
    }

    capabilities
        .into_iter()
        .zip(speeds.into_iter().zip(energies))
        .enumerate()
        .map(|(id, (caps, (speed, energy)))| {
            MachineSpec::new(id as u32, caps, speed, energy)
                .map_err(|e| ConfigError::new(format!("generated invalid machine: {e}")))
        })
        .collect()
}

/// Renders a task stream as CSV for audit (id,arrival,type,rho,deadline,priority,chi).
pub fn tasks_to_csv(tasks: &[TaskSpec]) -> String {
    let mut out = String::from("id,arrival,type,rho,deadline,priority,chi\n");
    for t in tasks {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.id,
            t.arrival,
            t.task_type,
            t.workload,
            t.deadline,
            t.priority,
            u8::from(t.needs_resource)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(seed: u64) -> WorkloadConfig {
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

    fn base_fleet() -> FleetConfig {
        FleetConfig {
            machine_count: 5,
            speed_range: [0.8, 1.5],
            energy_range: [1.0, 3.0],
            capability_rule: CapabilityRule::default(),
        }
    }

    #[test]
    fn deadlines_scale_with_workload() {
        let tasks = generate_tasks(&base_config(1)).unwrap();
        assert!(!tasks.is_empty());
        for t in &tasks {
            assert!((t.deadline - (t.arrival + 2.0 * t.workload)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_bernoulli_pins_resource_flag() {
        let mut cfg = base_config(2);
        cfg.resource_prob = 0.0;
        assert!(generate_tasks(&cfg)
            .unwrap()
            .iter()
            .all(|t| !t.needs_resource));
        cfg.resource_prob = 1.0;
        assert!(generate_tasks(&cfg)
            .unwrap()
            .iter()
            .all(|t| t.needs_resource));
    }

    #[test]
    fn mean_interarrival_matches_uniform_mean() {
        // U(0, 2) has mean 1; averaged over many seeds the empirical mean
        // must land well within 0.02.
        let mut sum = 0.0;
        let mut n = 0u64;
        for seed in 0..10_000 {
            let mut cfg = base_config(seed);
            cfg.max_interarrival = 2.0;
            let tasks = generate_tasks(&cfg).unwrap();
            let mut prev = 0.0;
            for t in &tasks {
                sum += t.arrival - prev;
                prev = t.arrival;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean inter-arrival {mean}");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate_tasks(&base_config(9)).unwrap();
        let b = generate_tasks(&base_config(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_tasks(&base_config(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn arrivals_sorted_and_tasks_valid() {
        for seed in 0..20 {
            let tasks = generate_tasks(&base_config(seed)).unwrap();
            for w in tasks.windows(2) {
                assert!(w[1].arrival >= w[0].arrival);
                assert!(w[1].id > w[0].id);
            }
            for t in &tasks {
                t.validate().unwrap();
                assert!(t.arrival <= 100.0);
                assert!((2.0..=6.0).contains(&t.workload));
                assert!((0..3).contains(&t.task_type));
                assert!([1, 2, 3].contains(&t.priority));
            }
        }
    }

    #[test]
    fn resource_flag_frequency_within_three_sigma() {
        let mut cfg = base_config(5);
        cfg.horizon = 10_000.0;
        let tasks = generate_tasks(&cfg).unwrap();
        assert!(tasks.len() >= 10_000);
        let freq = tasks.iter().filter(|t| t.needs_resource).count() as f64 / tasks.len() as f64;
        let sigma = (0.4f64 * 0.6 / tasks.len() as f64).sqrt();
        assert!(
            (freq - 0.4).abs() < 3.0 * sigma,
            "freq {freq} outside 3 sigma"
        );
    }

    #[test]
    fn two_machines_one_type_both_capable() {
        let cfg = FleetConfig {
            machine_count: 2,
            ..base_fleet()
        };
        let fleet = generate_fleet(&cfg, 1, 1).unwrap();
        assert!(fleet.iter().all(|m| m.capabilities.contains(&0)));
    }

    #[test]
    fn every_type_covered_twice_across_seeds() {
        for seed in 0..100 {
            let fleet = generate_fleet(&base_fleet(), 3, seed).unwrap();
            for k in 0..3u32 {
                let capable = fleet.iter().filter(|m| m.capabilities.contains(&k)).count();
                assert!(capable >= 2, "type {k} covered {capable}x at seed {seed}");
            }
        }
    }

    #[test]
    fn degenerate_speed_range_is_constant() {
        let cfg = FleetConfig {
            speed_range: [1.0, 1.0],
            ..base_fleet()
        };
        let fleet = generate_fleet(&cfg, 3, 7).unwrap();
        assert!(fleet.iter().all(|m| m.speed == 1.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = base_config(1);
        cfg.rho_min = 7.0; // > rho_max
        assert!(generate_tasks(&cfg).is_err());

        let fleet = FleetConfig {
            machine_count: 1,
            ..base_fleet()
        };
        assert!(generate_fleet(&fleet, 3, 1).is_err());

        let fleet = FleetConfig {
            energy_range: [3.0, 1.0],
            ..base_fleet()
        };
        assert!(generate_fleet(&fleet, 3, 1).is_err());
    }

    #[test]
    fn fleet_is_deterministic_per_seed() {
        let a = generate_fleet(&base_fleet(), 3, 4).unwrap();
        let b = generate_fleet(&base_fleet(), 3, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let tasks = generate_tasks(&base_config(1)).unwrap();
        let csv = tasks_to_csv(&tasks);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "id,arrival,type,rho,deadline,priority,chi"
        );
        assert_eq!(lines.count(), tasks.len());
    }
}
