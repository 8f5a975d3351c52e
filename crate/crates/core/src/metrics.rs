//! Run-level objectives and cross-seed aggregation.
//!
//! All metrics are restricted to tasks completed within the horizon;
//! unfinished work is reported in its own column. Aggregation uses the
//! sample (n-1) standard deviation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::MachineSpec;
use crate::engine::SimOutcome;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cell ({scenario}, {bidder}) has a single run; std is undefined")]
    SingletonCell { scenario: String, bidder: String },
    #[error("paired runs must share one scenario (got {a} and {b})")]
    ScenarioMismatch { a: String, b: String },
    #[error("paired runs must cover identical seed sets")]
    MismatchedSeeds,
    #[error("no runs given")]
    Empty,
}

pub const METRIC_NAMES: [&str; 4] = ["completed", "avg_delay", "misses", "energy"];

/// The four objectives of one run plus identifying labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub bidder: String,
    pub seed: u64,
    pub completed: usize,
    pub avg_delay: f64,
    pub misses: usize,
    pub energy: f64,
    pub unfinished: usize,
    /// Set when the run completed nothing; avg_delay is 0 by convention.
    pub no_completions: bool,
}

impl RunMetrics {
    pub fn metric_values(&self) -> [f64; 4] {
        [
            self.completed as f64,
            self.avg_delay,
            self.misses as f64,
            self.energy,
        ]
    }
}

/// Computes the objectives from a finished run. Energy follows the defining
/// sum: per machine, its energy rate times its total completed service time.
pub fn run_metrics(
    outcome: &SimOutcome,
    fleet: &[MachineSpec],
    scenario: &str,
    bidder: &str,
    seed: u64,
) -> RunMetrics {
    let completed = outcome.completions.len();
    let avg_delay = if completed == 0 {
        0.0
    } else {
        outcome.completions.iter().map(|c| c.delay).sum::<f64>() / completed as f64
    };
    let misses = outcome.completions.iter().filter(|c| c.missed).count();
    let mut energy = 0.0;
    for m in fleet {
        let service: f64 = outcome
            .completions
            .iter()
            .filter(|c| c.machine == m.id)
            .map(|c| c.proc_time)
            .sum();
        energy += m.energy_rate * service;
    }
    RunMetrics {
        scenario: scenario.to_string(),
        bidder: bidder.to_string(),
        seed,
        completed,
        avg_delay,
        misses,
        energy,
        unfinished: outcome.unfinished,
        no_completions: completed == 0,
    }
}

/// Mean and sample std per metric for one (scenario, bidder) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub scenario: String,
    pub bidder: String,
    pub n: usize,
    pub completed_mean: f64,
    pub completed_std: f64,
    pub delay_mean: f64,
    pub delay_std: f64,
    pub misses_mean: f64,
    pub misses_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator), two-pass.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Pooled standard deviation of two samples.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (sample_std(a), sample_std(b));
    (((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / (na + nb - 2.0)).sqrt()
}

/// Groups runs by (scenario, bidder) and aggregates each cell over seeds.
pub fn aggregate(rows: &[RunMetrics]) -> Result<Vec<AggregateRow>, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cells: BTreeMap<(String, String), Vec<&RunMetrics>> = BTreeMap::new();
    for row in rows {
        cells
            .entry((row.scenario.clone(), row.bidder.clone()))
            .or_default()
            .push(row);
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((scenario, bidder), mut cell) in cells {
        if cell.len() < 2 {
            return Err(MetricsError::SingletonCell { scenario, bidder });
        }
        // Canonical seed order makes the result exactly permutation-invariant.
        cell.sort_by_key(|r| r.seed);
        let col = |f: fn(&RunMetrics) -> f64| -> Vec<f64> { cell.iter().map(|r| f(r)).collect() };
        let completed = col(|r| r.completed as f64);
        let delay = col(|r| r.avg_delay);
        let misses = col(|r| r.misses as f64);
        let energy = col(|r| r.energy);
        out.push(AggregateRow {
            scenario,
            bidder,
            n: cell.len(),
            completed_mean: mean(&completed),
            completed_std: sample_std(&completed),
            delay_mean: mean(&delay),
            delay_std: sample_std(&delay),
            misses_mean: mean(&misses),
            misses_std: sample_std(&misses),
            energy_mean: mean(&energy),
            energy_std: sample_std(&energy),
        });
    }
    Ok(out)
}

/// One seed-paired comparison row, long form over metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRow {
    pub scenario: String,
    pub seed: u64,
    pub metric: &'static str,
    pub value_a: f64,
    pub value_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDeltas {
    pub rows: Vec<PairedRow>,
    /// Fraction of seeds with delta < 0 (B strictly below A), per metric.
    pub improved_frac: BTreeMap<&'static str, f64>,
}

/// Per-seed metric differences (B - A) between two bidders evaluated under
/// identical stochastic conditions.
pub fn paired_deltas(a: &[RunMetrics], b: &[RunMetrics]) -> Result<PairedDeltas, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let scenario = &a[0].scenario;
    for r in a.iter().chain(b) {
        if &r.scenario != scenario {
            return Err(MetricsError::ScenarioMismatch {
                a: scenario.clone(),
                b: r.scenario.clone(),
            });
        }
    }
    let index_b: BTreeMap<u64, &RunMetrics> = b.iter().map(|r| (r.seed, r)).collect();
    let seeds_a: Vec<u64> = a.iter().map(|r| r.seed).collect();
    if index_b.len() != b.len()
        || seeds_a.len() != a.len()
        || seeds_a.len() != index_b.len()
        || seeds_a.iter().any(|s| !index_b.contains_key(s))
    {
        return Err(MetricsError::MismatchedSeeds);
    }

    let mut sorted_a: Vec<&RunMetrics> = a.iter().collect();
    sorted_a.sort_by_key(|r| r.seed);
    let mut rows = Vec::new();
    let mut improved: BTreeMap<&'static str, usize> = BTreeMap::new();
    for ra in sorted_a {
        let rb = index_b[&ra.seed];
        let va = ra.metric_values();
        let vb = rb.metric_values();
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let delta = vb[i] - va[i];
            if delta < 0.0 {
                *improved.entry(name).or_default() += 1;
            }
            rows.push(PairedRow {
                scenario: scenario.clone(),
                seed: ra.seed,
                metric: name,
                value_a: va[i],
                value_b: vb[i],
                delta,
            });
        }
    }
    let n = a.len() as f64;
    let improved_frac = METRIC_NAMES
        .iter()
        .map(|&name| (name, improved.get(name).copied().unwrap_or(0) as f64 / n))
        .collect();
    Ok(PairedDeltas {
        rows,
        improved_frac,
    })
}
