//! Sweep execution and output writing.
//!
//! For a fixed (scenario, seed) every bidder faces the identical workload
//! and fleet: those streams are derived from the seed alone, never from the
//! bidder. Cells run independently (in parallel) and results are written in
//! a fixed order, so repeated runs of the same configuration produce
//! byte-identical files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use allocsim_core::engine;
use allocsim_core::metrics::{self, PairedRow, RunMetrics};
use allocsim_core::workload::{generate_fleet, generate_tasks, tasks_to_csv};
use allocsim_core::{make_bidder, BidderKind, TrainingPoint};

use crate::config::{ExperimentConfig, ScenarioConfig};
use crate::figures;
use crate::CliError;

pub struct CellOutput {
    pub metrics: RunMetrics,
    pub curve: Vec<TrainingPoint>,
    pub models: Vec<String>,
    pub workload_csv: Option<String>,
    pub log_csvs: Option<(String, String)>,
}

/// Runs one (scenario, bidder, seed) cell.
pub fn run_cell(
    scenario_name: &str,
    scenario: &ScenarioConfig,
    cfg: &ExperimentConfig,
    kind: BidderKind,
    seed: u64,
    dump_workload: bool,
) -> Result<CellOutput, CliError> {
    let wl = scenario.workload(seed);
    let tasks = generate_tasks(&wl).map_err(|e| CliError::Config(e.to_string()))?;
    let fleet = generate_fleet(&cfg.fleet, scenario.type_count, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut bidder = make_bidder(kind, &cfg.weights, &cfg.train, fleet.len(), seed);
    let outcome = engine::run(&tasks, &fleet, bidder.as_bidder(), scenario.horizon)
        .map_err(|e| CliError::Runtime(format!("{scenario_name}/{kind}/{seed}: {e}")))?;
    let metrics = metrics::run_metrics(&outcome, &fleet, scenario_name, kind.label(), seed);
    Ok(CellOutput {
        metrics,
        curve: bidder.training_curve().to_vec(),
        models: if cfg.output.dump_models {
            bidder.export_models()
        } else {
            Vec::new()
        },
        workload_csv: dump_workload.then(|| tasks_to_csv(&tasks)),
        log_csvs: cfg.output.dump_logs.then(|| {
            (
                engine::assignment_log_csv(&outcome.assignment_log),
                engine::completions_csv(&outcome.completions),
            )
        }),
    })
}

pub struct SweepResult {
    /// Run metrics in (scenario, bidder, seed) order.
    pub runs: Vec<RunMetrics>,
    pub curves: Vec<(String, BidderKind, u64, Vec<TrainingPoint>)>,
    pub models: Vec<(String, BidderKind, u64, Vec<String>)>,
    pub workloads: Vec<(String, u64, String)>,
    pub logs: Vec<(String, BidderKind, u64, String, String)>,
}

/// Runs the full scenario x bidder x seed sweep without touching the
/// filesystem.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    cfg.validate()?;
    let seeds = cfg.seeds.seeds();
    let mut cells = Vec::new();
    for (name, scenario) in &cfg.scenarios {
        for (bi, &kind) in cfg.bidders.iter().enumerate() {
            for &seed in &seeds {
                let dump = cfg.output.dump_workload && bi == 0;
                cells.push((name.clone(), scenario.clone(), kind, seed, dump));
            }
        }
    }

    let outputs: Vec<Result<CellOutput, CliError>> = cells
        .par_iter()
        .map(|(name, scenario, kind, seed, dump)| {
            run_cell(name, scenario, cfg, *kind, *seed, *dump)
        })
        .collect();

    let mut result = SweepResult {
        runs: Vec::with_capacity(cells.len()),
        curves: Vec::new(),
        models: Vec::new(),
        workloads: Vec::new(),
        logs: Vec::new(),
    };
    for ((name, _, kind, seed, _), output) in cells.iter().zip(outputs) {
        let output = output?;
        result.runs.push(output.metrics);
        if !output.curve.is_empty() {
            result
                .curves
                .push((name.clone(), *kind, *seed, output.curve));
        }
        if !output.models.is_empty() {
            result
                .models
                .push((name.clone(), *kind, *seed, output.models));
        }
        if let Some(csv) = output.workload_csv {
            result.workloads.push((name.clone(), *seed, csv));
        }
        if let Some((log, comps)) = output.log_csvs {
            result.logs.push((name.clone(), *kind, *seed, log, comps));
        }
    }
    Ok(result)
}

fn fmt(x: f64) -> String {
    x.to_string()
}

pub fn runs_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from("scenario,bidder,seed,completed,avg_delay,misses,energy,unfinished\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.bidder,
            r.seed,
            r.completed,
            fmt(r.avg_delay),
            r.misses,
            fmt(r.energy),
            r.unfinished
        ));
    }
    out
}

pub fn aggregate_csv(runs: &[RunMetrics]) -> Result<String, CliError> {
    let rows = metrics::aggregate(runs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = String::from(
        "scenario,bidder,n,completed_mean,completed_std,delay_mean,delay_std,misses_mean,misses_std,energy_mean,energy_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.bidder,
            r.n,
            fmt(r.completed_mean),
            fmt(r.completed_std),
            fmt(r.delay_mean),
            fmt(r.delay_std),
            fmt(r.misses_mean),
            fmt(r.misses_std),
            fmt(r.energy_mean),
            fmt(r.energy_std)
        ));
    }
    Ok(out)
}

/// Seed-paired rows comparing the resource-aware heuristic (A) with the
/// ranking bidder (B), per scenario. Header-only when either is absent.
pub fn paired_rows(runs: &[RunMetrics]) -> Result<Vec<PairedRow>, CliError> {
    let mut rows = Vec::new();
    let scenarios: std::collections::BTreeSet<&str> =
        runs.iter().map(|r| r.scenario.as_str()).collect();
    for scenario in scenarios {
        let a: Vec<RunMetrics> = runs
            .iter()
            .filter(|r| r.scenario == scenario && r.bidder == BidderKind::HeuristicB2.label())
            .cloned()
            .collect();
        let b: Vec<RunMetrics> = runs
            .iter()
            .filter(|r| r.scenario == scenario && r.bidder == BidderKind::Ranking.label())
            .cloned()
            .collect();
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let paired =
            metrics::paired_deltas(&a, &b).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.extend(paired.rows);
    }
    Ok(rows)
}

pub fn paired_csv(rows: &[PairedRow]) -> String {
    let mut out = String::from("scenario,seed,metric,value_a,value_b,delta\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scenario,
            r.seed,
            r.metric,
            fmt(r.value_a),
            fmt(r.value_b),
            fmt(r.delta)
        ));
    }
    out
}

pub fn training_csv(curves: &[(String, BidderKind, u64, Vec<TrainingPoint>)]) -> String {
    let mut out =
        String::from("scenario,bidder,seed,round,pairwise_loss,pairwise_accuracy,recon_loss\n");
    for (scenario, kind, seed, points) in curves {
        for p in points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                scenario,
                kind.label(),
                seed,
                p.round,
                fmt(p.pairwise_loss),
                fmt(p.pairwise_accuracy),
                fmt(p.recon_loss)
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest {
    version: &'static str,
    config_hash: String,
    complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    files.push(name.to_string());
    Ok(())
}

fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    complete: bool,
    error: Option<String>,
    files: &[String],
) -> Result<(), CliError> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        complete,
        error,
        files: files.to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text)
        .map_err(|e| CliError::Runtime(format!("writing manifest: {e}")))
}

/// Runs the sweep and writes every output file. On failure, whatever was
/// produced is kept and the manifest records the incompleteness.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<String>, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;

    let mut files = Vec::new();
    let sweep = match run_sweep(cfg) {
        Ok(sweep) => sweep,
        Err(e) => {
            write_manifest(out_dir, cfg, false, Some(e.to_string()), &files)?;
            return Err(e);
        }
    };

    let mut emit = || -> Result<(), CliError> {
        write_file(out_dir, "runs.csv", &runs_csv(&sweep.runs), &mut files)?;
        write_file(out_dir, "aggregate.csv", &aggregate_csv(&sweep.runs)?, &mut files)?;
        let paired = paired_rows(&sweep.runs)?;
        write_file(out_dir, "paired.csv", &paired_csv(&paired), &mut files)?;
        if !sweep.curves.is_empty() {
            write_file(out_dir, "training.csv", &training_csv(&sweep.curves), &mut files)?;
        }
        for (scenario, seed, csv) in &sweep.workloads {
            write_file(out_dir, &format!("workload_{scenario}_{seed}.csv"), csv, &mut files)?;
        }
        for (scenario, kind, seed, log, comps) in &sweep.logs {
            let label = kind.label();
            write_file(out_dir, &format!("assignments_{scenario}_{label}_{seed}.csv"), log, &mut files)?;
            write_file(out_dir, &format!("completions_{scenario}_{label}_{seed}.csv"), comps, &mut files)?;
        }
        for (scenario, kind, seed, models) in &sweep.models {
            for (slot, text) in models.iter().enumerate() {
                let name = if models.len() == 1 {
                    format!("model_{scenario}_{}_{seed}.txt", kind.label())
                } else {
                    format!("model_{scenario}_{}_{seed}_m{slot}.txt", kind.label())
                };
                write_file(out_dir, &name, text, &mut files)?;
            }
        }
        files.extend(figures::emit_figures(
            &sweep.runs,
            out_dir,
            cfg.output.emit_charts,
        )?);
        Ok(())
    };

    match emit() {
        Ok(()) => {
            write_manifest(out_dir, cfg, true, None, &files)?;
            files.push("manifest.json".to_string());
            Ok(files)
        }
        Err(e) => {
            write_manifest(out_dir, cfg, false, Some(e.to_string()), &files)?;
            Err(e)
        }
    }
}

/// Plain-text aggregate table for terminal output.
pub fn aggregate_table(runs: &[RunMetrics]) -> Result<String, CliError> {
    let rows = metrics::aggregate(runs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:<14} {:>4} {:>16} {:>16} {:>16} {:>18}\n",
        "scenario", "bidder", "n", "completed", "avg_delay", "misses", "energy"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:<14} {:>4} {:>9.2} ± {:<5.2} {:>9.2} ± {:<5.2} {:>9.2} ± {:<5.2} {:>10.2} ± {:<6.2}\n",
            r.scenario,
            r.bidder,
            r.n,
            r.completed_mean,
            r.completed_std,
            r.delay_mean,
            r.delay_std,
            r.misses_mean,
            r.misses_std,
            r.energy_mean,
            r.energy_std
        ));
    }
    Ok(out)
}

/// Parses a runs.csv written by [`runs_csv`] back into rows.
pub fn parse_runs_csv(text: &str) -> Result<Vec<RunMetrics>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "scenario,bidder,seed,completed,avg_delay,misses,energy,unfinished" {
        return Err(CliError::Config(format!("unexpected runs.csv header: {header}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(CliError::Config(format!(
                "runs.csv line {}: expected 8 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| CliError::Config(format!("runs.csv line {}: bad {what}", i + 2));
        let completed: usize = fields[3].parse().map_err(|_| parse_err("completed"))?;
        rows.push(RunMetrics {
            scenario: fields[0].to_string(),
            bidder: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| parse_err("seed"))?,
            completed,
            avg_delay: fields[4].parse().map_err(|_| parse_err("avg_delay"))?,
            misses: fields[5].parse().map_err(|_| parse_err("misses"))?,
            energy: fields[6].parse().map_err(|_| parse_err("energy"))?,
            unfinished: fields[7].parse().map_err(|_| parse_err("unfinished"))?,
            no_completions: completed == 0,
        });
    }
    Ok(rows)
}

/// Output directory resolution: flag beats env var beats config.
pub fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(dir) = std::env::var("ALLOCSIM_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(&cfg.output.dir)
}
