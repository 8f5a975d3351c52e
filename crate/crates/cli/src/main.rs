use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use allocsim_cli::config::{ExperimentConfig, SeedSpec};
use allocsim_cli::{experiment, figures, oracle_check, CliError};
use allocsim_core::BidderKind;

/// Decentralized negotiation-based task allocation simulator.
#[derive(Parser)]
#[command(name = "allocsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario x bidder x seed sweep and write all outputs.
    Run(RunArgs),
    /// Print the default configuration as TOML.
    Defaults,
    /// Cross-check the engine against the brute-force reference scheduler.
    Oracle(OracleArgs),
    /// Re-emit figure data and charts from an existing runs.csv.
    Figures(FiguresArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; omitted sections fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override: a count ("30"), a range ("base:count"), or a list ("1,5,9").
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (beats ALLOCSIM_OUT_DIR and the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these scenarios (repeatable).
    #[arg(long)]
    scenario: Vec<String>,
    /// Restrict to these bidders (repeatable).
    #[arg(long)]
    bidder: Vec<String>,
    /// Print the full effective configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
    /// Skip SVG chart rendering.
    #[arg(long)]
    no_charts: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Number of random tiny instances to verify.
    #[arg(long, default_value_t = 200)]
    instances: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FiguresArgs {
    /// Directory containing runs.csv; figure files are written next to it.
    #[arg(long)]
    dir: PathBuf,
    /// Skip SVG chart rendering.
    #[arg(long)]
    no_charts: bool,
}

fn parse_seed_spec(s: &str) -> Result<SeedSpec, CliError> {
    let bad = |msg: String| CliError::Config(msg);
    if let Some((base, count)) = s.split_once(':') {
        let base: u64 = base
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad seed base in `{s}`")))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad seed count in `{s}`")))?;
        return Ok(SeedSpec::Range { base, count });
    }
    if s.contains(',') {
        let list = s
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad seed list `{s}`")))?;
        return Ok(SeedSpec::List { list });
    }
    let count: u64 = s
        .trim()
        .parse()
        .map_err(|_| bad(format!("bad seed spec `{s}`")))?;
    Ok(SeedSpec::Range { base: 1, count })
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(spec) = &args.seeds {
        cfg.seeds = parse_seed_spec(spec)?;
    }
    if !args.scenario.is_empty() {
        cfg.scenarios.retain(|name, _| args.scenario.contains(name));
        for name in &args.scenario {
            if !cfg.scenarios.contains_key(name) {
                return Err(CliError::Config(format!("unknown scenario `{name}`")));
            }
        }
    }
    if !args.bidder.is_empty() {
        let mut kinds = Vec::new();
        for label in &args.bidder {
            kinds.push(
                label
                    .parse::<BidderKind>()
                    .map_err(|e| CliError::Config(e.to_string()))?,
            );
        }
        cfg.bidders.retain(|k| kinds.contains(k));
        for k in kinds {
            if !cfg.bidders.contains(&k) {
                cfg.bidders.push(k);
            }
        }
    }
    if args.no_charts {
        cfg.output.emit_charts = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let cfg = build_config(&args)?;
    if args.print_defaults {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let out_dir = experiment::resolve_out_dir(args.out.clone(), &cfg);
    let files = experiment::run_experiment(&cfg, &out_dir)?;

    let runs_text = std::fs::read_to_string(out_dir.join("runs.csv"))
        .map_err(|e| CliError::Runtime(format!("re-reading runs.csv: {e}")))?;
    let runs = experiment::parse_runs_csv(&runs_text)?;
    print!("{}", experiment::aggregate_table(&runs)?);
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    oracle_check(args.instances, args.seed)?;
    println!(
        "oracle check passed: {} instances, completions exactly equal",
        args.instances
    );
    Ok(())
}

fn cmd_figures(args: FiguresArgs) -> Result<(), CliError> {
    let runs_path = args.dir.join("runs.csv");
    let text = std::fs::read_to_string(&runs_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", runs_path.display())))?;
    let runs = experiment::parse_runs_csv(&text)?;
    let files = figures::emit_figures(&runs, &args.dir, !args.no_charts)?;
    println!("wrote {} figure files to {}", files.len(), args.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
        Command::Oracle(args) => cmd_oracle(args),
        Command::Figures(args) => cmd_figures(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
