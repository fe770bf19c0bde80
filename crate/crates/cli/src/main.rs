//! Command-line front end: single trials, Monte Carlo sweeps, backup-layer
//! construction, and config/graph validation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swarmguard::abmc::build_backup_layer;
use swarmguard::graph::{build_random_hhc, validate_hhc, Epoch, HierGraph, PlacementParams};
use swarmguard::harness::{emit_reports, parse_config, run_sweep, ConfigFile, OUT_DIR_ENV};
use swarmguard::seed::stream_rng;
use swarmguard::sim::{run_trial, ScenarioConfig};
use swarmguard::Error;

#[derive(Parser)]
#[command(
    name = "swarmguard",
    about = "Backup-path consensus, fault detection, and formation simulation for hierarchical robot swarms",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario or sweep config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $SWARMGUARD_OUT or ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force mitigation on or off.
    #[arg(long, value_parser = parse_on_off)]
    mitigation: Option<bool>,
}

fn parse_on_off(v: &str) -> Result<bool, String> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected `on` or `off`, got `{other}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial and write its metric series, summary, and logs.
    Run(CommonArgs),
    /// Run a seeded Monte Carlo sweep and write aggregate CSV reports.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Build the graph and ABMC backup layer only; write the layer CSV and
    /// the graph text format.
    BackupLayer(CommonArgs),
    /// Validate a config file and/or a serialized graph.
    Validate {
        /// Config file to validate.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Graph text file to validate.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        std::env::var(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from("out"))
    })
}

fn load_scenario(args: &CommonArgs) -> Result<ScenarioConfig, Error> {
    let parsed = parse_config(&args.config)?;
    let mut cfg = match parsed {
        ConfigFile::Scenario(cfg) => *cfg,
        ConfigFile::Sweep(_) => {
            return Err(Error::config(
                args.config.display().to_string(),
                "expected a scenario config, found a sweep",
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.mitigation {
        cfg.mitigation = m;
    }
    Ok(cfg)
}

fn scenario_graph(cfg: &ScenarioConfig) -> Result<HierGraph, Error> {
    let placement = PlacementParams {
        comm_range: cfg.abmc.r,
        ..cfg.placement
    };
    build_random_hhc(
        cfg.n,
        cfg.max_leader_children,
        cfg.max_follower_children,
        placement,
        &mut stream_rng(cfg.seed, "graph", &[]),
    )
}

fn cmd_run(args: &CommonArgs) -> Result<(), Error> {
    let mut cfg = load_scenario(args)?;
    cfg.collect_logs = true;
    let metrics = run_trial(&cfg)?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)?;
    metrics.series_csv(fs::File::create(dir.join("trial_series.csv"))?)?;
    metrics.decisions_csv(fs::File::create(dir.join("decisions.csv"))?)?;
    metrics.faults_csv(fs::File::create(dir.join("fault_schedule.csv"))?)?;
    let summary = serde_json::to_string_pretty(&metrics.summary())
        .expect("summary serializes");
    fs::write(dir.join("summary.json"), &summary)?;
    println!("{summary}");
    println!("wrote trial outputs to {}", dir.display());
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, parallel: usize) -> Result<(), Error> {
    let parsed = parse_config(&common.config)?;
    let mut spec = match parsed {
        ConfigFile::Sweep(spec) => *spec,
        ConfigFile::Scenario(_) => {
            return Err(Error::config(
                common.config.display().to_string(),
                "expected a sweep config, found a scenario",
            ))
        }
    };
    if let Some(seed) = common.seed {
        spec.seed_base = seed;
    }
    if let Some(m) = common.mitigation {
        spec.base.mitigation = m;
    }
    let agg = run_sweep(&spec, parallel)?;
    let dir = out_dir(&common.out);
    let files = emit_reports(&agg, &dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    let failed: usize = agg.cells.iter().map(|c| c.failures.len()).sum();
    if failed > 0 {
        eprintln!("warning: {failed} trial(s) failed; see summary.csv");
    }
    Ok(())
}

fn cmd_backup_layer(args: &CommonArgs) -> Result<(), Error> {
    let cfg = load_scenario(args)?;
    let g = scenario_graph(&cfg)?;
    let layer = build_backup_layer(&g, &cfg.abmc, Epoch::initial())?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("graph.txt"), g.to_text())?;
    layer.to_csv(fs::File::create(dir.join("backup_layer.csv"))?)?;
    println!(
        "layer for {} robots: {} covered, {} unreachable, converged = {}",
        g.len(),
        layer.paths.len(),
        layer.unreachable.len(),
        layer.converged
    );
    println!("wrote layer outputs to {}", dir.display());
    Ok(())
}

fn cmd_validate(config: &Option<PathBuf>, graph: &Option<PathBuf>) -> Result<(), Error> {
    if config.is_none() && graph.is_none() {
        return Err(Error::config(
            "validate",
            "pass --config and/or --graph",
        ));
    }
    if let Some(path) = config {
        match parse_config(path)? {
            ConfigFile::Scenario(_) => println!("{}: valid scenario config", path.display()),
            ConfigFile::Sweep(spec) => println!(
                "{}: valid sweep config ({} cells x {} trials)",
                path.display(),
                spec.cell_count(),
                spec.trials
            ),
        }
    }
    if let Some(path) = graph {
        let g = HierGraph::from_text(&fs::read_to_string(path)?)?;
        let report = validate_hhc(&g);
        if report.is_valid() {
            println!("{}: valid graph with {} robots", path.display(), g.len());
        } else {
            println!("{}: INVALID\n{report}", path.display());
            return Err(Error::Topology("graph validation failed".into()));
        }
    }
    Ok(())
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. } | Error::InvalidSize { .. } | Error::UnknownRobot(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { common, parallel } => cmd_sweep(common, *parallel),
        Command::BackupLayer(args) => cmd_backup_layer(args),
        Command::Validate { config, graph } => cmd_validate(config, graph),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
