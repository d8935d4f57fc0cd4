//! Command-line front end: protocol trace runner, on-chain operation table,
//! and the success-ratio experiment sweep.
//!
//! Exit codes: 0 ok, 1 invariant violation, 2 config error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use starfish::engine::{Scenario, World};
use starfish::sim::{results_csv, run_experiment, ExperimentConfig};
use starfish::strategies::{plan_setup, StrategyKind};

#[derive(Parser)]
#[command(
    name = "starfish",
    version,
    about = "Starfish rebalancing protocol runner and PCN simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct OutputOpts {
    /// Output directory (created if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing result files.
    #[arg(long)]
    force: bool,
    /// Print per-round / per-cell detail.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a protocol scenario and write its event log.
    Trace {
        /// Path to a scenario JSON file, or a bundled name:
        /// fig2, stale-close, silent-party, double-spend.
        scenario: String,
        /// Override the scenario's signature seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Print the on-chain operation counts per strategy for N = 2..max-n.
    Opcount {
        #[arg(long, default_value_t = 16)]
        max_n: u64,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Run the success-ratio experiment sweep from a JSON config.
    Sweep {
        /// Experiment config path; omit for the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the cell sweep.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        #[command(flatten)]
        output: OutputOpts,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

const BUNDLED: &[(&str, &str)] = &[
    ("fig2", include_str!("../scenarios/fig2.json")),
    ("stale-close", include_str!("../scenarios/stale-close.json")),
    (
        "silent-party",
        include_str!("../scenarios/silent-party.json"),
    ),
    (
        "double-spend",
        include_str!("../scenarios/double-spend.json"),
    ),
];

fn load_scenario(name: &str) -> Result<(String, String), String> {
    if let Some((_, text)) = BUNDLED.iter().find(|(n, _)| *n == name) {
        return Ok((name.to_string(), text.to_string()));
    }
    let path = Path::new(name);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "scenario".to_string());
    match std::fs::read_to_string(path) {
        Ok(text) => Ok((stem, text)),
        Err(e) => Err(format!("cannot read scenario {name}: {e}")),
    }
}

/// Creates the output directory and refuses to clobber existing files
/// unless forced.
fn open_out_file(opts: &OutputOpts, filename: &str) -> Result<Option<PathBuf>, String> {
    let Some(dir) = &opts.out else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(filename);
    if path.exists() && !opts.force {
        return Err(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        ));
    }
    Ok(Some(path))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    let mut f = std::fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_trace(scenario: &str, seed: Option<u64>, output: &OutputOpts) -> Result<bool, String> {
    let (name, text) = load_scenario(scenario)?;
    let mut scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let mut world = World::from_scenario(&scenario).map_err(|e| e.to_string())?;
    world.run();
    if let Some(path) = open_out_file(output, &format!("{name}-events.jsonl"))? {
        write_file(&path, &world.log.to_jsonl())?;
        eprintln!("event log written to {}", path.display());
    } else if output.verbose {
        print!("{}", world.log.to_jsonl());
    }
    let summary = world.summary();
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(world.violations.is_empty())
}

fn opcount_csv(max_n: u64) -> String {
    let mut out = String::from("n,starfish,shaduf_hl,shaduf_ao,shaduf_ab\n");
    for n in 2..=max_n {
        let channels: Vec<(u32, u64)> = (0..n).map(|i| (i as u32, 1)).collect();
        let ops = |kind: StrategyKind| plan_setup(kind, &channels).onchain_ops;
        out.push_str(&format!(
            "{n},{},{},{},{}\n",
            ops(StrategyKind::Starfish),
            ops(StrategyKind::ShadufHl),
            ops(StrategyKind::ShadufAo),
            ops(StrategyKind::ShadufAb),
        ));
    }
    out
}

fn cmd_opcount(max_n: u64, output: &OutputOpts) -> Result<bool, String> {
    if max_n < 2 {
        return Err("--max-n must be at least 2".into());
    }
    let csv = opcount_csv(max_n);
    print!("{csv}");
    if let Some(path) = open_out_file(output, "opcounts.csv")? {
        write_file(&path, &csv)?;
        eprintln!("op-count table written to {}", path.display());
    }
    Ok(true)
}

fn run_metadata(cfg: &ExperimentConfig) -> String {
    let meta = serde_json::json!({
        "value_rounding": "floored to integer units, minimum 1",
        "skewness_semantics": "receivers in the top-decile-degree set get weight s; senders uniform",
        "tick": "one tick per payment attempt; on-chain locks last delta ticks",
        "config": cfg,
    });
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}

fn cmd_sweep(
    config: Option<&PathBuf>,
    seed: Option<u64>,
    jobs: usize,
    output: &OutputOpts,
) -> Result<bool, String> {
    let mut cfg: ExperimentConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    let results = run_experiment(&cfg, jobs).map_err(|e| e.to_string())?;
    let csv = results_csv(&results);
    if output.verbose {
        for r in &results {
            println!(
                "{} x{} skew {} seed {}: {}/{} = {:.4} ({} on-chain ops)",
                r.strategy.label(),
                r.capacity_mult,
                r.skewness,
                r.seed,
                r.succeeded,
                r.attempted,
                r.success_ratio(),
                r.onchain_ops
            );
        }
    }
    // Per-cell summary: mean success ratio over seeds.
    for &strategy in &cfg.strategies {
        for &mult in &cfg.capacity_multipliers {
            for &skew in &cfg.skewness {
                let mean = starfish::sim::mean_ratio(&results, strategy, mult, skew);
                println!(
                    "{:<11} x{mult:<3} skew {skew}: mean success ratio {mean:.4}",
                    strategy.label()
                );
            }
        }
    }
    if let Some(path) = open_out_file(output, "results.csv")? {
        write_file(&path, &csv)?;
        let meta_path = path.with_file_name("run-metadata.json");
        if meta_path.exists() && !output.force {
            return Err(format!(
                "{} already exists (use --force to overwrite)",
                meta_path.display()
            ));
        }
        write_file(&meta_path, &run_metadata(&cfg))?;
        eprintln!("results written to {}", path.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::Trace {
            scenario,
            seed,
            output,
        } => cmd_trace(scenario, *seed, output),
        Cmd::Opcount { max_n, output } => cmd_opcount(*max_n, output),
        Cmd::Sweep {
            config,
            seed,
            jobs,
            output,
        } => cmd_sweep(config.as_ref(), *seed, *jobs, output),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("invariant violation detected");
            ExitCode::from(1)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
