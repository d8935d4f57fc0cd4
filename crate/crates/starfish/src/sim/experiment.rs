use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::core::Amount;
use crate::strategies::StrategyKind;

use super::network::{NetState, PayOutcome};
use super::topology::{Topology, TopologyError};
use super::workload::{generate_workload, Payment, Sampler, ValueDist};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TopologySource {
    Csv {
        path: String,
    },
    ScaleFree {
        nodes: usize,
        attach: usize,
        seed: u64,
        #[serde(default = "default_capacity_sigma")]
        capacity_sigma: f64,
    },
}

impl Default for TopologySource {
    fn default() -> Self {
        TopologySource::ScaleFree {
            nodes: 200,
            attach: 2,
            seed: 23,
            capacity_sigma: default_capacity_sigma(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueConfig {
    Preset(String),
    Explicit { mu: f64, sigma: f64 },
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig::Preset("small".into())
    }
}

impl ValueConfig {
    pub fn resolve(&self) -> Result<ValueDist, SimError> {
        match self {
            ValueConfig::Preset(name) => match name.as_str() {
                "small" => Ok(ValueDist::small()),
                "large" => Ok(ValueDist::large()),
                other => Err(SimError::Config(format!(
                    "unknown value preset `{other}` (expected small or large)"
                ))),
            },
            ValueConfig::Explicit { mu, sigma } => Ok(ValueDist {
                mu: *mu,
                sigma: *sigma,
            }),
        }
    }
}

fn default_payments() -> usize {
    50_000
}
fn default_base_capacity() -> Amount {
    150
}
fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}
fn default_multipliers() -> Vec<u64> {
    vec![1, 5, 25]
}
fn default_skewness() -> Vec<u64> {
    vec![1, 8]
}
fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}
fn default_delta() -> u64 {
    10
}
fn default_max_cycle() -> usize {
    6
}
fn default_ledger_reserve() -> u64 {
    1
}
fn default_capacity_sigma() -> f64 {
    1.0
}

/// Sweep configuration (the `sweep` command's JSON config file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub topology: TopologySource,
    /// Per-channel capacity for synthesized topologies (CSV files carry
    /// their own capacities), before the multiplier.
    #[serde(default = "default_base_capacity")]
    pub base_capacity: Amount,
    #[serde(default = "default_payments")]
    pub payments: usize,
    #[serde(default)]
    pub value: ValueConfig,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_multipliers")]
    pub capacity_multipliers: Vec<u64>,
    #[serde(default = "default_skewness")]
    pub skewness: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default = "default_max_cycle")]
    pub max_cycle_len: usize,
    #[serde(default = "default_ledger_reserve")]
    pub ledger_reserve: u64,
    /// Audit conservation after every payment (slower) instead of per cell.
    #[serde(default)]
    pub audit_every_payment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invariant violated in cell {cell}: {detail}")]
    Invariant { cell: String, detail: String },
}

/// One (strategy, capacity multiplier, skewness, seed) cell's metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: StrategyKind,
    pub capacity_mult: u64,
    pub skewness: u64,
    pub seed: u64,
    pub attempted: u64,
    pub succeeded: u64,
    pub onchain_ops: u64,
    pub locked_ticks: u64,
}

impl CellResult {
    pub fn success_ratio(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.succeeded as f64 / self.attempted as f64
        }
    }
}

pub fn load_topology(source: &TopologySource, base_capacity: Amount) -> Result<Topology, SimError> {
    match source {
        TopologySource::Csv { path } => {
            let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(Topology::from_csv(&text)?)
        }
        TopologySource::ScaleFree {
            nodes,
            attach,
            seed,
            capacity_sigma,
        } => Ok(Topology::scale_free(
            *nodes,
            *attach,
            base_capacity,
            *capacity_sigma,
            *seed,
        )),
    }
}

/// Replays one workload on a fresh network under one strategy.
pub fn run_cell(
    topology: &Topology,
    strategy: StrategyKind,
    workload: &[Payment],
    cfg: &ExperimentConfig,
) -> Result<(u64, u64, NetState), String> {
    let mut net = NetState::new(
        topology,
        strategy,
        cfg.delta,
        cfg.max_cycle_len,
        cfg.ledger_reserve,
    );
    let mut succeeded = 0u64;
    for p in workload {
        if matches!(
            net.execute_payment(p.sender, p.receiver, p.amount),
            PayOutcome::Success
        ) {
            succeeded += 1;
        }
        if cfg.audit_every_payment {
            net.audit()?;
        }
    }
    net.audit()?;
    Ok((workload.len() as u64, succeeded, net))
}

/// Runs the full sweep. Cells are enumerated in (strategy, multiplier,
/// skewness, seed) order and may execute on up to `jobs` threads; the result
/// order is independent of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<CellResult>, SimError> {
    if cfg.payments == 0 {
        return Err(SimError::Config("payments must be positive".into()));
    }
    if cfg.seeds.is_empty() || cfg.strategies.is_empty() {
        return Err(SimError::Config(
            "need at least one seed and strategy".into(),
        ));
    }
    let base = load_topology(&cfg.topology, cfg.base_capacity)?;
    let value = cfg.value.resolve()?;

    // Workloads depend on (skew, seed) only, shared across strategies and
    // multipliers so every cell replays the identical payment stream.
    let mut workloads: Vec<((u64, u64), Vec<Payment>)> = Vec::new();
    for &skew in &cfg.skewness {
        for &seed in &cfg.seeds {
            let sampler = if skew <= 1 {
                Sampler::Uniform
            } else {
                Sampler::Skewed { s: skew }
            };
            workloads.push((
                (skew, seed),
                generate_workload(&base, cfg.payments, sampler, &value, seed),
            ));
        }
    }
    let workload_of = |skew: u64, seed: u64| -> &Vec<Payment> {
        &workloads
            .iter()
            .find(|((sk, sd), _)| *sk == skew && *sd == seed)
            .expect("workload generated")
            .1
    };

    let scaled: Vec<(u64, Topology)> = cfg
        .capacity_multipliers
        .iter()
        .map(|m| (*m, base.scaled(*m)))
        .collect();

    let mut cells: Vec<(StrategyKind, u64, u64, u64)> = Vec::new();
    for &strategy in &cfg.strategies {
        for &(mult, _) in &scaled {
            for &skew in &cfg.skewness {
                for &seed in &cfg.seeds {
                    cells.push((strategy, mult, skew, seed));
                }
            }
        }
    }

    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let errors: Mutex<Vec<SimError>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (strategy, mult, skew, seed) = cells[i];
                let topo = &scaled.iter().find(|(m, _)| *m == mult).unwrap().1;
                let workload = workload_of(skew, seed);
                match run_cell(topo, strategy, workload, cfg) {
                    Ok((attempted, succeeded, net)) => {
                        let cell = CellResult {
                            strategy,
                            capacity_mult: mult,
                            skewness: skew,
                            seed,
                            attempted,
                            succeeded,
                            onchain_ops: net.ops.total(),
                            locked_ticks: net.locked_ticks,
                        };
                        results.lock().unwrap()[i] = Some(cell);
                    }
                    Err(detail) => errors.lock().unwrap().push(SimError::Invariant {
                        cell: format!("{strategy} x{mult} skew {skew} seed {seed}"),
                        detail,
                    }),
                }
            });
        }
    });
    if let Some(err) = errors.into_inner().unwrap().into_iter().next() {
        return Err(err);
    }
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all cells completed"))
        .collect())
}

/// Long-format results CSV.
pub fn results_csv(results: &[CellResult]) -> String {
    let mut out = String::from(
        "strategy,capacity_mult,skewness,seed,attempted,succeeded,success_ratio,onchain_ops\n",
    );
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{}\n",
            r.strategy.label(),
            r.capacity_mult,
            r.skewness,
            r.seed,
            r.attempted,
            r.succeeded,
            r.success_ratio(),
            r.onchain_ops
        ));
    }
    out
}

/// Mean success ratio for one (strategy, multiplier, skewness) cell across
/// seeds.
pub fn mean_ratio(results: &[CellResult], strategy: StrategyKind, mult: u64, skew: u64) -> f64 {
    let rows: Vec<&CellResult> = results
        .iter()
        .filter(|r| r.strategy == strategy && r.capacity_mult == mult && r.skewness == skew)
        .collect();
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.success_ratio()).sum::<f64>() / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            topology: TopologySource::ScaleFree {
                nodes: 40,
                attach: 2,
                seed: 7,
                capacity_sigma: 1.0,
            },
            payments: 400,
            seeds: vec![1, 2],
            capacity_multipliers: vec![1, 5],
            skewness: vec![1, 8],
            strategies: vec![StrategyKind::Ln, StrategyKind::Starfish],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sweep_is_deterministic_across_runs_and_thread_counts() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 4).unwrap();
        assert_eq!(results_csv(&a), results_csv(&b));
    }

    #[test]
    fn ln_success_is_monotone_in_capacity() {
        let cfg = ExperimentConfig {
            strategies: vec![StrategyKind::Ln],
            capacity_multipliers: vec![1, 5, 25],
            ..tiny_config()
        };
        let results = run_experiment(&cfg, 2).unwrap();
        for &skew in &cfg.skewness {
            let r1 = mean_ratio(&results, StrategyKind::Ln, 1, skew);
            let r5 = mean_ratio(&results, StrategyKind::Ln, 5, skew);
            let r25 = mean_ratio(&results, StrategyKind::Ln, 25, skew);
            assert!(r1 <= r5 + 1e-9 && r5 <= r25 + 1e-9, "{r1} {r5} {r25}");
        }
    }

    #[test]
    fn accounting_adds_up() {
        let cfg = tiny_config();
        let results = run_experiment(&cfg, 2).unwrap();
        assert_eq!(results.len(), 2 * 2 * 2 * 2);
        for r in &results {
            assert_eq!(r.attempted, 400);
            assert!(r.succeeded <= r.attempted);
            let ratio = r.success_ratio();
            assert!((0.0..=1.0).contains(&ratio));
        }
    }
}
