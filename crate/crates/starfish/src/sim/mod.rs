//! PCN experiment harness: topology loading and synthesis, workload
//! generation, shortest-path routing with per-hop capacity checks,
//! depletion-triggered rebalancing, and success-ratio metrics.

mod experiment;
mod network;
mod topology;
mod workload;

pub use experiment::{
    load_topology, mean_ratio, results_csv, run_cell, run_experiment, CellResult, ExperimentConfig,
    SimError, TopologySource, ValueConfig,
};
pub use network::{NetState, PayOutcome, SimChannel};
pub use topology::{TopoChannel, Topology, TopologyError};
pub use workload::{generate_workload, top_decile, Payment, Sampler, ValueDist};
