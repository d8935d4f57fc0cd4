use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::core::Amount;

use super::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    Uniform,
    /// Receivers from the top-decile-degree node set get weight `s` relative
    /// to weight 1 for everyone else; senders stay uniform.
    Skewed {
        s: u64,
    },
}

/// Log-normal payment values, floored to integer units (minimum 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueDist {
    pub mu: f64,
    pub sigma: f64,
}

impl ValueDist {
    /// The "small" preset; "large" scales values by 10x.
    pub fn small() -> Self {
        ValueDist {
            mu: 1.1,
            sigma: 0.2,
        }
    }

    pub fn large() -> Self {
        ValueDist {
            mu: 1.1 + std::f64::consts::LN_10,
            sigma: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payment {
    pub sender: u32,
    pub receiver: u32,
    pub amount: Amount,
}

/// The top-decile-degree node set: max(1, n/10) nodes by degree, ties broken
/// by node index.
pub fn top_decile(topology: &Topology) -> Vec<u32> {
    let deg = topology.degrees();
    let mut order: Vec<u32> = (0..topology.node_count() as u32).collect();
    order.sort_by(|a, b| deg[*b as usize].cmp(&deg[*a as usize]).then(a.cmp(b)));
    let count = (topology.node_count() / 10).max(1);
    order.truncate(count);
    order.sort_unstable();
    order
}

/// Generates `n` payments. Receiver weights follow the sampler; amounts are
/// log-normal floored to integer units.
pub fn generate_workload(
    topology: &Topology,
    n: usize,
    sampler: Sampler,
    value: &ValueDist,
    seed: u64,
) -> Vec<Payment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = topology.node_count() as u32;
    let dist = LogNormal::new(value.mu, value.sigma).expect("valid log-normal parameters");

    let mut weights = vec![1u64; nodes as usize];
    if let Sampler::Skewed { s } = sampler {
        for node in top_decile(topology) {
            weights[node as usize] = s;
        }
    }
    let total_weight: u64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0u64;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let pick_weighted = |rng: &mut ChaCha8Rng| -> u32 {
        let r = rng.random_range(0..total_weight);
        cumulative.partition_point(|c| *c <= r) as u32
    };

    let mut payments = Vec::with_capacity(n);
    for _ in 0..n {
        let sender = rng.random_range(0..nodes);
        let mut receiver = pick_weighted(&mut rng);
        while receiver == sender {
            receiver = pick_weighted(&mut rng);
        }
        let amount = (dist.sample(&mut rng).floor() as Amount).max(1);
        payments.push(Payment {
            sender,
            receiver,
            amount,
        });
    }
    payments
}
