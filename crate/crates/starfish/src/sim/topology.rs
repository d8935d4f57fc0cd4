use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::Amount;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoChannel {
    pub a: u32,
    pub b: u32,
    pub capacity: Amount,
}

/// A simple channel graph: no self-loops, at most one channel per node pair,
/// strictly positive capacities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub channels: Vec<TopoChannel>,
}

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("line {line}: expected `nodeA,nodeB,capacity`")]
    Malformed { line: usize },
    #[error("line {line}: capacity must be a positive integer")]
    BadCapacity { line: usize },
    #[error("line {line}: self-loop {node}")]
    SelfLoop { line: usize, node: String },
    #[error("line {line}: duplicate channel {a}-{b}")]
    DuplicateEdge { line: usize, a: String, b: String },
    #[error("missing `nodeA,nodeB,capacity` header")]
    MissingHeader,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Degree per node, used by the skewed workload sampler.
    pub fn degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.nodes.len()];
        for c in &self.channels {
            deg[c.a as usize] += 1;
            deg[c.b as usize] += 1;
        }
        deg
    }

    /// Parses the `nodeA,nodeB,capacity` CSV edge list.
    pub fn from_csv(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().ok_or(TopologyError::MissingHeader)?;
        if header.1.trim() != "nodeA,nodeB,capacity" {
            return Err(TopologyError::MissingHeader);
        }
        let mut nodes: Vec<String> = Vec::new();
        let mut index = std::collections::BTreeMap::new();
        let mut seen = std::collections::BTreeSet::new();
        let mut channels = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() {
                continue;
            }
            let parts: Vec<&str> = row.split(',').map(str::trim).collect();
            if parts.len() != 3 || parts[0].is_empty() || parts[1].is_empty() {
                return Err(TopologyError::Malformed { line });
            }
            let capacity: Amount = parts[2]
                .parse()
                .map_err(|_| TopologyError::BadCapacity { line })?;
            if capacity == 0 {
                return Err(TopologyError::BadCapacity { line });
            }
            if parts[0] == parts[1] {
                return Err(TopologyError::SelfLoop {
                    line,
                    node: parts[0].to_string(),
                });
            }
            let mut id_of = |name: &str| -> u32 {
                *index.entry(name.to_string()).or_insert_with(|| {
                    nodes.push(name.to_string());
                    (nodes.len() - 1) as u32
                })
            };
            let a = id_of(parts[0]);
            let b = id_of(parts[1]);
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateEdge {
                    line,
                    a: parts[0].to_string(),
                    b: parts[1].to_string(),
                });
            }
            channels.push(TopoChannel { a, b, capacity });
        }
        Ok(Topology { nodes, channels })
    }

    /// Preferential-attachment graph: starts from a small clique, then each
    /// arriving node attaches `attach` edges to distinct existing nodes
    /// sampled proportionally to degree. Channel capacities are heavy-tailed
    /// around `capacity` (log-normal multiplier, sigma `capacity_sigma`),
    /// echoing the spread of real channel funding. Deterministic in the seed.
    pub fn scale_free(
        n: usize,
        attach: usize,
        capacity: Amount,
        capacity_sigma: f64,
        seed: u64,
    ) -> Topology {
        assert!(attach >= 1 && n > attach, "need n > attach >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
        let mut channels: Vec<TopoChannel> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        let cap_dist = rand_distr::LogNormal::new(0.0, capacity_sigma.max(0.0))
            .expect("valid capacity spread");
        let draw_cap = move |rng: &mut ChaCha8Rng| -> Amount {
            let mult: f64 = rand_distr::Distribution::sample(&cap_dist, rng);
            ((capacity as f64 * mult).round() as Amount).max(2)
        };
        // Degree-weighted urn: each edge endpoint appears once.
        let mut urn: Vec<u32> = Vec::new();
        let m0 = attach + 1;
        for i in 0..m0 {
            for j in (i + 1)..m0 {
                channels.push(TopoChannel {
                    a: i as u32,
                    b: j as u32,
                    capacity: draw_cap(&mut rng),
                });
                seen.insert((i as u32, j as u32));
                urn.push(i as u32);
                urn.push(j as u32);
            }
        }
        for new in m0..n {
            let new = new as u32;
            let mut picked: Vec<u32> = Vec::with_capacity(attach);
            while picked.len() < attach {
                let t = urn[rng.random_range(0..urn.len())];
                if t == new || picked.contains(&t) {
                    continue;
                }
                picked.push(t);
            }
            for t in picked {
                let key = (new.min(t), new.max(t));
                seen.insert(key);
                channels.push(TopoChannel {
                    a: t,
                    b: new,
                    capacity: draw_cap(&mut rng),
                });
                urn.push(t);
                urn.push(new);
            }
        }
        Topology { nodes, channels }
    }

    /// Returns a copy with every capacity multiplied.
    pub fn scaled(&self, multiplier: u64) -> Topology {
        let mut t = self.clone();
        for c in &mut t.channels {
            c.capacity *= multiplier;
        }
        t
    }
}
