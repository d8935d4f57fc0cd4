//! Rebalancing strategies and the on-chain operation counter.
//!
//! Strategies are pure planners: given a node's local state and a read-only
//! network view they produce setup plans (bindings, merges) and rebalance
//! plans (shifts, cycle pushes, top-ups). Execution is the simulator's job.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::Amount;

/// The compared rebalancing approaches. `Ln` is the no-rebalancing baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Ln,
    CloseOpen,
    Loop,
    Revive,
    ShadufHl,
    ShadufAo,
    ShadufAb,
    Starfish,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Ln,
        StrategyKind::CloseOpen,
        StrategyKind::Loop,
        StrategyKind::Revive,
        StrategyKind::ShadufHl,
        StrategyKind::ShadufAo,
        StrategyKind::ShadufAb,
        StrategyKind::Starfish,
    ];

    /// Stable token used in CSV output and configs.
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Ln => "ln",
            StrategyKind::CloseOpen => "close_open",
            StrategyKind::Loop => "loop",
            StrategyKind::Revive => "revive",
            StrategyKind::ShadufHl => "shaduf_hl",
            StrategyKind::ShadufAo => "shaduf_ao",
            StrategyKind::ShadufAb => "shaduf_ab",
            StrategyKind::Starfish => "starfish",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            StrategyKind::Ln => "LN",
            StrategyKind::CloseOpen => "Close-Open",
            StrategyKind::Loop => "LOOP",
            StrategyKind::Revive => "Revive",
            StrategyKind::ShadufHl => "HL-Shaduf",
            StrategyKind::ShadufAo => "AO-Shaduf",
            StrategyKind::ShadufAb => "AB-Shaduf",
            StrategyKind::Starfish => "Starfish",
        }
    }

    pub fn is_shaduf(&self) -> bool {
        matches!(
            self,
            StrategyKind::ShadufHl | StrategyKind::ShadufAo | StrategyKind::ShadufAb
        )
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Kinds of on-chain operations (the cost unit: one channel-state
/// manipulation recorded by a contract).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    OpenChannel,
    CloseChannel,
    Merge,
    CloseMerge,
    Bind,
    Unbind,
    TopUp,
}

/// Monotone counter of on-chain operations, per node and per kind.
#[derive(Debug, Clone, Default)]
pub struct OpCounter {
    per_node: BTreeMap<u32, u64>,
    per_kind: BTreeMap<OpKind, u64>,
    total: u64,
}

impl OpCounter {
    pub fn record(&mut self, node: u32, kind: OpKind, count: u64) {
        *self.per_node.entry(node).or_insert(0) += count;
        *self.per_kind.entry(kind).or_insert(0) += count;
        self.total += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn for_node(&self, node: u32) -> u64 {
        self.per_node.get(&node).copied().unwrap_or(0)
    }

    pub fn for_kind(&self, kind: OpKind) -> u64 {
        self.per_kind.get(&kind).copied().unwrap_or(0)
    }
}

/// One on-chain setup action over a node's adjacent channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SetupAction {
    /// Starfish: one merge covering all listed channels (N on-chain ops).
    MergeAll { channels: Vec<u32> },
    /// Shaduf: bind two adjacent channels (2 on-chain ops).
    Bind { a: u32, b: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SetupPlan {
    pub actions: Vec<SetupAction>,
    pub onchain_ops: u64,
}

/// Computes the setup plan for one node given its adjacent channels and its
/// balance on each. Channel order in the input is preserved for merges;
/// binding choices sort by balance (descending, channel id as tie-break).
pub fn plan_setup(kind: StrategyKind, channels: &[(u32, Amount)]) -> SetupPlan {
    let n = channels.len();
    if n == 0 {
        return SetupPlan::default();
    }
    let mut sorted: Vec<(u32, Amount)> = channels.to_vec();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    match kind {
        StrategyKind::Starfish => SetupPlan {
            actions: vec![SetupAction::MergeAll {
                channels: channels.iter().map(|(c, _)| *c).collect(),
            }],
            onchain_ops: n as u64,
        },
        StrategyKind::ShadufHl => {
            // Highest binds to lowest, second-highest to second-lowest, …;
            // an odd channel count leaves the median channel unbound.
            let mut actions = Vec::new();
            for i in 0..n / 2 {
                actions.push(SetupAction::Bind {
                    a: sorted[i].0,
                    b: sorted[n - 1 - i].0,
                });
            }
            let ops = 2 * (n as u64 / 2);
            SetupPlan {
                actions,
                onchain_ops: ops,
            }
        }
        StrategyKind::ShadufAo => {
            // Everything binds to the channel where the node is richest.
            let hubchan = sorted[0].0;
            let actions: Vec<SetupAction> = sorted[1..]
                .iter()
                .map(|(c, _)| SetupAction::Bind { a: hubchan, b: *c })
                .collect();
            let ops = 2 * actions.len() as u64;
            SetupPlan {
                actions,
                onchain_ops: ops,
            }
        }
        StrategyKind::ShadufAb => {
            let mut actions = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    actions.push(SetupAction::Bind {
                        a: channels[i].0,
                        b: channels[j].0,
                    });
                }
            }
            let ops = 2 * actions.len() as u64;
            SetupPlan {
                actions,
                onchain_ops: ops,
            }
        }
        _ => SetupPlan::default(),
    }
}

/// Per-node strategy state fixed at setup time.
#[derive(Debug, Clone, Default)]
pub struct NodeState {
    pub kind: Option<StrategyKind>,
    /// Bindings as unordered channel pairs (Shaduf only).
    pub bindings: Vec<(u32, u32)>,
    /// Whether the node pooled its channels into a merge (Starfish).
    pub pooled: bool,
    /// The node's channel-side balances at setup, for top-up targets.
    pub initial_own: BTreeMap<u32, Amount>,
}

impl NodeState {
    pub fn bound_partners(&self, chan: u32) -> Vec<u32> {
        let mut out = Vec::new();
        for (a, b) in &self.bindings {
            if *a == chan {
                out.push(*b);
            } else if *b == chan {
                out.push(*a);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Read-only network view the planners operate on. The simulator implements
/// this over its live state; `spendable` must reflect whatever funds the
/// node could immediately send over the channel (edge balances for pooled
/// nodes, channel balances otherwise).
pub trait GraphView {
    fn node_count(&self) -> u32;
    fn channels_of(&self, node: u32) -> &[u32];
    fn endpoints(&self, chan: u32) -> (u32, u32);
    fn spendable(&self, node: u32, chan: u32) -> Amount;
    fn usable(&self, chan: u32) -> bool;

    /// Funds the node can move away from this channel in a rebalance. For a
    /// pooled node this is the hub-side edge balance (received funds sitting
    /// in a peer's pool are sendable but not shiftable); defaults to
    /// `spendable` everywhere else.
    fn shiftable(&self, node: u32, chan: u32) -> Amount {
        self.spendable(node, chan)
    }

    fn peer(&self, node: u32, chan: u32) -> u32 {
        let (a, b) = self.endpoints(chan);
        if a == node {
            b
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RebalanceAction {
    /// Close and reopen with a ledger top-up of the node's side (2 ops);
    /// locks the channel for Δ ticks.
    CloseOpenTopUp { chan: u32, amount: Amount },
    /// Single-transaction top-up (1 op); locks Δ ticks.
    LoopTopUp { chan: u32, amount: Amount },
    /// Revive: push `amount` around `nodes` (first == last == the node),
    /// over `channels[i]` from nodes[i] to nodes[i+1].
    CyclePush {
        nodes: Vec<u32>,
        channels: Vec<u32>,
        amount: Amount,
    },
    /// Shaduf: move the node's balance from a bound source channel.
    BindingShift { from: u32, to: u32, amount: Amount },
    /// Starfish: capacity shift from a donor edge to the target edge.
    PoolShift { from: u32, to: u32, amount: Amount },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RebalancePlan {
    pub actions: Vec<RebalanceAction>,
    pub onchain_ops: u64,
}

/// Plans a rebalance that restores at least `needed` spendable units on
/// `target` for `node`, or reports infeasibility with `None`.
#[allow(clippy::too_many_arguments)]
pub fn rebalance(
    kind: StrategyKind,
    state: &NodeState,
    node: u32,
    target: u32,
    needed: Amount,
    graph: &impl GraphView,
    ledger_balance: Amount,
    max_cycle_len: usize,
) -> Option<RebalancePlan> {
    if needed == 0 {
        return Some(RebalancePlan::default());
    }
    match kind {
        StrategyKind::Ln => None,
        StrategyKind::CloseOpen | StrategyKind::Loop => {
            let initial = state.initial_own.get(&target).copied().unwrap_or(0);
            let current = graph.spendable(node, target);
            if current >= initial {
                return None;
            }
            let topup = initial - current;
            if ledger_balance < topup {
                return None;
            }
            let (action, ops) = if kind == StrategyKind::CloseOpen {
                (
                    RebalanceAction::CloseOpenTopUp {
                        chan: target,
                        amount: topup,
                    },
                    2,
                )
            } else {
                (
                    RebalanceAction::LoopTopUp {
                        chan: target,
                        amount: topup,
                    },
                    1,
                )
            };
            Some(RebalancePlan {
                actions: vec![action],
                onchain_ops: ops,
            })
        }
        StrategyKind::Revive => {
            let (nodes, channels) = revive_cycle(graph, node, target, needed, max_cycle_len)?;
            Some(RebalancePlan {
                actions: vec![RebalanceAction::CyclePush {
                    nodes,
                    channels,
                    amount: needed,
                }],
                onchain_ops: 0,
            })
        }
        StrategyKind::ShadufHl | StrategyKind::ShadufAo | StrategyKind::ShadufAb => {
            // One shift from the single best bound source.
            let mut best: Option<(Amount, u32)> = None;
            for partner in state.bound_partners(target) {
                let have = graph.shiftable(node, partner);
                if have >= needed {
                    best = Some(match best {
                        Some(b) if b.0 >= have => b,
                        _ => (have, partner),
                    });
                }
            }
            let (_, source) = best?;
            Some(RebalancePlan {
                actions: vec![RebalanceAction::BindingShift {
                    from: source,
                    to: target,
                    amount: needed,
                }],
                onchain_ops: 0,
            })
        }
        StrategyKind::Starfish => {
            if !state.pooled {
                return None;
            }
            // Greedy multi-donor: largest hub-side balance first.
            let mut donors: Vec<(Amount, u32)> = graph
                .channels_of(node)
                .iter()
                .filter(|c| **c != target)
                .map(|c| (graph.shiftable(node, *c), *c))
                .filter(|(have, _)| *have > 0)
                .collect();
            donors.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let available: Amount = donors.iter().map(|(have, _)| *have).sum();
            if available < needed {
                return None;
            }
            // Each capacity shift is ratified by an atomic broadcast among
            // every merge user, so the refill is batched: restore the target
            // edge toward its setup-time allocation in one go instead of
            // broadcasting again for every small shortfall.
            let initial = state.initial_own.get(&target).copied().unwrap_or(0);
            let have = graph.spendable(node, target);
            let restore = initial.saturating_sub(have);
            let total = needed.max(restore).min(available);
            let mut actions = Vec::new();
            let mut remaining = total;
            for (have, chan) in donors {
                if remaining == 0 {
                    break;
                }
                let take = have.min(remaining);
                actions.push(RebalanceAction::PoolShift {
                    from: chan,
                    to: target,
                    amount: take,
                });
                remaining -= take;
            }
            Some(RebalancePlan {
                actions,
                onchain_ops: 0,
            })
        }
    }
}

/// Shortest rebalancing cycle through the target channel and one sufficiently
/// funded source channel of the node. Returns the node sequence (starting and
/// ending at `node`) and the channel sequence, or None.
pub fn revive_cycle(
    graph: &impl GraphView,
    node: u32,
    target: u32,
    amount: Amount,
    max_cycle_len: usize,
) -> Option<(Vec<u32>, Vec<u32>)> {
    if max_cycle_len < 3 || !graph.usable(target) {
        return None;
    }
    let tgt_peer = graph.peer(node, target);
    if graph.spendable(tgt_peer, target) < amount {
        return None;
    }
    let mut best: Option<(usize, Vec<u32>, Vec<u32>)> = None;
    let mut sources: Vec<u32> = graph
        .channels_of(node)
        .iter()
        .copied()
        .filter(|c| *c != target && graph.usable(*c) && graph.spendable(node, *c) >= amount)
        .collect();
    sources.sort_unstable();
    for src in sources {
        let src_peer = graph.peer(node, src);
        let limit = max_cycle_len - 2;
        if let Some((nodes, chans)) = funded_path(
            graph,
            src_peer,
            tgt_peer,
            node,
            amount,
            &[src, target],
            limit,
        ) {
            let len = chans.len() + 2;
            let better = match &best {
                Some((blen, _, _)) => len < *blen,
                None => true,
            };
            if better {
                let mut cycle_nodes = vec![node];
                cycle_nodes.extend(nodes);
                cycle_nodes.push(node);
                let mut cycle_chans = vec![src];
                cycle_chans.extend(chans);
                cycle_chans.push(target);
                best = Some((len, cycle_nodes, cycle_chans));
            }
        }
    }
    best.map(|(_, nodes, chans)| (nodes, chans))
}

/// BFS over channels where the forwarding side can carry `amount`, avoiding
/// `forbidden_node` and `forbidden_chans`. Returns the node path from `from`
/// to `to` (inclusive) and the channels used.
fn funded_path(
    graph: &impl GraphView,
    from: u32,
    to: u32,
    forbidden_node: u32,
    amount: Amount,
    forbidden_chans: &[u32],
    max_hops: usize,
) -> Option<(Vec<u32>, Vec<u32>)> {
    if from == to {
        return Some((vec![from], Vec::new()));
    }
    if max_hops == 0 {
        return None;
    }
    let n = graph.node_count() as usize;
    let mut parent: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    depth[from as usize] = 0;
    queue.push_back(from);
    while let Some(u) = queue.pop_front() {
        if depth[u as usize] >= max_hops {
            continue;
        }
        for &chan in graph.channels_of(u) {
            if forbidden_chans.contains(&chan) || !graph.usable(chan) {
                continue;
            }
            if graph.spendable(u, chan) < amount {
                continue;
            }
            let v = graph.peer(u, chan);
            if v == forbidden_node || depth[v as usize] != usize::MAX {
                continue;
            }
            depth[v as usize] = depth[u as usize] + 1;
            parent[v as usize] = Some((u, chan));
            if v == to {
                let mut nodes = vec![v];
                let mut chans = Vec::new();
                let mut cur = v;
                while let Some((p, c)) = parent[cur as usize] {
                    chans.push(c);
                    nodes.push(p);
                    cur = p;
                }
                nodes.reverse();
                chans.reverse();
                return Some((nodes, chans));
            }
            queue.push_back(v);
        }
    }
    None
}

/// Maximum single-payment amount the node could source toward one channel
/// after rebalancing.
pub fn capacity_bound(
    kind: StrategyKind,
    state: &NodeState,
    node: u32,
    graph: &impl GraphView,
) -> Amount {
    let channels = graph.channels_of(node);
    match kind {
        StrategyKind::Starfish => channels.iter().map(|c| graph.spendable(node, *c)).sum(),
        k if k.is_shaduf() => {
            let single = channels
                .iter()
                .map(|c| graph.spendable(node, *c))
                .max()
                .unwrap_or(0);
            let best_pair = state
                .bindings
                .iter()
                .map(|(a, b)| graph.spendable(node, *a) + graph.spendable(node, *b))
                .max()
                .unwrap_or(0);
            single.max(best_pair)
        }
        _ => channels
            .iter()
            .map(|c| graph.spendable(node, *c))
            .max()
            .unwrap_or(0),
    }
}
