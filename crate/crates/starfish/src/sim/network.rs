use crate::core::Amount;
use crate::strategies::{
    plan_setup, rebalance, GraphView, NodeState, OpCounter, OpKind, RebalanceAction, SetupAction,
    StrategyKind,
};

use super::topology::Topology;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimChannel {
    pub a: u32,
    pub b: u32,
    pub bal: [Amount; 2],
    pub locked_until: u64,
}

impl SimChannel {
    fn side_of(&self, node: u32) -> usize {
        if self.a == node {
            0
        } else {
            1
        }
    }
}

/// Outcome of one payment attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayOutcome {
    Success,
    NoPath,
    /// A hop stayed short even after its owner tried to rebalance.
    HopShort {
        hop: usize,
    },
}

/// Simulator network state.
///
/// Every strategy shares the same payment mechanics over per-channel side
/// balances; for a Starfish node the side balance is its merge edge's
/// hub-side balance (all nodes pool everything, received funds sweep into
/// the receiver's own pool). Strategies differ in their rebalancing reach,
/// applied lazily when a routed payment hits a depleted hop.
///
/// One tick elapses per payment attempt; Close-Open/LOOP locks are Δ ticks.
#[derive(Debug, Clone)]
pub struct NetState {
    pub strategy: StrategyKind,
    pub delta: u64,
    pub tick: u64,
    pub channels: Vec<SimChannel>,
    adj: Vec<Vec<u32>>,
    states: Vec<NodeState>,
    pub ledger: Vec<Amount>,
    pub ops: OpCounter,
    pub locked_ticks: u64,
    max_cycle_len: usize,
    initial_total: Amount,
}

impl GraphView for NetState {
    fn node_count(&self) -> u32 {
        self.adj.len() as u32
    }

    fn channels_of(&self, node: u32) -> &[u32] {
        &self.adj[node as usize]
    }

    fn endpoints(&self, chan: u32) -> (u32, u32) {
        let c = &self.channels[chan as usize];
        (c.a, c.b)
    }

    fn spendable(&self, node: u32, chan: u32) -> Amount {
        let c = &self.channels[chan as usize];
        c.bal[c.side_of(node)]
    }

    fn usable(&self, chan: u32) -> bool {
        self.tick >= self.channels[chan as usize].locked_until
    }
}

impl NetState {
    /// Builds the network: 50/50 balance split per channel, a ledger reserve
    /// of `ledger_reserve` x the node's total deposit, then the strategy's
    /// setup plan applied at every node.
    pub fn new(
        topology: &Topology,
        strategy: StrategyKind,
        delta: u64,
        max_cycle_len: usize,
        ledger_reserve: u64,
    ) -> Self {
        let n = topology.node_count();
        let mut channels = Vec::with_capacity(topology.channels.len());
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, c) in topology.channels.iter().enumerate() {
            let half = c.capacity / 2;
            channels.push(SimChannel {
                a: c.a,
                b: c.b,
                bal: [c.capacity - half, half],
                locked_until: 0,
            });
            adj[c.a as usize].push(i as u32);
            adj[c.b as usize].push(i as u32);
        }
        // Neighbor exploration order decides routing tie-breaks: sorting by
        // (peer, channel) makes BFS return the lexicographically smallest
        // shortest path.
        for (node, l) in adj.iter_mut().enumerate() {
            l.sort_by_key(|c| {
                let ch = &channels[*c as usize];
                let peer = if ch.a == node as u32 { ch.b } else { ch.a };
                (peer, *c)
            });
        }
        let ledger: Vec<Amount> = (0..n as u32)
            .map(|node| {
                let own: Amount = adj[node as usize]
                    .iter()
                    .map(|c| {
                        let ch = &channels[*c as usize];
                        ch.bal[ch.side_of(node)]
                    })
                    .sum();
                own * ledger_reserve
            })
            .collect();

        let mut net = NetState {
            strategy,
            delta,
            tick: 0,
            channels,
            adj,
            states: vec![NodeState::default(); n],
            ledger,
            ops: OpCounter::default(),
            locked_ticks: 0,
            max_cycle_len,
            initial_total: 0,
        };
        net.apply_setup();
        net.initial_total = net.current_total();
        net
    }

    fn apply_setup(&mut self) {
        for node in 0..self.node_count() {
            let own: Vec<(u32, Amount)> = self.adj[node as usize]
                .iter()
                .map(|c| (*c, self.spendable(node, *c)))
                .collect();
            let mut state = NodeState {
                kind: Some(self.strategy),
                initial_own: own.iter().copied().collect(),
                ..NodeState::default()
            };
            let plan = plan_setup(self.strategy, &own);
            for action in plan.actions {
                match action {
                    SetupAction::MergeAll { channels } => {
                        state.pooled = true;
                        self.ops.record(node, OpKind::Merge, channels.len() as u64);
                    }
                    SetupAction::Bind { a, b } => {
                        state.bindings.push((a, b));
                        self.ops.record(node, OpKind::Bind, 2);
                    }
                }
            }
            self.states[node as usize] = state;
        }
    }

    fn current_total(&self) -> Amount {
        let mut total: Amount = self.ledger.iter().sum();
        for c in &self.channels {
            total += c.bal[0] + c.bal[1];
        }
        total
    }

    /// Conservation audit; `Err` carries a description.
    pub fn audit(&self) -> Result<(), String> {
        let total = self.current_total();
        if total != self.initial_total {
            return Err(format!(
                "conservation violated: {total} != {}",
                self.initial_total
            ));
        }
        Ok(())
    }

    /// Shortest funded path by hop count: every forwarding side must cover
    /// `amount`; ties resolve to the lexicographically smallest node
    /// sequence. None when every cut is depleted.
    pub fn route_payment(
        &self,
        sender: u32,
        receiver: u32,
        amount: Amount,
    ) -> Option<Vec<(u32, u32)>> {
        if sender == receiver {
            return None;
        }
        self.route(sender, receiver, amount, true)
    }

    /// Shortest usable path by hop count; `funded` additionally requires each
    /// forwarding side to cover `amount`. Deterministic: BFS over
    /// (peer, channel)-sorted adjacency, first discovery wins.
    fn route(
        &self,
        sender: u32,
        receiver: u32,
        amount: Amount,
        funded: bool,
    ) -> Option<Vec<(u32, u32)>> {
        let n = self.adj.len();
        let mut parent: Vec<Option<(u32, u32)>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        visited[sender as usize] = true;
        queue.push_back(sender);
        while let Some(u) = queue.pop_front() {
            for &chan in &self.adj[u as usize] {
                if !self.usable(chan) {
                    continue;
                }
                if funded && self.spendable(u, chan) < amount {
                    continue;
                }
                let v = self.peer(u, chan);
                if visited[v as usize] {
                    continue;
                }
                visited[v as usize] = true;
                parent[v as usize] = Some((u, chan));
                if v == receiver {
                    let mut hops = Vec::new();
                    let mut cur = v;
                    while let Some((p, c)) = parent[cur as usize] {
                        hops.push((p, c));
                        cur = p;
                    }
                    hops.reverse();
                    return Some(hops);
                }
                queue.push_back(v);
            }
        }
        None
    }

    /// Moves `amount` across `chan` away from `node`. Caller validates.
    fn apply_hop(&mut self, node: u32, chan: u32, amount: Amount) {
        let ch = &mut self.channels[chan as usize];
        let side = ch.side_of(node);
        assert!(ch.bal[side] >= amount, "hop applied beyond spendable");
        ch.bal[side] -= amount;
        ch.bal[1 - side] += amount;
    }

    fn apply_rebalance(&mut self, node: u32, actions: &[RebalanceAction]) {
        for action in actions {
            match action {
                RebalanceAction::CloseOpenTopUp { chan, amount } => {
                    self.ledger[node as usize] -= amount;
                    let delta = self.delta;
                    let tick = self.tick;
                    let ch = &mut self.channels[*chan as usize];
                    let side = ch.side_of(node);
                    ch.bal[side] += amount;
                    ch.locked_until = tick + delta;
                    self.locked_ticks += delta;
                    self.ops.record(node, OpKind::CloseChannel, 1);
                    self.ops.record(node, OpKind::OpenChannel, 1);
                }
                RebalanceAction::LoopTopUp { chan, amount } => {
                    self.ledger[node as usize] -= amount;
                    let delta = self.delta;
                    let tick = self.tick;
                    let ch = &mut self.channels[*chan as usize];
                    let side = ch.side_of(node);
                    ch.bal[side] += amount;
                    ch.locked_until = tick + delta;
                    self.locked_ticks += delta;
                    self.ops.record(node, OpKind::TopUp, 1);
                }
                RebalanceAction::CyclePush {
                    nodes,
                    channels,
                    amount,
                } => {
                    for (i, chan) in channels.iter().enumerate() {
                        self.apply_hop(nodes[i], *chan, *amount);
                    }
                }
                // A binding shift and a pool capacity shift move the node's
                // own liquidity between two of its channels; they differ only
                // in which pairs are reachable and in how many donors one
                // rebalance may combine.
                RebalanceAction::BindingShift { from, to, amount }
                | RebalanceAction::PoolShift { from, to, amount } => {
                    {
                        let ch = &mut self.channels[*from as usize];
                        let side = ch.side_of(node);
                        assert!(ch.bal[side] >= *amount, "shift beyond balance");
                        ch.bal[side] -= amount;
                    }
                    let ch = &mut self.channels[*to as usize];
                    let side = ch.side_of(node);
                    ch.bal[side] += amount;
                }
            }
        }
    }

    /// One payment attempt. Routing prefers a fully funded shortest path; if
    /// none exists, the shortest structural path is taken and each short hop
    /// owner gets one rebalancing attempt, then the whole path is validated
    /// once more.
    ///
    /// A failed payment applies no hop transfers and keeps no off-chain
    /// shifts (they are instant bilateral operations the parties abandon
    /// with the payment); an on-chain top-up persists — it is committed the
    /// moment it is broadcast, and its Δ lock is exactly why the triggering
    /// payment fails.
    pub fn execute_payment(&mut self, sender: u32, receiver: u32, amount: Amount) -> PayOutcome {
        self.tick += 1;
        if sender == receiver {
            return PayOutcome::NoPath;
        }
        if let Some(path) = self.route(sender, receiver, amount, true) {
            for (u, chan) in &path {
                self.apply_hop(*u, *chan, amount);
            }
            return PayOutcome::Success;
        }
        let Some(path) = self.route(sender, receiver, amount, false) else {
            return PayOutcome::NoPath;
        };
        // Depletion-triggered rebalancing at each short hop, applied against
        // a snapshot so an aborted payment can drop the off-chain shifts.
        let snapshot_channels = self.channels.clone();
        let snapshot_ledger = self.ledger.clone();
        let snapshot_ops = self.ops.clone();
        let snapshot_locked = self.locked_ticks;
        let mut onchain: Vec<(u32, RebalanceAction)> = Vec::new();
        let mut rebalanced = false;
        for (u, chan) in &path {
            let have = self.spendable(*u, *chan);
            if have >= amount {
                continue;
            }
            let needed = amount - have;
            let state = self.states[*u as usize].clone();
            let ledger = self.ledger[*u as usize];
            if let Some(plan) = rebalance(
                self.strategy,
                &state,
                *u,
                *chan,
                needed,
                self,
                ledger,
                self.max_cycle_len,
            ) {
                let ops_before = self.ops.total();
                self.apply_rebalance(*u, &plan.actions);
                debug_assert_eq!(self.ops.total() - ops_before, plan.onchain_ops);
                rebalanced = true;
                for a in plan.actions {
                    if matches!(
                        a,
                        RebalanceAction::CloseOpenTopUp { .. } | RebalanceAction::LoopTopUp { .. }
                    ) {
                        onchain.push((*u, a));
                    }
                }
            }
        }
        // One retry, re-routed: the rebalances may have opened a funded path
        // that differs from the structural one (a top-up's lock, for
        // instance, pushes the retry around the locked channel).
        if let Some(path) = self.route(sender, receiver, amount, true) {
            for (u, chan) in &path {
                self.apply_hop(*u, *chan, amount);
            }
            return PayOutcome::Success;
        }
        let hop = path
            .iter()
            .position(|(u, chan)| !self.usable(*chan) || self.spendable(*u, *chan) < amount)
            .unwrap_or(0);
        if rebalanced {
            self.channels = snapshot_channels;
            self.ledger = snapshot_ledger;
            self.ops = snapshot_ops;
            self.locked_ticks = snapshot_locked;
            for (node, action) in onchain {
                self.apply_rebalance(node, &[action]);
            }
        }
        PayOutcome::HopShort { hop }
    }

    pub fn node_strategy_state(&self, node: u32) -> &NodeState {
        &self.states[node as usize]
    }

    /// The node's pooled (or total) liquidity across its channels.
    pub fn node_total(&self, node: u32) -> Amount {
        self.adj[node as usize]
            .iter()
            .map(|c| self.spendable(node, *c))
            .sum()
    }

    pub fn initial_total(&self) -> Amount {
        self.initial_total
    }
}
