use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{canonical, Amount, CoreError, KeyStore, Signature, SignedAmount};

/// Opaque, totally ordered party identifier. The lexicographic order is used
/// for deterministic tie-breaking throughout the engine.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub String);

impl PartyId {
    pub fn new(id: impl Into<String>) -> Self {
        PartyId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyId {
    fn from(s: &str) -> Self {
        PartyId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub String);

impl ChannelId {
    pub fn new(id: impl Into<String>) -> Self {
        ChannelId(id.into())
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ChannelId {
    fn from(s: &str) -> Self {
        ChannelId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MergeId(pub String);

impl MergeId {
    pub fn new(id: impl Into<String>) -> Self {
        MergeId(id.into())
    }
}

impl fmt::Display for MergeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MergeId {
    fn from(s: &str) -> Self {
        MergeId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelStatus {
    Proposed,
    Open,
    Closing,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStatus {
    Proposed,
    Active,
    Closed,
}

/// Two-party funded channel record. `balances` is aligned with `users`;
/// `version` is the channel state counter and strictly increases across
/// accepted updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub users: [PartyId; 2],
    pub balances: [Amount; 2],
    pub version: u64,
    pub merge_set: BTreeSet<MergeId>,
    pub status: ChannelStatus,
    pub locked_until: u64,
}

impl Channel {
    pub fn new(id: ChannelId, users: [PartyId; 2], balances: [Amount; 2]) -> Self {
        Channel {
            id,
            users,
            balances,
            version: 0,
            merge_set: BTreeSet::new(),
            status: ChannelStatus::Proposed,
            locked_until: 0,
        }
    }

    pub fn side_of(&self, party: &PartyId) -> Option<usize> {
        self.users.iter().position(|u| u == party)
    }

    pub fn other(&self, party: &PartyId) -> Option<&PartyId> {
        match self.side_of(party) {
            Some(i) => Some(&self.users[1 - i]),
            None => None,
        }
    }

    pub fn total(&self) -> Amount {
        self.balances[0] + self.balances[1]
    }

    /// Applies a zero-sum payment, bumping the version. Rejected if either
    /// resulting balance would be negative.
    pub fn apply(&mut self, payment: &ChannelPayment) -> Result<(), CoreError> {
        let next = payment.applied_to(&self.users, self.balances)?;
        self.balances = next;
        self.version += 1;
        Ok(())
    }
}

/// Per-user slice of a merge: a capacitated sub-balance over `[hub, user]`.
/// The two balances always sum to `capacity` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub channel_id: ChannelId,
    pub users: [PartyId; 2],
    pub capacity: Amount,
    pub balances: [Amount; 2],
    pub version: u64,
}

impl Edge {
    pub fn new(channel_id: ChannelId, hub: PartyId, user: PartyId, capacity: Amount) -> Self {
        Edge {
            channel_id,
            users: [hub, user],
            capacity,
            balances: [capacity, 0],
            version: 0,
        }
    }

    pub fn hub(&self) -> &PartyId {
        &self.users[0]
    }

    pub fn user(&self) -> &PartyId {
        &self.users[1]
    }

    pub fn side_of(&self, party: &PartyId) -> Option<usize> {
        self.users.iter().position(|u| u == party)
    }

    /// Applies a zero-sum edge payment; capacity is conserved.
    pub fn apply(&mut self, payment: &EdgePayment) -> Result<(), CoreError> {
        let next = payment.applied_to(&self.users, self.balances)?;
        debug_assert_eq!(next[0] + next[1], self.capacity);
        self.balances = next;
        self.version += 1;
        Ok(())
    }
}

/// Hub-centered pool of edges. The sum of edge capacities is invariant under
/// capacity shifts and changes only when an edge is closed out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub id: MergeId,
    pub hub: PartyId,
    pub users: BTreeSet<PartyId>,
    pub edges: Vec<Edge>,
    pub version: u64,
    pub status: MergeStatus,
}

impl Merge {
    /// Builds a merge proposal; edges are kept sorted by channel id so the
    /// capacity vector has a canonical order.
    pub fn propose(id: MergeId, hub: PartyId, mut edges: Vec<Edge>) -> Self {
        edges.sort_by(|a, b| a.channel_id.cmp(&b.channel_id));
        let users = edges.iter().map(|e| e.user().clone()).collect();
        Merge {
            id,
            hub,
            users,
            edges,
            version: 0,
            status: MergeStatus::Proposed,
        }
    }

    pub fn edge(&self, channel: &ChannelId) -> Option<&Edge> {
        self.edges.iter().find(|e| &e.channel_id == channel)
    }

    pub fn edge_mut(&mut self, channel: &ChannelId) -> Option<&mut Edge> {
        self.edges.iter_mut().find(|e| &e.channel_id == channel)
    }

    pub fn pooled_capacity(&self) -> Amount {
        self.edges.iter().map(|e| e.capacity).sum()
    }

    pub fn capacities(&self) -> Vec<(ChannelId, Amount)> {
        self.edges
            .iter()
            .map(|e| (e.channel_id.clone(), e.capacity))
            .collect()
    }

    /// Canonical bytes of the merge proposal stamped with its proposal round,
    /// signed by the hub and every end user during open-merge.
    pub fn proposal_bytes(&self, t: u64) -> Vec<u8> {
        let mut w = canonical::Writer::new();
        w.u8(3);
        w.str(&self.id.0);
        w.str(&self.hub.0);
        w.u64(self.users.len() as u64);
        for user in &self.users {
            w.str(&user.0);
        }
        w.u64(self.edges.len() as u64);
        for edge in &self.edges {
            w.str(&edge.channel_id.0);
            w.str(&edge.user().0);
            w.u64(edge.capacity);
        }
        w.u64(t);
        w.finish()
    }

    /// Applies a capacity shift between two edges, bumping the merge version
    /// and the two edge versions. The shifted amount moves on the hub side of
    /// both edges, so user balances are untouched.
    pub fn apply_update(&mut self, update: &MergeUpdate) -> Result<(), CoreError> {
        if update.from_channel == update.to_channel {
            return Err(CoreError::SameEdge);
        }
        let donor = self
            .edge(&update.from_channel)
            .ok_or(CoreError::CapacityMismatch)?;
        if donor.balances[0] < update.amount {
            return Err(CoreError::Overdraft);
        }
        if self.edge(&update.to_channel).is_none() {
            return Err(CoreError::CapacityMismatch);
        }
        {
            let donor = self.edge_mut(&update.from_channel).unwrap();
            donor.capacity -= update.amount;
            donor.balances[0] -= update.amount;
            donor.version += 1;
        }
        {
            let target = self.edge_mut(&update.to_channel).unwrap();
            target.capacity += update.amount;
            target.balances[0] += update.amount;
            target.version += 1;
        }
        self.version += 1;
        Ok(())
    }
}

/// Zero-sum balance shift over a channel's two users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPayment {
    pub deltas: [(PartyId, SignedAmount); 2],
}

impl ChannelPayment {
    pub fn new(deltas: [(PartyId, SignedAmount); 2]) -> Result<Self, CoreError> {
        if deltas[0].1.checked_add(deltas[1].1) != Some(0) {
            return Err(CoreError::NotZeroSum);
        }
        Ok(ChannelPayment { deltas })
    }

    /// `from` pays `to` the given amount.
    pub fn transfer(from: PartyId, to: PartyId, amount: Amount) -> Self {
        ChannelPayment {
            deltas: [
                (from, -(amount as SignedAmount)),
                (to, amount as SignedAmount),
            ],
        }
    }

    pub fn delta_for(&self, party: &PartyId) -> Option<SignedAmount> {
        self.deltas
            .iter()
            .find(|(p, _)| p == party)
            .map(|(_, d)| *d)
    }

    /// Resulting balances for `users`, or an overdraft error.
    pub fn applied_to(
        &self,
        users: &[PartyId; 2],
        balances: [Amount; 2],
    ) -> Result<[Amount; 2], CoreError> {
        let mut next = balances;
        for (party, delta) in &self.deltas {
            let side = users
                .iter()
                .position(|u| u == party)
                .ok_or(CoreError::NotAUser {
                    party: party.clone(),
                })?;
            let shifted = (next[side] as i128) + (*delta as i128);
            if shifted < 0 {
                return Err(CoreError::Overdraft);
            }
            next[side] = shifted as Amount;
        }
        Ok(next)
    }
}

/// Zero-sum balance shift over an edge's `[hub, user]` pair. Same arithmetic
/// as a channel payment, aliased for clarity at call sites.
pub type EdgePayment = ChannelPayment;

/// Capacity shift between exactly two edges of the same merge; zero on all
/// other edges by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeUpdate {
    pub from_channel: ChannelId,
    pub to_channel: ChannelId,
    pub amount: Amount,
}

/// A versioned, co-signed protocol state — the unit of dispute evidence.
///
/// Version 0 states (the funding / opening baseline) are initialized on-chain
/// by the contracts themselves and carry no signatures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedState {
    pub version: u64,
    pub payload: StatePayload,
    pub signatures: Vec<Signature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum StatePayload {
    /// msgC: channel balances in user order.
    MsgC {
        channel: ChannelId,
        balances: [Amount; 2],
    },
    /// msgE: edge balances, hub first.
    MsgE {
        merge: MergeId,
        channel: ChannelId,
        balances: [Amount; 2],
    },
    /// msgM: the full capacity vector of the merge, in canonical edge order.
    MsgM {
        merge: MergeId,
        capacities: Vec<(ChannelId, Amount)>,
    },
}

impl SignedState {
    pub fn new(version: u64, payload: StatePayload) -> Self {
        SignedState {
            version,
            payload,
            signatures: Vec::new(),
        }
    }

    /// Canonical bytes covered by signatures: kind tag, version, then the
    /// payload fields in declaration order (length-prefixed, big-endian).
    pub fn message_bytes(&self) -> Vec<u8> {
        let mut w = canonical::Writer::new();
        match &self.payload {
            StatePayload::MsgC { channel, balances } => {
                w.u8(0);
                w.u64(self.version);
                w.str(&channel.0);
                w.u64(balances[0]);
                w.u64(balances[1]);
            }
            StatePayload::MsgE {
                merge,
                channel,
                balances,
            } => {
                w.u8(1);
                w.u64(self.version);
                w.str(&merge.0);
                w.str(&channel.0);
                w.u64(balances[0]);
                w.u64(balances[1]);
            }
            StatePayload::MsgM { merge, capacities } => {
                w.u8(2);
                w.u64(self.version);
                w.str(&merge.0);
                w.u64(capacities.len() as u64);
                for (channel, cap) in capacities {
                    w.str(&channel.0);
                    w.u64(*cap);
                }
            }
        }
        w.finish()
    }

    pub fn signed_by(&self, party: &PartyId) -> bool {
        self.signatures.iter().any(|s| &s.signer == party)
    }

    pub fn add_signature(&mut self, sig: Signature) {
        if !self.signed_by(&sig.signer.clone()) {
            self.signatures.push(sig);
            self.signatures.sort_by(|a, b| a.signer.cmp(&b.signer));
        }
    }

    /// True iff every attached signature verifies over the canonical bytes.
    pub fn signatures_valid(&self, keys: &KeyStore) -> bool {
        let msg = self.message_bytes();
        self.signatures
            .iter()
            .all(|s| keys.verify(&s.signer, &msg, s))
    }
}
