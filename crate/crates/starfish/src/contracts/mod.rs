//! On-chain contract functionality: the channel contract and the merge
//! contract, modeled as deterministic state machines stepped by the engine's
//! round loop.
//!
//! Contracts hold coins in escrow between ledger removal and final payout, so
//! `held()` across all live contracts plus the ledger total is the global
//! conservation quantity. All deadlines are expressed in whole rounds against
//! the scenario's confirmation delay Δ.

mod channel;
mod merge;

pub use channel::{ChannelContract, OpenAbort};
pub use merge::MergeContract;

use serde::Serialize;

use crate::core::{Amount, Channel, ChannelId, MergeId, PartyId, Round};

/// Round clock shared by the contracts: every contract deadline is
/// `round + k·Δ` for small k.
#[derive(Debug, Clone, Copy)]
pub struct ContractClock {
    pub delta: u64,
    pub round: Round,
}

impl ContractClock {
    pub fn deadline(&self, k: u64) -> Round {
        self.round + k * self.delta
    }
}

/// A contract-emitted notification, routed to `recipients` in the emission
/// round and appended to the trace event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractEvent {
    pub contract: String,
    pub recipients: Vec<PartyId>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventKind {
    /// Carries the full descriptor so the counterparty can build its view.
    Opening {
        channel: Channel,
    },
    Opened {
        channel: ChannelId,
    },
    NotOpened {
        channel: ChannelId,
        reason: String,
    },
    Merged {
        merge: MergeId,
        capacities: Vec<(ChannelId, Amount)>,
    },
    NotMerged {
        merge: MergeId,
        reason: String,
    },
    ClosingM {
        merge: MergeId,
        channel: ChannelId,
    },
    CloseMCheck {
        merge: MergeId,
        version: u64,
        capacities: Vec<(ChannelId, Amount)>,
    },
    /// Edge settled: `returned` is the reconciled [hub, user] balance paid
    /// back to the underlying channel; `capacities` is the surviving vector.
    ClosedM {
        merge: MergeId,
        channel: ChannelId,
        returned: [Amount; 2],
        version: u64,
        capacities: Vec<(ChannelId, Amount)>,
    },
    ClosingC {
        channel: ChannelId,
    },
    ClosedC {
        channel: ChannelId,
        payout: [Amount; 2],
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Opening { .. } => "opening",
            EventKind::Opened { .. } => "opened",
            EventKind::NotOpened { .. } => "not-opened",
            EventKind::Merged { .. } => "merged",
            EventKind::NotMerged { .. } => "not-merged",
            EventKind::ClosingM { .. } => "closingM",
            EventKind::CloseMCheck { .. } => "closeM-check",
            EventKind::ClosedM { .. } => "closedM",
            EventKind::ClosingC { .. } => "closingC",
            EventKind::ClosedC { .. } => "closedC",
        }
    }
}
