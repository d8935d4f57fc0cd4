//! Shared domain types: parties, coin amounts, channels, merges, edges,
//! payments, signed states, and the ledger.
//!
//! Coin amounts are 64-bit integer units so that conservation checks are
//! exact; all arithmetic is checked and an operation that would drive any
//! balance negative is rejected rather than applied.

mod ledger;
mod sig;
mod types;

pub use ledger::{LedgerError, LedgerState};
pub use sig::{canonical, KeyPair, KeyStore, Signature};
pub use types::{
    Channel, ChannelId, ChannelPayment, ChannelStatus, Edge, EdgePayment, Merge, MergeId,
    MergeStatus, MergeUpdate, PartyId, SignedState, StatePayload,
};

/// Coin amount in integer units.
pub type Amount = u64;

/// Signed coin shift (payment deltas are zero-sum over their support).
pub type SignedAmount = i64;

/// Round counter of the synchronous network.
pub type Round = u64;

/// Errors from core state transitions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    #[error("payment deltas must sum to zero")]
    NotZeroSum,
    #[error("{party} is not a user of this object")]
    NotAUser { party: PartyId },
    #[error("applying the shift would drive a balance negative")]
    Overdraft,
    #[error("edge balances must sum to the edge capacity")]
    CapacityMismatch,
    #[error("capacity shift must reference two distinct edges")]
    SameEdge,
}
