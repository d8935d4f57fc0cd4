use serde::Serialize;

use crate::core::{ChannelId, Merge, MergeId, PartyId, Round, Signature, SignedState};

/// Where a message comes from or goes to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Endpoint {
    Party(PartyId),
    ChannelContract(ChannelId),
    MergeContract(MergeId),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Party(p) => write!(f, "party:{p}"),
            Endpoint::ChannelContract(c) => write!(f, "chan:{c}"),
            Endpoint::MergeContract(m) => write!(f, "merge:{m}"),
        }
    }
}

/// A message in flight. Party→party messages deliver one round after they are
/// sent; party→contract messages deliver after Δ rounds (on-chain
/// confirmation); contract→party notifications are visible in the emission
/// round.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub send_round: Round,
    pub deliver_round: Round,
    pub seq: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
pub enum Payload {
    PartyMsg(PartyMsg),
    Call(ContractCall),
}

/// Off-chain protocol messages between parties.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "msg", rename_all = "kebab-case")]
pub enum PartyMsg {
    /// Channel update proposal carrying the initiator-signed next state.
    UpdateCReq {
        channel: ChannelId,
        state: SignedState,
    },
    /// Responder's counter-signature on the proposed state.
    UpdateCAck {
        channel: ChannelId,
        version: u64,
        sig: Signature,
    },
    /// Open-merge request: the proposal stamped with its round, hub-signed.
    MergeReq {
        proposal: Merge,
        t: Round,
        sig: Signature,
    },
    /// End-user consent to an open-merge proposal.
    MergeAck {
        merge: MergeId,
        t: Round,
        sig: Signature,
    },
    /// Edge update proposal (initiator-signed next edge state).
    UpdateEReq {
        merge: MergeId,
        channel: ChannelId,
        state: SignedState,
    },
    UpdateEAck {
        merge: MergeId,
        channel: ChannelId,
        version: u64,
        sig: Signature,
    },
    /// Capacity-shift proposal to the two affected end users: the next merge
    /// state plus the two next edge states, hub-signed.
    UpdateMReq {
        merge: MergeId,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
    },
    /// Affected end-user's signatures over msgM and its own edge state.
    UpdateMAck {
        merge: MergeId,
        version: u64,
        msg_m_sig: Signature,
        edge_sig: Signature,
    },
    /// Atomic-broadcast proposal to every merge user.
    AbProposal {
        merge: MergeId,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
    },
    /// Atomic-broadcast echo vote, sent to every participant.
    AbVote {
        merge: MergeId,
        version: u64,
        accept: bool,
    },
}

impl PartyMsg {
    pub fn name(&self) -> &'static str {
        match self {
            PartyMsg::UpdateCReq { .. } => "updateC-req",
            PartyMsg::UpdateCAck { .. } => "updateC-ack",
            PartyMsg::MergeReq { .. } => "merge-req",
            PartyMsg::MergeAck { .. } => "merge-ack",
            PartyMsg::UpdateEReq { .. } => "updateE-req",
            PartyMsg::UpdateEAck { .. } => "updateE-ack",
            PartyMsg::UpdateMReq { .. } => "updateM-req",
            PartyMsg::UpdateMAck { .. } => "updateM-ack",
            PartyMsg::AbProposal { .. } => "ab-proposal",
            PartyMsg::AbVote { .. } => "ab-vote",
        }
    }
}

/// On-chain contract invocations.
#[derive(Debug, Clone)]
pub enum ContractCall {
    /// Channel open request; the first one instantiates the contract.
    Open {
        channel: crate::core::Channel,
    },
    /// Close request with the caller's best co-signed state (None = funding).
    CloseC {
        channel: ChannelId,
        state: Option<SignedState>,
    },
    /// Merge instantiation with the aggregated signature set.
    OpenMerge {
        proposal: Merge,
        t: Round,
        sigs: Vec<Signature>,
    },
    CloseM {
        merge: MergeId,
        channel: ChannelId,
        msg_m: Option<SignedState>,
        msg_e: Option<SignedState>,
    },
    CloseMTimeout {
        merge: MergeId,
    },
    CloseMChallenge {
        merge: MergeId,
        msg_m: SignedState,
    },
}

impl ContractCall {
    pub fn name(&self) -> &'static str {
        match self {
            ContractCall::Open { .. } => "open",
            ContractCall::CloseC { .. } => "closeC",
            ContractCall::OpenMerge { .. } => "merge",
            ContractCall::CloseM { .. } => "closeM",
            ContractCall::CloseMTimeout { .. } => "closeM-timeout",
            ContractCall::CloseMChallenge { .. } => "closeM-challenge",
        }
    }
}
