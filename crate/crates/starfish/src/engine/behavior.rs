use serde::{Deserialize, Serialize};

use crate::core::Round;

/// Scripted deviations from the honest procedures — a closed library used by
/// the adversarial test scenarios. Anything not listed behaves honestly.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Stops responding to every incoming request from `from_round` on.
    /// Scheduled commands of its own are still issued (a silent party can
    /// still initiate, it just never answers).
    Silent {
        #[serde(default)]
        from_round: Round,
    },
    /// Submits its oldest retained co-signed channel state when closing or
    /// responding to a close, instead of the latest.
    StaleCloseChannel,
    /// Submits the previous merge/edge state (one version behind) when
    /// closing an edge.
    StaleCloseMerge,
    /// Votes reject on every atomic-broadcast proposal.
    RejectBroadcast,
    /// Never co-signs open-merge proposals.
    WithholdMergeSig,
    /// Answers merge proposals with a signature over garbage bytes.
    ForgeMergeSig,
    /// After a successful open-merge, re-sends the original stamped proposal
    /// (a replay, rejected by the responders' freshness check).
    ReplayMerge,
    /// Proposes edge updates that ignore the edge capacity: pays the user the
    /// full amount even when the hub side lacks funds (the double-spend
    /// attempt; honest responders reject it).
    OverdraftEdge,
}

impl Behavior {
    pub fn is_silent_at(&self, round: Round) -> bool {
        matches!(self, Behavior::Silent { from_round } if round >= *from_round)
    }
}
