use serde::Serialize;

use crate::core::{
    Amount, Channel, ChannelStatus, KeyStore, LedgerState, MergeId, PartyId, Round, SignedState,
    StatePayload,
};

use super::{ContractClock, ContractEvent, EventKind};

/// Why an open request was dropped without creating a contract.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OpenAbort {
    #[error("opener lacks ledger funds")]
    InsufficientFunds,
    #[error("opener is not a channel user")]
    NotAUser,
}

#[derive(Debug, Clone, Serialize)]
enum Phase {
    /// Opener funded; waiting for the counterparty's confirmation.
    AwaitingCounterparty {
        opener: usize,
        deadline: Round,
    },
    Open,
    /// Close game running until `deadline` (start + 4Δ) unless the second
    /// submission lands earlier.
    Closing {
        submitted: [bool; 2],
        deadline: Round,
    },
    Closed,
}

/// The on-chain channel contract.
///
/// The contract's stored balance view is `funding + adjust`, where `adjust`
/// accumulates merge debits (capacity pledged into a merge contract) and
/// close-merge credits. Co-signed channel states track off-chain payments
/// only, so the final payout is the winning msgC plus `adjust`.
#[derive(Debug, Clone, Serialize)]
pub struct ChannelContract {
    pub record: Channel,
    funding: [Amount; 2],
    adjust: [i64; 2],
    escrow: Amount,
    best: Option<SignedState>,
    phase: Phase,
}

impl ChannelContract {
    /// Open request: the opener's funding is removed from the ledger
    /// immediately; the counterparty has Δ to confirm.
    pub fn open(
        channel: Channel,
        opener: &PartyId,
        clock: &ContractClock,
        ledger: &mut LedgerState,
    ) -> Result<(Self, Vec<ContractEvent>), OpenAbort> {
        let side = channel.side_of(opener).ok_or(OpenAbort::NotAUser)?;
        let funding = channel.balances;
        if ledger.remove(opener, funding[side]).is_err() {
            return Err(OpenAbort::InsufficientFunds);
        }
        let counterparty = channel.users[1 - side].clone();
        let mut record = channel;
        record.status = ChannelStatus::Proposed;
        let contract = ChannelContract {
            funding,
            adjust: [0, 0],
            escrow: funding[side],
            best: None,
            phase: Phase::AwaitingCounterparty {
                opener: side,
                deadline: clock.deadline(1),
            },
            record,
        };
        let ev = ContractEvent {
            contract: contract.tag(),
            recipients: vec![counterparty],
            kind: EventKind::Opening {
                channel: contract.record.clone(),
            },
        };
        Ok((contract, vec![ev]))
    }

    fn tag(&self) -> String {
        format!("chan:{}", self.record.id)
    }

    pub fn status(&self) -> ChannelStatus {
        self.record.status
    }

    pub fn users(&self) -> &[PartyId; 2] {
        &self.record.users
    }

    pub fn funding(&self) -> [Amount; 2] {
        self.funding
    }

    pub fn adjustments(&self) -> [i64; 2] {
        self.adjust
    }

    /// Coins currently held by this contract.
    pub fn held(&self) -> Amount {
        self.escrow
    }

    /// The contract's stored balance for one side: funding plus merge
    /// adjustments, floored at zero.
    pub fn stored_balance(&self, side: usize) -> Amount {
        let v = self.funding[side] as i64 + self.adjust[side];
        if v < 0 {
            0
        } else {
            v as Amount
        }
    }

    /// Counterparty confirmation within Δ completes the open.
    pub fn confirm_open(
        &mut self,
        from: &PartyId,
        clock: &ContractClock,
        ledger: &mut LedgerState,
    ) -> Vec<ContractEvent> {
        let Phase::AwaitingCounterparty { opener, deadline } = self.phase else {
            return Vec::new();
        };
        let Some(side) = self.record.side_of(from) else {
            return Vec::new();
        };
        if side == opener || clock.round > deadline {
            return Vec::new();
        }
        if ledger.remove(from, self.funding[side]).is_err() {
            // Counterparty cannot fund; the open deadline will refund the opener.
            return Vec::new();
        }
        self.escrow += self.funding[side];
        self.phase = Phase::Open;
        self.record.status = ChannelStatus::Open;
        vec![ContractEvent {
            contract: self.tag(),
            recipients: self.record.users.to_vec(),
            kind: EventKind::Opened {
                channel: self.record.id.clone(),
            },
        }]
    }

    /// Merge contract pledges `capacity` out of the hub's stored balance.
    pub fn chan_merge(
        &mut self,
        merge: &MergeId,
        hub: &PartyId,
        capacity: Amount,
    ) -> Result<(), &'static str> {
        if !matches!(self.phase, Phase::Open) {
            return Err("channel not open");
        }
        let side = self.record.side_of(hub).ok_or("hub not a channel user")?;
        if self.stored_balance(side) < capacity {
            return Err("capacity exceeds hub channel balance");
        }
        self.adjust[side] -= capacity as i64;
        self.escrow -= capacity;
        self.record.merge_set.insert(merge.clone());
        Ok(())
    }

    /// Merge contract returns a settled edge's balances into the channel.
    /// `returned` is aligned to this channel's user order. If the channel has
    /// already paid out, the credits go straight to the ledger.
    pub fn chan_close_m(
        &mut self,
        merge: &MergeId,
        returned: [Amount; 2],
        ledger: &mut LedgerState,
    ) {
        if !self.record.merge_set.remove(merge) {
            return;
        }
        if matches!(self.phase, Phase::Closed) {
            for (i, amount) in returned.iter().enumerate() {
                ledger.add(&self.record.users[i], *amount);
            }
            return;
        }
        self.adjust[0] += returned[0] as i64;
        self.adjust[1] += returned[1] as i64;
        self.escrow += returned[0] + returned[1];
    }

    fn msgc_valid(&self, state: &SignedState, keys: &KeyStore) -> bool {
        let StatePayload::MsgC { channel, balances } = &state.payload else {
            return false;
        };
        if channel != &self.record.id || state.version == 0 {
            return false;
        }
        if balances[0] + balances[1] != self.funding[0] + self.funding[1] {
            return false;
        }
        self.record.users.iter().all(|u| state.signed_by(u)) && state.signatures_valid(keys)
    }

    fn best_version(&self) -> u64 {
        self.best.as_ref().map(|s| s.version).unwrap_or(0)
    }

    /// Close request: the first submission opens a 4Δ window and notifies
    /// the counterparty; the counterparty's submission (higher version wins)
    /// settles immediately. Re-entrant submissions are ignored.
    pub fn close(
        &mut self,
        from: &PartyId,
        msgc: Option<SignedState>,
        clock: &ContractClock,
        keys: &KeyStore,
        ledger: &mut LedgerState,
    ) -> Vec<ContractEvent> {
        let Some(side) = self.record.side_of(from) else {
            return Vec::new();
        };
        let valid = msgc.as_ref().map(|s| self.msgc_valid(s, keys));
        match &mut self.phase {
            Phase::Open => {
                if let (Some(s), Some(true)) = (&msgc, valid) {
                    self.best = Some(s.clone());
                }
                let deadline = clock.deadline(4);
                let mut submitted = [false, false];
                submitted[side] = true;
                self.phase = Phase::Closing {
                    submitted,
                    deadline,
                };
                self.record.status = ChannelStatus::Closing;
                self.record.locked_until = deadline;
                vec![ContractEvent {
                    contract: self.tag(),
                    recipients: vec![self.record.users[1 - side].clone()],
                    kind: EventKind::ClosingC {
                        channel: self.record.id.clone(),
                    },
                }]
            }
            Phase::Closing {
                submitted,
                deadline,
            } => {
                if submitted[side] || clock.round > *deadline {
                    return Vec::new();
                }
                submitted[side] = true;
                if let (Some(s), Some(true)) = (&msgc, valid) {
                    if s.version > self.best_version() {
                        self.best = Some(s.clone());
                    }
                }
                self.settle(ledger)
            }
            _ => Vec::new(),
        }
    }

    /// Deadline processing: refund an unconfirmed open after Δ; settle a close
    /// whose window expired without a counterparty submission.
    pub fn tick(&mut self, clock: &ContractClock, ledger: &mut LedgerState) -> Vec<ContractEvent> {
        match self.phase {
            Phase::AwaitingCounterparty { opener, deadline } if clock.round > deadline => {
                let refund = self.funding[opener];
                ledger.add(&self.record.users[opener].clone(), refund);
                self.escrow -= refund;
                self.phase = Phase::Closed;
                self.record.status = ChannelStatus::Closed;
                vec![ContractEvent {
                    contract: self.tag(),
                    recipients: vec![self.record.users[opener].clone()],
                    kind: EventKind::NotOpened {
                        channel: self.record.id.clone(),
                        reason: "counterparty did not confirm".into(),
                    },
                }]
            }
            Phase::Closing { deadline, .. } if clock.round > deadline => self.settle(ledger),
            _ => Vec::new(),
        }
    }

    fn settle(&mut self, ledger: &mut LedgerState) -> Vec<ContractEvent> {
        let base = match &self.best {
            Some(s) => match &s.payload {
                StatePayload::MsgC { balances, .. } => *balances,
                _ => self.funding,
            },
            None => self.funding,
        };
        let mut payout = [0u64; 2];
        let mut remaining = self.escrow;
        for i in 0..2 {
            let entitled = (base[i] as i64 + self.adjust[i]).max(0) as Amount;
            payout[i] = entitled.min(remaining);
            remaining -= payout[i];
            ledger.add(&self.record.users[i].clone(), payout[i]);
        }
        self.escrow = remaining;
        self.phase = Phase::Closed;
        self.record.status = ChannelStatus::Closed;
        vec![ContractEvent {
            contract: self.tag(),
            recipients: self.record.users.to_vec(),
            kind: EventKind::ClosedC {
                channel: self.record.id.clone(),
                payout,
            },
        }]
    }
}
