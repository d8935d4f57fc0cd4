use std::collections::BTreeMap;

use serde::Serialize;

use crate::core::{
    Amount, ChannelId, KeyStore, LedgerState, Merge, MergeStatus, PartyId, Round, Signature,
    SignedState, StatePayload,
};

use super::{ChannelContract, ContractClock, ContractEvent, EventKind};

/// One close-edge challenge game. A merge contract runs at most one at a
/// time; further close requests are ignored until it settles.
#[derive(Debug, Clone, Serialize)]
struct EdgeClose {
    channel: ChannelId,
    caller: PartyId,
    counterparty: PartyId,
    best_m: (u64, Vec<(ChannelId, Amount)>),
    best_e: (u64, [Amount; 2]),
    reply_deadline: Round,
    counterparty_replied: bool,
    check_sent: bool,
    challenge_deadline: Option<Round>,
    /// Hard stop (start + 4Δ) so a vanished caller cannot wedge the merge.
    game_deadline: Round,
}

/// The on-chain merge contract: pools the hub's pledged channel balances into
/// per-user edges, and settles edge exits through a versioned challenge game.
#[derive(Debug, Clone, Serialize)]
pub struct MergeContract {
    pub record: Merge,
    escrow: Amount,
    base_version: u64,
    closing: Option<EdgeClose>,
}

impl MergeContract {
    /// Merge instantiation, atomic: every per-channel capacity check passes
    /// before any channel is debited, otherwise nothing changes.
    pub fn open(
        proposal: Merge,
        t: Round,
        sigs: &[Signature],
        clock: &ContractClock,
        channels: &mut BTreeMap<ChannelId, ChannelContract>,
        keys: &KeyStore,
    ) -> Result<(Self, Vec<ContractEvent>), Vec<ContractEvent>> {
        let tag = format!("merge:{}", proposal.id);
        let mut everyone: Vec<PartyId> = proposal.users.iter().cloned().collect();
        everyone.push(proposal.hub.clone());
        everyone.sort();
        everyone.dedup();
        let reject = |reason: &str| {
            vec![ContractEvent {
                contract: tag.clone(),
                recipients: everyone.clone(),
                kind: EventKind::NotMerged {
                    merge: proposal.id.clone(),
                    reason: reason.to_string(),
                },
            }]
        };

        // Signature set must cover the hub and every end user over (φ, t).
        let msg = proposal.proposal_bytes(t);
        let mut signers = Vec::new();
        for sig in sigs {
            if !keys.verify(&sig.signer, &msg, sig) {
                return Err(reject("invalid signature"));
            }
            signers.push(sig.signer.clone());
        }
        let mut required: Vec<&PartyId> = proposal.users.iter().collect();
        required.push(&proposal.hub);
        if !required.iter().all(|p| signers.contains(p)) {
            return Err(reject("missing signature"));
        }

        // Per-channel capacity bound, checked across all edges first.
        for edge in &proposal.edges {
            if edge.hub() != &proposal.hub {
                return Err(reject("edge not centered on hub"));
            }
            let Some(chan) = channels.get(&edge.channel_id) else {
                return Err(reject("unknown channel"));
            };
            let Some(side) = chan.record.side_of(&proposal.hub) else {
                return Err(reject("hub not in channel"));
            };
            if chan.record.side_of(edge.user()).is_none() {
                return Err(reject("edge user not in channel"));
            }
            if chan.stored_balance(side) < edge.capacity {
                return Err(reject("capacity exceeds hub channel balance"));
            }
        }

        let mut record = proposal;
        let mut escrow = 0;
        for edge in &mut record.edges {
            let chan = channels.get_mut(&edge.channel_id).unwrap();
            chan.chan_merge(&record.id, &record.hub, edge.capacity)
                .expect("capacity pre-checked");
            edge.balances = [edge.capacity, 0];
            edge.version = 0;
            escrow += edge.capacity;
        }
        record.status = MergeStatus::Active;
        record.version = 0;
        let _ = clock;
        let capacities = record.capacities();
        let merged = ContractEvent {
            contract: tag,
            recipients: everyone,
            kind: EventKind::Merged {
                merge: record.id.clone(),
                capacities,
            },
        };
        Ok((
            MergeContract {
                record,
                escrow,
                base_version: 0,
                closing: None,
            },
            vec![merged],
        ))
    }

    fn tag(&self) -> String {
        format!("merge:{}", self.record.id)
    }

    pub fn held(&self) -> Amount {
        self.escrow
    }

    pub fn base_version(&self) -> u64 {
        self.base_version
    }

    fn everyone(&self) -> Vec<PartyId> {
        let mut v: Vec<PartyId> = self.record.users.iter().cloned().collect();
        v.push(self.record.hub.clone());
        if let Some(c) = &self.closing {
            v.push(c.caller.clone());
            v.push(c.counterparty.clone());
        }
        v.sort();
        v.dedup();
        v
    }

    fn msg_m_valid(&self, state: &SignedState, keys: &KeyStore) -> bool {
        let StatePayload::MsgM { merge, capacities } = &state.payload else {
            return false;
        };
        if merge != &self.record.id {
            return false;
        }
        if state.version == 0 {
            // The contract initialized version 0 on-chain; a resubmission is
            // valid iff it matches the current record.
            return capacities == &self.record.capacities();
        }
        // Capacity vector must cover every live edge and conserve the pool.
        let mut covered: Amount = 0;
        for edge in &self.record.edges {
            match capacities.iter().find(|(c, _)| c == &edge.channel_id) {
                Some((_, cap)) => covered += *cap,
                None => return false,
            }
        }
        if covered != self.escrow {
            return false;
        }
        if !state.signed_by(&self.record.hub) {
            return false;
        }
        let end_users = state
            .signatures
            .iter()
            .filter(|s| s.signer != self.record.hub)
            .count();
        let needed = 2.min(self.record.users.len());
        end_users >= needed && state.signatures_valid(keys)
    }

    fn msg_e_valid(&self, state: &SignedState, channel: &ChannelId, keys: &KeyStore) -> bool {
        let StatePayload::MsgE {
            merge,
            channel: ch,
            balances,
        } = &state.payload
        else {
            return false;
        };
        if merge != &self.record.id || ch != channel {
            return false;
        }
        let Some(edge) = self.record.edge(channel) else {
            return false;
        };
        if state.version == 0 {
            return *balances == edge.balances;
        }
        state.signed_by(edge.hub()) && state.signed_by(edge.user()) && state.signatures_valid(keys)
    }

    /// A close request from one edge party starts the game; within Δ the
    /// counterparty may submit a strictly newer state (both versionM and
    /// versionE must be higher to replace).
    pub fn close_edge(
        &mut self,
        from: &PartyId,
        channel: &ChannelId,
        msg_m: Option<SignedState>,
        msg_e: Option<SignedState>,
        clock: &ContractClock,
        keys: &KeyStore,
    ) -> Vec<ContractEvent> {
        if let Some(game) = &mut self.closing {
            // Counterparty submission path.
            if &game.channel != channel
                || from != &game.counterparty
                || game.counterparty_replied
                || clock.round > game.reply_deadline
            {
                return Vec::new();
            }
            game.counterparty_replied = true;
            let m_ok = msg_m
                .as_ref()
                .map(|s| self.msg_m_valid(s, keys))
                .unwrap_or(false);
            let e_ok = msg_e
                .as_ref()
                .map(|s| self.msg_e_valid(s, channel, keys))
                .unwrap_or(false);
            let game = self.closing.as_mut().unwrap();
            if m_ok && e_ok {
                let m = msg_m.unwrap();
                let e = msg_e.unwrap();
                if m.version > game.best_m.0 && e.version > game.best_e.0 {
                    if let StatePayload::MsgM { capacities, .. } = &m.payload {
                        game.best_m = (m.version, capacities.clone());
                    }
                    if let StatePayload::MsgE { balances, .. } = &e.payload {
                        game.best_e = (e.version, *balances);
                    }
                }
            }
            return self.send_check(clock);
        }

        // New game.
        if !matches!(self.record.status, MergeStatus::Active) {
            return Vec::new();
        }
        let Some(edge) = self.record.edge(channel) else {
            return Vec::new();
        };
        let Some(side) = edge.side_of(from) else {
            return Vec::new();
        };
        let counterparty = edge.users[1 - side].clone();
        let mut game = EdgeClose {
            channel: channel.clone(),
            caller: from.clone(),
            counterparty: counterparty.clone(),
            best_m: (self.base_version, self.record.capacities()),
            best_e: (0, edge.balances),
            reply_deadline: clock.deadline(1),
            counterparty_replied: false,
            check_sent: false,
            challenge_deadline: None,
            game_deadline: clock.deadline(4),
        };
        let m_ok = msg_m
            .as_ref()
            .map(|s| self.msg_m_valid(s, keys))
            .unwrap_or(false);
        let e_ok = msg_e
            .as_ref()
            .map(|s| self.msg_e_valid(s, channel, keys))
            .unwrap_or(false);
        if m_ok {
            let m = msg_m.unwrap();
            if m.version > game.best_m.0 {
                if let StatePayload::MsgM { capacities, .. } = &m.payload {
                    game.best_m = (m.version, capacities.clone());
                }
            }
        }
        if e_ok {
            let e = msg_e.unwrap();
            if e.version > game.best_e.0 {
                if let StatePayload::MsgE { balances, .. } = &e.payload {
                    game.best_e = (e.version, *balances);
                }
            }
        }
        self.closing = Some(game);
        vec![ContractEvent {
            contract: self.tag(),
            recipients: vec![counterparty],
            kind: EventKind::ClosingM {
                merge: self.record.id.clone(),
                channel: channel.clone(),
            },
        }]
    }

    /// Timeout: the caller reports the counterparty's silence; the check
    /// goes out and one more Δ is granted for challenges.
    pub fn close_timeout(&mut self, from: &PartyId, clock: &ContractClock) -> Vec<ContractEvent> {
        let Some(game) = &self.closing else {
            return Vec::new();
        };
        if from != &game.caller
            || game.counterparty_replied
            || game.check_sent
            || clock.round <= game.reply_deadline
        {
            return Vec::new();
        }
        self.send_check(clock)
    }

    fn send_check(&mut self, clock: &ContractClock) -> Vec<ContractEvent> {
        let tag = self.tag();
        let game = self.closing.as_mut().unwrap();
        if game.check_sent {
            return Vec::new();
        }
        game.check_sent = true;
        game.challenge_deadline = Some(clock.deadline(1));
        let exclude = [game.caller.clone(), game.counterparty.clone()];
        let kind = EventKind::CloseMCheck {
            merge: self.record.id.clone(),
            version: game.best_m.0,
            capacities: game.best_m.1.clone(),
        };
        let recipients: Vec<PartyId> = self
            .everyone()
            .into_iter()
            .filter(|p| !exclude.contains(p))
            .collect();
        vec![ContractEvent {
            contract: tag,
            recipients,
            kind,
        }]
    }

    /// Any merge user may override a stale close with a strictly
    /// higher-versionM state during the challenge window.
    pub fn challenge(
        &mut self,
        from: &PartyId,
        msg_m: &SignedState,
        clock: &ContractClock,
        keys: &KeyStore,
    ) -> Vec<ContractEvent> {
        let _ = from;
        let valid = self.msg_m_valid(msg_m, keys);
        let Some(game) = &mut self.closing else {
            return Vec::new();
        };
        let Some(deadline) = game.challenge_deadline else {
            return Vec::new();
        };
        if clock.round > deadline || !valid {
            return Vec::new();
        }
        if msg_m.version > game.best_m.0 {
            if let StatePayload::MsgM { capacities, .. } = &msg_m.payload {
                game.best_m = (msg_m.version, capacities.clone());
            }
        }
        Vec::new()
    }

    /// Deadline processing for the running game.
    pub fn tick(
        &mut self,
        clock: &ContractClock,
        channels: &mut BTreeMap<ChannelId, ChannelContract>,
        ledger: &mut LedgerState,
    ) -> Vec<ContractEvent> {
        let Some(game) = &self.closing else {
            return Vec::new();
        };
        if let Some(deadline) = game.challenge_deadline {
            // Challenges can only arrive by the deadline round (they travel Δ
            // from the check emission); the world delivers messages before
            // ticking, so settling at the deadline loses nothing.
            if clock.round >= deadline {
                return self.finalize_edge(channels, ledger);
            }
            return Vec::new();
        }
        // Neither counterparty reply nor caller timeout arrived: hard stop.
        if clock.round > game.game_deadline {
            let mut events = self.send_check(clock);
            events.extend(self.tick_noop());
            return events;
        }
        Vec::new()
    }

    fn tick_noop(&self) -> Vec<ContractEvent> {
        Vec::new()
    }

    fn finalize_edge(
        &mut self,
        channels: &mut BTreeMap<ChannelId, ChannelContract>,
        ledger: &mut LedgerState,
    ) -> Vec<ContractEvent> {
        let game = self.closing.take().expect("finalize without a game");
        let everyone = {
            let mut v: Vec<PartyId> = self.record.users.iter().cloned().collect();
            v.push(self.record.hub.clone());
            v.sort();
            v.dedup();
            v
        };
        let (win_version, win_caps) = game.best_m;
        let cap_win = win_caps
            .iter()
            .find(|(c, _)| c == &game.channel)
            .map(|(_, cap)| *cap)
            .unwrap_or_else(|| {
                self.record
                    .edge(&game.channel)
                    .map(|e| e.capacity)
                    .unwrap_or(0)
            });

        // Reconciliation: the user keeps its msgE balance (capped by the
        // winning capacity); the hub absorbs any capacity/balance mismatch.
        let user_final = game.best_e.1[1].min(cap_win);
        let hub_final = cap_win - user_final;

        let edge = self
            .record
            .edge(&game.channel)
            .expect("closing edge present")
            .clone();
        self.record.edges.retain(|e| e.channel_id != game.channel);
        self.record.users.remove(edge.user());
        self.base_version = self.base_version.max(win_version);
        for e in &mut self.record.edges {
            if let Some((_, cap)) = win_caps.iter().find(|(c, _)| c == &e.channel_id) {
                e.capacity = *cap;
                e.balances = [*cap, 0];
            }
        }
        self.record.version = self.base_version;
        self.escrow -= cap_win;
        if self.record.edges.is_empty() {
            self.record.status = MergeStatus::Closed;
        }

        // Credit the underlying channel, aligned to its user order.
        if let Some(chan) = channels.get_mut(&game.channel) {
            let hub_side = chan.record.side_of(edge.hub()).unwrap_or(0);
            let mut returned = [0u64; 2];
            returned[hub_side] = hub_final;
            returned[1 - hub_side] = user_final;
            chan.chan_close_m(&self.record.id, returned, ledger);
        }

        vec![ContractEvent {
            contract: self.tag(),
            recipients: everyone,
            kind: EventKind::ClosedM {
                merge: self.record.id.clone(),
                channel: game.channel,
                returned: [hub_final, user_final],
                version: win_version,
                capacities: self.record.capacities(),
            },
        }]
    }
}
