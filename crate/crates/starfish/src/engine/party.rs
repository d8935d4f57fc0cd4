use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contracts::EventKind;
use crate::core::{
    Amount, Channel, ChannelId, ChannelStatus, Edge, KeyStore, Merge, MergeId, PartyId, Round,
    Signature, SignedState, StatePayload,
};

use super::behavior::Behavior;
use super::message::{ContractCall, Endpoint, PartyMsg, Payload};

/// Environment commands, as they appear in scenario schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Command {
    OpenChannel {
        channel: ChannelId,
        counterparty: PartyId,
        fund: Amount,
        counterparty_fund: Amount,
    },
    UpdateChannel {
        channel: ChannelId,
        to: PartyId,
        amount: Amount,
    },
    OpenMerge {
        merge: MergeId,
        channels: Vec<ChannelId>,
        capacities: Vec<Amount>,
    },
    UpdateEdge {
        merge: MergeId,
        channel: ChannelId,
        to: PartyId,
        amount: Amount,
    },
    UpdateMerge {
        merge: MergeId,
        from_channel: ChannelId,
        to_channel: ChannelId,
        amount: Amount,
    },
    CloseMerge {
        merge: MergeId,
        channel: ChannelId,
    },
    CloseChannel {
        channel: ChannelId,
    },
}

/// A party's view of one channel: the co-signed component plus the
/// contract-level merge adjustments it has observed.
#[derive(Debug, Clone)]
pub struct ChannelView {
    pub id: ChannelId,
    pub users: [PartyId; 2],
    pub funding: [Amount; 2],
    pub balances: [Amount; 2],
    pub version: u64,
    pub adjust: [i64; 2],
    pub merges: BTreeSet<MergeId>,
    pub status: ChannelStatus,
    /// Retained co-signed states, ascending by version (v1 onward).
    pub states: Vec<SignedState>,
}

impl ChannelView {
    fn from_descriptor(chan: &Channel) -> Self {
        ChannelView {
            id: chan.id.clone(),
            users: chan.users.clone(),
            funding: chan.balances,
            balances: chan.balances,
            version: 0,
            adjust: [0, 0],
            merges: BTreeSet::new(),
            status: ChannelStatus::Proposed,
            states: Vec::new(),
        }
    }

    pub fn side_of(&self, party: &PartyId) -> Option<usize> {
        self.users.iter().position(|u| u == party)
    }

    pub fn latest_state(&self) -> Option<&SignedState> {
        self.states.last()
    }

    /// Effective balance: co-signed component plus merge adjustments.
    pub fn effective(&self, side: usize) -> i64 {
        self.balances[side] as i64 + self.adjust[side]
    }
}

#[derive(Debug, Clone)]
pub struct EdgeView {
    pub channel: ChannelId,
    pub users: [PartyId; 2],
    pub capacity: Amount,
    pub balances: [Amount; 2],
    pub version: u64,
    pub states: Vec<SignedState>,
}

impl EdgeView {
    pub fn user(&self) -> &PartyId {
        &self.users[1]
    }
}

#[derive(Debug, Clone)]
pub struct MergeView {
    pub id: MergeId,
    pub hub: PartyId,
    pub users: BTreeSet<PartyId>,
    pub edges: BTreeMap<ChannelId, EdgeView>,
    pub version: u64,
    pub states: Vec<SignedState>,
}

impl MergeView {
    fn from_proposal(merge: &Merge) -> Self {
        let edges = merge
            .edges
            .iter()
            .map(|e| {
                (
                    e.channel_id.clone(),
                    EdgeView {
                        channel: e.channel_id.clone(),
                        users: e.users.clone(),
                        capacity: e.capacity,
                        balances: [e.capacity, 0],
                        version: 0,
                        states: Vec::new(),
                    },
                )
            })
            .collect();
        MergeView {
            id: merge.id.clone(),
            hub: merge.hub.clone(),
            users: merge.users.clone(),
            edges,
            version: 0,
            states: Vec::new(),
        }
    }

    pub fn capacities(&self) -> Vec<(ChannelId, Amount)> {
        self.edges
            .values()
            .map(|e| (e.channel.clone(), e.capacity))
            .collect()
    }

    pub fn pooled_capacity(&self) -> Amount {
        self.edges.values().map(|e| e.capacity).sum()
    }
}

#[derive(Debug, Clone)]
enum Pending {
    UpdateChannel {
        channel: ChannelId,
        state: SignedState,
        deadline: Round,
    },
    OpenMergeCollect {
        proposal: Merge,
        t: Round,
        sigs: Vec<Signature>,
        deadline: Round,
    },
    UpdateMergeCollect {
        merge: MergeId,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
        awaiting: BTreeSet<PartyId>,
        deadline: Round,
    },
    UpdateEdge {
        merge: MergeId,
        channel: ChannelId,
        state: SignedState,
        deadline: Round,
    },
    Broadcast {
        merge: MergeId,
        version: u64,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
        voters: BTreeSet<PartyId>,
        votes: BTreeMap<PartyId, bool>,
        decide_round: Round,
    },
    CloseMergeCaller {
        merge: MergeId,
        channel: ChannelId,
        timeout_round: Round,
        sent_timeout: bool,
    },
    CloseChannelAfterMerges {
        channel: ChannelId,
        awaiting: BTreeSet<MergeId>,
    },
}

/// Output record: the terminal results a party reports to its environment.
#[derive(Debug, Clone)]
pub struct PartyOutput {
    pub name: &'static str,
    pub data: serde_json::Value,
}

/// One protocol participant: local views, in-flight procedures, and the
/// scripted behavior that decides whether it follows the honest procedures.
#[derive(Debug)]
pub struct Party {
    pub id: PartyId,
    pub behavior: Behavior,
    pub channels: BTreeMap<ChannelId, ChannelView>,
    pub merges: BTreeMap<MergeId, MergeView>,
    pending: Vec<Pending>,
    /// Last successful merge proposal (for the replay behavior).
    last_merge: Option<(Merge, Round, Signature)>,
    pub(super) msg_inbox: Vec<(PartyId, PartyMsg)>,
    pub(super) event_inbox: Vec<EventKind>,
    pub(super) cmd_inbox: Vec<Command>,
    outbox: Vec<(Endpoint, Payload)>,
    outputs: Vec<PartyOutput>,
}

/// Read-only per-round context handed to a party step.
pub struct Ctx<'a> {
    pub round: Round,
    pub delta: u64,
    pub keys: &'a KeyStore,
}

impl Party {
    pub fn new(id: PartyId, behavior: Behavior) -> Self {
        Party {
            id,
            behavior,
            channels: BTreeMap::new(),
            merges: BTreeMap::new(),
            pending: Vec::new(),
            last_merge: None,
            msg_inbox: Vec::new(),
            event_inbox: Vec::new(),
            cmd_inbox: Vec::new(),
            outbox: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn silent(&self, round: Round) -> bool {
        self.behavior.is_silent_at(round)
    }

    fn send(&mut self, to: Endpoint, payload: Payload) {
        self.outbox.push((to, payload));
    }

    fn send_msg(&mut self, to: &PartyId, msg: PartyMsg) {
        self.send(Endpoint::Party(to.clone()), Payload::PartyMsg(msg));
    }

    fn call(&mut self, to: Endpoint, call: ContractCall) {
        self.send(to, Payload::Call(call));
    }

    fn output(&mut self, name: &'static str, data: serde_json::Value) {
        self.outputs.push(PartyOutput { name, data });
    }

    fn sign(&self, ctx: &Ctx, msg: &[u8]) -> Signature {
        ctx.keys.sign(&self.id, msg).expect("party has a key pair")
    }

    /// Runs one round: messages, then contract events, then environment
    /// commands, then pending-deadline processing. Returns everything the
    /// party wants delivered.
    pub fn step(&mut self, ctx: &Ctx) -> (Vec<(Endpoint, Payload)>, Vec<PartyOutput>) {
        let msgs = std::mem::take(&mut self.msg_inbox);
        for (from, msg) in msgs {
            self.handle_msg(ctx, from, msg);
        }
        let events = std::mem::take(&mut self.event_inbox);
        for ev in events {
            self.handle_event(ctx, ev);
        }
        let cmds = std::mem::take(&mut self.cmd_inbox);
        for cmd in cmds {
            self.handle_command(ctx, cmd);
        }
        self.expire_pending(ctx);
        (
            std::mem::take(&mut self.outbox),
            std::mem::take(&mut self.outputs),
        )
    }

    // ------------------------------------------------------------------
    // Environment commands
    // ------------------------------------------------------------------

    fn handle_command(&mut self, ctx: &Ctx, cmd: Command) {
        match cmd {
            Command::OpenChannel {
                channel,
                counterparty,
                fund,
                counterparty_fund,
            } => {
                let chan = Channel::new(
                    channel.clone(),
                    [self.id.clone(), counterparty],
                    [fund, counterparty_fund],
                );
                self.channels
                    .insert(channel.clone(), ChannelView::from_descriptor(&chan));
                self.call(
                    Endpoint::ChannelContract(channel),
                    ContractCall::Open { channel: chan },
                );
            }
            Command::UpdateChannel {
                channel,
                to,
                amount,
            } => self.cmd_update_channel(ctx, channel, to, amount),
            Command::OpenMerge {
                merge,
                channels,
                capacities,
            } => self.cmd_open_merge(ctx, merge, channels, capacities),
            Command::UpdateEdge {
                merge,
                channel,
                to,
                amount,
            } => self.cmd_update_edge(ctx, merge, channel, to, amount),
            Command::UpdateMerge {
                merge,
                from_channel,
                to_channel,
                amount,
            } => self.cmd_update_merge(ctx, merge, from_channel, to_channel, amount),
            Command::CloseMerge { merge, channel } => self.cmd_close_merge(ctx, merge, channel),
            Command::CloseChannel { channel } => self.cmd_close_channel(ctx, channel),
        }
    }

    fn cmd_update_channel(&mut self, ctx: &Ctx, channel: ChannelId, to: PartyId, amount: Amount) {
        let me = self.id.clone();
        let Some(view) = self.channels.get(&channel) else {
            self.output(
                "rejected-command",
                json!({"channel": channel.0, "reason": "unknown channel"}),
            );
            return;
        };
        let (Some(my_side), Some(to_side)) = (view.side_of(&me), view.side_of(&to)) else {
            self.output(
                "rejected-command",
                json!({"channel": channel.0, "reason": "not a channel user"}),
            );
            return;
        };
        if view.status != ChannelStatus::Open
            || my_side == to_side
            || view.balances[my_side] < amount
            || view.effective(my_side) < amount as i64
        {
            self.output(
                "not-updatedC",
                json!({"channel": channel.0, "reason": "precondition failed"}),
            );
            return;
        }
        let mut balances = view.balances;
        balances[my_side] -= amount;
        balances[to_side] += amount;
        let mut state = SignedState::new(
            view.version + 1,
            StatePayload::MsgC {
                channel: channel.clone(),
                balances,
            },
        );
        let other = view.users[1 - my_side].clone();
        let sig = self.sign(ctx, &state.message_bytes());
        state.add_signature(sig);
        self.pending.push(Pending::UpdateChannel {
            channel: channel.clone(),
            state: state.clone(),
            deadline: ctx.round + 2,
        });
        self.send_msg(&other, PartyMsg::UpdateCReq { channel, state });
    }

    fn cmd_open_merge(
        &mut self,
        ctx: &Ctx,
        merge: MergeId,
        channels: Vec<ChannelId>,
        capacities: Vec<Amount>,
    ) {
        if channels.len() != capacities.len() || channels.is_empty() {
            self.output(
                "not-merged",
                json!({"merge": merge.0, "reason": "bad arguments"}),
            );
            return;
        }
        let me = self.id.clone();
        let mut edges = Vec::new();
        for (chan_id, cap) in channels.iter().zip(&capacities) {
            let Some(view) = self.channels.get(chan_id) else {
                self.output(
                    "not-merged",
                    json!({"merge": merge.0, "reason": "unknown channel"}),
                );
                return;
            };
            let Some(my_side) = view.side_of(&me) else {
                self.output(
                    "not-merged",
                    json!({"merge": merge.0, "reason": "not a channel user"}),
                );
                return;
            };
            if view.status != ChannelStatus::Open || view.effective(my_side) < *cap as i64 {
                self.output(
                    "not-merged",
                    json!({"merge": merge.0, "reason": "capacity exceeds balance"}),
                );
                return;
            }
            let user = view.users[1 - my_side].clone();
            edges.push(Edge::new(chan_id.clone(), me.clone(), user, *cap));
        }
        let proposal = Merge::propose(merge.clone(), me, edges);
        let t = ctx.round;
        let sig = self.sign(ctx, &proposal.proposal_bytes(t));
        for user in proposal.users.clone() {
            self.send_msg(
                &user,
                PartyMsg::MergeReq {
                    proposal: proposal.clone(),
                    t,
                    sig: sig.clone(),
                },
            );
        }
        self.pending.push(Pending::OpenMergeCollect {
            proposal,
            t,
            sigs: vec![sig],
            deadline: ctx.round + 2,
        });
    }

    fn cmd_update_edge(
        &mut self,
        ctx: &Ctx,
        merge: MergeId,
        channel: ChannelId,
        to: PartyId,
        amount: Amount,
    ) {
        let me = self.id.clone();
        let overdraft = matches!(self.behavior, Behavior::OverdraftEdge);
        let Some(edge) = self.merges.get(&merge).and_then(|m| m.edges.get(&channel)) else {
            self.output(
                "not-updatedE",
                json!({"merge": merge.0, "channel": channel.0, "reason": "unknown edge"}),
            );
            return;
        };
        let (Some(my_side), Some(to_side)) = (
            edge.users.iter().position(|u| u == &me),
            edge.users.iter().position(|u| u == &to),
        ) else {
            self.output(
                "not-updatedE",
                json!({"merge": merge.0, "channel": channel.0, "reason": "not an edge user"}),
            );
            return;
        };
        let mut balances = edge.balances;
        if overdraft {
            // Corrupt construction: pay the full amount regardless of the
            // hub-side balance; the sum no longer matches the capacity.
            balances[my_side] = balances[my_side].saturating_sub(amount);
            balances[to_side] += amount;
        } else {
            if my_side == to_side || balances[my_side] < amount {
                self.output(
                    "not-updatedE",
                    json!({"merge": merge.0, "channel": channel.0, "reason": "insufficient edge balance"}),
                );
                return;
            }
            balances[my_side] -= amount;
            balances[to_side] += amount;
        }
        let mut state = SignedState::new(
            edge.version + 1,
            StatePayload::MsgE {
                merge: merge.clone(),
                channel: channel.clone(),
                balances,
            },
        );
        let other = edge.users[1 - my_side].clone();
        let sig = self.sign(ctx, &state.message_bytes());
        state.add_signature(sig);
        self.pending.push(Pending::UpdateEdge {
            merge: merge.clone(),
            channel: channel.clone(),
            state: state.clone(),
            deadline: ctx.round + 2,
        });
        self.send_msg(
            &other,
            PartyMsg::UpdateEReq {
                merge,
                channel,
                state,
            },
        );
    }

    fn cmd_update_merge(
        &mut self,
        ctx: &Ctx,
        merge: MergeId,
        from_channel: ChannelId,
        to_channel: ChannelId,
        amount: Amount,
    ) {
        let me = self.id.clone();
        let Some(view) = self.merges.get(&merge) else {
            self.output(
                "not-updatedM",
                json!({"merge": merge.0, "reason": "unknown merge"}),
            );
            return;
        };
        if view.hub != me || from_channel == to_channel {
            self.output(
                "not-updatedM",
                json!({"merge": merge.0, "reason": "only the hub shifts capacity"}),
            );
            return;
        }
        let (Some(donor), Some(target)) =
            (view.edges.get(&from_channel), view.edges.get(&to_channel))
        else {
            self.output(
                "not-updatedM",
                json!({"merge": merge.0, "reason": "unknown edge"}),
            );
            return;
        };
        if donor.balances[0] < amount {
            self.output(
                "not-updatedM",
                json!({"merge": merge.0, "reason": "donor hub balance insufficient"}),
            );
            return;
        }
        let mut capacities = view.capacities();
        for (chan, cap) in capacities.iter_mut() {
            if *chan == from_channel {
                *cap -= amount;
            } else if *chan == to_channel {
                *cap += amount;
            }
        }
        let mut msg_m = SignedState::new(
            view.version + 1,
            StatePayload::MsgM {
                merge: merge.clone(),
                capacities,
            },
        );
        let sig = self.sign(ctx, &msg_m.message_bytes());
        msg_m.add_signature(sig);

        let mut edge_states = Vec::new();
        for (edge, delta) in [(donor, -(amount as i64)), (target, amount as i64)] {
            let balances = [
                (edge.balances[0] as i64 + delta) as Amount,
                edge.balances[1],
            ];
            let mut st = SignedState::new(
                edge.version + 1,
                StatePayload::MsgE {
                    merge: merge.clone(),
                    channel: edge.channel.clone(),
                    balances,
                },
            );
            let sig = self.sign(ctx, &st.message_bytes());
            st.add_signature(sig);
            edge_states.push(st);
        }

        let p = donor.users[1].clone();
        let q = target.users[1].clone();
        for user in [&p, &q] {
            self.send_msg(
                user,
                PartyMsg::UpdateMReq {
                    merge: merge.clone(),
                    msg_m: msg_m.clone(),
                    edge_states: edge_states.clone(),
                },
            );
        }
        self.pending.push(Pending::UpdateMergeCollect {
            merge,
            msg_m,
            edge_states,
            awaiting: [p, q].into_iter().collect(),
            deadline: ctx.round + 2,
        });
    }

    fn close_merge_states(
        &self,
        merge: &MergeId,
        channel: &ChannelId,
    ) -> (Option<SignedState>, Option<SignedState>) {
        let stale = matches!(self.behavior, Behavior::StaleCloseMerge);
        let Some(view) = self.merges.get(merge) else {
            return (None, None);
        };
        let pick = |states: &Vec<SignedState>| -> Option<SignedState> {
            if stale && states.len() >= 2 {
                states.get(states.len() - 2).cloned()
            } else if stale {
                None
            } else {
                states.last().cloned()
            }
        };
        let msg_m = pick(&view.states);
        let msg_e = view
            .edges
            .get(channel)
            .map(|e| pick(&e.states))
            .unwrap_or(None);
        (msg_m, msg_e)
    }

    fn cmd_close_merge(&mut self, ctx: &Ctx, merge: MergeId, channel: ChannelId) {
        if self
            .merges
            .get(&merge)
            .and_then(|m| m.edges.get(&channel))
            .and_then(|e| e.users.iter().position(|u| u == &self.id))
            .is_none()
        {
            self.output(
                "rejected-command",
                json!({"merge": merge.0, "channel": channel.0, "reason": "not an edge user"}),
            );
            return;
        }
        let (msg_m, msg_e) = self.close_merge_states(&merge, &channel);
        self.call(
            Endpoint::MergeContract(merge.clone()),
            ContractCall::CloseM {
                merge: merge.clone(),
                channel: channel.clone(),
                msg_m,
                msg_e,
            },
        );
        self.pending.push(Pending::CloseMergeCaller {
            merge,
            channel,
            timeout_round: ctx.round + 2 * ctx.delta,
            sent_timeout: false,
        });
    }

    fn submit_close_c(&mut self, channel: &ChannelId) {
        let Some(view) = self.channels.get(channel) else {
            return;
        };
        let state = if matches!(self.behavior, Behavior::StaleCloseChannel) {
            view.states.first().cloned()
        } else {
            view.latest_state().cloned()
        };
        self.call(
            Endpoint::ChannelContract(channel.clone()),
            ContractCall::CloseC {
                channel: channel.clone(),
                state,
            },
        );
    }

    fn cmd_close_channel(&mut self, ctx: &Ctx, channel: ChannelId) {
        let Some(view) = self.channels.get(&channel) else {
            self.output(
                "rejected-command",
                json!({"channel": channel.0, "reason": "unknown channel"}),
            );
            return;
        };
        let merges = view.merges.clone();
        if merges.is_empty() {
            self.submit_close_c(&channel);
            return;
        }
        for merge in merges.iter() {
            self.cmd_close_merge(ctx, merge.clone(), channel.clone());
        }
        self.pending.push(Pending::CloseChannelAfterMerges {
            channel,
            awaiting: merges,
        });
    }

    // ------------------------------------------------------------------
    // Party-to-party messages
    // ------------------------------------------------------------------

    fn handle_msg(&mut self, ctx: &Ctx, from: PartyId, msg: PartyMsg) {
        match msg {
            PartyMsg::UpdateCReq { channel, state } => {
                self.on_update_c_req(ctx, from, channel, state)
            }
            PartyMsg::UpdateCAck {
                channel,
                version,
                sig,
            } => self.on_update_c_ack(ctx, from, channel, version, sig),
            PartyMsg::MergeReq { proposal, t, sig } => {
                self.on_merge_req(ctx, from, proposal, t, sig)
            }
            PartyMsg::MergeAck { merge, t, sig } => self.on_merge_ack(ctx, from, merge, t, sig),
            PartyMsg::UpdateEReq {
                merge,
                channel,
                state,
            } => self.on_update_e_req(ctx, from, merge, channel, state),
            PartyMsg::UpdateEAck {
                merge,
                channel,
                version,
                sig,
            } => self.on_update_e_ack(ctx, from, merge, channel, version, sig),
            PartyMsg::UpdateMReq {
                merge,
                msg_m,
                edge_states,
            } => self.on_update_m_req(ctx, from, merge, msg_m, edge_states),
            PartyMsg::UpdateMAck {
                merge,
                version,
                msg_m_sig,
                edge_sig,
            } => self.on_update_m_ack(ctx, from, merge, version, msg_m_sig, edge_sig),
            PartyMsg::AbProposal {
                merge,
                msg_m,
                edge_states,
            } => self.on_ab_proposal(ctx, from, merge, msg_m, edge_states),
            PartyMsg::AbVote {
                merge,
                version,
                accept,
            } => self.on_ab_vote(ctx, from, merge, version, accept),
        }
    }

    fn on_update_c_req(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        channel: ChannelId,
        state: SignedState,
    ) {
        if self.silent(ctx.round) {
            return;
        }
        let me = self.id.clone();
        // Concurrent-proposal tie-break: the lexicographically smaller
        // initiator wins; the other side adopts the peer's proposal.
        let mine_wins = self.pending.iter().any(|p| {
            matches!(p, Pending::UpdateChannel { channel: c, state: s, .. }
                if c == &channel && s.version == state.version && me < from)
        });
        if mine_wins {
            return;
        }
        let Some(view) = self.channels.get_mut(&channel) else {
            return;
        };
        if view.status != ChannelStatus::Open || state.version != view.version + 1 {
            return;
        }
        let StatePayload::MsgC { balances, .. } = state.payload else {
            return;
        };
        if balances[0] + balances[1] != view.funding[0] + view.funding[1] {
            return;
        }
        if (balances[0] as i64 + view.adjust[0]) < 0 || (balances[1] as i64 + view.adjust[1]) < 0 {
            return;
        }
        if !state.signed_by(&from) || !state.signatures_valid(ctx.keys) {
            return;
        }
        let mut full = state.clone();
        let sig = ctx.keys.sign(&me, &full.message_bytes()).unwrap();
        full.add_signature(sig.clone());
        let view = self.channels.get_mut(&channel).unwrap();
        view.balances = balances;
        view.version = full.version;
        view.states.push(full);
        self.send_msg(
            &from,
            PartyMsg::UpdateCAck {
                channel,
                version: state.version,
                sig,
            },
        );
    }

    fn on_update_c_ack(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        channel: ChannelId,
        version: u64,
        sig: Signature,
    ) {
        let idx = self.pending.iter().position(|p| {
            matches!(p, Pending::UpdateChannel { channel: c, state, .. }
                if c == &channel && state.version == version)
        });
        let Some(idx) = idx else {
            return;
        };
        let Pending::UpdateChannel { mut state, .. } = self.pending.remove(idx) else {
            unreachable!()
        };
        if sig.signer != from || !ctx.keys.verify(&from, &state.message_bytes(), &sig) {
            self.output(
                "not-updatedC",
                json!({"channel": channel.0, "reason": "bad counter-signature"}),
            );
            return;
        }
        state.add_signature(sig);
        let StatePayload::MsgC { balances, .. } = state.payload else {
            return;
        };
        let view = self.channels.get_mut(&channel).unwrap();
        view.balances = balances;
        view.version = state.version;
        view.states.push(state);
        self.output(
            "updatedC",
            json!({"channel": channel.0, "version": version}),
        );
    }

    fn on_merge_req(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        proposal: Merge,
        t: Round,
        sig: Signature,
    ) {
        if self.silent(ctx.round) || matches!(self.behavior, Behavior::WithholdMergeSig) {
            return;
        }
        if matches!(self.behavior, Behavior::ForgeMergeSig) {
            let bogus = self.sign(ctx, b"consent, allegedly");
            self.send_msg(
                &from,
                PartyMsg::MergeAck {
                    merge: proposal.id.clone(),
                    t,
                    sig: bogus,
                },
            );
            return;
        }
        // Freshness: the stamp must be the proposal round (one hop ago).
        if t + 1 != ctx.round {
            return;
        }
        if from != proposal.hub || !proposal.users.contains(&self.id) {
            return;
        }
        let msg = proposal.proposal_bytes(t);
        if !ctx.keys.verify(&proposal.hub, &msg, &sig) {
            return;
        }
        // The edge backed by my channel must fit the hub's effective balance.
        let Some(edge) = proposal.edges.iter().find(|e| e.user() == &self.id) else {
            return;
        };
        let Some(view) = self.channels.get(&edge.channel_id) else {
            return;
        };
        let Some(hub_side) = view.side_of(&proposal.hub) else {
            return;
        };
        if view.status != ChannelStatus::Open || view.effective(hub_side) < edge.capacity as i64 {
            return;
        }
        let my_sig = self.sign(ctx, &msg);
        // Stash the proposal so the merged event can build the local view.
        self.last_merge = Some((proposal.clone(), t, my_sig.clone()));
        self.merges
            .insert(proposal.id.clone(), MergeView::from_proposal(&proposal));
        self.send_msg(
            &from,
            PartyMsg::MergeAck {
                merge: proposal.id,
                t,
                sig: my_sig,
            },
        );
    }

    fn on_merge_ack(
        &mut self,
        _ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        t: Round,
        sig: Signature,
    ) {
        for p in &mut self.pending {
            if let Pending::OpenMergeCollect {
                proposal,
                t: t0,
                sigs,
                ..
            } = p
            {
                // Aggregate without verifying; the contract is the judge.
                if proposal.id == merge
                    && *t0 == t
                    && proposal.users.contains(&from)
                    && !sigs.iter().any(|s| s.signer == from)
                {
                    sigs.push(sig);
                    return;
                }
            }
        }
    }

    fn on_update_e_req(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        channel: ChannelId,
        state: SignedState,
    ) {
        if self.silent(ctx.round) {
            return;
        }
        let me = self.id.clone();
        let Some(edge) = self
            .merges
            .get_mut(&merge)
            .and_then(|m| m.edges.get_mut(&channel))
        else {
            return;
        };
        if edge.users.iter().all(|u| u != &me) || edge.users.iter().all(|u| u != &from) {
            return;
        }
        if state.version != edge.version + 1 {
            return;
        }
        let StatePayload::MsgE { balances, .. } = state.payload else {
            return;
        };
        // Capacity conservation is the double-spend guard.
        if balances[0] + balances[1] != edge.capacity {
            return;
        }
        if !state.signed_by(&from) || !state.signatures_valid(ctx.keys) {
            return;
        }
        let mut full = state.clone();
        let sig = ctx.keys.sign(&me, &full.message_bytes()).unwrap();
        full.add_signature(sig.clone());
        edge.balances = balances;
        edge.version = full.version;
        edge.states.push(full);
        self.send_msg(
            &from,
            PartyMsg::UpdateEAck {
                merge,
                channel,
                version: state.version,
                sig,
            },
        );
    }

    fn on_update_e_ack(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        channel: ChannelId,
        version: u64,
        sig: Signature,
    ) {
        let idx = self.pending.iter().position(|p| {
            matches!(p, Pending::UpdateEdge { merge: m, channel: c, state, .. }
                if m == &merge && c == &channel && state.version == version)
        });
        let Some(idx) = idx else {
            return;
        };
        let Pending::UpdateEdge { mut state, .. } = self.pending.remove(idx) else {
            unreachable!()
        };
        if !ctx.keys.verify(&from, &state.message_bytes(), &sig) {
            self.output(
                "not-updatedE",
                json!({"merge": merge.0, "channel": channel.0}),
            );
            return;
        }
        state.add_signature(sig);
        let StatePayload::MsgE { balances, .. } = state.payload else {
            return;
        };
        if let Some(edge) = self
            .merges
            .get_mut(&merge)
            .and_then(|m| m.edges.get_mut(&channel))
        {
            edge.balances = balances;
            edge.version = state.version;
            edge.states.push(state);
        }
        self.output(
            "updatedE",
            json!({"merge": merge.0, "channel": channel.0, "version": version}),
        );
    }

    fn on_update_m_req(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
    ) {
        if self.silent(ctx.round) {
            return;
        }
        let me = self.id.clone();
        let Some(view) = self.merges.get(&merge) else {
            return;
        };
        if from != view.hub || msg_m.version != view.version + 1 {
            return;
        }
        if !msg_m.signed_by(&view.hub) || !msg_m.signatures_valid(ctx.keys) {
            return;
        }
        let StatePayload::MsgM { capacities, .. } = &msg_m.payload else {
            return;
        };
        // The vector must cover the same edges and conserve the pool.
        let local = view.capacities();
        if capacities.len() != local.len()
            || capacities.iter().map(|(_, c)| *c).sum::<Amount>()
                != local.iter().map(|(_, c)| *c).sum::<Amount>()
        {
            return;
        }
        // Validate my own edge's next state.
        let Some(my_state) = edge_states.iter().find(|s| {
            matches!(&s.payload, StatePayload::MsgE { channel, .. }
                if view.edges.get(channel).map(|e| e.user() == &me).unwrap_or(false))
        }) else {
            return;
        };
        let StatePayload::MsgE {
            channel, balances, ..
        } = &my_state.payload
        else {
            return;
        };
        let edge = view.edges.get(channel).unwrap();
        let new_cap = capacities
            .iter()
            .find(|(c, _)| c == channel)
            .map(|(_, c)| *c)
            .unwrap_or(0);
        if my_state.version != edge.version + 1
            || balances[1] != edge.balances[1]
            || balances[0] + balances[1] != new_cap
            || !my_state.signed_by(&view.hub)
            || !my_state.signatures_valid(ctx.keys)
        {
            return;
        }
        let msg_m_sig = self.sign(ctx, &msg_m.message_bytes());
        let edge_sig = self.sign(ctx, &my_state.message_bytes());
        self.send_msg(
            &from,
            PartyMsg::UpdateMAck {
                merge,
                version: msg_m.version,
                msg_m_sig,
                edge_sig,
            },
        );
    }

    fn on_update_m_ack(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        version: u64,
        msg_m_sig: Signature,
        edge_sig: Signature,
    ) {
        let me = self.id.clone();
        for p in &mut self.pending {
            if let Pending::UpdateMergeCollect {
                merge: m,
                msg_m,
                edge_states,
                awaiting,
                ..
            } = p
            {
                if m != &merge || msg_m.version != version || !awaiting.contains(&from) {
                    continue;
                }
                if !ctx.keys.verify(&from, &msg_m.message_bytes(), &msg_m_sig) {
                    continue;
                }
                let Some(edge_state) = edge_states.iter_mut().find(|s| {
                    matches!(&s.payload, StatePayload::MsgE { channel, .. }
                        if self.merges.get(&merge).and_then(|v| v.edges.get(channel))
                            .map(|e| e.user() == &from).unwrap_or(false))
                }) else {
                    continue;
                };
                if !ctx
                    .keys
                    .verify(&from, &edge_state.message_bytes(), &edge_sig)
                {
                    continue;
                }
                msg_m.add_signature(msg_m_sig);
                edge_state.add_signature(edge_sig);
                awaiting.remove(&from);
                let _ = &me;
                return;
            }
        }
    }

    fn on_ab_proposal(
        &mut self,
        ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        msg_m: SignedState,
        edge_states: Vec<SignedState>,
    ) {
        if self.silent(ctx.round) {
            return;
        }
        let Some(view) = self.merges.get(&merge) else {
            return;
        };
        if from != view.hub {
            return;
        }
        let accept = if matches!(self.behavior, Behavior::RejectBroadcast) {
            false
        } else {
            msg_m.version == view.version + 1
                && msg_m.signed_by(&view.hub)
                && msg_m.signatures_valid(ctx.keys)
        };
        let voters: BTreeSet<PartyId> = view.users.clone();
        let mut votes = BTreeMap::new();
        votes.insert(self.id.clone(), accept);
        let vote = PartyMsg::AbVote {
            merge: merge.clone(),
            version: msg_m.version,
            accept,
        };
        let mut recipients: Vec<PartyId> = voters.iter().cloned().collect();
        recipients.push(view.hub.clone());
        for r in recipients {
            if r != self.id {
                self.send_msg(&r, vote.clone());
            }
        }
        self.pending.push(Pending::Broadcast {
            merge,
            version: msg_m.version,
            msg_m,
            edge_states,
            voters,
            votes,
            decide_round: ctx.round + 1,
        });
    }

    fn on_ab_vote(
        &mut self,
        _ctx: &Ctx,
        from: PartyId,
        merge: MergeId,
        version: u64,
        accept: bool,
    ) {
        for p in &mut self.pending {
            if let Pending::Broadcast {
                merge: m,
                version: v,
                voters,
                votes,
                ..
            } = p
            {
                if m == &merge && *v == version && voters.contains(&from) {
                    votes.entry(from).or_insert(accept);
                    return;
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Contract events
    // ------------------------------------------------------------------

    fn handle_event(&mut self, ctx: &Ctx, ev: EventKind) {
        match ev {
            EventKind::Opening { channel } => self.on_opening(ctx, channel),
            EventKind::Opened { channel } => {
                if let Some(view) = self.channels.get_mut(&channel) {
                    view.status = ChannelStatus::Open;
                }
                self.output("opened", json!({"channel": channel.0}));
            }
            EventKind::NotOpened { channel, .. } => {
                self.channels.remove(&channel);
                self.output("not-opened", json!({"channel": channel.0}));
            }
            EventKind::Merged { merge, capacities } => self.on_merged(ctx, merge, capacities),
            EventKind::NotMerged { merge, reason } => {
                self.merges.remove(&merge);
                self.pending.retain(|p| {
                    !matches!(p, Pending::OpenMergeCollect { proposal, .. } if proposal.id == merge)
                });
                self.output("not-merged", json!({"merge": merge.0, "reason": reason}));
            }
            EventKind::ClosingM { merge, channel } => self.on_closing_m(ctx, merge, channel),
            EventKind::CloseMCheck { merge, version, .. } => {
                self.on_close_m_check(ctx, merge, version)
            }
            EventKind::ClosedM {
                merge,
                channel,
                returned,
                version,
                capacities,
            } => self.on_closed_m(ctx, merge, channel, returned, version, capacities),
            EventKind::ClosingC { channel } => self.on_closing_c(ctx, channel),
            EventKind::ClosedC { channel, payout } => {
                if let Some(view) = self.channels.get_mut(&channel) {
                    view.status = ChannelStatus::Closed;
                }
                self.pending.retain(|p| {
                    !matches!(p, Pending::CloseChannelAfterMerges { channel: c, .. } if c == &channel)
                });
                self.output("closedC", json!({"channel": channel.0, "payout": payout}));
            }
        }
    }

    fn on_opening(&mut self, ctx: &Ctx, channel: Channel) {
        let id = channel.id.clone();
        self.channels
            .entry(id.clone())
            .or_insert_with(|| ChannelView::from_descriptor(&channel));
        if self.silent(ctx.round) {
            return;
        }
        self.call(
            Endpoint::ChannelContract(id),
            ContractCall::Open { channel },
        );
    }

    fn on_merged(&mut self, ctx: &Ctx, merge: MergeId, capacities: Vec<(ChannelId, Amount)>) {
        let Some(view) = self.merges.get(&merge) else {
            return;
        };
        let hub = view.hub.clone();
        // Fold the contract's debit into the channel adjustments.
        for (chan_id, cap) in &capacities {
            if let Some(cv) = self.channels.get_mut(chan_id) {
                if let Some(hub_side) = cv.side_of(&hub) {
                    cv.adjust[hub_side] -= *cap as i64;
                    cv.merges.insert(merge.clone());
                }
            }
        }
        self.pending.retain(
            |p| !matches!(p, Pending::OpenMergeCollect { proposal, .. } if proposal.id == merge),
        );
        self.output("merged", json!({"merge": merge.0}));
        // Replay behavior: re-send the original stamped proposal.
        if matches!(self.behavior, Behavior::ReplayMerge) && self.id == hub {
            if let Some((proposal, t, sig)) = self.last_merge.clone() {
                for user in proposal.users.clone() {
                    self.send_msg(
                        &user,
                        PartyMsg::MergeReq {
                            proposal: proposal.clone(),
                            t,
                            sig: sig.clone(),
                        },
                    );
                }
            }
        }
        let _ = ctx;
    }

    fn on_closing_m(&mut self, ctx: &Ctx, merge: MergeId, channel: ChannelId) {
        if self.silent(ctx.round) {
            return;
        }
        if self
            .merges
            .get(&merge)
            .and_then(|m| m.edges.get(&channel))
            .is_none()
        {
            return;
        }
        let (msg_m, msg_e) = self.close_merge_states(&merge, &channel);
        self.call(
            Endpoint::MergeContract(merge.clone()),
            ContractCall::CloseM {
                merge,
                channel,
                msg_m,
                msg_e,
            },
        );
    }

    fn on_close_m_check(&mut self, ctx: &Ctx, merge: MergeId, version: u64) {
        if self.silent(ctx.round) {
            return;
        }
        let Some(view) = self.merges.get(&merge) else {
            return;
        };
        if view.version <= version {
            return;
        }
        let Some(state) = view.states.last().cloned() else {
            return;
        };
        self.call(
            Endpoint::MergeContract(merge.clone()),
            ContractCall::CloseMChallenge {
                merge,
                msg_m: state,
            },
        );
    }

    fn on_closed_m(
        &mut self,
        ctx: &Ctx,
        merge: MergeId,
        channel: ChannelId,
        returned: [Amount; 2],
        version: u64,
        capacities: Vec<(ChannelId, Amount)>,
    ) {
        let _ = ctx;
        let hub = self.merges.get(&merge).map(|m| m.hub.clone());
        let mut member = false;
        let mut drop_view = false;
        if let Some(view) = self.merges.get_mut(&merge) {
            member = true;
            if let Some(edge) = view.edges.remove(&channel) {
                let user = edge.user().clone();
                view.users.remove(&user);
                if user == self.id {
                    drop_view = true;
                }
            }
            view.version = view.version.max(version);
            for (chan, cap) in &capacities {
                if let Some(e) = view.edges.get_mut(chan) {
                    e.capacity = *cap;
                }
            }
            if view.edges.is_empty() {
                drop_view = true;
            }
        }
        if drop_view {
            self.merges.remove(&merge);
        }
        // Credit the underlying channel if it is mine; `returned` is in edge
        // order [hub, user].
        if let Some(cv) = self.channels.get_mut(&channel) {
            if cv.merges.remove(&merge) {
                if let Some(side) = hub.as_ref().and_then(|h| cv.side_of(h)) {
                    cv.adjust[side] += returned[0] as i64;
                    cv.adjust[1 - side] += returned[1] as i64;
                }
            }
        }
        if member {
            self.pending.retain(|p| {
                !matches!(p, Pending::CloseMergeCaller { merge: m, channel: c, .. } if m == &merge && c == &channel)
            });
            // Progress a channel close waiting on this merge — only if it was
            // this channel's own edge that settled.
            let mut ready = Vec::new();
            for p in &mut self.pending {
                if let Pending::CloseChannelAfterMerges {
                    channel: ch,
                    awaiting,
                } = p
                {
                    if *ch == channel {
                        awaiting.remove(&merge);
                        if awaiting.is_empty() {
                            ready.push(ch.clone());
                        }
                    }
                }
            }
            self.pending.retain(|p| {
                !matches!(p, Pending::CloseChannelAfterMerges { awaiting, .. } if awaiting.is_empty())
            });
            for ch in ready {
                self.submit_close_c(&ch);
            }
            self.output(
                "closedM",
                json!({"merge": merge.0, "channel": channel.0, "returned": returned}),
            );
        }
    }

    fn on_closing_c(&mut self, ctx: &Ctx, channel: ChannelId) {
        if self.silent(ctx.round) {
            return;
        }
        let Some(view) = self.channels.get(&channel) else {
            return;
        };
        let merges = view.merges.clone();
        if merges.is_empty() {
            self.submit_close_c(&channel);
        } else {
            for merge in merges.iter() {
                self.cmd_close_merge(ctx, merge.clone(), channel.clone());
            }
            self.pending.push(Pending::CloseChannelAfterMerges {
                channel,
                awaiting: merges,
            });
        }
    }

    // ------------------------------------------------------------------
    // Deadlines
    // ------------------------------------------------------------------

    fn expire_pending(&mut self, ctx: &Ctx) {
        let mut keep = Vec::new();
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            match p {
                Pending::UpdateChannel {
                    channel, deadline, ..
                } if ctx.round >= deadline => {
                    self.output(
                        "not-updatedC",
                        json!({"channel": channel.0, "reason": "no response"}),
                    );
                }
                Pending::UpdateEdge {
                    merge,
                    channel,
                    deadline,
                    ..
                } if ctx.round >= deadline => {
                    self.output(
                        "not-updatedE",
                        json!({"merge": merge.0, "channel": channel.0, "reason": "no response"}),
                    );
                }
                Pending::OpenMergeCollect {
                    proposal,
                    t,
                    sigs,
                    deadline,
                } if ctx.round >= deadline => {
                    if sigs.len() == proposal.users.len() + 1 {
                        self.merges
                            .entry(proposal.id.clone())
                            .or_insert_with(|| MergeView::from_proposal(&proposal));
                        let hub_sig = sigs[0].clone();
                        self.last_merge = Some((proposal.clone(), t, hub_sig));
                        self.call(
                            Endpoint::MergeContract(proposal.id.clone()),
                            ContractCall::OpenMerge { proposal, t, sigs },
                        );
                    } else {
                        self.output(
                            "not-merged",
                            json!({"merge": proposal.id.0, "reason": "missing consent"}),
                        );
                    }
                }
                Pending::UpdateMergeCollect {
                    merge,
                    msg_m,
                    edge_states,
                    awaiting,
                    deadline,
                } if ctx.round >= deadline => {
                    if awaiting.is_empty() {
                        let voters: BTreeSet<PartyId> = self
                            .merges
                            .get(&merge)
                            .map(|v| v.users.clone())
                            .unwrap_or_default();
                        for user in &voters {
                            self.send_msg(
                                user,
                                PartyMsg::AbProposal {
                                    merge: merge.clone(),
                                    msg_m: msg_m.clone(),
                                    edge_states: edge_states.clone(),
                                },
                            );
                        }
                        keep.push(Pending::Broadcast {
                            merge,
                            version: msg_m.version,
                            msg_m,
                            edge_states,
                            voters,
                            votes: BTreeMap::new(),
                            decide_round: ctx.round + 2,
                        });
                    } else {
                        self.output(
                            "not-updatedM",
                            json!({"merge": merge.0, "reason": "edge users did not consent"}),
                        );
                    }
                }
                Pending::Broadcast {
                    merge,
                    version,
                    msg_m,
                    edge_states,
                    voters,
                    votes,
                    decide_round,
                } if ctx.round >= decide_round => {
                    if broadcast_succeeds(&voters, &votes) {
                        self.apply_merge_update(&merge, &msg_m, &edge_states);
                        self.output("updatedM", json!({"merge": merge.0, "version": version}));
                    } else {
                        self.output("not-updatedM", json!({"merge": merge.0, "version": version, "reason": "broadcast failed"}));
                    }
                }
                Pending::CloseMergeCaller {
                    merge,
                    channel,
                    timeout_round,
                    sent_timeout,
                } if ctx.round >= timeout_round && !sent_timeout => {
                    if !self.silent(ctx.round) {
                        self.call(
                            Endpoint::MergeContract(merge.clone()),
                            ContractCall::CloseMTimeout {
                                merge: merge.clone(),
                            },
                        );
                    }
                    keep.push(Pending::CloseMergeCaller {
                        merge,
                        channel,
                        timeout_round,
                        sent_timeout: true,
                    });
                }
                other => keep.push(other),
            }
        }
        self.pending.extend(keep);
    }

    fn apply_merge_update(
        &mut self,
        merge: &MergeId,
        msg_m: &SignedState,
        edge_states: &[SignedState],
    ) {
        let me = self.id.clone();
        let Some(view) = self.merges.get_mut(merge) else {
            return;
        };
        view.version = msg_m.version;
        if let StatePayload::MsgM { capacities, .. } = &msg_m.payload {
            for (chan, cap) in capacities {
                if let Some(e) = view.edges.get_mut(chan) {
                    e.capacity = *cap;
                }
            }
        }
        view.states.push(msg_m.clone());
        for st in edge_states {
            let StatePayload::MsgE {
                channel, balances, ..
            } = &st.payload
            else {
                continue;
            };
            if let Some(e) = view.edges.get_mut(channel) {
                // Everyone tracks capacities; balances and edge versions are
                // authoritative for the edge's own parties (hub, P, Q).
                e.version = st.version;
                if e.users.contains(&me) || view.hub == me {
                    e.balances = *balances;
                    e.states.push(st.clone());
                }
            }
        }
    }

    /// Retained co-signed states give stale-behavior parties something to
    /// submit; everyone else only ever uses the latest.
    pub fn channel_view(&self, id: &ChannelId) -> Option<&ChannelView> {
        self.channels.get(id)
    }

    pub fn merge_view(&self, id: &MergeId) -> Option<&MergeView> {
        self.merges.get(id)
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }
}

/// Unanimous echo-vote verdict: succeeds iff every listed voter voted accept.
/// Vacuously true with no voters.
pub fn broadcast_succeeds(voters: &BTreeSet<PartyId>, votes: &BTreeMap<PartyId, bool>) -> bool {
    voters.iter().all(|v| votes.get(v).copied() == Some(true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_requires_unanimity() {
        let voters: BTreeSet<PartyId> = ["A", "B"].iter().map(|p| PartyId::from(*p)).collect();
        let mut votes = BTreeMap::new();
        votes.insert(PartyId::from("A"), true);
        assert!(!broadcast_succeeds(&voters, &votes), "missing vote fails");
        votes.insert(PartyId::from("B"), false);
        assert!(!broadcast_succeeds(&voters, &votes), "reject fails");
        let mut votes = BTreeMap::new();
        votes.insert(PartyId::from("A"), true);
        votes.insert(PartyId::from("B"), true);
        assert!(broadcast_succeeds(&voters, &votes));
    }

    #[test]
    fn broadcast_vacuous_success_with_no_voters() {
        assert!(broadcast_succeeds(&BTreeSet::new(), &BTreeMap::new()));
    }
}
