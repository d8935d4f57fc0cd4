use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use crate::contracts::{ChannelContract, ContractClock, ContractEvent, MergeContract};
use crate::core::{Amount, ChannelId, KeyStore, LedgerState, MergeId, PartyId, Round};

use super::message::{ContractCall, Endpoint, Envelope, Payload};
use super::party::{Command, Ctx, Party};
use super::scenario::Scenario;

/// One record of the JSON-lines trace log.
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub round: Round,
    pub source: String,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Value>,
}

#[derive(Debug, Default)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    fn push(
        &mut self,
        round: Round,
        source: String,
        event: impl Into<String>,
        data: Option<serde_json::Value>,
    ) {
        self.records.push(LogRecord {
            round,
            source,
            event: event.into(),
            data,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    /// First round at which `party` reported `event` mentioning `key`.
    pub fn output_round(&self, party: &str, event: &str, key: &str, id: &str) -> Option<Round> {
        self.records.iter().find_map(|r| {
            if r.source == format!("party:{party}") && r.event == event {
                let matches = r
                    .data
                    .as_ref()
                    .and_then(|d| d.get(key))
                    .and_then(|v| v.as_str())
                    == Some(id);
                if matches {
                    return Some(r.round);
                }
            }
            None
        })
    }

    /// First round at which `party` was handed a command of kind `op`
    /// mentioning `key`.
    pub fn command_round(&self, party: &str, op: &str, key: &str, id: &str) -> Option<Round> {
        self.records.iter().find_map(|r| {
            if r.source == format!("party:{party}") && r.event == "command" {
                let d = r.data.as_ref()?;
                if d.get("op").and_then(|v| v.as_str()) == Some(op)
                    && d.get("args")
                        .and_then(|a| a.get(key))
                        .and_then(|v| v.as_str())
                        == Some(id)
                {
                    return Some(r.round);
                }
            }
            None
        })
    }
}

/// The synchronous round-based execution: ledger, parties, contracts, and the
/// message bus, advanced one deterministic round at a time.
pub struct World {
    pub round: Round,
    pub delta: u64,
    pub ledger: LedgerState,
    pub keys: KeyStore,
    pub parties: BTreeMap<PartyId, Party>,
    pub channels: BTreeMap<ChannelId, ChannelContract>,
    pub merges: BTreeMap<MergeId, MergeContract>,
    queue: BTreeMap<Round, Vec<Envelope>>,
    seq: u64,
    schedule: BTreeMap<Round, Vec<(PartyId, Command)>>,
    pub log: EventLog,
    pub violations: Vec<String>,
    expected_total: Amount,
    horizon: Round,
}

impl World {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, super::scenario::ScenarioError> {
        scenario.validate()?;
        let party_ids: Vec<PartyId> = scenario
            .parties
            .iter()
            .map(|p| PartyId::new(p.clone()))
            .collect();
        let keys = KeyStore::with_seed(party_ids.iter(), scenario.seed);
        let ledger = LedgerState::new(
            scenario
                .funding
                .iter()
                .map(|(p, a)| (PartyId::new(p.clone()), *a))
                .collect(),
        );
        let mut parties = BTreeMap::new();
        for id in &party_ids {
            let behavior = scenario
                .adversary
                .get(id.as_str())
                .cloned()
                .unwrap_or_default();
            parties.insert(id.clone(), Party::new(id.clone(), behavior));
        }
        let mut schedule: BTreeMap<Round, Vec<(PartyId, Command)>> = BTreeMap::new();
        let mut last_round = 0;
        for entry in &scenario.schedule {
            last_round = last_round.max(entry.round);
            schedule
                .entry(entry.round)
                .or_default()
                .push((PartyId::new(entry.party.clone()), entry.op.clone()));
        }
        let expected_total = ledger.total();
        let horizon = scenario
            .max_rounds
            .unwrap_or(last_round + 8 * scenario.delta + 16);
        Ok(World {
            round: 0,
            delta: scenario.delta,
            ledger,
            keys,
            parties,
            channels: BTreeMap::new(),
            merges: BTreeMap::new(),
            queue: BTreeMap::new(),
            seq: 0,
            schedule,
            log: EventLog::default(),
            violations: Vec::new(),
            expected_total,
            horizon,
        })
    }

    pub fn horizon(&self) -> Round {
        self.horizon
    }

    /// Total coins across the ledger and everything held by live contracts.
    pub fn total_coins(&self) -> Amount {
        self.ledger.total()
            + self.channels.values().map(|c| c.held()).sum::<Amount>()
            + self.merges.values().map(|m| m.held()).sum::<Amount>()
    }

    fn clock(&self) -> ContractClock {
        ContractClock {
            delta: self.delta,
            round: self.round,
        }
    }

    /// Advances one round: deliver due messages (sorted by sender, recipient,
    /// sequence), tick contract deadlines, route contract events, step every
    /// party, then audit conservation.
    pub fn run_round(&mut self) {
        let round = self.round;
        self.log.push(round, "world".into(), "tick", None);

        // Environment commands scheduled for this round.
        if let Some(cmds) = self.schedule.remove(&round) {
            for (party, cmd) in cmds {
                self.log.push(
                    round,
                    format!("party:{party}"),
                    "command",
                    Some(serde_json::to_value(&cmd).expect("commands serialize")),
                );
                if let Some(p) = self.parties.get_mut(&party) {
                    p.cmd_inbox.push(cmd);
                }
            }
        }

        // Message delivery.
        let mut due = self.queue.remove(&round).unwrap_or_default();
        due.sort_by(|a, b| (&a.from, &a.to, a.seq).cmp(&(&b.from, &b.to, b.seq)));
        let mut events: Vec<ContractEvent> = Vec::new();
        for env in due {
            match env.payload {
                Payload::PartyMsg(msg) => {
                    let Endpoint::Party(to) = &env.to else {
                        continue;
                    };
                    let Endpoint::Party(from) = &env.from else {
                        continue;
                    };
                    self.log.push(
                        round,
                        format!("party:{from}"),
                        "deliver",
                        Some(json!({"to": to.as_str(), "msg": msg.name()})),
                    );
                    if let Some(p) = self.parties.get_mut(to) {
                        p.msg_inbox.push((from.clone(), msg));
                    }
                }
                Payload::Call(call) => {
                    let Endpoint::Party(from) = env.from.clone() else {
                        continue;
                    };
                    self.log.push(
                        round,
                        format!("party:{from}"),
                        "call",
                        Some(json!({"to": env.to.to_string(), "call": call.name()})),
                    );
                    events.extend(self.apply_call(&from, call));
                }
            }
        }

        // Contract deadline processing.
        let clock = self.clock();
        let channel_ids: Vec<ChannelId> = self.channels.keys().cloned().collect();
        for id in channel_ids {
            let mut c = self.channels.remove(&id).unwrap();
            events.extend(c.tick(&clock, &mut self.ledger));
            self.channels.insert(id, c);
        }
        let merge_ids: Vec<MergeId> = self.merges.keys().cloned().collect();
        for id in merge_ids {
            let mut m = self.merges.remove(&id).unwrap();
            events.extend(m.tick(&clock, &mut self.channels, &mut self.ledger));
            self.merges.insert(id, m);
        }

        // Route contract events (visible to parties this round).
        for ev in events {
            self.log.push(
                round,
                ev.contract.clone(),
                ev.kind.name(),
                Some(serde_json::to_value(&ev.kind).expect("events serialize")),
            );
            for recipient in &ev.recipients {
                if let Some(p) = self.parties.get_mut(recipient) {
                    p.event_inbox.push(ev.kind.clone());
                }
            }
        }

        // Party steps.
        let ctx = Ctx {
            round,
            delta: self.delta,
            keys: &self.keys,
        };
        let ids: Vec<PartyId> = self.parties.keys().cloned().collect();
        let mut sends: Vec<(PartyId, Endpoint, Payload)> = Vec::new();
        for id in &ids {
            let party = self.parties.get_mut(id).unwrap();
            let (outbox, outputs) = party.step(&ctx);
            for out in outputs {
                self.log
                    .push(round, format!("party:{id}"), out.name, Some(out.data));
            }
            for (to, payload) in outbox {
                sends.push((id.clone(), to, payload));
            }
        }
        for (from, to, payload) in sends {
            self.enqueue(from, to, payload);
        }

        // Conservation audit after every transition.
        let total = self.total_coins();
        if total != self.expected_total {
            let msg = format!(
                "conservation violated at round {round}: total {total} != expected {}",
                self.expected_total
            );
            self.log.push(
                round,
                "auditor".into(),
                "violation",
                Some(json!({ "detail": msg })),
            );
            self.violations.push(msg);
        }

        self.round += 1;
    }

    fn enqueue(&mut self, from: PartyId, to: Endpoint, payload: Payload) {
        let deliver = match payload {
            Payload::PartyMsg(_) => self.round + 1,
            Payload::Call(_) => self.round + self.delta,
        };
        self.seq += 1;
        self.queue.entry(deliver).or_default().push(Envelope {
            send_round: self.round,
            deliver_round: deliver,
            seq: self.seq,
            from: Endpoint::Party(from),
            to,
            payload,
        });
    }

    fn apply_call(&mut self, from: &PartyId, call: ContractCall) -> Vec<ContractEvent> {
        let clock = self.clock();
        match call {
            ContractCall::Open { channel } => {
                let id = channel.id.clone();
                if let Some(existing) = self.channels.get_mut(&id) {
                    return existing.confirm_open(from, &clock, &mut self.ledger);
                }
                match ChannelContract::open(channel, from, &clock, &mut self.ledger) {
                    Ok((contract, events)) => {
                        self.channels.insert(id, contract);
                        events
                    }
                    Err(err) => vec![ContractEvent {
                        contract: format!("chan:{id}"),
                        recipients: vec![from.clone()],
                        kind: crate::contracts::EventKind::NotOpened {
                            channel: id.clone(),
                            reason: err.to_string(),
                        },
                    }],
                }
            }
            ContractCall::CloseC { channel, state } => match self.channels.get_mut(&channel) {
                Some(c) => c.close(from, state, &clock, &self.keys, &mut self.ledger),
                None => Vec::new(),
            },
            ContractCall::OpenMerge { proposal, t, sigs } => {
                let id = proposal.id.clone();
                if self.merges.contains_key(&id) {
                    return Vec::new();
                }
                match MergeContract::open(
                    proposal,
                    t,
                    &sigs,
                    &clock,
                    &mut self.channels,
                    &self.keys,
                ) {
                    Ok((contract, events)) => {
                        self.merges.insert(id, contract);
                        events
                    }
                    Err(events) => events,
                }
            }
            ContractCall::CloseM {
                merge,
                channel,
                msg_m,
                msg_e,
            } => match self.merges.get_mut(&merge) {
                Some(m) => m.close_edge(from, &channel, msg_m, msg_e, &clock, &self.keys),
                None => Vec::new(),
            },
            ContractCall::CloseMTimeout { merge } => match self.merges.get_mut(&merge) {
                Some(m) => m.close_timeout(from, &clock),
                None => Vec::new(),
            },
            ContractCall::CloseMChallenge { merge, msg_m } => match self.merges.get_mut(&merge) {
                Some(m) => m.challenge(from, &msg_m, &clock, &self.keys),
                None => Vec::new(),
            },
        }
    }

    /// Runs the scenario to its horizon.
    pub fn run(&mut self) {
        while self.round < self.horizon {
            self.run_round();
        }
    }

    /// Runs until a given round (exclusive).
    pub fn run_until(&mut self, round: Round) {
        while self.round < round {
            self.run_round();
        }
    }

    pub fn party(&self, id: &str) -> &Party {
        &self.parties[&PartyId::from(id)]
    }

    /// Final-state summary used by the trace CLI.
    pub fn summary(&self) -> serde_json::Value {
        let ledger: BTreeMap<String, Amount> = self
            .ledger
            .iter()
            .map(|(p, a)| (p.to_string(), *a))
            .collect();
        let channels: BTreeMap<String, serde_json::Value> = self
            .channels
            .iter()
            .map(|(id, c)| {
                (
                    id.to_string(),
                    json!({
                        "users": c.users().iter().map(|u| u.to_string()).collect::<Vec<_>>(),
                        "status": format!("{:?}", c.status()).to_lowercase(),
                        "funding": c.funding(),
                        "adjust": c.adjustments(),
                        "held": c.held(),
                    }),
                )
            })
            .collect();
        let merges: BTreeMap<String, serde_json::Value> = self
            .merges
            .iter()
            .map(|(id, m)| {
                (
                    id.to_string(),
                    json!({
                        "hub": m.record.hub.to_string(),
                        "status": format!("{:?}", m.record.status).to_lowercase(),
                        "version": m.record.version,
                        "capacities": m.record.capacities(),
                        "pooled": m.record.pooled_capacity(),
                        "held": m.held(),
                    }),
                )
            })
            .collect();
        json!({
            "round": self.round,
            "ledger": ledger,
            "channels": channels,
            "merges": merges,
            "total_coins": self.total_coins(),
            "violations": self.violations,
        })
    }
}
