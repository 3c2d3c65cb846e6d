//! Append-only event log, its line-oriented serialization, and table
//! projections reconstructed purely from events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::behavior::AnswerDecision;
use crate::error::TraceError;
use crate::model::{AgentId, FieldId, Message, MessageId, MessageKind, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// An agent enters the system. `agents = [agent]`.
    Join,
    /// `agents = [sender, recipient]`.
    Send,
    /// `agents = [sender, recipient]`.
    Deliver,
    /// `agents = [responder, querier]`.
    Decline,
    /// `agents = [querier, silent recipient]`.
    Timeout,
    /// `agents = [owner, winner]`.
    FusionResolved,
    /// `agents = [owner, credited agent]`.
    TableUpdate,
    /// `agents = [agent]`.
    ModeSwitch,
    /// CHECK IN verdict. `agents = [responder, newcomer]`.
    Admit,
    /// Ω narrowed its routing to a single peer. `agents = [querier, peer]`.
    HolonHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclineReason {
    LowerQuality,
    NoBudget,
    Lottery,
}

impl DeclineReason {
    pub fn from_decision(d: &AnswerDecision) -> Option<Self> {
        match d {
            AnswerDecision::Answer(_) => None,
            AnswerDecision::DeclineLowerQuality => Some(DeclineReason::LowerQuality),
            AnswerDecision::DeclineNoBudget => Some(DeclineReason::NoBudget),
            AnswerDecision::DeclineLottery => Some(DeclineReason::Lottery),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kind: Option<MessageKind>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parent: Option<MessageId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub round: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deliver_at: Option<Tick>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<DeclineReason>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accepted: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub late: Option<bool>,
}

/// One trace record. Serialized key order is fixed by field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    pub event: EventKind,
    pub agents: Vec<AgentId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<FieldId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub msg: Option<MessageId>,
    pub detail: Detail,
}

impl Event {
    fn base(tick: Tick, event: EventKind, agents: Vec<AgentId>) -> Self {
        Event {
            tick,
            event,
            agents,
            field: None,
            msg: None,
            detail: Detail::default(),
        }
    }

    /// `budget = None` marks an agent with unlimited messages.
    pub fn join(tick: Tick, agent: &AgentId, budget: Option<u64>) -> Self {
        let mut e = Event::base(tick, EventKind::Join, vec![agent.clone()]);
        e.detail.budget = budget;
        e
    }

    pub fn send(msg: &Message, deliver_at: Tick, round: Option<u64>) -> Self {
        let mut e = Event::base(
            msg.sent_at,
            EventKind::Send,
            vec![msg.sender.clone(), msg.recipient.clone()],
        );
        e.field = Some(msg.field.clone());
        e.msg = Some(msg.id);
        e.detail.kind = Some(msg.kind);
        e.detail.parent = msg.parent;
        e.detail.round = round;
        e.detail.deliver_at = Some(deliver_at);
        e.detail.error = msg.payload_error;
        e
    }

    pub fn deliver(tick: Tick, msg: &Message, late: bool) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::Deliver,
            vec![msg.sender.clone(), msg.recipient.clone()],
        );
        e.field = Some(msg.field.clone());
        e.msg = Some(msg.id);
        e.detail.kind = Some(msg.kind);
        if late {
            e.detail.late = Some(true);
        }
        e
    }

    pub fn decline(tick: Tick, query: &Message, reason: DeclineReason) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::Decline,
            vec![query.recipient.clone(), query.sender.clone()],
        );
        e.field = Some(query.field.clone());
        e.msg = Some(query.id);
        e.detail.reason = Some(reason);
        e
    }

    pub fn timeout(
        tick: Tick,
        querier: &AgentId,
        recipient: &AgentId,
        field: &FieldId,
        round: u64,
    ) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::Timeout,
            vec![querier.clone(), recipient.clone()],
        );
        e.field = Some(field.clone());
        e.detail.round = Some(round);
        e
    }

    pub fn fusion(
        tick: Tick,
        owner: &AgentId,
        winner: &AgentId,
        field: &FieldId,
        round: u64,
        error: f64,
    ) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::FusionResolved,
            vec![owner.clone(), winner.clone()],
        );
        e.field = Some(field.clone());
        e.detail.round = Some(round);
        e.detail.error = Some(error);
        e
    }

    pub fn table_update(
        tick: Tick,
        owner: &AgentId,
        agent: &AgentId,
        field: &FieldId,
        count: u64,
    ) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::TableUpdate,
            vec![owner.clone(), agent.clone()],
        );
        e.field = Some(field.clone());
        e.detail.count = Some(count);
        e
    }

    pub fn mode_switch(tick: Tick, agent: &AgentId) -> Self {
        Event::base(tick, EventKind::ModeSwitch, vec![agent.clone()])
    }

    pub fn admit(tick: Tick, responder: &AgentId, newcomer: &AgentId, accepted: bool) -> Self {
        let mut e = Event::base(
            tick,
            EventKind::Admit,
            vec![responder.clone(), newcomer.clone()],
        );
        e.detail.accepted = Some(accepted);
        e
    }

    pub fn holon_hint(tick: Tick, querier: &AgentId, head: &AgentId) -> Self {
        Event::base(
            tick,
            EventKind::HolonHint,
            vec![querier.clone(), head.clone()],
        )
    }

    pub fn first(&self) -> &AgentId {
        &self.agents[0]
    }

    pub fn second(&self) -> Option<&AgentId> {
        self.agents.get(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    events: Vec<Event>,
}

impl EventTrace {
    pub fn new() -> Self {
        EventTrace::default()
    }

    /// Appends an event. Ticks must be non-decreasing.
    pub fn push(&mut self, event: Event) {
        if let Some(last) = self.events.last() {
            assert!(
                event.tick >= last.tick,
                "trace tick went backwards: {} after {}",
                event.tick,
                last.tick
            );
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_tick(&self) -> Tick {
        self.events.last().map(|e| e.tick).unwrap_or(0)
    }

    /// Events with tick <= `t`.
    pub fn prefix(&self, t: Tick) -> &[Event] {
        let end = self.events.partition_point(|e| e.tick <= t);
        &self.events[..end]
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut trace = EventTrace::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(line).map_err(|err| TraceError::Parse {
                line: i + 1,
                reason: err.to_string(),
            })?;
            if e.agents.is_empty() {
                return Err(TraceError::Parse {
                    line: i + 1,
                    reason: "event without agents".into(),
                });
            }
            if e.tick < trace.last_tick() {
                return Err(TraceError::Parse {
                    line: i + 1,
                    reason: "tick went backwards".into(),
                });
            }
            trace.events.push(e);
        }
        Ok(trace)
    }
}

/// BEST-0, BEST and REMAINING-MESSAGES at the end of a tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableSnapshot {
    /// Ω's counts for the whole message, per peer.
    pub best0: BTreeMap<AgentId, u64>,
    /// Per owner: (field, agent) -> count.
    pub best: BTreeMap<AgentId, BTreeMap<(FieldId, AgentId), u64>>,
    /// Peers only; agents with unlimited messages are omitted.
    pub remaining: BTreeMap<AgentId, u64>,
}

impl TableSnapshot {
    pub fn best_cell(&self, owner: &AgentId, field: &FieldId, agent: &AgentId) -> u64 {
        self.best
            .get(owner)
            .and_then(|t| t.get(&(field.clone(), agent.clone())))
            .copied()
            .unwrap_or(0)
    }
}

/// Reconstructs all tables at the end of tick `t` from the trace prefix.
pub fn project_tables(trace: &EventTrace, t: Tick) -> TableSnapshot {
    let mut snap = TableSnapshot::default();
    for e in trace.prefix(t) {
        match e.event {
            EventKind::Join => {
                let agent = e.first().clone();
                if !agent.is_omega() {
                    snap.best0.entry(agent.clone()).or_insert(0);
                }
                if let Some(b) = e.detail.budget {
                    snap.remaining.insert(agent, b);
                }
            }
            EventKind::Send => {
                if let Some(r) = snap.remaining.get_mut(e.first()) {
                    *r = r.saturating_sub(1);
                }
            }
            EventKind::TableUpdate => {
                let owner = e.first().clone();
                let agent = e.second().cloned().unwrap_or_else(|| owner.clone());
                let field = e.field.clone().unwrap_or_else(FieldId::message);
                let count = e.detail.count.unwrap_or(0);
                if owner.is_omega() {
                    if field.is_message() {
                        snap.best0.insert(agent, count);
                    }
                } else {
                    snap.best
                        .entry(owner)
                        .or_default()
                        .insert((field, agent), count);
                }
            }
            _ => {}
        }
    }
    snap
}

/// Peers in the order they joined.
pub fn peers_of(trace: &EventTrace) -> Vec<AgentId> {
    let mut out = Vec::new();
    for e in trace.events() {
        if e.event == EventKind::Join && !e.first().is_omega() && !out.contains(e.first()) {
            out.push(e.first().clone());
        }
    }
    out
}

fn table_csv(
    trace: &EventTrace,
    from: Tick,
    to: Tick,
    pick: impl Fn(&TableSnapshot, &AgentId) -> u64,
) -> String {
    let peers = peers_of(trace);
    let mut out = String::from("t");
    for p in &peers {
        out.push(',');
        out.push_str(p.as_str());
    }
    out.push('\n');
    for t in from..=to {
        let snap = project_tables(trace, t);
        out.push_str(&t.to_string());
        for p in &peers {
            out.push(',');
            out.push_str(&pick(&snap, p).to_string());
        }
        out.push('\n');
    }
    out
}

/// One row per tick: Ω's count for each peer.
pub fn best0_csv(trace: &EventTrace, from: Tick, to: Tick) -> String {
    table_csv(trace, from, to, |s, p| s.best0.get(p).copied().unwrap_or(0))
}

/// One row per tick: messages left for each peer.
pub fn remaining_csv(trace: &EventTrace, from: Tick, to: Tick) -> String {
    table_csv(trace, from, to, |s, p| {
        s.remaining.get(p).copied().unwrap_or(0)
    })
}

/// Final non-zero peer BEST cells with the tick each first reached its
/// final count.
pub fn best_csv(trace: &EventTrace) -> String {
    let mut since: BTreeMap<(AgentId, FieldId, AgentId), (u64, Tick)> = BTreeMap::new();
    for e in trace.events() {
        if e.event != EventKind::TableUpdate || e.first().is_omega() {
            continue;
        }
        let (Some(agent), Some(field), Some(count)) = (e.second(), &e.field, e.detail.count) else {
            continue;
        };
        since.insert(
            (e.first().clone(), field.clone(), agent.clone()),
            (count, e.tick),
        );
    }
    let mut out = String::from("owner,field,agent,count,since\n");
    for ((owner, field, agent), (count, t)) in since {
        out.push_str(&format!("{owner},{field},{agent},{count},{t}\n"));
    }
    out
}
