//! Discrete-time simulation loop.
//!
//! Each tick runs three phases in a fixed order: deliveries (by message id),
//! timeout checks (by agent id), then decisions (by agent id). All random
//! draws come from one seeded stream, so a (config, scenario) pair always
//! produces the same trace.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{
    check_mode_switch, decide_answer, decide_query, fuse_responses, handle_checkin,
    select_recipients, AnswerDecision, CheckInVerdict, Winner,
};
use crate::error::EngineError;
use crate::model::{
    AgentId, AgentProfile, AgentState, DelayDist, FieldId, FieldSchema, InboundQuery, Message,
    MessageId, MessageKind, Phase, Round, SimConfig, Tick,
};
use crate::scenario::{OmegaQuery, QueryRef, Scenario, ScriptAction};
use crate::trace::{DeclineReason, Event, EventTrace, TableSnapshot};

pub use crate::trace::project_tables;

/// Pinned delays keyed by (sender, 1-based send ordinal).
pub type DelaySchedule = BTreeMap<(AgentId, u64), u64>;

#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub msg: Message,
    pub deliver_at: Tick,
}

/// Transit time of one message. Always at least one tick.
pub fn draw_delay<R: Rng + ?Sized>(
    rng: &mut R,
    dist: &DelayDist,
    schedule: &DelaySchedule,
    sender: &AgentId,
    ordinal: u64,
) -> Result<u64, EngineError> {
    match *dist {
        DelayDist::UniformInt { lo, hi } => Ok(rng.gen_range(lo.max(1)..=hi.max(1))),
        DelayDist::Scripted => schedule
            .get(&(sender.clone(), ordinal))
            .copied()
            .ok_or_else(|| EngineError::ScriptExhausted {
                sender: sender.clone(),
                ordinal,
            }),
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    /// Next tick to execute.
    pub clock: Tick,
    pub cfg: SimConfig,
    pub schema: FieldSchema,
    pub agents: BTreeMap<AgentId, AgentState>,
    pub in_flight: Vec<InFlight>,
    pub trace: EventTrace,
    rng: ChaCha8Rng,
    next_msg: u64,
    next_round: u64,
    sent: BTreeMap<AgentId, u64>,
    schedule: DelaySchedule,
    omega_queries: Vec<OmegaQuery>,
    omega_rounds: Vec<u64>,
    scripted: bool,
    script: Vec<ScriptAction>,
    labels: BTreeMap<String, (AgentId, u64)>,
    round_msgs: BTreeMap<u64, Vec<MessageId>>,
    queries: BTreeMap<MessageId, Message>,
    chains: BTreeMap<MessageId, BTreeSet<AgentId>>,
    delivered: BTreeSet<MessageId>,
    waiting: BTreeMap<AgentId, (Tick, AgentState)>,
    hint: Option<AgentId>,
}

pub fn init_world(cfg: &SimConfig, scenario: &Scenario) -> Result<WorldState, EngineError> {
    cfg.validate()?;
    let invalid = |m: &str| EngineError::InvalidScenario(m.to_string());
    if scenario.agents.is_empty() {
        return Err(invalid("no agents"));
    }
    let schedule: DelaySchedule = scenario
        .delays
        .iter()
        .flatten()
        .map(|d| ((d.sender.clone(), d.ordinal), d.delay))
        .collect();
    if cfg.delay_dist == DelayDist::Scripted && scenario.delays.is_none() {
        return Err(invalid(
            "scripted delays requested but the scenario has none",
        ));
    }
    for p in &scenario.agents {
        p.check_against(&scenario.schema)
            .map_err(EngineError::InvalidScenario)?;
    }

    let initial: BTreeSet<AgentId> = scenario
        .agents
        .iter()
        .filter(|p| scenario.joins.get(&p.agent).is_none_or(|t| *t == 0))
        .map(|p| p.agent.clone())
        .collect();
    let mut trace = EventTrace::new();
    let mut agents = BTreeMap::new();
    let mut waiting = BTreeMap::new();

    let omega_err = scenario.omega_error.unwrap_or(1.0);
    let mut omega = AgentState::new(
        AgentProfile::new(
            AgentId::omega(),
            BTreeMap::from([(FieldId::message(), omega_err)]),
        ),
        0,
    );
    omega.unlimited = true;
    omega.peers = initial.clone();
    trace.push(Event::join(0, &omega.id, None));
    agents.insert(omega.id.clone(), omega);

    for p in &scenario.agents {
        let budget = scenario
            .budgets
            .get(&p.agent)
            .copied()
            .unwrap_or(cfg.budget);
        let mut st = AgentState::new(p.clone(), budget);
        if initial.contains(&p.agent) {
            st.peers = initial.iter().filter(|a| **a != p.agent).cloned().collect();
            trace.push(Event::join(0, &p.agent, Some(budget)));
            agents.insert(p.agent.clone(), st);
        } else {
            waiting.insert(p.agent.clone(), (scenario.joins[&p.agent], st));
        }
    }

    Ok(WorldState {
        clock: 0,
        cfg: cfg.clone(),
        schema: scenario.schema.clone(),
        agents,
        in_flight: Vec::new(),
        trace,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        next_msg: 1,
        next_round: 1,
        sent: BTreeMap::new(),
        schedule,
        omega_queries: scenario.omega_queries.clone(),
        omega_rounds: Vec::new(),
        scripted: !scenario.script.is_empty(),
        script: scenario.script.clone(),
        labels: BTreeMap::new(),
        round_msgs: BTreeMap::new(),
        queries: BTreeMap::new(),
        chains: BTreeMap::new(),
        delivered: BTreeSet::new(),
        waiting,
        hint: None,
    })
}

/// Runs a scenario from tick 0 through the horizon inclusive.
pub fn run(cfg: &SimConfig, scenario: &Scenario) -> Result<EventTrace, EngineError> {
    Ok(run_world(cfg, scenario)?.trace)
}

pub fn run_world(cfg: &SimConfig, scenario: &Scenario) -> Result<WorldState, EngineError> {
    let mut world = init_world(cfg, scenario)?;
    while world.clock <= world.cfg.horizon {
        world.step()?;
    }
    Ok(world)
}

fn violation(tick: Tick, reason: impl Into<String>) -> EngineError {
    EngineError::ScriptViolation {
        tick,
        reason: reason.into(),
    }
}

impl WorldState {
    /// Executes tick `self.clock` and advances the clock.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let t = self.clock;
        if t > self.cfg.horizon {
            return Err(EngineError::HorizonExceeded {
                clock: t,
                horizon: self.cfg.horizon,
            });
        }
        self.deliveries(t)?;
        self.timeouts(t);
        self.decisions(t)?;
        self.clock += 1;
        Ok(())
    }

    pub fn is_scripted(&self) -> bool {
        self.scripted
    }

    /// Tables as currently held by the agents.
    pub fn live_tables(&self) -> TableSnapshot {
        let mut snap = TableSnapshot::default();
        for (id, a) in &self.agents {
            if id.is_omega() {
                for p in self.agents.keys().filter(|p| !p.is_omega()) {
                    snap.best0
                        .insert(p.clone(), a.best.count(&FieldId::message(), p));
                }
                continue;
            }
            if !a.unlimited {
                snap.remaining.insert(id.clone(), a.remaining_messages);
            }
            let cells: BTreeMap<_, _> = a
                .best
                .cells()
                .map(|(f, p, c)| ((f.clone(), p.clone()), c))
                .collect();
            if !cells.is_empty() {
                snap.best.insert(id.clone(), cells);
            }
        }
        snap
    }

    /// Number of messages `agent` has sent so far.
    pub fn sent_by(&self, agent: &AgentId) -> u64 {
        self.sent.get(agent).copied().unwrap_or(0)
    }

    fn error_of(&self, agent: &AgentId, field: &FieldId) -> f64 {
        self.agents
            .get(agent)
            .and_then(|a| a.profile.error(field).ok())
            .unwrap_or(1.0)
    }

    fn decidable(&self, owner: &AgentId, round: &Round) -> bool {
        let all = round.replied.len() >= round.recipients.len();
        if owner.is_omega() {
            all || round.responses.len() >= self.cfg.omega_min_responses
        } else {
            all || round.replied.len() >= self.cfg.peer_min_replies
        }
    }

    fn round_of(&self, owner: &AgentId, query: MessageId) -> Option<u64> {
        self.agents[owner]
            .pending_out
            .iter()
            .find(|(_, r)| r.messages.contains(&query))
            .map(|(id, _)| *id)
    }

    fn send(
        &mut self,
        t: Tick,
        kind: MessageKind,
        field: &FieldId,
        sender: &AgentId,
        recipient: &AgentId,
        parent: Option<MessageId>,
        payload_error: Option<f64>,
        round: Option<u64>,
    ) -> Result<MessageId, EngineError> {
        let agent = self.agents.get_mut(sender).expect("sender exists");
        debug_assert!(agent.can_send());
        if !agent.unlimited {
            agent.remaining_messages -= 1;
        }
        let ordinal = {
            let n = self.sent.entry(sender.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let delay = draw_delay(
            &mut self.rng,
            &self.cfg.delay_dist,
            &self.schedule,
            sender,
            ordinal,
        )?;
        let id = MessageId(self.next_msg);
        self.next_msg += 1;
        let msg = Message {
            id,
            kind,
            field: field.clone(),
            sender: sender.clone(),
            recipient: recipient.clone(),
            parent,
            sent_at: t,
            payload_error,
            accepted: None,
        };
        self.trace.push(Event::send(&msg, t + delay, round));
        if kind == MessageKind::Query {
            self.queries.insert(id, msg.clone());
        }
        self.in_flight.push(InFlight {
            msg,
            deliver_at: t + delay,
        });
        Ok(id)
    }

    /// Opens a round and sends the query to every recipient the owner can
    /// still afford. Returns `None` when nothing could be sent.
    fn open_round(
        &mut self,
        t: Tick,
        owner: &AgentId,
        field: &FieldId,
        recipients: &[AgentId],
        parent: Option<MessageId>,
    ) -> Result<Option<u64>, EngineError> {
        if !self.agents[owner].can_send() {
            return Ok(None);
        }
        let rid = self.next_round;
        self.next_round += 1;
        self.agents.get_mut(owner).unwrap().pending_out.insert(
            rid,
            Round {
                id: rid,
                field: field.clone(),
                parent,
                recipients: Vec::new(),
                messages: Vec::new(),
                replied: BTreeSet::new(),
                responses: Vec::new(),
                opened_at: t,
                deadline: t + self.cfg.timeout_ticks,
                expired: false,
            },
        );
        self.extend_round(t, owner, rid, recipients)?;
        Ok(Some(rid))
    }

    fn extend_round(
        &mut self,
        t: Tick,
        owner: &AgentId,
        rid: u64,
        recipients: &[AgentId],
    ) -> Result<(), EngineError> {
        let (field, parent) = {
            let r = &self.agents[owner].pending_out[&rid];
            (r.field.clone(), r.parent)
        };
        let mut chain = parent
            .and_then(|p| self.chains.get(&p).cloned())
            .unwrap_or_default();
        chain.insert(owner.clone());
        for rec in recipients {
            if !self.agents[owner].can_send() {
                break;
            }
            let id = self.send(
                t,
                MessageKind::Query,
                &field,
                owner,
                rec,
                parent,
                None,
                Some(rid),
            )?;
            self.chains.insert(id, chain.clone());
            self.round_msgs.entry(rid).or_default().push(id);
            let r = self
                .agents
                .get_mut(owner)
                .unwrap()
                .pending_out
                .get_mut(&rid)
                .unwrap();
            r.recipients.push(rec.clone());
            r.messages.push(id);
        }
        Ok(())
    }

    fn deliveries(&mut self, t: Tick) -> Result<(), EngineError> {
        let (mut due, rest): (Vec<InFlight>, Vec<InFlight>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|m| m.deliver_at <= t);
        self.in_flight = rest;
        due.sort_by_key(|m| m.msg.id);
        for InFlight { msg, .. } in due {
            self.delivered.insert(msg.id);
            match msg.kind {
                MessageKind::Query => self.deliver_query(t, msg)?,
                MessageKind::Response => self.deliver_response(t, msg),
                MessageKind::CheckIn => self.deliver_checkin(t, msg),
                MessageKind::CheckInReply => self.trace.push(Event::deliver(t, &msg, false)),
            }
        }
        Ok(())
    }

    fn deliver_query(&mut self, t: Tick, msg: Message) -> Result<(), EngineError> {
        self.trace.push(Event::deliver(t, &msg, false));
        let querier_error = self.error_of(&msg.sender, &msg.field);
        let decision = {
            let responder = &self.agents[&msg.recipient];
            decide_answer(responder, &msg, querier_error, t, &self.cfg, &mut self.rng)
        };
        if let Some(reason) = DeclineReason::from_decision(&decision) {
            self.trace.push(Event::decline(t, &msg, reason));
            if decision.is_visible_decline() {
                if let Some(rid) = self.round_of(&msg.sender, msg.id) {
                    let r = self
                        .agents
                        .get_mut(&msg.sender)
                        .unwrap()
                        .pending_out
                        .get_mut(&rid)
                        .unwrap();
                    r.replied.insert(msg.recipient.clone());
                }
            }
            return Ok(());
        }
        let chain = self.chains.get(&msg.id).cloned().unwrap_or_default();
        let responder = msg.recipient.clone();
        let qid = msg.id;
        self.agents
            .get_mut(&responder)
            .unwrap()
            .pending_in
            .push(InboundQuery {
                query: msg,
                chain,
                received_at: t,
            });
        if !self.scripted {
            self.forward_or_answer(t, &responder, qid)?;
        }
        Ok(())
    }

    fn deliver_response(&mut self, t: Tick, msg: Message) {
        let open = msg.parent.and_then(|q| self.round_of(&msg.recipient, q));
        self.trace.push(Event::deliver(t, &msg, open.is_none()));
        if let Some(rid) = open {
            let r = self
                .agents
                .get_mut(&msg.recipient)
                .unwrap()
                .pending_out
                .get_mut(&rid)
                .unwrap();
            r.replied.insert(msg.sender.clone());
            r.responses
                .push((msg.sender.clone(), msg.payload_error.unwrap_or(1.0)));
        }
    }

    fn deliver_checkin(&mut self, t: Tick, msg: Message) {
        self.trace.push(Event::deliver(t, &msg, false));
        let Some(responder) = self.agents.get(&msg.recipient) else {
            return;
        };
        let Ok(verdict) = handle_checkin(responder, &msg.sender, &self.cfg) else {
            return;
        };
        let accepted = verdict == CheckInVerdict::Accept;
        self.trace
            .push(Event::admit(t, &msg.recipient, &msg.sender, accepted));
        if accepted {
            self.agents
                .get_mut(&msg.recipient)
                .unwrap()
                .peers
                .insert(msg.sender.clone());
            if let Some(newcomer) = self.agents.get_mut(&msg.sender) {
                newcomer.peers.insert(msg.recipient.clone());
            }
        }
    }

    /// Autonomous handling of an accepted query: sub-query the compound
    /// components the agent doubts, or answer at once.
    fn forward_or_answer(
        &mut self,
        t: Tick,
        agent: &AgentId,
        qid: MessageId,
    ) -> Result<(), EngineError> {
        let field = self.queries[&qid].field.clone();
        let mut chain = self.chains.get(&qid).cloned().unwrap_or_default();
        chain.insert(agent.clone());
        let mut opened = false;
        for comp in self.schema.compound_components(&field) {
            let a = &self.agents[agent];
            if !a.profile.errors.contains_key(&comp) {
                continue;
            }
            let doubt = decide_query(a, &comp, &mut self.rng)?;
            if !doubt || !a.can_send() {
                continue;
            }
            let Ok(recipients) = select_recipients(a, &comp, &a.peers, &chain) else {
                continue;
            };
            if self
                .open_round(t, agent, &comp, &recipients, Some(qid))?
                .is_some()
            {
                opened = true;
            }
        }
        if !opened {
            self.answer_now(t, agent, qid)?;
        }
        Ok(())
    }

    fn answer_now(&mut self, t: Tick, agent: &AgentId, qid: MessageId) -> Result<(), EngineError> {
        let a = self.agents.get_mut(agent).unwrap();
        let Some(pos) = a.pending_in.iter().position(|q| q.query.id == qid) else {
            return Ok(());
        };
        let inbound = a.pending_in.remove(pos);
        if !a.can_send() {
            self.trace
                .push(Event::decline(t, &inbound.query, DeclineReason::NoBudget));
            return Ok(());
        }
        let err = a.profile.error(&inbound.query.field).unwrap_or(1.0);
        let q = inbound.query;
        self.send(
            t,
            MessageKind::Response,
            &q.field,
            agent,
            &q.sender,
            Some(q.id),
            Some(err),
            None,
        )?;
        Ok(())
    }

    fn timeouts(&mut self, t: Tick) {
        let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        for id in ids {
            let due: Vec<u64> = self.agents[&id]
                .pending_out
                .values()
                .filter(|r| !r.expired && r.deadline <= t && !self.decidable(&id, r))
                .map(|r| r.id)
                .collect();
            if due.is_empty() {
                continue;
            }
            let agent = self.agents.get_mut(&id).unwrap();
            for rid in due {
                let r = agent.pending_out.get_mut(&rid).unwrap();
                r.expired = true;
                let silent: Vec<AgentId> = r
                    .recipients
                    .iter()
                    .filter(|p| !r.replied.contains(*p))
                    .cloned()
                    .collect();
                let field = r.field.clone();
                for p in silent {
                    self.trace.push(Event::timeout(t, &id, &p, &field, rid));
                    *agent.timeout_counts.entry(p.clone()).or_insert(0) += 1;
                    agent.unresponsive.insert(p);
                }
            }
            if check_mode_switch(agent, &self.cfg) {
                self.trace.push(Event::mode_switch(t, &id));
            }
        }
    }

    fn decisions(&mut self, t: Tick) -> Result<(), EngineError> {
        self.admit_joiners(t)?;
        let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        for id in ids {
            self.resolve_rounds(t, &id)?;
            if id.is_omega() {
                self.inject_omega(t)?;
            }
            if self.scripted {
                self.run_script(t, &id)?;
            }
        }
        Ok(())
    }

    fn admit_joiners(&mut self, t: Tick) -> Result<(), EngineError> {
        let due: Vec<AgentId> = self
            .waiting
            .iter()
            .filter(|(_, (at, _))| *at == t)
            .map(|(id, _)| id.clone())
            .collect();
        for id in due {
            let (_, st) = self.waiting.remove(&id).unwrap();
            self.trace.push(Event::join(t, &id, Some(st.budget)));
            self.agents.insert(id.clone(), st);
            let others: Vec<AgentId> = self
                .agents
                .keys()
                .filter(|a| !a.is_omega() && **a != id)
                .cloned()
                .collect();
            for other in others {
                if !self.agents[&id].can_send() {
                    break;
                }
                self.send(
                    t,
                    MessageKind::CheckIn,
                    &FieldId::message(),
                    &id,
                    &other,
                    None,
                    None,
                    None,
                )?;
            }
        }
        Ok(())
    }

    fn resolve_rounds(&mut self, t: Tick, owner: &AgentId) -> Result<(), EngineError> {
        let ready: Vec<u64> = self.agents[owner]
            .pending_out
            .values()
            .filter(|r| (r.expired && r.deadline < t) || (!r.expired && self.decidable(owner, r)))
            .map(|r| r.id)
            .collect();
        for rid in ready {
            let round = self
                .agents
                .get_mut(owner)
                .unwrap()
                .pending_out
                .remove(&rid)
                .unwrap();
            if round.replied.is_empty() {
                continue;
            }
            let own = self.error_of(owner, &round.field);
            let (winner, err) = fuse_responses(own, &round.responses);
            let credited = winner.resolve(owner);
            self.trace
                .push(Event::fusion(t, owner, &credited, &round.field, rid, err));
            let skip_self = owner.is_omega() && winner == Winner::SelfWins;
            if !skip_self {
                let c = self.cfg.c;
                let agent = self.agents.get_mut(owner).unwrap();
                agent.best.increment(&round.field, &credited);
                let count = agent.best.count(&round.field, &credited);
                if agent.best.field_total(&round.field) >= c {
                    agent.phase = Phase::Phase2;
                }
                self.trace.push(Event::table_update(
                    t,
                    owner,
                    &credited,
                    &round.field,
                    count,
                ));
            }
            if let (Some(parent), false) = (round.parent, self.scripted) {
                let still_open = self.agents[owner]
                    .pending_out
                    .values()
                    .any(|r| r.parent == Some(parent));
                if !still_open {
                    self.answer_now(t, owner, parent)?;
                }
            }
        }
        Ok(())
    }

    fn inject_omega(&mut self, t: Tick) -> Result<(), EngineError> {
        let omega = AgentId::omega();
        let due: Vec<OmegaQuery> = self
            .omega_queries
            .iter()
            .filter(|q| q.tick == t)
            .cloned()
            .collect();
        for q in due {
            let recipients = {
                let o = &self.agents[&omega];
                match select_recipients(o, &q.field, &o.peers, &BTreeSet::new()) {
                    Ok(r) => r,
                    Err(_) => continue,
                }
            };
            let o = &self.agents[&omega];
            if o.phase == Phase::Phase2
                && recipients.len() <= self.cfg.k
                && recipients.len() == 1
                && self.hint.as_ref() != Some(&recipients[0])
            {
                self.trace
                    .push(Event::holon_hint(t, &omega, &recipients[0]));
                self.hint = Some(recipients[0].clone());
            }
            if let Some(rid) = self.open_round(t, &omega, &q.field, &recipients, None)? {
                self.omega_rounds.push(rid);
            }
        }
        Ok(())
    }

    /// The delivered query addressed to `agent` that `r` names.
    fn resolve_ref(
        &self,
        t: Tick,
        agent: &AgentId,
        r: &QueryRef,
    ) -> Result<MessageId, EngineError> {
        let rid = match r {
            QueryRef::Omega(k) => *self
                .omega_rounds
                .get(k - 1)
                .ok_or_else(|| violation(t, format!("Ω round {k} has not been opened")))?,
            QueryRef::Round(label) => {
                self.labels
                    .get(label)
                    .ok_or_else(|| violation(t, format!("unknown round {label}")))?
                    .1
            }
        };
        self.round_msgs
            .get(&rid)
            .into_iter()
            .flatten()
            .copied()
            .find(|m| self.queries[m].recipient == *agent && self.delivered.contains(m))
            .ok_or_else(|| {
                violation(
                    t,
                    format!("{agent} has not received a query from round {r}"),
                )
            })
    }

    fn run_script(&mut self, t: Tick, agent: &AgentId) -> Result<(), EngineError> {
        let actions: Vec<ScriptAction> = self
            .script
            .iter()
            .filter(|a| a.tick() == t && a.agent() == agent)
            .cloned()
            .collect();
        for action in actions {
            match action {
                ScriptAction::Query {
                    field,
                    recipients,
                    round,
                    parent,
                    ..
                } => self.script_query(t, agent, &field, &recipients, &round, parent.as_ref())?,
                ScriptAction::Answer { query, .. } => self.script_answer(t, agent, &query)?,
            }
        }
        Ok(())
    }

    fn script_query(
        &mut self,
        t: Tick,
        agent: &AgentId,
        field: &FieldId,
        recipients: &[AgentId],
        label: &str,
        parent: Option<&QueryRef>,
    ) -> Result<(), EngineError> {
        let a = &self.agents[agent];
        if !a.profile.errors.contains_key(field) {
            return Err(violation(
                t,
                format!("{agent} cannot query non-compound field {field}"),
            ));
        }
        if !a.unlimited && (a.remaining_messages as usize) < recipients.len() {
            return Err(violation(
                t,
                format!("{agent} cannot afford {} messages", recipients.len()),
            ));
        }
        if let Some((owner, rid)) = self.labels.get(label).cloned() {
            if parent.is_some() {
                return Err(violation(t, "parent is fixed when a round is opened"));
            }
            let r = self.agents[&owner].pending_out.get(&rid);
            match r {
                Some(r) if owner == *agent && r.field == *field => {}
                _ => {
                    return Err(violation(
                        t,
                        format!("round {label} is not open for {agent} on {field}"),
                    ))
                }
            }
            let chain = r
                .and_then(|r| r.parent)
                .and_then(|p| self.chains.get(&p).cloned());
            self.check_recipients(t, agent, recipients, chain.unwrap_or_default())?;
            return self.extend_round(t, agent, rid, recipients);
        }
        let parent = match parent {
            Some(p) => Some(self.resolve_ref(t, agent, p)?),
            None => None,
        };
        let chain = parent
            .and_then(|p| self.chains.get(&p).cloned())
            .unwrap_or_default();
        self.check_recipients(t, agent, recipients, chain)?;
        if let Some(rid) = self.open_round(t, agent, field, recipients, parent)? {
            self.labels.insert(label.to_string(), (agent.clone(), rid));
        }
        Ok(())
    }

    fn check_recipients(
        &self,
        t: Tick,
        agent: &AgentId,
        recipients: &[AgentId],
        chain: BTreeSet<AgentId>,
    ) -> Result<(), EngineError> {
        let a = &self.agents[agent];
        for r in recipients {
            if r == agent || r.is_omega() || chain.contains(r) || !a.peers.contains(r) {
                return Err(violation(t, format!("{agent} may not query {r}")));
            }
        }
        Ok(())
    }

    fn script_answer(&mut self, t: Tick, agent: &AgentId, r: &QueryRef) -> Result<(), EngineError> {
        let qid = self.resolve_ref(t, agent, r)?;
        let a = &self.agents[agent];
        if !a.pending_in.iter().any(|q| q.query.id == qid) {
            return Err(violation(t, format!("{agent} holds no open query {r}")));
        }
        let q = self.queries[&qid].clone();
        let querier_error = self.error_of(&q.sender, &q.field);
        let decision = decide_answer(a, &q, querier_error, t, &self.cfg, &mut self.rng);
        if !matches!(decision, AnswerDecision::Answer(_)) {
            return Err(violation(
                t,
                format!("{agent} would not answer {r}: {decision:?}"),
            ));
        }
        self.answer_now(t, agent, qid)
    }
}
