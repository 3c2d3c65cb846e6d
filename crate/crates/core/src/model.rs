//! Domain types shared by the engine, the behavior rules and the analyzers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SchemaError};

/// Reserved id of the whole message.
pub const MESSAGE_FIELD: &str = "M";
/// Reserved id of the external querier.
pub const OMEGA: &str = "Ω";

pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldId(String);

impl FieldId {
    pub fn new(name: impl Into<String>) -> Self {
        FieldId(name.into())
    }

    pub fn message() -> Self {
        FieldId(MESSAGE_FIELD.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_message(&self) -> bool {
        self.0 == MESSAGE_FIELD
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FieldId {
    fn from(s: &str) -> Self {
        FieldId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }

    pub fn omega() -> Self {
        AgentId(OMEGA.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_omega(&self) -> bool {
        self.0 == OMEGA
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId::new(s)
    }
}

/// The message's field set and its dependency DAG.
///
/// Build with [`FieldSchema::new`] and run [`validate_schema`] before use;
/// validation also installs the reserved `M` field covering every other field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    fields: Vec<FieldId>,
    deps: BTreeMap<FieldId, Vec<FieldId>>,
}

impl FieldSchema {
    /// Unvalidated schema; `deps` may omit fields without dependencies.
    pub fn new(fields: Vec<FieldId>, deps: BTreeMap<FieldId, Vec<FieldId>>) -> Self {
        FieldSchema { fields, deps }
    }

    /// Declared fields in declaration order, `M` last.
    pub fn fields(&self) -> &[FieldId] {
        &self.fields
    }

    pub fn contains(&self, f: &FieldId) -> bool {
        self.fields.contains(f)
    }

    pub fn deps(&self, f: &FieldId) -> &[FieldId] {
        self.deps.get(f).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Dependency lists as declared, excluding empty entries.
    pub fn dep_map(&self) -> &BTreeMap<FieldId, Vec<FieldId>> {
        &self.deps
    }

    pub fn is_compound(&self, f: &FieldId) -> bool {
        !self.deps(f).is_empty()
    }

    /// Compound fields among the direct components of `f`.
    pub fn compound_components(&self, f: &FieldId) -> Vec<FieldId> {
        self.deps(f)
            .iter()
            .filter(|c| self.is_compound(c))
            .cloned()
            .collect()
    }

    /// Fields in an order where each field precedes the fields it depends on.
    pub fn topo_order(&self) -> Vec<FieldId> {
        let mut order = Vec::with_capacity(self.fields.len());
        let mut seen = BTreeSet::new();
        fn visit(
            s: &FieldSchema,
            f: &FieldId,
            seen: &mut BTreeSet<FieldId>,
            out: &mut Vec<FieldId>,
        ) {
            if !seen.insert(f.clone()) {
                return;
            }
            for d in s.deps(f) {
                visit(s, d, seen, out);
            }
            out.push(f.clone());
        }
        for f in &self.fields {
            visit(self, f, &mut seen, &mut order);
        }
        order.reverse();
        order
    }

    /// Longest dependency chain below `f`, counted in edges.
    pub fn depth(&self, f: &FieldId) -> usize {
        self.deps(f)
            .iter()
            .map(|d| 1 + self.depth(d))
            .max()
            .unwrap_or(0)
    }
}

/// Checks closure and acyclicity and installs `M` when it is missing.
pub fn validate_schema(schema: FieldSchema) -> Result<FieldSchema, SchemaError> {
    let FieldSchema {
        mut fields,
        mut deps,
    } = schema;
    let mut declared = BTreeSet::new();
    for f in &fields {
        if !declared.insert(f.clone()) {
            return Err(SchemaError::DuplicateField(f.clone()));
        }
    }
    for (f, ds) in &deps {
        if !declared.contains(f) {
            return Err(SchemaError::UndeclaredField(f.clone()));
        }
        if let Some(u) = ds.iter().find(|d| !declared.contains(*d)) {
            return Err(SchemaError::UndeclaredField(u.clone()));
        }
    }
    deps.retain(|_, ds| !ds.is_empty());

    let message = FieldId::message();
    if !declared.contains(&message) {
        fields.push(message.clone());
    } else {
        fields.retain(|f| f != &message);
        fields.push(message.clone());
    }
    if !deps.contains_key(&message) {
        let all: Vec<FieldId> = fields.iter().filter(|f| **f != message).cloned().collect();
        if !all.is_empty() {
            deps.insert(message.clone(), all);
        }
    }

    // Iterative DFS with colors so the reported cycle is the actual loop.
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let mut color: BTreeMap<&FieldId, Color> = fields.iter().map(|f| (f, Color::White)).collect();
    for start in &fields {
        if color[start] != Color::White {
            continue;
        }
        let mut stack: Vec<(&FieldId, usize)> = vec![(start, 0)];
        color.insert(start, Color::Grey);
        while let Some((node, idx)) = stack.pop() {
            let children = deps.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if idx < children.len() {
                stack.push((node, idx + 1));
                let child = &children[idx];
                match color[child] {
                    Color::White => {
                        color.insert(child, Color::Grey);
                        stack.push((child, 0));
                    }
                    Color::Grey => {
                        let pos = stack.iter().position(|(n, _)| *n == child).unwrap_or(0);
                        let cycle = stack[pos..].iter().map(|(n, _)| (*n).clone()).collect();
                        return Err(SchemaError::CycleDetected(cycle));
                    }
                    Color::Black => {}
                }
            } else {
                color.insert(node, Color::Black);
            }
        }
    }
    Ok(FieldSchema { fields, deps })
}

/// Fields with a non-empty dependency list.
pub fn compound_fields(schema: &FieldSchema) -> BTreeSet<FieldId> {
    schema
        .fields
        .iter()
        .filter(|f| schema.is_compound(f))
        .cloned()
        .collect()
}

/// Quality of a field prediction, `1 - error`.
pub fn quality(error: f64) -> Result<f64, ModelError> {
    check_fraction(error)?;
    Ok(1.0 - error)
}

pub(crate) fn check_fraction(x: f64) -> Result<f64, ModelError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(ModelError::OutOfRange(x))
    }
}

/// Per-field prediction errors of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent: AgentId,
    pub errors: BTreeMap<FieldId, f64>,
}

impl AgentProfile {
    pub fn new(agent: AgentId, errors: BTreeMap<FieldId, f64>) -> Self {
        AgentProfile { agent, errors }
    }

    pub fn error(&self, field: &FieldId) -> Result<f64, ModelError> {
        self.errors
            .get(field)
            .copied()
            .ok_or_else(|| ModelError::UnknownField {
                agent: self.agent.clone(),
                field: field.clone(),
            })
    }

    /// Errors must cover exactly the schema's compound fields.
    pub fn check_against(&self, schema: &FieldSchema) -> Result<(), String> {
        let compound = compound_fields(schema);
        for (f, e) in &self.errors {
            if !schema.contains(f) {
                return Err(format!(
                    "agent {} references undeclared field {f}",
                    self.agent
                ));
            }
            if !compound.contains(f) {
                return Err(format!("agent {}: field {f} is not compound", self.agent));
            }
            if check_fraction(*e).is_err() {
                return Err(format!(
                    "agent {}: error {e} for {f} outside [0,1]",
                    self.agent
                ));
            }
        }
        if let Some(missing) = compound.iter().find(|f| !self.errors.contains_key(*f)) {
            return Err(format!("agent {} has no error for {missing}", self.agent));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Query,
    Response,
    CheckIn,
    CheckInReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub kind: MessageKind,
    pub field: FieldId,
    pub sender: AgentId,
    pub recipient: AgentId,
    /// The query this message forwards or answers.
    pub parent: Option<MessageId>,
    pub sent_at: Tick,
    /// Responder's profile error, present on responses only.
    pub payload_error: Option<f64>,
    /// CHECK IN verdict, present on check-in replies only.
    pub accepted: Option<bool>,
}

/// Success counts per (field, responder), owned by one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestTable {
    pub owner: AgentId,
    counts: BTreeMap<(FieldId, AgentId), u64>,
}

impl BestTable {
    pub fn new(owner: AgentId) -> Self {
        BestTable {
            owner,
            counts: BTreeMap::new(),
        }
    }

    pub fn count(&self, field: &FieldId, agent: &AgentId) -> u64 {
        self.counts
            .get(&(field.clone(), agent.clone()))
            .copied()
            .unwrap_or(0)
    }

    pub fn increment(&mut self, field: &FieldId, agent: &AgentId) {
        *self
            .counts
            .entry((field.clone(), agent.clone()))
            .or_insert(0) += 1;
    }

    pub fn field_total(&self, field: &FieldId) -> u64 {
        self.counts
            .iter()
            .filter(|((f, _), _)| f == field)
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&FieldId, &AgentId, u64)> {
        self.counts.iter().map(|((f, a), c)| (f, a, *c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unrestricted,
    Intelligent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Phase1,
    Phase2,
}

/// A fusion round: one query fanned out to several recipients.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub id: u64,
    pub field: FieldId,
    /// Inbound query this round serves, if any.
    pub parent: Option<MessageId>,
    pub recipients: Vec<AgentId>,
    pub messages: Vec<MessageId>,
    pub replied: BTreeSet<AgentId>,
    pub responses: Vec<(AgentId, f64)>,
    pub opened_at: Tick,
    pub deadline: Tick,
    pub expired: bool,
}

/// A received query the agent has not answered yet.
#[derive(Debug, Clone, PartialEq)]
pub struct InboundQuery {
    pub query: Message,
    /// Agents upstream of this query, its sender included.
    pub chain: BTreeSet<AgentId>,
    pub received_at: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub profile: AgentProfile,
    pub budget: u64,
    pub remaining_messages: u64,
    pub unlimited: bool,
    pub mode: Mode,
    pub phase: Phase,
    pub best: BestTable,
    pub pending_out: BTreeMap<u64, Round>,
    pub pending_in: Vec<InboundQuery>,
    pub timeout_counts: BTreeMap<AgentId, u64>,
    /// Peers observed to time out; excluded from favorite tiers.
    pub unresponsive: BTreeSet<AgentId>,
    pub peers: BTreeSet<AgentId>,
}

impl AgentState {
    pub fn new(profile: AgentProfile, budget: u64) -> Self {
        let id = profile.agent.clone();
        AgentState {
            best: BestTable::new(id.clone()),
            id,
            profile,
            budget,
            remaining_messages: budget,
            unlimited: false,
            mode: Mode::Unrestricted,
            phase: Phase::Phase1,
            pending_out: BTreeMap::new(),
            pending_in: Vec::new(),
            timeout_counts: BTreeMap::new(),
            unresponsive: BTreeSet::new(),
            peers: BTreeSet::new(),
        }
    }

    pub fn can_send(&self) -> bool {
        self.unlimited || self.remaining_messages > 0
    }

    pub fn total_timeouts(&self) -> u64 {
        self.timeout_counts.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DelayDist {
    UniformInt { lo: u64, hi: u64 },
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Favorites retained per field.
    pub k: usize,
    /// Resolved interactions on a field before favorites are used.
    pub c: u64,
    pub budget: u64,
    pub timeout_ticks: u64,
    pub horizon: u64,
    pub anneal_p0: f64,
    /// Cooling constant; `None` means horizon / 3.
    pub anneal_tau: Option<f64>,
    pub timeout_switch_threshold: u64,
    /// Below this fraction of its budget an agent draws lots before answering.
    pub lottery_threshold_pct: f64,
    pub lottery_p: f64,
    pub checkin_threshold: u64,
    pub omega_min_responses: usize,
    pub peer_min_replies: usize,
    pub seed: u64,
    pub delay_dist: DelayDist,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: 1,
            c: 1,
            budget: 10,
            timeout_ticks: 12,
            horizon: 50,
            anneal_p0: 0.1,
            anneal_tau: None,
            timeout_switch_threshold: 1,
            lottery_threshold_pct: 0.2,
            lottery_p: 0.5,
            checkin_threshold: 3,
            omega_min_responses: 2,
            peer_min_replies: 1,
            seed: 0,
            delay_dist: DelayDist::UniformInt { lo: 1, hi: 5 },
        }
    }
}

impl SimConfig {
    pub fn tau(&self) -> f64 {
        self.anneal_tau
            .unwrap_or_else(|| (self.horizon as f64 / 3.0).max(1.0))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.k < 1 {
            return bad("k must be >= 1");
        }
        if self.c < 1 {
            return bad("c must be >= 1");
        }
        if self.timeout_ticks < 1 {
            return bad("timeout_ticks must be >= 1");
        }
        for (name, v) in [
            ("anneal_p0", self.anneal_p0),
            ("lottery_threshold_pct", self.lottery_threshold_pct),
            ("lottery_p", self.lottery_p),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::InvalidConfig(format!("{name} outside [0,1]")));
            }
        }
        if matches!(self.anneal_tau, Some(t) if t.is_nan() || t <= 0.0) {
            return bad("anneal_tau must be positive");
        }
        if self.omega_min_responses < 1 || self.peer_min_replies < 1 {
            return bad("minimum reply counts must be >= 1");
        }
        if let DelayDist::UniformInt { lo, hi } = self.delay_dist {
            if lo < 1 || lo > hi {
                return bad("uniform delay needs 1 <= lo <= hi");
            }
        }
        Ok(())
    }
}
