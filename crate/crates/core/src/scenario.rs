//! Plain-text scenario format.
//!
//! ```text
//! # comment
//! [schema]
//! fields A B C M
//! A = B C
//! [agents]
//! α A=0.05 M=0.05
//! δ A=0.20 M=0.30 join=12
//! [budgets]
//! α 10
//! [omega]
//! 2 M
//! [delays]
//! Ω 1 2
//! [script]
//! 5 α query A β,γ round=a1 parent=omega:1
//! 13 α answer omega:1
//! [engine]
//! horizon = 50
//! ```
//!
//! `[delays]` entries are `sender ordinal delay`, where the ordinal counts the
//! sender's messages from 1. A `[delays]` section switches the engine to the
//! scripted schedule. A `[script]` section drives peer sends explicitly; when
//! it is absent peers act on their own rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::ScenarioError;
use crate::model::{
    check_fraction, compound_fields, validate_schema, AgentId, AgentProfile, DelayDist, FieldId,
    FieldSchema, SimConfig, Tick,
};
use crate::trace::{best0_csv, best_csv, remaining_csv, EventTrace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmegaQuery {
    pub tick: Tick,
    pub field: FieldId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayEntry {
    pub sender: AgentId,
    pub ordinal: u64,
    pub delay: u64,
}

/// Names an inbound query from the point of view of the agent acting on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryRef {
    /// The k-th query round opened by Ω, counted from 1.
    Omega(usize),
    /// A peer round by its script label.
    Round(String),
}

impl std::fmt::Display for QueryRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueryRef::Omega(k) => write!(f, "omega:{k}"),
            QueryRef::Round(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptAction {
    /// Send a query. Reusing an open label adds recipients to that round.
    Query {
        tick: Tick,
        agent: AgentId,
        field: FieldId,
        recipients: Vec<AgentId>,
        round: String,
        parent: Option<QueryRef>,
    },
    /// Answer a query previously delivered to `agent`.
    Answer {
        tick: Tick,
        agent: AgentId,
        query: QueryRef,
    },
}

impl ScriptAction {
    pub fn tick(&self) -> Tick {
        match self {
            ScriptAction::Query { tick, .. } | ScriptAction::Answer { tick, .. } => *tick,
        }
    }

    pub fn agent(&self) -> &AgentId {
        match self {
            ScriptAction::Query { agent, .. } | ScriptAction::Answer { agent, .. } => agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub schema: FieldSchema,
    /// Peers in declaration order.
    pub agents: Vec<AgentProfile>,
    /// Ω's own error on the whole message; 1.0 when absent.
    pub omega_error: Option<f64>,
    /// Peers that enter late through CHECK IN.
    pub joins: BTreeMap<AgentId, Tick>,
    pub budgets: BTreeMap<AgentId, u64>,
    pub omega_queries: Vec<OmegaQuery>,
    pub delays: Option<Vec<DelayEntry>>,
    pub script: Vec<ScriptAction>,
    /// `[engine]` entries as written, already checked.
    pub overrides: Vec<(String, String)>,
}

impl Scenario {
    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|p| p.agent.clone()).collect()
    }

    pub fn profile(&self, id: &AgentId) -> Option<&AgentProfile> {
        self.agents.iter().find(|p| &p.agent == id)
    }

    /// Defaults with this scenario's `[engine]` overrides applied.
    pub fn config(&self) -> Result<SimConfig, ScenarioError> {
        let mut cfg = SimConfig::default();
        for (k, v) in &self.overrides {
            apply_override(&mut cfg, k, v).map_err(ScenarioError::Validation)?;
        }
        if self.delays.is_some() {
            cfg.delay_dist = DelayDist::Scripted;
        }
        cfg.validate()
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
}

/// Applies one `[engine]` entry.
pub fn apply_override(cfg: &mut SimConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "k" => cfg.k = parse_num(key, value)?,
        "c" => cfg.c = parse_num(key, value)?,
        "budget" => cfg.budget = parse_num(key, value)?,
        "timeout_ticks" => cfg.timeout_ticks = parse_num(key, value)?,
        "horizon" => cfg.horizon = parse_num(key, value)?,
        "anneal_p0" => cfg.anneal_p0 = parse_num(key, value)?,
        "anneal_tau" => cfg.anneal_tau = Some(parse_num(key, value)?),
        "timeout_switch_threshold" => cfg.timeout_switch_threshold = parse_num(key, value)?,
        "lottery_threshold_pct" => cfg.lottery_threshold_pct = parse_num(key, value)?,
        "lottery_p" => cfg.lottery_p = parse_num(key, value)?,
        "checkin_threshold" => cfg.checkin_threshold = parse_num(key, value)?,
        "omega_min_responses" => cfg.omega_min_responses = parse_num(key, value)?,
        "peer_min_replies" => cfg.peer_min_replies = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "delay_dist" => {
            let parts: Vec<&str> = value.split_whitespace().collect();
            cfg.delay_dist = match parts.as_slice() {
                ["scripted"] => DelayDist::Scripted,
                ["uniform", lo, hi] => DelayDist::UniformInt {
                    lo: parse_num(key, lo)?,
                    hi: parse_num(key, hi)?,
                },
                _ => return Err(format!("bad delay_dist {value:?}")),
            };
        }
        _ => return Err(format!("unknown engine key {key:?}")),
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Schema,
    Agents,
    Budgets,
    Omega,
    Delays,
    Script,
    Engine,
}

fn perr(line: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_ref(s: &str) -> Result<QueryRef, String> {
    if let Some(k) = s.strip_prefix("omega:") {
        let k: usize = k.parse().map_err(|_| format!("bad omega ref {s:?}"))?;
        if k == 0 {
            return Err("omega rounds are counted from 1".into());
        }
        Ok(QueryRef::Omega(k))
    } else if s.is_empty() || s.contains(['=', ',', ':']) {
        Err(format!("bad round label {s:?}"))
    } else {
        Ok(QueryRef::Round(s.to_string()))
    }
}

fn parse_script_line(words: &[&str]) -> Result<ScriptAction, String> {
    let tick: Tick = words
        .first()
        .ok_or("empty script line")?
        .parse()
        .map_err(|_| "bad tick".to_string())?;
    let agent = AgentId::new(*words.get(1).ok_or("missing agent")?);
    match words.get(2).copied() {
        Some("query") => {
            let field = FieldId::new(*words.get(3).ok_or("missing field")?);
            let recipients: Vec<AgentId> = words
                .get(4)
                .ok_or("missing recipients")?
                .split(',')
                .map(AgentId::new)
                .collect();
            let mut round = None;
            let mut parent = None;
            for w in &words[5..] {
                if let Some(l) = w.strip_prefix("round=") {
                    match parse_ref(l)? {
                        QueryRef::Round(l) => round = Some(l),
                        QueryRef::Omega(_) => {
                            return Err("round label cannot be an omega ref".into())
                        }
                    }
                } else if let Some(p) = w.strip_prefix("parent=") {
                    parent = Some(parse_ref(p)?);
                } else {
                    return Err(format!("unexpected {w:?}"));
                }
            }
            Ok(ScriptAction::Query {
                tick,
                agent,
                field,
                recipients,
                round: round.ok_or("query needs round=<label>")?,
                parent,
            })
        }
        Some("answer") => {
            if words.len() != 4 {
                return Err("answer takes exactly one query ref".into());
            }
            Ok(ScriptAction::Answer {
                tick,
                agent,
                query: parse_ref(words[3])?,
            })
        }
        other => Err(format!("unknown action {other:?}")),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut section = Section::None;
    let mut seen_sections = BTreeSet::new();
    let mut fields: Option<Vec<FieldId>> = None;
    let mut deps: BTreeMap<FieldId, Vec<FieldId>> = BTreeMap::new();
    let mut agents: Vec<(usize, AgentProfile)> = Vec::new();
    let mut omega_error = None;
    let mut joins = BTreeMap::new();
    let mut budgets = BTreeMap::new();
    let mut omega_queries = Vec::new();
    let mut delays: Option<Vec<DelayEntry>> = None;
    let mut script = Vec::new();
    let mut overrides = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "schema" => Section::Schema,
                "agents" => Section::Agents,
                "budgets" => Section::Budgets,
                "omega" => Section::Omega,
                "delays" => {
                    delays.get_or_insert_with(Vec::new);
                    Section::Delays
                }
                "script" => Section::Script,
                "engine" => Section::Engine,
                other => return Err(perr(line_no, format!("unknown section [{other}]"))),
            };
            if !seen_sections.insert(name.trim().to_string()) {
                return Err(perr(line_no, format!("section [{name}] repeated")));
            }
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(line_no, "content before the first section")),
            Section::Schema => {
                if words[0] == "fields" {
                    if fields.is_some() {
                        return Err(perr(line_no, "fields declared twice"));
                    }
                    fields = Some(words[1..].iter().map(|w| FieldId::new(*w)).collect());
                } else if words.get(1) == Some(&"=") {
                    let f = FieldId::new(words[0]);
                    if deps.contains_key(&f) {
                        return Err(perr(line_no, format!("dependencies of {f} given twice")));
                    }
                    deps.insert(f, words[2..].iter().map(|w| FieldId::new(*w)).collect());
                } else {
                    return Err(perr(line_no, "expected `fields ...` or `X = deps...`"));
                }
            }
            Section::Agents => {
                let id = AgentId::new(words[0]);
                let mut errors = BTreeMap::new();
                for w in &words[1..] {
                    let (k, v) = w
                        .split_once('=')
                        .ok_or_else(|| perr(line_no, format!("expected key=value, got {w:?}")))?;
                    if k == "join" {
                        let t: Tick = v.parse().map_err(|_| perr(line_no, "bad join tick"))?;
                        joins.insert(id.clone(), t);
                        continue;
                    }
                    let e: f64 = v
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad error value {v:?}")))?;
                    if check_fraction(e).is_err() {
                        return Err(perr(line_no, format!("error {e} outside [0,1]")));
                    }
                    if errors.insert(FieldId::new(k), e).is_some() {
                        return Err(perr(line_no, format!("field {k} repeated")));
                    }
                }
                if id.is_omega() {
                    if omega_error.is_some() {
                        return Err(perr(line_no, "Ω declared twice"));
                    }
                    if errors.len() != 1 || !errors.contains_key(&FieldId::message()) {
                        return Err(perr(line_no, "Ω takes only an M error"));
                    }
                    omega_error = errors.get(&FieldId::message()).copied();
                } else {
                    if agents.iter().any(|(_, p)| p.agent == id) {
                        return Err(perr(line_no, format!("agent {id} declared twice")));
                    }
                    agents.push((line_no, AgentProfile::new(id, errors)));
                }
            }
            Section::Budgets => {
                if words.len() != 2 {
                    return Err(perr(line_no, "expected `agent budget`"));
                }
                let b: u64 = words[1].parse().map_err(|_| perr(line_no, "bad budget"))?;
                if budgets.insert(AgentId::new(words[0]), b).is_some() {
                    return Err(perr(line_no, "budget given twice"));
                }
            }
            Section::Omega => {
                if words.len() != 2 {
                    return Err(perr(line_no, "expected `tick field`"));
                }
                let tick: Tick = words[0].parse().map_err(|_| perr(line_no, "bad tick"))?;
                omega_queries.push(OmegaQuery {
                    tick,
                    field: FieldId::new(words[1]),
                });
            }
            Section::Delays => {
                if words.len() != 3 {
                    return Err(perr(line_no, "expected `sender ordinal delay`"));
                }
                let ordinal: u64 = words[1].parse().map_err(|_| perr(line_no, "bad ordinal"))?;
                let delay: u64 = words[2].parse().map_err(|_| perr(line_no, "bad delay"))?;
                if ordinal == 0 || delay == 0 {
                    return Err(perr(line_no, "ordinals and delays start at 1"));
                }
                delays.get_or_insert_with(Vec::new).push(DelayEntry {
                    sender: AgentId::new(words[0]),
                    ordinal,
                    delay,
                });
            }
            Section::Script => {
                script.push(parse_script_line(&words).map_err(|r| perr(line_no, r))?);
            }
            Section::Engine => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| perr(line_no, "expected `key = value`"))?;
                let (k, v) = (k.trim(), v.trim());
                apply_override(&mut SimConfig::default(), k, v).map_err(|r| perr(line_no, r))?;
                overrides.push((k.to_string(), v.to_string()));
            }
        }
    }

    let fields =
        fields.ok_or_else(|| ScenarioError::Validation("schema has no fields line".into()))?;
    let schema = validate_schema(FieldSchema::new(fields, deps))?;
    let scenario = Scenario {
        schema,
        agents: agents.into_iter().map(|(_, p)| p).collect(),
        omega_error,
        joins,
        budgets,
        omega_queries,
        delays,
        script,
        overrides,
    };
    check(&scenario)?;
    Ok(scenario)
}

fn check(s: &Scenario) -> Result<(), ScenarioError> {
    let bad = |m: String| Err(ScenarioError::Validation(m));
    if s.agents.is_empty() {
        return bad("no agents".into());
    }
    for p in &s.agents {
        p.check_against(&s.schema)
            .map_err(ScenarioError::Validation)?;
    }
    let ids: BTreeSet<AgentId> = s.agent_ids().into_iter().collect();
    let known = |a: &AgentId| a.is_omega() || ids.contains(a);
    for a in s.budgets.keys() {
        if !ids.contains(a) {
            return bad(format!("budget for unknown agent {a}"));
        }
    }
    let compound = compound_fields(&s.schema);
    if s.omega_queries.windows(2).any(|w| w[1].tick < w[0].tick) {
        return bad("omega queries out of order".into());
    }
    for q in &s.omega_queries {
        if !compound.contains(&q.field) {
            return bad(format!("omega query on non-compound field {}", q.field));
        }
    }
    if let Some(ds) = &s.delays {
        let mut seen = BTreeSet::new();
        for d in ds {
            if !known(&d.sender) {
                return bad(format!("delay for unknown sender {}", d.sender));
            }
            if !seen.insert((d.sender.clone(), d.ordinal)) {
                return bad(format!("delay {} #{} given twice", d.sender, d.ordinal));
            }
        }
    }
    if s.script.windows(2).any(|w| w[1].tick() < w[0].tick()) {
        return bad("script actions out of order".into());
    }
    let mut labels: BTreeSet<&str> = BTreeSet::new();
    let ref_ok = |r: &QueryRef, labels: &BTreeSet<&str>| match r {
        QueryRef::Omega(k) => (1..=s.omega_queries.len()).contains(k),
        QueryRef::Round(l) => labels.contains(l.as_str()),
    };
    for a in &s.script {
        let r = match a {
            ScriptAction::Query { parent, .. } => parent.as_ref(),
            ScriptAction::Answer { query, .. } => Some(query),
        };
        if let Some(r) = r.filter(|r| !ref_ok(r, &labels)) {
            return bad(format!("script refers to unknown round {r}"));
        }
        if let ScriptAction::Query { round, .. } = a {
            labels.insert(round);
        }
        if !ids.contains(a.agent()) {
            return bad(format!("script action for unknown peer {}", a.agent()));
        }
        if let ScriptAction::Query {
            field, recipients, ..
        } = a
        {
            if !compound.contains(field) {
                return bad(format!("scripted query on non-compound field {field}"));
            }
            if let Some(r) = recipients.iter().find(|r| !ids.contains(*r)) {
                return bad(format!("scripted query to unknown peer {r}"));
            }
        }
    }
    s.config()?;
    Ok(())
}

/// Canonical text form; `parse_scenario(&render(s)) == s`.
pub fn render(s: &Scenario) -> String {
    let mut out = String::new();
    out.push_str("[schema]\nfields");
    for f in s.schema.fields() {
        let _ = write!(out, " {f}");
    }
    out.push('\n');
    for f in s.schema.fields() {
        let ds = s.schema.deps(f);
        if !ds.is_empty() {
            let _ = write!(out, "{f} =");
            for d in ds {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
        }
    }
    out.push_str("\n[agents]\n");
    if let Some(e) = s.omega_error {
        let _ = writeln!(out, "{} {}={e}", AgentId::omega(), FieldId::message());
    }
    for p in &s.agents {
        out.push_str(p.agent.as_str());
        for f in s.schema.fields() {
            if let Some(e) = p.errors.get(f) {
                let _ = write!(out, " {f}={e}");
            }
        }
        if let Some(t) = s.joins.get(&p.agent) {
            let _ = write!(out, " join={t}");
        }
        out.push('\n');
    }
    if !s.budgets.is_empty() {
        out.push_str("\n[budgets]\n");
        for (a, b) in &s.budgets {
            let _ = writeln!(out, "{a} {b}");
        }
    }
    if !s.omega_queries.is_empty() {
        out.push_str("\n[omega]\n");
        for q in &s.omega_queries {
            let _ = writeln!(out, "{} {}", q.tick, q.field);
        }
    }
    if let Some(ds) = &s.delays {
        out.push_str("\n[delays]\n");
        for d in ds {
            let _ = writeln!(out, "{} {} {}", d.sender, d.ordinal, d.delay);
        }
    }
    if !s.script.is_empty() {
        out.push_str("\n[script]\n");
        for a in &s.script {
            match a {
                ScriptAction::Query {
                    tick,
                    agent,
                    field,
                    recipients,
                    round,
                    parent,
                } => {
                    let rs: Vec<&str> = recipients.iter().map(AgentId::as_str).collect();
                    let _ = write!(
                        out,
                        "{tick} {agent} query {field} {} round={round}",
                        rs.join(",")
                    );
                    if let Some(p) = parent {
                        let _ = write!(out, " parent={p}");
                    }
                    out.push('\n');
                }
                ScriptAction::Answer { tick, agent, query } => {
                    let _ = writeln!(out, "{tick} {agent} answer {query}");
                }
            }
        }
    }
    if !s.overrides.is_empty() {
        out.push_str("\n[engine]\n");
        for (k, v) in &s.overrides {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}

/// The three-agent car example with its full scripted schedule.
pub fn reference_example() -> Scenario {
    parse_scenario(REFERENCE_SCENARIO).expect("bundled scenario parses")
}

pub const REFERENCE_SCENARIO: &str = include_str!("../fixtures/car_replay.scn");

pub const GOLDEN_BEST0: &str = include_str!("../fixtures/golden/best0.csv");
pub const GOLDEN_REMAINING: &str = include_str!("../fixtures/golden/remaining.csv");
pub const GOLDEN_BEST: &str = include_str!("../fixtures/golden/best.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Best0,
    Best,
    Remaining,
}

impl TableKind {
    pub const ALL: [TableKind; 3] = [TableKind::Best0, TableKind::Best, TableKind::Remaining];

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Best0 => "best0",
            TableKind::Best => "best",
            TableKind::Remaining => "remaining",
        }
    }

    pub fn golden(self) -> &'static str {
        match self {
            TableKind::Best0 => GOLDEN_BEST0,
            TableKind::Best => GOLDEN_BEST,
            TableKind::Remaining => GOLDEN_REMAINING,
        }
    }
}

/// One table as CSV. `ticks` selects rows of the per-tick tables; the BEST
/// export lists the golden cells with the tick each reached its count.
pub fn export_tables(
    trace: &EventTrace,
    ticks: std::ops::RangeInclusive<Tick>,
    kind: TableKind,
) -> String {
    match kind {
        TableKind::Best0 => best0_csv(trace, *ticks.start(), *ticks.end()),
        TableKind::Remaining => remaining_csv(trace, *ticks.start(), *ticks.end()),
        TableKind::Best => best_cells_csv(trace, GOLDEN_BEST),
    }
}

/// The cells listed in `reference` (same CSV layout), recomputed from the
/// trace: final count and the tick it was reached.
pub fn best_cells_csv(trace: &EventTrace, reference: &str) -> String {
    let all = best_csv(trace);
    let mut actual: BTreeMap<(String, String, String), String> = BTreeMap::new();
    for line in all.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 5 {
            actual.insert(
                (cols[0].into(), cols[1].into(), cols[2].into()),
                format!("{},{}", cols[3], cols[4]),
            );
        }
    }
    let mut out = String::from("owner,field,agent,count,since\n");
    for line in reference.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            continue;
        }
        let key = (
            cols[0].to_string(),
            cols[1].to_string(),
            cols[2].to_string(),
        );
        let val = actual.get(&key).cloned().unwrap_or_else(|| "0,-".into());
        out.push_str(&format!("{},{},{},{val}\n", key.0, key.1, key.2));
    }
    out
}
