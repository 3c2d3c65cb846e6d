//! Holon detection from a trace: favorite graphs, formation rules, the
//! emergence timeline and head exclusivity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::behavior::select_recipients;
use crate::error::HolarchyError;
use crate::model::{AgentId, AgentProfile, AgentState, FieldId, Phase, Tick};
use crate::trace::{project_tables, EventKind, EventTrace};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Member {
    Agent(AgentId),
    Holon(Holon),
}

/// A head and its body. The body is kept sorted so equal structures compare
/// equal regardless of build order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Holon {
    pub head: AgentId,
    pub body: Vec<Member>,
    pub formed_at: Tick,
}

impl Holon {
    pub fn new(head: AgentId, mut body: Vec<Member>, formed_at: Tick) -> Self {
        body.sort();
        Holon {
            head,
            body,
            formed_at,
        }
    }

    /// Every agent in the holon, head included.
    pub fn leaves(&self) -> BTreeSet<AgentId> {
        let mut out = BTreeSet::from([self.head.clone()]);
        for m in &self.body {
            match m {
                Member::Agent(a) => {
                    out.insert(a.clone());
                }
                Member::Holon(h) => out.extend(h.leaves()),
            }
        }
        out
    }

    pub fn contains(&self, a: &AgentId) -> bool {
        self.leaves().contains(a)
    }

    /// Head and body agree, ignoring formation ticks.
    pub fn same_shape(&self, other: &Holon) -> bool {
        self.head == other.head
            && self.body.len() == other.body.len()
            && self
                .body
                .iter()
                .zip(&other.body)
                .all(|(a, b)| match (a, b) {
                    (Member::Agent(x), Member::Agent(y)) => x == y,
                    (Member::Holon(x), Member::Holon(y)) => x.same_shape(y),
                    _ => false,
                })
    }

    /// No agent appears twice and the head is not in its own body.
    pub fn is_tree(&self) -> bool {
        fn count(h: &Holon, seen: &mut BTreeSet<AgentId>) -> bool {
            if !seen.insert(h.head.clone()) {
                return false;
            }
            h.body.iter().all(|m| match m {
                Member::Agent(a) => seen.insert(a.clone()),
                Member::Holon(sub) => count(sub, seen),
            })
        }
        count(self, &mut BTreeSet::new())
    }

    pub fn with_formed_at(mut self, t: Tick) -> Self {
        self.formed_at = t;
        self
    }
}

impl fmt::Display for Holon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.head)?;
        for (i, m) in self.body.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match m {
                Member::Agent(a) => write!(f, "{a}")?,
                Member::Holon(h) => write!(f, "{h}")?,
            }
        }
        f.write_str("]")
    }
}

/// Who prefers whom at one tick, plus the budgets needed to judge
/// whether a head can still respond.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FavoriteGraph {
    pub tick: Tick,
    pub nodes: BTreeSet<AgentId>,
    pub edges: BTreeMap<AgentId, BTreeSet<AgentId>>,
    pub remaining: BTreeMap<AgentId, u64>,
}

impl FavoriteGraph {
    pub fn favorites(&self, a: &AgentId) -> Option<&BTreeSet<AgentId>> {
        self.edges.get(a).filter(|s| !s.is_empty())
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    fn exhausted(&self, a: &AgentId) -> bool {
        self.remaining.get(a) == Some(&0)
    }
}

/// Favorite edges at the end of tick `t`.
///
/// Ω points at the peers it would query next when that set has at most `k`
/// members; its view accounts for the timeouts it has observed. A peer points
/// at its top `k` other peers with a positive count on some field, while it
/// still has messages to query them with.
pub fn favorite_graph(trace: &EventTrace, t: Tick, k: usize) -> FavoriteGraph {
    let snap = project_tables(trace, t);
    let mut g = FavoriteGraph {
        tick: t,
        remaining: snap.remaining.clone(),
        ..FavoriteGraph::default()
    };
    let omega = AgentId::omega();
    let mut omega_state = AgentState::new(AgentProfile::new(omega.clone(), BTreeMap::new()), 0);
    omega_state.unlimited = true;
    for e in trace.prefix(t) {
        match e.event {
            EventKind::Join => {
                g.nodes.insert(e.first().clone());
                if !e.first().is_omega() {
                    omega_state.peers.insert(e.first().clone());
                }
            }
            EventKind::Timeout if e.first().is_omega() => {
                if let Some(p) = e.second() {
                    omega_state.unresponsive.insert(p.clone());
                }
            }
            EventKind::TableUpdate if e.first().is_omega() => {
                if let (Some(p), Some(field)) = (e.second(), &e.field) {
                    omega_state.best.increment(field, p);
                    omega_state.phase = Phase::Phase2;
                }
            }
            _ => {}
        }
    }
    if omega_state.phase == Phase::Phase2 {
        let m = FieldId::message();
        if let Ok(tier) = select_recipients(&omega_state, &m, &omega_state.peers, &BTreeSet::new())
        {
            if tier.len() <= k {
                g.edges.insert(omega.clone(), tier.into_iter().collect());
            }
        }
    }

    for (owner, cells) in &snap.best {
        if g.exhausted(owner) {
            continue;
        }
        let mut per_field: BTreeMap<&FieldId, Vec<(u64, &AgentId)>> = BTreeMap::new();
        for ((field, agent), count) in cells {
            if *count > 0 && agent != owner && !agent.is_omega() {
                per_field.entry(field).or_default().push((*count, agent));
            }
        }
        let mut favs = BTreeSet::new();
        for (_, mut ranked) in per_field {
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            favs.extend(ranked.into_iter().take(k).map(|(_, a)| a.clone()));
        }
        if !favs.is_empty() {
            g.edges.insert(owner.clone(), favs);
        }
    }
    g
}

fn agents(ids: impl IntoIterator<Item = AgentId>) -> Vec<Member> {
    ids.into_iter().map(Member::Agent).collect()
}

/// Applies the formation rules to a favorite graph.
///
/// 1. When Ω has a single favorite, that favorite heads a holon whose body
///    is every other peer; a peer with a single favorite likewise roots a
///    holon headed by it.
/// 2. A member preferring an outside agent absorbs it.
/// 3. An outsider preferring the heads of two holons becomes the head of
///    their merger.
///
/// Holons that match one in `prior` keep its formation tick. Peer-rooted
/// holons dissolve once their head has no messages left.
pub fn detect_holons(graph: &FavoriteGraph, prior: &[Holon], t: Tick) -> Vec<Holon> {
    let omega = AgentId::omega();
    let peers: BTreeSet<AgentId> = graph
        .nodes
        .iter()
        .filter(|a| !a.is_omega())
        .cloned()
        .collect();

    let mut top: Option<Holon> = None;
    if let Some(favs) = graph.favorites(&omega) {
        if favs.len() == 1 {
            let head = favs.iter().next().unwrap().clone();
            let body = peers
                .iter()
                .filter(|p| **p != head)
                .cloned()
                .collect::<Vec<_>>();
            top = Some(Holon::new(head, agents(body), t));
        }
    }

    // Rule 1 for peers, heads in id order.
    let mut peer_holons: BTreeMap<AgentId, BTreeSet<AgentId>> = BTreeMap::new();
    for (src, favs) in &graph.edges {
        if src.is_omega() || favs.len() != 1 {
            continue;
        }
        let head = favs.iter().next().unwrap();
        if graph.exhausted(head) || head == src {
            continue;
        }
        peer_holons
            .entry(head.clone())
            .or_default()
            .insert(src.clone());
    }
    // Rule 2: a member's choice outside the holon is absorbed.
    let mut changed = true;
    while changed {
        changed = false;
        let snapshot = peer_holons.clone();
        for (head, body) in &snapshot {
            let members: BTreeSet<&AgentId> = body.iter().chain(std::iter::once(head)).collect();
            for m in &members {
                for fav in graph.favorites(m).into_iter().flatten() {
                    let taken = members.contains(fav)
                        || snapshot
                            .iter()
                            .any(|(h, b)| h != head && (h == fav || b.contains(fav)));
                    if !taken && !fav.is_omega() {
                        peer_holons.get_mut(head).unwrap().insert(fav.clone());
                        changed = true;
                    }
                }
            }
        }
    }
    let mut built: Vec<Holon> = peer_holons
        .into_iter()
        .map(|(h, b)| Holon::new(h, agents(b), t))
        .collect();

    // Rule 3: a common chooser outside two holons heads their merger.
    loop {
        let mut merged = None;
        'outer: for (src, favs) in &graph.edges {
            if src.is_omega() {
                continue;
            }
            for i in 0..built.len() {
                for j in i + 1..built.len() {
                    let (a, b) = (&built[i], &built[j]);
                    if favs.contains(&a.head)
                        && favs.contains(&b.head)
                        && !a.contains(src)
                        && !b.contains(src)
                    {
                        merged = Some((src.clone(), i, j));
                        break 'outer;
                    }
                }
            }
        }
        let Some((src, i, j)) = merged else { break };
        let b = built.remove(j);
        let a = built.remove(i);
        built.push(Holon::new(src, vec![Member::Holon(a), Member::Holon(b)], t));
    }

    // Peer holons either nest inside the Ω holon's body, or stand alone
    // when disjoint from everything accepted so far.
    let mut out = Vec::new();
    if let Some(mut h) = top {
        for sub in built.drain(..) {
            let leaves = sub.leaves();
            let free: BTreeSet<AgentId> = h
                .body
                .iter()
                .filter_map(|m| match m {
                    Member::Agent(a) => Some(a.clone()),
                    Member::Holon(_) => None,
                })
                .collect();
            if leaves.is_subset(&free) {
                h.body
                    .retain(|m| !matches!(m, Member::Agent(a) if leaves.contains(a)));
                h.body.push(Member::Holon(sub));
                h.body.sort();
            }
        }
        out.push(h);
    }
    for h in built {
        let leaves = h.leaves();
        if out.iter().all(|o: &Holon| o.leaves().is_disjoint(&leaves)) {
            out.push(h);
        }
    }

    let out: Vec<Holon> = out
        .into_iter()
        .map(|h| match prior.iter().find(|p| p.same_shape(&h)) {
            Some(p) => h.with_formed_at(p.formed_at),
            None => h,
        })
        .collect();
    let mut out = out;
    out.sort_by(|a, b| a.head.cmp(&b.head));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HolonChange {
    Emerged(AgentId),
    Dissolved(AgentId),
}

impl fmt::Display for HolonChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HolonChange::Emerged(h) => write!(f, "emerged,{h}"),
            HolonChange::Dissolved(h) => write!(f, "dissolved,{h}"),
        }
    }
}

/// Holons detected at every tick from 0 to the last event.
pub fn holons_per_tick(trace: &EventTrace, k: usize) -> Vec<(Tick, Vec<Holon>)> {
    let mut out: Vec<(Tick, Vec<Holon>)> = Vec::new();
    if trace.is_empty() {
        return out;
    }
    let mut prior = Vec::new();
    for t in 0..=trace.last_tick() {
        let g = favorite_graph(trace, t, k);
        let hs = detect_holons(&g, &prior, t);
        prior = hs.clone();
        out.push((t, hs));
    }
    out
}

/// Emergence and dissolution of top-level holons, by head.
///
/// When one head replaces another in the same tick only the emergence is
/// reported: the structure survives under new leadership.
pub fn holon_timeline(trace: &EventTrace, k: usize) -> Vec<(Tick, HolonChange)> {
    let mut out = Vec::new();
    let mut prev: BTreeSet<AgentId> = BTreeSet::new();
    for (t, hs) in holons_per_tick(trace, k) {
        let now: BTreeSet<AgentId> = hs.iter().map(|h| h.head.clone()).collect();
        let gone: Vec<&AgentId> = prev.difference(&now).collect();
        let new: Vec<&AgentId> = now.difference(&prev).collect();
        if new.is_empty() {
            out.extend(
                gone.into_iter()
                    .map(|h| (t, HolonChange::Dissolved(h.clone()))),
            );
        }
        out.extend(
            new.into_iter()
                .map(|h| (t, HolonChange::Emerged(h.clone()))),
        );
        prev = now;
    }
    out
}

pub fn timeline_csv(timeline: &[(Tick, HolonChange)]) -> String {
    let mut out = String::from("tick,event,head\n");
    for (t, c) in timeline {
        out.push_str(&format!("{t},{c}\n"));
    }
    out
}

/// Share of boundary-crossing sends in `window` whose inside endpoint is
/// the head. 1.0 when nothing crosses.
pub fn head_exclusivity(
    trace: &EventTrace,
    holon: &Holon,
    window: std::ops::RangeInclusive<Tick>,
    k: usize,
) -> Result<f64, HolarchyError> {
    let per_tick = holons_per_tick(trace, k);
    for t in window.clone() {
        let active = per_tick
            .get(t as usize)
            .map(|(_, hs)| hs.iter().any(|h| h.head == holon.head))
            .unwrap_or(false);
        if !active {
            return Err(HolarchyError::HolonInactive(holon.head.clone()));
        }
    }
    Ok(exclusivity_of(trace, holon, window))
}

/// The ratio alone, without checking that the holon is active.
pub fn exclusivity_of(
    trace: &EventTrace,
    holon: &Holon,
    window: std::ops::RangeInclusive<Tick>,
) -> f64 {
    let inside = holon.leaves();
    let (mut crossing, mut via_head) = (0u64, 0u64);
    for e in trace.events() {
        if e.event != EventKind::Send || !window.contains(&e.tick) {
            continue;
        }
        let (Some(from), Some(to)) = (e.agents.first(), e.agents.get(1)) else {
            continue;
        };
        let (fi, ti) = (inside.contains(from), inside.contains(to));
        if fi == ti {
            continue;
        }
        crossing += 1;
        let endpoint = if fi { from } else { to };
        if *endpoint == holon.head {
            via_head += 1;
        }
    }
    if crossing == 0 {
        1.0
    } else {
        via_head as f64 / crossing as f64
    }
}
