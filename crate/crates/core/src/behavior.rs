//! Per-agent decision rules: querying, recipient choice, answering, fusion,
//! mode switching and CHECK IN handling.
//!
//! Every rule is a function over borrowed state; callers own mutation and
//! the random stream. Each probabilistic rule consumes a fixed number of
//! draws so replays stay aligned.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{
    AgentId, AgentState, BestTable, FieldId, Message, Mode, Phase, SimConfig, Tick,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "error")]
pub enum AnswerDecision {
    Answer(f64),
    DeclineLowerQuality,
    DeclineNoBudget,
    DeclineLottery,
}

impl AnswerDecision {
    /// Declines the querier gets to see. An exhausted agent sends nothing.
    pub fn is_visible_decline(&self) -> bool {
        matches!(
            self,
            AnswerDecision::DeclineLowerQuality | AnswerDecision::DeclineLottery
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    SelfWins,
    Peer(AgentId),
}

impl Winner {
    pub fn resolve(&self, owner: &AgentId) -> AgentId {
        match self {
            Winner::SelfWins => owner.clone(),
            Winner::Peer(a) => a.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckInVerdict {
    Accept,
    Reject,
}

/// Query about `field` with probability `1 - quality = error`. One draw.
pub fn decide_query<R: Rng + ?Sized>(
    agent: &AgentState,
    field: &FieldId,
    rng: &mut R,
) -> Result<bool, ModelError> {
    let error = agent.profile.error(field)?;
    let u: f64 = rng.gen();
    Ok(u < error)
}

/// Recipients for a query on `field`.
///
/// Broadcast while the agent is still discovering (phase 1, or no peer has a
/// positive count for the field). Otherwise the highest-count tier of peers,
/// skipping tiers whose every member is known to be unresponsive; if every
/// tier is exhausted the agent falls back to broadcast.
pub fn select_recipients(
    agent: &AgentState,
    field: &FieldId,
    peers: &BTreeSet<AgentId>,
    parent_chain: &BTreeSet<AgentId>,
) -> Result<Vec<AgentId>, ModelError> {
    let candidates: Vec<AgentId> = peers
        .iter()
        .filter(|p| **p != agent.id && !p.is_omega() && !parent_chain.contains(*p))
        .cloned()
        .collect();
    if candidates.is_empty() {
        return Err(ModelError::NoEligiblePeers(field.clone()));
    }
    let discriminating = agent.phase == Phase::Phase2 || agent.mode == Mode::Intelligent;
    let any_positive = candidates.iter().any(|p| agent.best.count(field, p) > 0);
    if !discriminating || !any_positive {
        return Ok(candidates);
    }
    let mut tiers: BTreeMap<std::cmp::Reverse<u64>, Vec<AgentId>> = BTreeMap::new();
    for p in &candidates {
        tiers
            .entry(std::cmp::Reverse(agent.best.count(field, p)))
            .or_default()
            .push(p.clone());
    }
    for members in tiers.values() {
        let live: Vec<AgentId> = members
            .iter()
            .filter(|p| !agent.unresponsive.contains(*p))
            .cloned()
            .collect();
        if !live.is_empty() {
            return Ok(live);
        }
    }
    Ok(candidates)
}

/// Annealing probability of answering despite lower quality.
pub fn anneal_probability(t: Tick, cfg: &SimConfig) -> f64 {
    cfg.anneal_p0 * (-(t as f64) / cfg.tau()).exp()
}

/// Whether `responder` answers `query`.
///
/// Draws: one for the lottery when under the budget threshold, one for
/// annealing when the responder is not strictly better and `p(t) > 0`.
pub fn decide_answer<R: Rng + ?Sized>(
    responder: &AgentState,
    query: &Message,
    querier_error: f64,
    t: Tick,
    cfg: &SimConfig,
    rng: &mut R,
) -> AnswerDecision {
    if !responder.can_send() {
        return AnswerDecision::DeclineNoBudget;
    }
    let error = responder.profile.error(&query.field).unwrap_or(1.0);
    if !responder.unlimited
        && cfg.lottery_threshold_pct > 0.0
        && (responder.remaining_messages as f64)
            < cfg.lottery_threshold_pct * responder.budget as f64
    {
        let u: f64 = rng.gen();
        if u < cfg.lottery_p {
            return AnswerDecision::DeclineLottery;
        }
    }
    if error < querier_error {
        return AnswerDecision::Answer(error);
    }
    let p = anneal_probability(t, cfg);
    if p > 0.0 {
        let u: f64 = rng.gen();
        if u < p {
            return AnswerDecision::Answer(error);
        }
    }
    AnswerDecision::DeclineLowerQuality
}

/// Least-error response wins; the owner wins ties, then the lowest id.
pub fn fuse_responses(own_error: f64, responses: &[(AgentId, f64)]) -> (Winner, f64) {
    let mut best = (Winner::SelfWins, own_error);
    let mut sorted: Vec<&(AgentId, f64)> = responses.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (agent, err) in sorted {
        if *err < best.1 {
            best = (Winner::Peer(agent.clone()), *err);
        }
    }
    best
}

pub fn record_outcome(
    mut best: BestTable,
    field: &FieldId,
    winner: &Winner,
    owner: &AgentId,
) -> BestTable {
    best.increment(field, &winner.resolve(owner));
    best
}

/// Switches to intelligent mode once timeouts reach the threshold. Sticky.
/// Returns true when the switch happened now.
pub fn check_mode_switch(agent: &mut AgentState, cfg: &SimConfig) -> bool {
    if agent.mode == Mode::Unrestricted && agent.total_timeouts() >= cfg.timeout_switch_threshold {
        agent.mode = Mode::Intelligent;
        return true;
    }
    false
}

/// An agent below the message threshold does not recognize a newcomer.
pub fn handle_checkin(
    agent: &AgentState,
    newcomer: &AgentId,
    cfg: &SimConfig,
) -> Result<CheckInVerdict, ModelError> {
    if agent.peers.contains(newcomer) {
        return Err(ModelError::DuplicatePeer(newcomer.clone()));
    }
    if agent.unlimited || agent.remaining_messages >= cfg.checkin_threshold {
        Ok(CheckInVerdict::Accept)
    } else {
        Ok(CheckInVerdict::Reject)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentProfile, MessageId, MessageKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(id: &str, errors: &[(&str, f64)], budget: u64) -> AgentState {
        let errors = errors
            .iter()
            .map(|(f, e)| (FieldId::from(*f), *e))
            .collect();
        let mut a = AgentState::new(AgentProfile::new(id.into(), errors), budget);
        a.peers = ["α", "β", "γ", "Ω"]
            .iter()
            .map(|s| AgentId::from(*s))
            .collect();
        a
    }

    fn query(field: &str, from: &str, to: &str) -> Message {
        Message {
            id: MessageId(1),
            kind: MessageKind::Query,
            field: field.into(),
            sender: from.into(),
            recipient: to.into(),
            parent: None,
            sent_at: 1,
            payload_error: None,
            accepted: None,
        }
    }

    fn replay_cfg() -> SimConfig {
        SimConfig {
            anneal_p0: 0.0,
            lottery_threshold_pct: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn decide_query_extremes_and_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = agent("α", &[("D", 0.20), ("Z", 0.0), ("O", 1.0)], 10);
        for _ in 0..1000 {
            assert!(!decide_query(&a, &"Z".into(), &mut rng).unwrap());
            assert!(decide_query(&a, &"O".into(), &mut rng).unwrap());
        }
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| decide_query(&a, &"D".into(), &mut rng).unwrap())
            .count();
        let p = hits as f64 / n as f64;
        let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((p - 0.2).abs() < 4.0 * sigma, "{p}");
        assert!(decide_query(&a, &"Q".into(), &mut rng).is_err());
    }

    #[test]
    fn omega_routes_to_best_peer() {
        let mut omega = agent("Ω", &[("M", 1.0)], 0);
        omega.phase = Phase::Phase2;
        omega.best.increment(&"M".into(), &"α".into());
        let none = BTreeSet::new();
        let r = select_recipients(&omega, &"M".into(), &omega.peers.clone(), &none).unwrap();
        assert_eq!(r, vec![AgentId::from("α")]);
    }

    #[test]
    fn falls_back_to_next_frequency_tier() {
        let mut omega = agent("Ω", &[("M", 1.0)], 0);
        omega.phase = Phase::Phase2;
        for _ in 0..6 {
            omega.best.increment(&"M".into(), &"α".into());
        }
        omega.unresponsive.insert("α".into());
        let r =
            select_recipients(&omega, &"M".into(), &omega.peers.clone(), &BTreeSet::new()).unwrap();
        assert_eq!(r, vec![AgentId::from("β"), AgentId::from("γ")]);
    }

    #[test]
    fn parent_chain_is_excluded() {
        let a = agent("α", &[("A", 0.05)], 10);
        let peers: BTreeSet<AgentId> = ["β", "γ"].iter().map(|s| AgentId::from(*s)).collect();
        let chain = BTreeSet::from([AgentId::from("β")]);
        assert_eq!(
            select_recipients(&a, &"A".into(), &peers, &chain).unwrap(),
            vec![AgentId::from("γ")]
        );
        let chain: BTreeSet<AgentId> = peers.clone();
        assert!(matches!(
            select_recipients(&a, &"A".into(), &peers, &chain),
            Err(ModelError::NoEligiblePeers(_))
        ));
    }

    #[test]
    fn answer_rules_follow_the_example() {
        let cfg = replay_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = agent("β", &[("A", 0.25), ("C", 0.10)], 10);
        assert_eq!(
            decide_answer(&beta, &query("A", "α", "β"), 0.05, 5, &cfg, &mut rng),
            AnswerDecision::DeclineLowerQuality
        );
        assert_eq!(
            decide_answer(&beta, &query("C", "α", "β"), 0.15, 18, &cfg, &mut rng),
            AnswerDecision::Answer(0.10)
        );
        let mut broke = beta.clone();
        broke.remaining_messages = 0;
        assert_eq!(
            decide_answer(&broke, &query("C", "α", "β"), 0.99, 1, &cfg, &mut rng),
            AnswerDecision::DeclineNoBudget
        );
    }

    #[test]
    fn equal_error_is_not_strictly_lower() {
        let cfg = replay_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gamma = agent("γ", &[("D", 0.15)], 10);
        assert_eq!(
            decide_answer(&gamma, &query("D", "β", "γ"), 0.15, 9, &cfg, &mut rng),
            AnswerDecision::DeclineLowerQuality
        );
    }

    #[test]
    fn annealing_lets_worse_agents_answer_early() {
        let cfg = SimConfig {
            anneal_p0: 1.0,
            anneal_tau: Some(1e9),
            lottery_threshold_pct: 0.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = agent("β", &[("A", 0.25)], 10);
        assert_eq!(
            decide_answer(&beta, &query("A", "α", "β"), 0.05, 0, &cfg, &mut rng),
            AnswerDecision::Answer(0.25)
        );
        assert!((anneal_probability(0, &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lottery_applies_under_threshold() {
        let cfg = SimConfig {
            anneal_p0: 0.0,
            lottery_threshold_pct: 0.5,
            lottery_p: 1.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut beta = agent("β", &[("C", 0.10)], 10);
        beta.remaining_messages = 4;
        assert_eq!(
            decide_answer(&beta, &query("C", "α", "β"), 0.15, 1, &cfg, &mut rng),
            AnswerDecision::DeclineLottery
        );
        beta.remaining_messages = 5;
        assert_eq!(
            decide_answer(&beta, &query("C", "α", "β"), 0.15, 1, &cfg, &mut rng),
            AnswerDecision::Answer(0.10)
        );
    }

    #[test]
    fn fusion_picks_least_error() {
        let (w, e) = fuse_responses(1.0, &[("β".into(), 0.10), ("α".into(), 0.05)]);
        assert_eq!(w, Winner::Peer("α".into()));
        assert_eq!(e, 0.05);
        assert_eq!(fuse_responses(0.15, &[]), (Winner::SelfWins, 0.15));
    }

    #[test]
    fn fusion_tie_break_matches_enumerated_orders() {
        // Oracle: every permutation of the candidate list must agree with
        // the documented rule (self first, then lexicographic).
        let cases: Vec<(f64, Vec<(AgentId, f64)>, Winner)> = vec![
            (0.10, vec![("γ".into(), 0.10)], Winner::SelfWins),
            (
                0.30,
                vec![("γ".into(), 0.10), ("β".into(), 0.10)],
                Winner::Peer("β".into()),
            ),
            (
                0.10,
                vec![("γ".into(), 0.10), ("β".into(), 0.10)],
                Winner::SelfWins,
            ),
        ];
        for (own, resp, expected) in cases {
            let mut perms = vec![resp.clone()];
            let mut rev = resp.clone();
            rev.reverse();
            perms.push(rev);
            for p in perms {
                assert_eq!(fuse_responses(own, &p).0, expected);
            }
        }
    }

    #[test]
    fn record_outcome_maps_self_to_owner() {
        let t = BestTable::new("α".into());
        let t = record_outcome(t, &"A".into(), &Winner::SelfWins, &"α".into());
        assert_eq!(t.count(&"A".into(), &"α".into()), 1);
        let t = record_outcome(t, &"C".into(), &Winner::Peer("β".into()), &"α".into());
        assert_eq!(t.count(&"C".into(), &"β".into()), 1);
        assert_eq!(t.total(), 2);
    }

    #[test]
    fn mode_switch_boundary_and_stickiness() {
        let cfg = SimConfig {
            timeout_switch_threshold: 2,
            ..SimConfig::default()
        };
        let mut a = agent("α", &[], 10);
        assert!(!check_mode_switch(&mut a, &cfg));
        assert_eq!(a.mode, Mode::Unrestricted);
        a.timeout_counts.insert("β".into(), 2);
        assert!(check_mode_switch(&mut a, &cfg));
        assert_eq!(a.mode, Mode::Intelligent);
        a.timeout_counts.clear();
        assert!(!check_mode_switch(&mut a, &cfg));
        assert_eq!(a.mode, Mode::Intelligent);
    }

    #[test]
    fn checkin_threshold_semantics() {
        let cfg = SimConfig {
            checkin_threshold: 3,
            ..SimConfig::default()
        };
        let mut a = agent("α", &[], 10);
        let newcomer = AgentId::from("δ");
        assert_eq!(
            handle_checkin(&a, &newcomer, &cfg).unwrap(),
            CheckInVerdict::Accept
        );
        a.remaining_messages = 2;
        assert_eq!(
            handle_checkin(&a, &newcomer, &cfg).unwrap(),
            CheckInVerdict::Reject
        );
        a.remaining_messages = 3;
        assert_eq!(
            handle_checkin(&a, &newcomer, &cfg).unwrap(),
            CheckInVerdict::Accept
        );
        assert!(matches!(
            handle_checkin(&a, &"β".into(), &cfg),
            Err(ModelError::DuplicatePeer(_))
        ));
    }
}
