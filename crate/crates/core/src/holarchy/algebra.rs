//! Finite multiagent systems, holon composition and system collapse.
//!
//! Sets are index ranges `0..n`. Tuples are packed in mixed radix with the
//! first component most significant.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::HolarchyError;
use crate::model::AgentId;

/// Largest global state space `collapse_system` and `verify_isomorphism`
/// will enumerate.
pub const STATE_CAP: u128 = 1_000_000;

/// Packs `digits` against `radices`.
pub fn pack(digits: &[usize], radices: &[usize]) -> usize {
    digits
        .iter()
        .zip(radices)
        .fold(0, |acc, (d, r)| acc * r + d)
}

pub fn unpack(mut code: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for i in (0..radices.len()).rev() {
        out[i] = code % radices[i];
        code /= radices[i];
    }
    out
}

/// An agent with states S, perceptions P, actions A and a total map
/// `phi: S x P -> S x A`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbstractAgent {
    pub states: usize,
    pub perceptions: usize,
    pub actions: usize,
    /// Indexed by `s * perceptions + p`.
    pub phi: Vec<(usize, usize)>,
}

impl AbstractAgent {
    pub fn new(
        states: usize,
        perceptions: usize,
        actions: usize,
        phi: Vec<(usize, usize)>,
    ) -> Result<Self, HolarchyError> {
        let a = AbstractAgent {
            states,
            perceptions,
            actions,
            phi,
        };
        a.check()?;
        Ok(a)
    }

    /// One state, one perception, one action: does nothing.
    pub fn neutral() -> Self {
        AbstractAgent {
            states: 1,
            perceptions: 1,
            actions: 1,
            phi: vec![(0, 0)],
        }
    }

    pub fn check(&self) -> Result<(), HolarchyError> {
        if self.states == 0 || self.perceptions == 0 || self.actions == 0 {
            return Err(HolarchyError::InvalidSystem(
                "empty state, perception or action set".into(),
            ));
        }
        if self.phi.len() != self.states * self.perceptions {
            return Err(HolarchyError::InvalidSystem("phi is not total".into()));
        }
        if self
            .phi
            .iter()
            .any(|(s, a)| *s >= self.states || *a >= self.actions)
        {
            return Err(HolarchyError::InvalidSystem(
                "phi leaves its codomain".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self, s: usize, p: usize) -> (usize, usize) {
        self.phi[s * self.perceptions + p]
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        max_states: usize,
        max_perceptions: usize,
        max_actions: usize,
    ) -> Self {
        let states = rng.gen_range(1..=max_states);
        let perceptions = rng.gen_range(1..=max_perceptions);
        let actions = rng.gen_range(1..=max_actions);
        let phi = (0..states * perceptions)
            .map(|_| (rng.gen_range(0..states), rng.gen_range(0..actions)))
            .collect();
        AbstractAgent {
            states,
            perceptions,
            actions,
            phi,
        }
    }

    /// Componentwise product of `parts` in the given order.
    pub fn product(parts: &[&AbstractAgent]) -> AbstractAgent {
        let sr: Vec<usize> = parts.iter().map(|a| a.states).collect();
        let pr: Vec<usize> = parts.iter().map(|a| a.perceptions).collect();
        let ar: Vec<usize> = parts.iter().map(|a| a.actions).collect();
        let states = sr.iter().product();
        let perceptions = pr.iter().product();
        let mut phi = Vec::with_capacity(states * perceptions);
        for s in 0..states {
            let ss = unpack(s, &sr);
            for p in 0..perceptions {
                let ps = unpack(p, &pr);
                let (mut ns, mut na) = (
                    Vec::with_capacity(parts.len()),
                    Vec::with_capacity(parts.len()),
                );
                for (i, a) in parts.iter().enumerate() {
                    let (s2, a2) = a.step(ss[i], ps[i]);
                    ns.push(s2);
                    na.push(a2);
                }
                phi.push((pack(&ns, &sr), pack(&na, &ar)));
            }
        }
        AbstractAgent {
            states,
            perceptions,
            actions: ar.iter().product(),
            phi,
        }
    }
}

/// A holon seen as one agent: its members keyed by id. The product agent is
/// built in id order, so composition is literally commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HolonAgent {
    pub members: BTreeMap<AgentId, AbstractAgent>,
}

impl HolonAgent {
    /// The holon that does nothing.
    pub fn neutral() -> Self {
        HolonAgent::default()
    }

    pub fn single(id: AgentId, agent: AbstractAgent) -> Self {
        HolonAgent {
            members: BTreeMap::from([(id, agent)]),
        }
    }

    pub fn as_agent(&self) -> AbstractAgent {
        let parts: Vec<&AbstractAgent> = self.members.values().collect();
        AbstractAgent::product(&parts)
    }
}

pub fn compose(h1: &HolonAgent, h2: &HolonAgent) -> Result<HolonAgent, HolarchyError> {
    let overlap: Vec<String> = h1
        .members
        .keys()
        .filter(|k| h2.members.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !overlap.is_empty() {
        return Err(HolarchyError::OverlappingMembers(overlap));
    }
    let mut members = h1.members.clone();
    members.extend(h2.members.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(HolonAgent { members })
}

/// Agents plus an environment `e` with perception map `perceive[e][i]` and
/// transition `delta[e * |A_1 x .. x A_n| + pack(actions)]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyMAS {
    pub agents: Vec<AbstractAgent>,
    pub env_states: usize,
    pub perceive: Vec<Vec<usize>>,
    pub delta: Vec<usize>,
}

impl ToyMAS {
    pub fn check(&self) -> Result<(), HolarchyError> {
        let bad = |m: &str| Err(HolarchyError::InvalidSystem(m.into()));
        if self.env_states == 0 || self.agents.is_empty() {
            return bad("no environment states or no agents");
        }
        for a in &self.agents {
            a.check()?;
        }
        if self.perceive.len() != self.env_states {
            return bad("perceive is not total");
        }
        for row in &self.perceive {
            if row.len() != self.agents.len()
                || row
                    .iter()
                    .zip(&self.agents)
                    .any(|(p, a)| *p >= a.perceptions)
            {
                return bad("perception out of range");
            }
        }
        if self.delta.len() != self.env_states * self.action_space() {
            return bad("delta is not total");
        }
        if self.delta.iter().any(|e| *e >= self.env_states) {
            return bad("delta leaves the environment");
        }
        Ok(())
    }

    pub fn action_radices(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.actions).collect()
    }

    pub fn state_radices(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.states).collect()
    }

    pub fn action_space(&self) -> usize {
        self.action_radices().iter().product()
    }

    /// `|E| * |S_1| * .. * |S_n|` without overflow.
    pub fn global_size(&self) -> u128 {
        self.agents.iter().fold(self.env_states as u128, |acc, a| {
            acc.saturating_mul(a.states as u128)
        })
    }

    /// One synchronous step from the global state `(e, s_1, .., s_n)`.
    pub fn global_step(&self, state: &[usize]) -> Vec<usize> {
        let e = state[0];
        let mut next = Vec::with_capacity(state.len());
        let mut actions = Vec::with_capacity(self.agents.len());
        next.push(0);
        for (i, a) in self.agents.iter().enumerate() {
            let (s2, act) = a.step(state[i + 1], self.perceive[e][i]);
            next.push(s2);
            actions.push(act);
        }
        next[0] = self.delta[e * self.action_space() + pack(&actions, &self.action_radices())];
        next
    }

    /// Every global state, environment first.
    pub fn global_states(&self) -> Result<Vec<Vec<usize>>, HolarchyError> {
        let size = self.global_size();
        if size > STATE_CAP {
            return Err(HolarchyError::StateSpaceTooLarge(size));
        }
        let mut radices = vec![self.env_states];
        radices.extend(self.state_radices());
        Ok((0..size as usize).map(|c| unpack(c, &radices)).collect())
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_agents: usize,
        max_states: usize,
        max_env: usize,
    ) -> Self {
        let agents: Vec<AbstractAgent> = (0..n_agents)
            .map(|_| AbstractAgent::random(rng, max_states, 2, 2))
            .collect();
        let env_states = rng.gen_range(1..=max_env);
        let perceive = (0..env_states)
            .map(|_| {
                agents
                    .iter()
                    .map(|a| rng.gen_range(0..a.perceptions))
                    .collect()
            })
            .collect();
        let actions: usize = agents.iter().map(|a| a.actions).product();
        let delta = (0..env_states * actions)
            .map(|_| rng.gen_range(0..env_states))
            .collect();
        ToyMAS {
            agents,
            env_states,
            perceive,
            delta,
        }
    }
}

/// The tupling map from the original global states to the collapsed ones:
/// `(e, s_1, .., s_n) -> (e, pack(s_subset), s_rest..)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Psi {
    pub subset: Vec<usize>,
    pub rest: Vec<usize>,
    subset_radices: Vec<usize>,
}

impl Psi {
    pub fn apply(&self, state: &[usize]) -> Vec<usize> {
        let digits: Vec<usize> = self.subset.iter().map(|i| state[i + 1]).collect();
        let mut out = vec![state[0], pack(&digits, &self.subset_radices)];
        out.extend(self.rest.iter().map(|i| state[i + 1]));
        out
    }
}

/// Replaces the agents in `subset` by one holon agent placed first.
///
/// An empty subset inserts the neutral agent, which leaves the dynamics
/// unchanged.
pub fn collapse_system(mas: &ToyMAS, subset: &[usize]) -> Result<(ToyMAS, Psi), HolarchyError> {
    mas.check()?;
    let size = mas.global_size();
    if size > STATE_CAP {
        return Err(HolarchyError::StateSpaceTooLarge(size));
    }
    let mut subset = subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    if subset.iter().any(|i| *i >= mas.agents.len()) {
        return Err(HolarchyError::InvalidSystem(
            "subset index out of range".into(),
        ));
    }
    let rest: Vec<usize> = (0..mas.agents.len())
        .filter(|i| !subset.contains(i))
        .collect();
    let parts: Vec<&AbstractAgent> = subset.iter().map(|i| &mas.agents[*i]).collect();
    let holon = AbstractAgent::product(&parts);

    let mut agents = vec![holon.clone()];
    agents.extend(rest.iter().map(|i| mas.agents[*i].clone()));

    let sub_p: Vec<usize> = parts.iter().map(|a| a.perceptions).collect();
    let perceive = mas
        .perceive
        .iter()
        .map(|row| {
            let digits: Vec<usize> = subset.iter().map(|i| row[*i]).collect();
            let mut r = vec![pack(&digits, &sub_p)];
            r.extend(rest.iter().map(|i| row[*i]));
            r
        })
        .collect();

    let sub_a: Vec<usize> = parts.iter().map(|a| a.actions).collect();
    let new_radices: Vec<usize> = agents.iter().map(|a| a.actions).collect();
    let new_space: usize = new_radices.iter().product();
    let old_radices = mas.action_radices();
    let old_space = mas.action_space();
    let mut delta = vec![0; mas.env_states * new_space];
    for e in 0..mas.env_states {
        for code in 0..new_space {
            let digits = unpack(code, &new_radices);
            let mut original = vec![0; mas.agents.len()];
            for (j, a) in unpack(digits[0], &sub_a).into_iter().enumerate() {
                original[subset[j]] = a;
            }
            for (j, i) in rest.iter().enumerate() {
                original[*i] = digits[j + 1];
            }
            delta[e * new_space + code] = mas.delta[e * old_space + pack(&original, &old_radices)];
        }
    }

    let collapsed = ToyMAS {
        agents,
        env_states: mas.env_states,
        perceive,
        delta,
    };
    let psi = Psi {
        subset_radices: parts.iter().map(|a| a.states).collect(),
        subset,
        rest,
    };
    Ok((collapsed, psi))
}

/// Checks that `psi` is a bijection and that
/// `step'(psi(x)) == psi(step(x))` for every global state `x`.
/// Returns the first failing state, if any.
pub fn verify_isomorphism(
    mas: &ToyMAS,
    collapsed: &ToyMAS,
    psi: &Psi,
) -> Result<Option<Vec<usize>>, HolarchyError> {
    let states = mas.global_states()?;
    if collapsed.global_size() != mas.global_size() {
        return Ok(states.first().cloned());
    }
    let mut radices = vec![collapsed.env_states];
    radices.extend(collapsed.state_radices());
    let mut hit = vec![false; collapsed.global_size() as usize];
    for x in &states {
        let y = psi.apply(x);
        let code = pack(&y, &radices);
        if hit[code] {
            return Ok(Some(x.clone()));
        }
        hit[code] = true;
        if collapsed.global_step(&y) != psi.apply(&mas.global_step(x)) {
            return Ok(Some(x.clone()));
        }
    }
    Ok(None)
}
