#![allow(dead_code)]

use std::collections::BTreeMap;

use holosim_core::model::{validate_schema, AgentId, AgentProfile, FieldId, FieldSchema};
use holosim_core::scenario::{OmegaQuery, Scenario};
use rand::Rng;

/// Layered schema: level-0 leaves, each higher field depends on fields one
/// level down, so depth is at most `levels - 1` below M.
pub fn random_schema<R: Rng>(rng: &mut R, levels: usize) -> FieldSchema {
    let mut layers: Vec<Vec<FieldId>> = Vec::new();
    let mut next = 0;
    for _ in 0..levels {
        let width = rng.gen_range(1..=3);
        layers.push(
            (0..width)
                .map(|_| {
                    next += 1;
                    FieldId::new(format!("F{next}"))
                })
                .collect(),
        );
    }
    let mut deps = BTreeMap::new();
    for l in 1..levels {
        for f in &layers[l] {
            let below = &layers[l - 1];
            let n = rng.gen_range(1..=below.len());
            deps.insert(f.clone(), below[..n].to_vec());
        }
    }
    let fields = layers.into_iter().flatten().collect();
    validate_schema(FieldSchema::new(fields, deps)).unwrap()
}

pub struct Knobs {
    pub anneal_p0: f64,
    pub lottery: bool,
}

pub fn random_scenario<R: Rng>(rng: &mut R, knobs: &Knobs) -> Scenario {
    let levels = rng.gen_range(1..=3);
    let schema = random_schema(rng, levels);
    let compound = holosim_core::model::compound_fields(&schema);
    let n = rng.gen_range(3..=10);
    let agents: Vec<AgentProfile> = (0..n)
        .map(|i| {
            let errors = compound
                .iter()
                .map(|f| (f.clone(), (rng.gen_range(0..=100) as f64) / 100.0))
                .collect();
            AgentProfile::new(AgentId::new(format!("a{i:02}")), errors)
        })
        .collect();
    let budgets = agents
        .iter()
        .map(|p| (p.agent.clone(), rng.gen_range(2..=15)))
        .collect();
    let horizon = rng.gen_range(20..=60u64);
    let mut ticks: Vec<u64> = (0..rng.gen_range(1..=8))
        .map(|_| rng.gen_range(0..horizon))
        .collect();
    ticks.sort_unstable();
    let omega_queries = ticks
        .into_iter()
        .map(|tick| OmegaQuery {
            tick,
            field: FieldId::message(),
        })
        .collect();
    let mut overrides = vec![
        ("horizon".to_string(), horizon.to_string()),
        ("seed".to_string(), rng.gen::<u32>().to_string()),
        ("anneal_p0".to_string(), knobs.anneal_p0.to_string()),
        (
            "timeout_ticks".to_string(),
            rng.gen_range(3..=12u64).to_string(),
        ),
        ("k".to_string(), rng.gen_range(1..=2usize).to_string()),
    ];
    if !knobs.lottery {
        overrides.push(("lottery_threshold_pct".to_string(), "0".to_string()));
    }
    let mut joins = BTreeMap::new();
    if rng.gen_bool(0.3) {
        joins.insert(agents[n - 1].agent.clone(), rng.gen_range(1..=horizon / 2));
    }
    Scenario {
        schema,
        agents,
        omega_error: None,
        joins,
        budgets,
        omega_queries,
        delays: None,
        script: Vec::new(),
        overrides,
    }
}
