use thiserror::Error;

use crate::model::{AgentId, FieldId};

/// Errors raised while building or checking a field schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("dependency cycle: {}", fmt_cycle(.0))]
    CycleDetected(Vec<FieldId>),
    #[error("field {0} is referenced but never declared")]
    UndeclaredField(FieldId),
    #[error("field {0} declared twice")]
    DuplicateField(FieldId),
}

fn fmt_cycle(cycle: &[FieldId]) -> String {
    cycle
        .iter()
        .map(|f| f.as_str())
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("error fraction {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("agent {agent} has no error for field {field}")]
    UnknownField { agent: AgentId, field: FieldId },
    #[error("{0} is already a peer")]
    DuplicatePeer(AgentId),
    #[error("no eligible peers for field {0}")]
    NoEligiblePeers(FieldId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Failures while advancing a world.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("clock {clock} already at horizon {horizon}")]
    HorizonExceeded { clock: u64, horizon: u64 },
    #[error("scripted delay schedule exhausted for {sender} message #{ordinal}")]
    ScriptExhausted { sender: AgentId, ordinal: u64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("script action at t={tick} rejected: {reason}")]
    ScriptViolation { tick: u64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Failures in the scenario text format.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("validation: {0}")]
    Validation(String),
}

impl From<SchemaError> for ScenarioError {
    fn from(e: SchemaError) -> Self {
        ScenarioError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HolarchyError {
    #[error("holon headed by {0} is not active in the requested window")]
    HolonInactive(AgentId),
    #[error("holon members overlap: {0:?}")]
    OverlappingMembers(Vec<String>),
    #[error("global state space of {0} states exceeds the enumeration cap")]
    StateSpaceTooLarge(u128),
    #[error("invalid toy system: {0}")]
    InvalidSystem(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("domain error: {0}")]
    DomainError(String),
}
