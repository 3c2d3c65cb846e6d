//! Simulation of holon formation among message-budgeted cooperating agents.

pub mod behavior;
pub mod engine;
pub mod error;
pub mod holarchy;
pub mod model;
pub mod probability;
pub mod scenario;
pub mod trace;

pub use engine::{init_world, run, run_world, WorldState};
pub use error::{
    EngineError, HolarchyError, ModelError, ProbError, ScenarioError, SchemaError, TraceError,
};
pub use scenario::{parse_scenario, reference_example, render, Scenario};
pub use trace::{project_tables, Event, EventKind, EventTrace, TableSnapshot};
