//! Holons: detection in simulation traces and the formal composition of
//! finite agents.

pub mod algebra;
pub mod detect;

pub use algebra::{
    collapse_system, compose, verify_isomorphism, AbstractAgent, HolonAgent, Psi, ToyMAS, STATE_CAP,
};
pub use detect::{
    detect_holons, exclusivity_of, favorite_graph, head_exclusivity, holon_timeline,
    holons_per_tick, timeline_csv, FavoriteGraph, Holon, HolonChange, Member,
};
