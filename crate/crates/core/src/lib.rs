//! Trace-driven cache simulation with learned eviction at the tail of a
//! heuristic cache.
//!
//! The crate is organised around a small cache state machine ([`sim`]) that
//! asks a pluggable [`sim::EvictionEngine`] for victims. Engines include the
//! bare priority-queue heuristics ([`heuristics`]), the tail-filtered ML engine
//! ([`mat`]), and the offline/sampling baselines ([`oracle`]). The [`analysis`]
//! module classifies recorded evictions against the offline optimum.

pub mod analysis;
pub mod features;
pub mod gbdt;
pub mod heuristics;
pub mod mat;
pub mod oracle;
pub mod run;
pub mod seed;
pub mod sim;
pub mod trace;

/// Object identifier.
pub type Key = u64;

/// Logical time: the index of a request in its stream.
pub type Tick = u64;

pub use sim::{Access, Cache, CacheConfig, EvictionEngine, SimReport};
pub use trace::Request;
