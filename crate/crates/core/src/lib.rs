//! Hit-rate prediction for similarity caches.
//!
//! A similarity cache may answer a request for item `n` with a cached item
//! `m` whose dissimilarity to `n` is at most a threshold `d`. This crate
//! predicts the hit rate of SIM-LRU and RND-LRU under the independent
//! reference model with a TTL (characteristic-time) approximation solved by
//! a damped fixed-point iteration, and checks the prediction against a
//! trace-driven simulator, three baseline estimators and an exact
//! Markov-chain solution for tiny instances.
//!
//! ```
//! use simcache_core::{Catalog, NeighborIndex, QModel, SolverParams, TieBreak, fixed_point};
//!
//! let catalog = Catalog::grid(10, 10, vec![1.0; 100]).unwrap();
//! let index = NeighborIndex::build(&catalog, 1.0, TieBreak::CounterClockwise).unwrap();
//! let q = QModel::sim_lru(1.0);
//! let result = fixed_point(&index, &q, catalog.rates(), 20, &SolverParams::default()).unwrap();
//! assert!(result.hit_rate > 0.2);
//! ```

pub mod baselines;
pub mod catalog;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod simulator;
pub mod solver;
pub mod workload;

pub use baselines::{greedy_coverage, lru_agg, lru_ttl, Coverage, CoverageInstance, TtlEstimate};
pub use catalog::{Catalog, GridShape, Item, Neighbor, NeighborIndex, QModel, TieBreak};
pub use error::{Error, Result};
pub use oracle::{exact_hit_rate, ExactResult};
pub use simulator::{
    aggregate_replications, replicate, simulate, CacheState, Policy, ReplicationSummary, SimConfig,
    SimResult,
};
pub use solver::{
    entry_rates, fixed_point, fixed_point_with, hit_probs, occupancies, refresh_rates, solve_tc,
    IterationRecord, SolverParams, SolverResult, SolverState,
};
pub use workload::{
    gen_requests, ingest_trace, synth_grid_popularity, PopularityProfile, RequestStream,
};
