use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("item {item} has embedding dimension {found}, expected {expected}")]
    DimensionMismatch {
        item: usize,
        expected: usize,
        found: usize,
    },

    #[error("item {item} has invalid weight {weight}")]
    InvalidWeight { item: usize, weight: f64 },

    #[error("weights sum to zero")]
    ZeroMass,

    #[error("similarity threshold must be a finite nonnegative number, got {0}")]
    InvalidThreshold(f64),

    #[error("unknown item id {0}")]
    UnknownItem(usize),

    #[error("item {item} is not in the neighbourhood of item {center}")]
    NotANeighbor { center: usize, item: usize },

    #[error("hotspot ({x}, {y}) lies outside the {width}x{height} grid")]
    HotspotOutsideGrid {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("capacity {capacity} is infeasible: only {reachable} items can enter the cache")]
    InfeasibleCapacity { capacity: usize, reachable: usize },

    #[error("state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: usize },

    #[error("replications come from different configurations")]
    MixedConfigurations,

    #[error("no replications to aggregate")]
    NoReplications,

    #[error("cached items {a} and {b} lie within the similarity threshold (distance {distance})")]
    SeparationViolated { a: usize, b: usize, distance: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(path: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_owned(),
            line,
            message: message.into(),
        }
    }
}
