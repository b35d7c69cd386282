use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("busbar {busbar} is invalid for `{element}` (expected 1 or 2)")]
    InvalidBusbar { element: String, busbar: u8 },
    #[error("busbar changes span more than one substation ({0})")]
    MultipleSubstations(String),
    #[error("topology does not match case: {0}")]
    TopologyMismatch(String),
    #[error("invalid case: {}", .0.join("; "))]
    InvalidCase(Vec<String>),
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("singular susceptance matrix in island {island} (pivot {pivot:e})")]
    SingularSystem { island: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lines do not form a closed cycle: {0}")]
    NotACycle(String),
}

#[derive(Debug, Error)]
pub enum ChronicsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("validation error in {path}: {message}")]
    Validation { path: PathBuf, message: String },
    #[error("chronics do not match case: {0}")]
    Mismatch(String),
    #[error("infeasible profile at step {step}: demand {demand_mw:.3} MW exceeds capacity {capacity_mw:.3} MW")]
    InfeasibleProfile {
        step: usize,
        demand_mw: f64,
        capacity_mw: f64,
    },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Chronics(#[from] ChronicsError),
    #[error("episode finished; call reset")]
    EpisodeFinished,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}
