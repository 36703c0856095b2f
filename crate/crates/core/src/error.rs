use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("responsibility denominator vanished for point {row}")]
    DegenerateDenominator { row: usize },
    #[error("component {component} lost all mass (a = {mass:e})")]
    EmptyComponent { component: usize, mass: f64 },
    #[error("consensus did not converge in {iterations} iterations (residual {residual:e})")]
    MaxItersExceeded { iterations: usize, residual: f64 },
    #[error("graph has no Hamiltonian cycle")]
    NotFound,
    #[error("node {0} cannot be reconstructed: all responsibilities below threshold")]
    Unrecoverable(NodeId),
    #[error("honest nodes {} are not connected once corrupt nodes are removed", node_list(honest))]
    HonestSubgraphDisconnected { honest: Vec<NodeId> },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("non-numeric value {value:?} at line {line}, column {column}")]
    NonNumeric { line: usize, column: usize, value: String },
    #[error("only {rank} non-zero eigenvalues, {requested} components requested")]
    RankDeficient { rank: usize, requested: usize },
    #[error("no geometric graph was connected after {attempts} attempts")]
    RetriesExhausted { attempts: usize },
    #[error("graph would have no nodes left")]
    EmptyGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::DegenerateDenominator { .. } => "DegenerateDenominator",
            Error::EmptyComponent { .. } => "EmptyComponent",
            Error::MaxItersExceeded { .. } => "MaxItersExceeded",
            Error::NotFound => "NotFound",
            Error::Unrecoverable(_) => "Unrecoverable",
            Error::HonestSubgraphDisconnected { .. } => "HonestSubgraphDisconnected",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::ParseError { .. } => "ParseError",
            Error::NonNumeric { .. } => "NonNumeric",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::RetriesExhausted { .. } => "RetriesExhausted",
            Error::EmptyGraph => "EmptyGraph",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io { .. } => "Io",
        }
    }
}

fn node_list(nodes: &[NodeId]) -> String {
    let labels: Vec<String> = nodes.iter().map(ToString::to_string).collect();
    format!("{{{}}}", labels.join(", "))
}

pub type Result<T> = std::result::Result<T, Error>;
