//! Privacy-preserving distributed EM for Gaussian mixtures: graphs, PDMM
//! consensus with subspace perturbation, federated and secure-summation
//! baselines, adversary reconstructions and a KSG mutual-information meter.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for callers that do not care.

pub mod adversary;
pub mod consensus;
pub mod data;
pub mod error;
pub mod gmm;
pub mod graph;
pub mod linalg;
pub mod privacy;
pub mod protocols;
pub mod rng;
pub mod scalar;
pub mod transcript;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use rng::SeedStream;
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type GmmParams = gmm::GmmParams<f64>;
pub type GmmParamsF32 = gmm::GmmParams<f32>;
pub type SufficientStats = gmm::SufficientStats<f64>;
pub type SufficientStatsF32 = gmm::SufficientStats<f32>;
pub type EmTrace = gmm::EmTrace<f64>;
pub type EmTraceF32 = gmm::EmTrace<f32>;
pub type Transcript = transcript::Transcript<f64>;
pub type TranscriptF32 = transcript::Transcript<f32>;
pub type ProtocolRun = protocols::ProtocolRun<f64>;
pub type ProtocolRunF32 = protocols::ProtocolRun<f32>;
pub type Dataset = data::Dataset<f64>;
pub type DatasetF32 = data::Dataset<f32>;
