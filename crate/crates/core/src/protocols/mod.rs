//! Distributed EM drivers. Each produces the parameter trajectory, the
//! pooled-data log-likelihood, the full message transcript, and the private
//! per-node state an adversary coalition would hold.

mod federated;
mod secure_sum;
mod subspace;

pub use federated::{federated_round, run_federated_em};
pub use secure_sum::{default_mask_sigmas, draw_mask, relay_value, run_secure_sum_em, secure_sum_round, unmask, SecureSumOptions};
pub use subspace::{run_subspace_em, SubspaceOptions};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{e_step, local_updates, log_likelihood, EmOptions, EmTrace, GmmParams, LocalUpdates};
use crate::graph::NodeId;
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::transcript::Transcript;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Federated,
    SecureSum,
    Subspace,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Federated, Protocol::SecureSum, Protocol::Subspace];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Federated => "federated",
            Protocol::SecureSum => "secure_sum",
            Protocol::Subspace => "subspace",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "federated" => Ok(Protocol::Federated),
            "secure_sum" => Ok(Protocol::SecureSum),
            "subspace" => Ok(Protocol::Subspace),
            other => Err(Error::InvalidArgument(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Points held by each node. Rows of the pooled matrix keep their original
/// order when the blocks are stacked in node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct NodeData<T> {
    nodes: Vec<NodeId>,
    blocks: Vec<Matrix<T>>,
    rows: Vec<Vec<usize>>,
}

impl<T: Real> NodeData<T> {
    /// Explicit blocks; every node must hold at least one point.
    pub fn new(nodes: Vec<NodeId>, blocks: Vec<Matrix<T>>) -> Result<Self> {
        if nodes.len() != blocks.len() || nodes.is_empty() {
            return Err(Error::InvalidArgument("one non-empty block per node required".into()));
        }
        let d = blocks[0].cols();
        let mut rows = Vec::with_capacity(blocks.len());
        let mut next = 0;
        for (v, b) in nodes.iter().zip(&blocks) {
            if b.rows() == 0 {
                return Err(Error::InvalidArgument(format!("node {v} holds no points")));
            }
            if b.cols() != d {
                return Err(Error::InvalidArgument(format!("node {v} has dimension {} not {d}", b.cols())));
            }
            rows.push((next..next + b.rows()).collect());
            next += b.rows();
        }
        Ok(Self { nodes, blocks, rows })
    }

    /// Splits `points` into contiguous blocks whose sizes differ by at most
    /// one, larger blocks first.
    pub fn contiguous(points: &Matrix<T>, nodes: &[NodeId]) -> Result<Self> {
        let n = nodes.len();
        if n == 0 || points.rows() < n {
            return Err(Error::InvalidArgument(format!(
                "cannot spread {} points over {n} nodes",
                points.rows()
            )));
        }
        let (base, extra) = (points.rows() / n, points.rows() % n);
        let mut start = 0;
        let mut blocks = Vec::with_capacity(n);
        for k in 0..n {
            let size = base + usize::from(k < extra);
            let idx: Vec<usize> = (start..start + size).collect();
            blocks.push(points.select_rows(&idx));
            start += size;
        }
        Self::new(nodes.to_vec(), blocks)
    }

    /// One point per node.
    pub fn single_points(points: &Matrix<T>, nodes: &[NodeId]) -> Result<Self> {
        if points.rows() != nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points for {} nodes",
                points.rows(),
                nodes.len()
            )));
        }
        Self::contiguous(points, nodes)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].cols()
    }

    pub fn block(&self, node: NodeId) -> Option<&Matrix<T>> {
        self.nodes.iter().position(|&v| v == node).map(|k| &self.blocks[k])
    }

    pub fn blocks(&self) -> &[Matrix<T>] {
        &self.blocks
    }

    /// Row indices of the pooled matrix held by each node.
    pub fn assignment(&self) -> BTreeMap<NodeId, Vec<usize>> {
        self.nodes.iter().copied().zip(self.rows.iter().cloned()).collect()
    }

    pub fn pooled(&self) -> Matrix<T> {
        Matrix::vstack(&self.blocks).expect("blocks share a dimension")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    /// The node's raw points, row-major.
    LocalData,
    /// Stacked local statistics `[a, b, C]` per component.
    LocalUpdate,
    /// Secure-summation mask drawn by the cycle initiator.
    Mask,
}

/// Private state a node holds but never sends in the clear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct NodeState<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_iter: Option<usize>,
    pub node: NodeId,
    pub kind: StateKind,
    pub payload: Vec<T>,
}

/// Consensus bookkeeping for one EM iteration of the subspace protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub em_iter: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Largest parameter difference between any node and the reference node.
    pub max_disagreement: f64,
}

#[derive(Clone, Debug)]
pub struct ProtocolRun<T> {
    pub protocol: Protocol,
    pub trace: EmTrace<T>,
    pub transcript: Transcript<T>,
    pub data: NodeData<T>,
    pub states: Vec<NodeState<T>>,
    /// Hamiltonian cycle used by secure summation.
    pub cycle: Option<Vec<NodeId>>,
    pub consensus: Vec<ConsensusSummary>,
}

impl<T: Real> ProtocolRun<T> {
    pub fn iterations(&self) -> usize {
        self.trace.params.len() - 1
    }

    /// Stacked local statistics of every node at EM iteration `t`.
    pub fn local_updates_at(&self, t: usize) -> BTreeMap<NodeId, &[T]> {
        self.states
            .iter()
            .filter(|s| s.kind == StateKind::LocalUpdate && s.em_iter == Some(t))
            .map(|s| (s.node, s.payload.as_slice()))
            .collect()
    }
}

/// Settings shared by every driver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct RunOptions<T> {
    pub iters: usize,
    pub em: EmOptions<T>,
    /// Keep messages in the returned transcript. Counting and attacks need it;
    /// large sweeps can switch it off.
    pub record_transcript: bool,
}

impl<T: Real> RunOptions<T> {
    pub fn new(iters: usize, em: EmOptions<T>) -> Self {
        Self {
            iters,
            em,
            record_transcript: true,
        }
    }
}

/// Local E-step and statistics of one node under `params`.
pub fn node_statistics<T: Real>(points: &Matrix<T>, params: &GmmParams<T>) -> Result<LocalUpdates<T>> {
    let resp = e_step(points, params)?;
    local_updates(points, &resp, &params.means)
}

/// `[β, μ, Σ]` per component, the layout of parameter broadcasts.
pub fn flatten_params<T: Real>(params: &GmmParams<T>) -> Vec<T> {
    let mut out = Vec::new();
    for j in 0..params.components() {
        out.push(params.weights[j]);
        out.extend_from_slice(&params.means[j]);
        out.extend_from_slice(params.covariances[j].as_slice());
    }
    out
}

fn initial_states<T: Real>(data: &NodeData<T>) -> Vec<NodeState<T>> {
    data.nodes
        .iter()
        .zip(&data.blocks)
        .map(|(&node, b)| NodeState {
            em_iter: None,
            node,
            kind: StateKind::LocalData,
            payload: b.as_slice().to_vec(),
        })
        .collect()
}

fn check_init<T: Real>(data: &NodeData<T>, init: &GmmParams<T>) -> Result<()> {
    init.validate()?;
    if init.dim() != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "parameters have dimension {}, data {}",
            init.dim(),
            data.dim()
        )));
    }
    Ok(())
}

fn pooled_loglik<T: Real>(pooled: &Matrix<T>, params: &GmmParams<T>) -> Result<T> {
    log_likelihood(pooled, params)
}
