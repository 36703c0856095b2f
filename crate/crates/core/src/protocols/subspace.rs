use serde::{Deserialize, Serialize};

use super::{
    check_init, initial_states, node_statistics, pooled_loglik, ConsensusSummary, NodeData, NodeState, Protocol, ProtocolRun, RunOptions,
    StateKind,
};
use crate::consensus::{run_consensus, ConsensusOptions, ConsensusProblem, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::gmm::{update_from_averages, EmTrace, GmmParams, SufficientStats};
use crate::graph::Graph;
use crate::rng::SeedStream;
use crate::scalar::Real;
use crate::transcript::Transcript;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SubspaceOptions<T> {
    pub rho: T,
    /// Dual noise level, tolerance, stop rule and mode of each consensus run.
    pub consensus: ConsensusOptions<T>,
}

impl<T: Real> Default for SubspaceOptions<T> {
    fn default() -> Self {
        Self {
            rho: T::lit(DEFAULT_RHO),
            consensus: ConsensusOptions::default(),
        }
    }
}

/// EM where every M-step aggregate comes from one PDMM consensus run over the
/// stacked local statistics, with duals initialized at `σ_λ`. Each node forms
/// its own parameters from its own consensus output; the reported trajectory
/// is that of the lowest-labelled node.
pub fn run_subspace_em<T: Real>(
    graph: &Graph,
    data: &NodeData<T>,
    init: &GmmParams<T>,
    opts: &RunOptions<T>,
    subspace: &SubspaceOptions<T>,
    seeds: SeedStream,
) -> Result<ProtocolRun<T>> {
    check_init(data, init)?;
    if graph.nodes() != data.nodes() {
        return Err(Error::InvalidArgument("node data must cover exactly the graph's nodes".into()));
    }
    let (c, d) = (init.components(), init.dim());
    let consensus_seeds = seeds.child("consensus");
    let pooled = data.pooled();
    let mut node_params = vec![init.clone(); data.node_count()];
    let mut params = vec![init.clone()];
    let mut loglik = vec![pooled_loglik(&pooled, init)?];
    let mut transcript = Transcript::new();
    let mut states = initial_states(data);
    let mut summaries = Vec::with_capacity(opts.iters);
    for t in 0..opts.iters {
        let mut inputs = Vec::with_capacity(data.node_count());
        for ((&node, block), p) in data.nodes().iter().zip(data.blocks()).zip(&node_params) {
            let stacked = node_statistics(block, p)?.to_stacked();
            states.push(NodeState {
                em_iter: Some(t),
                node,
                kind: StateKind::LocalUpdate,
                payload: stacked.clone(),
            });
            inputs.push(stacked);
        }
        let problem = ConsensusProblem::new(graph, inputs, subspace.rho)?;
        let outcome = run_consensus(&problem, &subspace.consensus, consensus_seeds.nth(t as u64))?;
        for (p, y) in node_params.iter_mut().zip(&outcome.averages) {
            *p = update_from_averages(&SufficientStats::from_stacked(y, c, d, 1)?, &opts.em)?;
        }
        let reference = node_params[0].clone();
        let max_disagreement = node_params.iter().map(|p| p.max_abs_diff(&reference).as_f64()).fold(0.0, f64::max);
        summaries.push(ConsensusSummary {
            em_iter: t,
            iterations: outcome.iterations,
            residual: outcome.residual.as_f64(),
            max_disagreement,
        });
        if opts.record_transcript {
            transcript.extend_tagged(outcome.transcript, t);
        }
        loglik.push(pooled_loglik(&pooled, &reference)?);
        params.push(reference);
    }
    Ok(ProtocolRun {
        protocol: Protocol::Subspace,
        trace: EmTrace { params, loglik },
        transcript,
        data: data.clone(),
        states,
        cycle: None,
        consensus: summaries,
    })
}
