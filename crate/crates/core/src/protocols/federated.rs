use super::{
    check_init, flatten_params, initial_states, node_statistics, pooled_loglik, NodeData, NodeState, Protocol, ProtocolRun, RunOptions,
    StateKind,
};
use crate::error::Result;
use crate::gmm::{global_update, EmTrace, GmmParams, SufficientStats};
use crate::graph::NodeId;
use crate::scalar::Real;
use crate::transcript::{Message, MessageKind, Transcript};

/// One upload per node to the server. Returns the network sums and the messages.
pub fn federated_round<T: Real>(
    em_iter: usize,
    locals: &[(NodeId, Vec<T>)],
    c: usize,
    d: usize,
) -> Result<(SufficientStats<T>, Vec<Message<T>>)> {
    let mut parts = Vec::with_capacity(locals.len());
    let mut messages = Vec::with_capacity(locals.len());
    for (node, stacked) in locals {
        parts.push(SufficientStats::from_stacked(stacked, c, d, 0)?);
        messages.push(Message {
            em_iter: Some(em_iter),
            round: 0,
            from: *node,
            to: vec![NodeId::SERVER],
            kind: MessageKind::Upload,
            encrypted: false,
            payload: stacked.clone(),
        });
    }
    Ok((SufficientStats::sum(c, d, &parts), messages))
}

/// Server-aggregated EM. The server is [`NodeId::SERVER`], a node holding no data.
pub fn run_federated_em<T: Real>(data: &NodeData<T>, init: &GmmParams<T>, opts: &RunOptions<T>) -> Result<ProtocolRun<T>> {
    check_init(data, init)?;
    let (c, d) = (init.components(), init.dim());
    let pooled = data.pooled();
    let mut params = vec![init.clone()];
    let mut loglik = vec![pooled_loglik(&pooled, init)?];
    let mut transcript = Transcript::new();
    let mut states = initial_states(data);
    for t in 0..opts.iters {
        let current = params.last().expect("non-empty trajectory");
        let mut locals = Vec::with_capacity(data.node_count());
        for (&node, block) in data.nodes().iter().zip(data.blocks()) {
            let mut stats = node_statistics(block, current)?;
            stats.count = block.rows();
            locals.push((node, stats.to_stacked()));
        }
        let (mut sums, uploads) = federated_round(t, &locals, c, d)?;
        sums.count = pooled.rows();
        let next = global_update(&sums, &opts.em)?;
        for (node, stacked) in locals {
            states.push(NodeState {
                em_iter: Some(t),
                node,
                kind: StateKind::LocalUpdate,
                payload: stacked,
            });
        }
        if opts.record_transcript {
            uploads.into_iter().for_each(|m| transcript.push(m));
            transcript.push(Message {
                em_iter: Some(t),
                round: 1,
                from: NodeId::SERVER,
                to: data.nodes().to_vec(),
                kind: MessageKind::GlobalBroadcast,
                encrypted: false,
                payload: flatten_params(&next),
            });
        }
        loglik.push(pooled_loglik(&pooled, &next)?);
        params.push(next);
    }
    Ok(ProtocolRun {
        protocol: Protocol::Federated,
        trace: EmTrace { params, loglik },
        transcript,
        data: data.clone(),
        states,
        cycle: None,
        consensus: Vec::new(),
    })
}
