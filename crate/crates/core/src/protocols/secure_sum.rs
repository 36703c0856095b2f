use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    check_init, initial_states, node_statistics, pooled_loglik, NodeData, NodeState, Protocol, ProtocolRun, RunOptions, StateKind,
};
use crate::error::{Error, Result};
use crate::gmm::{global_update, EmTrace, GmmParams, SufficientStats};
use crate::graph::{Graph, NodeId};
use crate::rng::{normal, Rng, SeedStream};
use crate::scalar::{two_sum, Real};
use crate::transcript::{Message, MessageKind, Transcript};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SecureSumOptions<T> {
    /// Mask standard deviation as a multiple of the data scale.
    pub mask_factor: T,
    /// Data scale; the root mean square of the pooled coordinates when unset.
    pub data_scale: Option<T>,
    /// Send ring relays over encrypted channels.
    pub encrypt_relays: bool,
}

impl<T: Real> Default for SecureSumOptions<T> {
    fn default() -> Self {
        Self {
            mask_factor: T::lit(1e3),
            data_scale: None,
            encrypt_relays: false,
        }
    }
}

/// Per-entry mask deviations for stacked `[a, b, C]` vectors: masses are
/// dimensionless, `b` scales with the data and `C` with its square.
pub fn default_mask_sigmas<T: Real>(c: usize, d: usize, factor: T, scale: T) -> Vec<T> {
    let mut out = Vec::with_capacity(SufficientStats::<T>::stacked_len(c, d));
    for _ in 0..c {
        out.push(factor);
        out.extend(std::iter::repeat(factor * scale).take(d));
        out.extend(std::iter::repeat(factor * scale * scale).take(d * d));
    }
    out
}

/// Draws one fresh mask entry per coordinate.
pub fn draw_mask<T: Real>(sigmas: &[T], rng: &mut Rng) -> Vec<T> {
    sigmas.iter().map(|&s| normal(rng, s)).collect()
}

/// One pass around `cycle`: the first node adds `mask` to its value, every
/// node adds its own and forwards, and the first node removes the mask from
/// what comes back and broadcasts the total.
///
/// The running sum travels as a high/low pair, so a relay payload is the
/// high parts followed by the low parts (`2q` entries) and `high + low`
/// equals mask plus partial sum without rounding loss. The broadcast total
/// has `q` entries.
pub fn secure_sum_round<T: Real>(
    em_iter: usize,
    cycle: &[NodeId],
    values: &BTreeMap<NodeId, Vec<T>>,
    mask: &[T],
    encrypt_relays: bool,
) -> Result<(Vec<T>, Vec<Message<T>>)> {
    let n = cycle.len();
    if n < 2 {
        return Err(Error::InvalidArgument("secure summation needs at least two nodes".into()));
    }
    let q = mask.len();
    let mut high = vec![T::zero(); q];
    let mut low = vec![T::zero(); q];
    let mut messages = Vec::with_capacity(n + 1);
    for (k, &v) in cycle.iter().enumerate() {
        let own = values
            .get(&v)
            .ok_or_else(|| Error::InvalidArgument(format!("no value for node {v}")))?;
        if own.len() != q {
            return Err(Error::InvalidArgument(format!("node {v} value has wrong length")));
        }
        for i in 0..q {
            let x = if k == 0 { mask[i] } else { own[i] };
            let (s, e) = two_sum(high[i], x);
            high[i] = s;
            low[i] += e;
            if k == 0 {
                let (s, e) = two_sum(high[i], own[i]);
                high[i] = s;
                low[i] += e;
            }
        }
        messages.push(Message {
            em_iter: Some(em_iter),
            round: k,
            from: v,
            to: vec![cycle[(k + 1) % n]],
            kind: MessageKind::Relay,
            encrypted: encrypt_relays,
            payload: high.iter().chain(&low).copied().collect(),
        });
    }
    let total = unmask(&high, &low, mask);
    messages.push(Message {
        em_iter: Some(em_iter),
        round: n,
        from: cycle[0],
        to: cycle[1..].to_vec(),
        kind: MessageKind::SumBroadcast,
        encrypted: false,
        payload: total.clone(),
    });
    Ok((total, messages))
}

/// `high + low − mask`, rounded once.
pub fn unmask<T: Real>(high: &[T], low: &[T], mask: &[T]) -> Vec<T> {
    high.iter()
        .zip(low)
        .zip(mask)
        .map(|((&h, &l), &r)| {
            let (d, e) = two_sum(h, -r);
            d + (e + l)
        })
        .collect()
}

/// Collapses a relay payload `[high | low]` to `high + low`.
pub fn relay_value<T: Real>(payload: &[T]) -> Vec<T> {
    let q = payload.len() / 2;
    payload[..q].iter().zip(&payload[q..]).map(|(&h, &l)| h + l).collect()
}

fn data_rms<T: Real>(data: &NodeData<T>) -> T {
    let mut sum = T::zero();
    let mut count = 0usize;
    for b in data.blocks() {
        for &x in b.as_slice() {
            sum += x * x;
            count += 1;
        }
    }
    let rms = (sum / T::from_count(count.max(1))).sqrt();
    if rms > T::zero() {
        rms
    } else {
        T::one()
    }
}

/// EM with every M-step aggregate computed by one masked pass around a
/// Hamiltonian cycle of `graph`, found once per run.
pub fn run_secure_sum_em<T: Real>(
    graph: &Graph,
    data: &NodeData<T>,
    init: &GmmParams<T>,
    opts: &RunOptions<T>,
    secure: &SecureSumOptions<T>,
    seeds: SeedStream,
) -> Result<ProtocolRun<T>> {
    check_init(data, init)?;
    if graph.nodes() != data.nodes() {
        return Err(Error::InvalidArgument("node data must cover exactly the graph's nodes".into()));
    }
    let cycle = graph.find_hamiltonian_cycle()?;
    let (c, d) = (init.components(), init.dim());
    let scale = secure.data_scale.unwrap_or_else(|| data_rms(data));
    let sigmas = default_mask_sigmas(c, d, secure.mask_factor, scale);
    let mask_seeds = seeds.child("masks");
    let pooled = data.pooled();
    let mut params = vec![init.clone()];
    let mut loglik = vec![pooled_loglik(&pooled, init)?];
    let mut transcript = Transcript::new();
    let mut states = initial_states(data);
    for t in 0..opts.iters {
        let current = params.last().expect("non-empty trajectory");
        let mut values = BTreeMap::new();
        for (&node, block) in data.nodes().iter().zip(data.blocks()) {
            values.insert(node, node_statistics(block, current)?.to_stacked());
        }
        let mask = draw_mask(&sigmas, &mut mask_seeds.nth(t as u64).rng());
        let (total, messages) = secure_sum_round(t, &cycle, &values, &mask, secure.encrypt_relays)?;
        let next = global_update(&SufficientStats::from_stacked(&total, c, d, pooled.rows())?, &opts.em)?;
        for (node, stacked) in values {
            states.push(NodeState {
                em_iter: Some(t),
                node,
                kind: StateKind::LocalUpdate,
                payload: stacked,
            });
        }
        states.push(NodeState {
            em_iter: Some(t),
            node: cycle[0],
            kind: StateKind::Mask,
            payload: mask,
        });
        if opts.record_transcript {
            messages.into_iter().for_each(|m| transcript.push(m));
        }
        loglik.push(pooled_loglik(&pooled, &next)?);
        params.push(next);
    }
    Ok(ProtocolRun {
        protocol: Protocol::SecureSum,
        trace: EmTrace { params, loglik },
        transcript,
        data: data.clone(),
        states,
        cycle: Some(cycle),
        consensus: Vec::new(),
    })
}
