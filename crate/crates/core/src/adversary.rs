//! Adversary views extracted from protocol runs, and the reconstruction
//! attacks each protocol admits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::graph::{Graph, NodeId};
use crate::linalg::Matrix;
use crate::protocols::{node_statistics, NodeState, ProtocolRun, StateKind};
use crate::scalar::{two_sum, Real};
use crate::transcript::{Message, MessageKind, Transcript};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    /// Honest-but-curious coalition pooling everything its members see.
    Passive { corrupt: BTreeSet<NodeId> },
    /// Listener on every channel that is not encrypted.
    Eavesdropper,
}

/// What an adversary observes: messages it can read, and the private state
/// of the nodes it controls.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryView<T> {
    pub kind: AdversaryKind,
    pub messages: Vec<Message<T>>,
    pub states: Vec<NodeState<T>>,
}

impl<T: Real> AdversaryView<T> {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty() && self.states.is_empty()
    }

    pub fn messages_at(&self, em_iter: usize) -> impl Iterator<Item = &Message<T>> + '_ {
        self.messages.iter().filter(move |m| m.em_iter == Some(em_iter))
    }

    pub fn state(&self, node: NodeId, kind: StateKind, em_iter: Option<usize>) -> Option<&[T]> {
        self.states
            .iter()
            .find(|s| s.node == node && s.kind == kind && s.em_iter == em_iter)
            .map(|s| s.payload.as_slice())
    }

    /// Every observation of `self` also appears in `other`.
    pub fn is_subset_of(&self, other: &AdversaryView<T>) -> bool {
        self.messages.iter().all(|m| other.messages.contains(m)) && self.states.iter().all(|s| other.states.contains(s))
    }
}

/// Messages sent by or addressed to a corrupt node, plus the corrupt nodes'
/// own data, local statistics and masks.
pub fn passive_view<T: Real>(transcript: &Transcript<T>, states: &[NodeState<T>], corrupt: &BTreeSet<NodeId>) -> AdversaryView<T> {
    let seen = |m: &Message<T>| corrupt.iter().any(|&c| m.involves(c));
    AdversaryView {
        kind: AdversaryKind::Passive { corrupt: corrupt.clone() },
        messages: transcript.iter().filter(|m| seen(m)).cloned().collect(),
        states: states.iter().filter(|s| corrupt.contains(&s.node)).cloned().collect(),
    }
}

/// Every unencrypted message.
pub fn eavesdrop_view<T: Real>(transcript: &Transcript<T>) -> AdversaryView<T> {
    AdversaryView {
        kind: AdversaryKind::Eavesdropper,
        messages: transcript.iter().filter(|m| !m.encrypted).cloned().collect(),
        states: Vec::new(),
    }
}

/// Responsibility mass below which a component carries no usable signal.
pub const RECOVERY_THRESHOLD: f64 = 1e-12;

/// Reads every node's datum off its federated upload at `em_iter`:
/// `bⱼ/aⱼ` for the component with the largest `aⱼ`, then narrowed to the
/// nearby values `x` with `fl(aⱼ·x) = bⱼ` for every component. Rounding can
/// leave several such values, and one upload alone may not tell them apart.
/// `history[s]` are the parameters the server broadcast for iteration `s`;
/// when given, the candidate whose recomputed uploads match every observed
/// upload up to `em_iter` bit for bit is chosen, so single-point nodes are
/// recovered exactly. Pass an empty slice to skip the check.
pub fn reconstruct_federated<T: Real>(
    view: &AdversaryView<T>,
    c: usize,
    d: usize,
    em_iter: usize,
    history: &[GmmParams<T>],
) -> Result<BTreeMap<NodeId, Vec<T>>> {
    let width = 1 + d + d * d;
    let mut out = BTreeMap::new();
    for m in view.messages_at(em_iter).filter(|m| m.kind == MessageKind::Upload) {
        if m.payload.len() != c * width {
            return Err(Error::InvalidArgument(format!(
                "upload from {} has {} entries, expected {}",
                m.from,
                m.payload.len(),
                c * width
            )));
        }
        let blocks: Vec<&[T]> = m.payload.chunks(width).collect();
        let threshold = T::lit(RECOVERY_THRESHOLD);
        let usable: Vec<usize> = (0..c).filter(|&j| blocks[j][0] > threshold).collect();
        let best = usable
            .iter()
            .copied()
            .max_by(|&i, &j| blocks[i][0].partial_cmp(&blocks[j][0]).expect("finite mass"))
            .ok_or(Error::Unrecoverable(m.from))?;
        let candidates: Vec<Vec<T>> = (0..d)
            .map(|k| {
                let guess = blocks[best][1 + k] / blocks[best][0];
                let found = near(guess, |x| usable.iter().all(|&j| blocks[j][0] * x == blocks[j][1 + k]));
                if found.is_empty() {
                    vec![guess]
                } else {
                    found
                }
            })
            .collect();
        let first: Vec<T> = candidates.iter().map(|v| v[0]).collect();
        let estimate = if history.is_empty() || candidates.iter().all(|v| v.len() == 1) {
            first
        } else {
            let uploads: Vec<(&GmmParams<T>, &[T])> = (0..=em_iter)
                .zip(history)
                .filter_map(|(s, p)| {
                    view.messages_at(s)
                        .find(|u| u.kind == MessageKind::Upload && u.from == m.from)
                        .map(|u| (p, u.payload.as_slice()))
                })
                .collect();
            first_matching(&candidates, |x| uploads.iter().all(|(p, u)| reproduces(x, p, u))).unwrap_or(first)
        };
        out.insert(m.from, estimate);
    }
    Ok(out)
}

/// Values within a few ulps of `guess` accepted by `consistent`, nearest first.
fn near<T: Real>(guess: T, consistent: impl Fn(T) -> bool) -> Vec<T> {
    let mut found = Vec::new();
    if consistent(guess) {
        found.push(guess);
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..8 {
        up = up.next_up();
        down = down.next_down();
        for x in [down, up] {
            if consistent(x) {
                found.push(x);
            }
        }
    }
    found
}

/// First point of the product of per-coordinate candidate lists accepted by `accept`.
fn first_matching<T: Real>(candidates: &[Vec<T>], accept: impl Fn(&[T]) -> bool) -> Option<Vec<T>> {
    let mut index = vec![0usize; candidates.len()];
    loop {
        let x: Vec<T> = index.iter().zip(candidates).map(|(&i, v)| v[i]).collect();
        if accept(&x) {
            return Some(x);
        }
        let mut k = 0;
        loop {
            if k == index.len() {
                return None;
            }
            index[k] += 1;
            if index[k] < candidates[k].len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

fn reproduces<T: Real>(x: &[T], params: &GmmParams<T>, upload: &[T]) -> bool {
    let Ok(point) = Matrix::from_vec(1, x.len(), x.to_vec()) else {
        return false;
    };
    node_statistics(&point, params).is_ok_and(|s| s.to_stacked() == upload)
}

/// Double-length number `hi + lo`, enough to take differences of masked
/// partial sums without losing the small values hidden under the mask.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Wide<T> {
    hi: T,
    lo: T,
}

impl<T: Real> Wide<T> {
    fn new(hi: T, lo: T) -> Self {
        let (h, l) = two_sum(hi, lo);
        Self { hi: h, lo: l }
    }

    fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        Self::new(s, e + self.lo + o.lo)
    }

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    fn value(self) -> T {
        self.hi + self.lo
    }
}

type WideVec<T> = Vec<Wide<T>>;

fn wide_sub<T: Real>(a: &[Wide<T>], b: &[Wide<T>]) -> WideVec<T> {
    a.iter().zip(b).map(|(&x, &y)| x.sub(y)).collect()
}

fn wide_add<T: Real>(a: &[Wide<T>], b: &[Wide<T>]) -> WideVec<T> {
    a.iter().zip(b).map(|(&x, &y)| x.add(y)).collect()
}

/// Union-find over unknowns tied by observed differences `value(u) − value(v) = w`.
struct Differences<T> {
    parent: Vec<usize>,
    /// `value(v) − value(parent(v))`
    offset: Vec<WideVec<T>>,
    q: usize,
}

impl<T: Real> Differences<T> {
    fn new(size: usize, q: usize) -> Self {
        Self {
            parent: (0..size).collect(),
            offset: vec![vec![Wide::zero(); q]; size],
            q,
        }
    }

    /// Root of `v` and `value(v) − value(root)`.
    fn find(&mut self, v: usize) -> (usize, WideVec<T>) {
        let p = self.parent[v];
        if p == v {
            return (v, vec![Wide::zero(); self.q]);
        }
        let (root, up) = self.find(p);
        let total = wide_add(&self.offset[v], &up);
        self.parent[v] = root;
        self.offset[v] = total.clone();
        (root, total)
    }

    fn relate(&mut self, u: usize, v: usize, w: WideVec<T>) {
        let (ru, ou) = self.find(u);
        let (rv, ov) = self.find(v);
        if ru == rv {
            return;
        }
        // value(ru) − value(rv) = w − ou + ov
        self.parent[ru] = rv;
        self.offset[ru] = wide_add(&wide_sub(&w, &ou), &ov);
    }

    /// `value(u) − value(v)` when the observations determine it.
    fn difference(&mut self, u: usize, v: usize) -> Option<WideVec<T>> {
        let (ru, ou) = self.find(u);
        let (rv, ov) = self.find(v);
        (ru == rv).then(|| wide_sub(&ou, &ov))
    }
}

/// Values a passive coalition or eavesdropper extracts from one secure
/// summation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SecureSumRecovery<T> {
    pub em_iter: usize,
    /// Honest nodes whose local values are fully determined.
    pub exact: BTreeMap<NodeId, Vec<T>>,
    /// Runs of consecutive honest nodes (in cycle order) whose values are
    /// only known through their sum.
    pub segments: Vec<(Vec<NodeId>, Vec<T>)>,
    /// The unmasked total, when observed.
    pub total: Option<Vec<T>>,
}

impl<T: Real> SecureSumRecovery<T> {
    /// The narrowest observation covering `node`: its own value, or the sum
    /// of its segment.
    pub fn about(&self, node: NodeId) -> Option<(&[NodeId], &[T])> {
        if let Some((k, v)) = self.exact.get_key_value(&node) {
            return Some((std::slice::from_ref(k), v));
        }
        self.segments
            .iter()
            .find(|(members, _)| members.contains(&node))
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// Solves the ring for whatever the view pins down. With cycle positions
/// `0..n` and prefix sums `Pₖ` (`P₋₁ = 0`, `Pₙ₋₁` the total), a relay from
/// position `k` reveals `r + Pₖ`, a corrupt node at `k` reveals
/// `Pₖ − Pₖ₋₁`, a corrupt initiator reveals `r`, and the broadcast reveals
/// `Pₙ₋₁`. An honest node is recovered when its two bounding prefix sums are
/// linked by these equations; remaining honest runs are recovered as sums.
pub fn reconstruct_secure_sum<T: Real>(view: &AdversaryView<T>, cycle: &[NodeId], em_iter: usize) -> Result<SecureSumRecovery<T>> {
    let n = cycle.len();
    let corrupt = match &view.kind {
        AdversaryKind::Passive { corrupt } => corrupt.clone(),
        AdversaryKind::Eavesdropper => BTreeSet::new(),
    };
    let position: BTreeMap<NodeId, usize> = cycle.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let messages: Vec<&Message<T>> = view.messages_at(em_iter).collect();
    let q = match messages.iter().find(|m| m.kind == MessageKind::SumBroadcast) {
        Some(m) => m.payload.len(),
        None => match messages.iter().find(|m| m.kind == MessageKind::Relay) {
            Some(m) => m.payload.len() / 2,
            None => {
                return Ok(SecureSumRecovery {
                    em_iter,
                    exact: BTreeMap::new(),
                    segments: Vec::new(),
                    total: None,
                })
            }
        },
    };
    // unknown indices: 0 = zero, 1 = −r, 2 + (k + 1) = Pₖ for k = −1..n−1
    const ZERO: usize = 0;
    const NEG_R: usize = 1;
    let p = |k: isize| (k + 3) as usize;
    let mut eq = Differences::<T>::new(n + 3, q);
    let plain = |v: &[T]| -> WideVec<T> { v.iter().map(|&x| Wide::new(x, T::zero())).collect() };
    eq.relate(p(-1), ZERO, vec![Wide::zero(); q]);
    let mut total = None;
    for m in &messages {
        match m.kind {
            MessageKind::Relay => {
                let k = *position
                    .get(&m.from)
                    .ok_or_else(|| Error::InvalidArgument(format!("relay from {} off the cycle", m.from)))?;
                if m.payload.len() != 2 * q {
                    return Err(Error::InvalidArgument("relay payload has wrong length".into()));
                }
                let w = (0..q).map(|i| Wide::new(m.payload[i], m.payload[q + i])).collect();
                eq.relate(p(k as isize), NEG_R, w);
            }
            MessageKind::SumBroadcast => {
                eq.relate(p(n as isize - 1), ZERO, plain(&m.payload));
                total = Some(m.payload.clone());
            }
            _ => {}
        }
    }
    for &v in &corrupt {
        let Some(&k) = position.get(&v) else { continue };
        if let Some(value) = view.state(v, StateKind::LocalUpdate, Some(em_iter)) {
            eq.relate(p(k as isize), p(k as isize - 1), plain(value));
        }
        if let Some(mask) = view.state(v, StateKind::Mask, Some(em_iter)) {
            let neg: Vec<T> = mask.iter().map(|&x| -x).collect();
            eq.relate(NEG_R, ZERO, plain(&neg));
        }
    }
    let finish = |w: WideVec<T>| -> Vec<T> { w.into_iter().map(Wide::value).collect() };
    let mut exact = BTreeMap::new();
    for (k, &v) in cycle.iter().enumerate() {
        if corrupt.contains(&v) {
            continue;
        }
        if let Some(w) = eq.difference(p(k as isize), p(k as isize - 1)) {
            exact.insert(v, finish(w));
        }
    }
    let known = |v: &NodeId| corrupt.contains(v) || exact.contains_key(v);
    let mut segments = Vec::new();
    let anchors: Vec<usize> = (0..n).filter(|&k| known(&cycle[k])).collect();
    let runs: Vec<Vec<usize>> = if anchors.is_empty() {
        vec![(0..n).collect()]
    } else {
        anchors
            .iter()
            .map(|&a| (1..n).map(|s| (a + s) % n).take_while(|&k| !known(&cycle[k])).collect::<Vec<_>>())
            .filter(|run| !run.is_empty())
            .collect()
    };
    let last = p(n as isize - 1);
    for run in runs {
        let (a, b) = (run[0], *run.last().expect("non-empty run"));
        let before = p(a as isize - 1);
        let end = p(b as isize);
        let sum = if anchors.is_empty() {
            eq.difference(last, p(-1))
        } else if a <= b {
            eq.difference(end, before)
        } else {
            match (eq.difference(last, before), eq.difference(end, p(-1))) {
                (Some(x), Some(y)) => Some(wide_add(&x, &y)),
                _ => match (eq.difference(last, p(-1)), eq.difference(end, before)) {
                    (Some(x), Some(y)) => Some(wide_add(&x, &y)),
                    _ => None,
                },
            }
        };
        if let Some(w) = sum {
            segments.push((run.iter().map(|&k| cycle[k]).collect(), finish(w)));
        }
    }
    Ok(SecureSumRecovery {
        em_iter,
        exact,
        segments,
        total,
    })
}

/// Honest node set, checked to induce a connected subgraph.
pub fn honest_set(graph: &Graph, corrupt: &BTreeSet<NodeId>) -> Result<Vec<NodeId>> {
    let remaining = graph.remove_nodes(corrupt)?;
    if !remaining.is_connected() {
        return Err(Error::HonestSubgraphDisconnected {
            honest: remaining.nodes().to_vec(),
        });
    }
    Ok(remaining.nodes().to_vec())
}

/// Sum of the honest nodes' stacked values.
pub fn honest_sum<'a, T: Real + 'a>(values: impl IntoIterator<Item = (NodeId, &'a [T])>, honest: &[NodeId]) -> Vec<T> {
    let mut acc: Vec<crate::scalar::CompensatedSum<T>> = Vec::new();
    for (v, x) in values {
        if !honest.contains(&v) {
            continue;
        }
        if acc.is_empty() {
            acc = vec![crate::scalar::CompensatedSum::new(); x.len()];
        }
        acc.iter_mut().zip(x).for_each(|(a, &y)| a.add(y));
    }
    acc.iter().map(|a| a.value()).collect()
}

/// Per EM iteration, the sum of the honest nodes' local statistics: the most
/// a coalition learns from the subspace protocol while the honest nodes stay
/// connected.
pub fn subspace_honest_sums<T: Real>(run: &ProtocolRun<T>, graph: &Graph, corrupt: &BTreeSet<NodeId>) -> Result<Vec<Vec<T>>> {
    let honest = honest_set(graph, corrupt)?;
    Ok((0..run.iterations())
        .map(|t| honest_sum(run.local_updates_at(t), &honest))
        .collect())
}
