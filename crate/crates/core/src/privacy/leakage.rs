use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{mean_and_stderr, normalized_mi, DEFAULT_K};
use crate::adversary::{
    eavesdrop_view, honest_set, passive_view, reconstruct_federated, reconstruct_secure_sum, AdversaryView, RECOVERY_THRESHOLD,
};
use crate::data::{draw_responsibilities, ResponsibilityNorm};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::linalg::Matrix;
use crate::protocols::{default_mask_sigmas, draw_mask, federated_round, secure_sum_round, NodeState, Protocol, StateKind};
use crate::rng::{normal, SeedStream};
use crate::transcript::Transcript;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    #[default]
    Passive,
    Eavesdrop,
}

/// Scalar-data leakage experiment: every trial draws `xᵢ ~ N(0, 1)` per node,
/// runs `em_iters` rounds of aggregation with freshly drawn responsibilities,
/// and records what the adversary learns about `target` at each round.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakageConfig {
    pub protocols: Vec<Protocol>,
    pub graph: Graph,
    pub corrupt: BTreeSet<NodeId>,
    pub target: NodeId,
    pub adversary: Adversary,
    pub trials: usize,
    pub em_iters: usize,
    pub components: usize,
    pub k: usize,
    /// Independent repetitions of the whole experiment, for standard errors.
    pub repeats: usize,
    pub normalization: ResponsibilityNorm,
    /// Secure-summation mask deviation (the data have unit scale).
    pub mask_factor: f64,
    pub encrypt_relays: bool,
    pub seed: u64,
}

impl LeakageConfig {
    /// Five-node ring with chords, nodes 2 and 4 corrupt, node 1 targeted.
    pub fn fig1(trials: usize, seed: u64) -> Self {
        Self {
            protocols: Protocol::ALL.to_vec(),
            graph: Graph::fig1(),
            corrupt: [NodeId(2), NodeId(4)].into_iter().collect(),
            target: NodeId(1),
            adversary: Adversary::Passive,
            trials,
            em_iters: 5,
            components: 1,
            k: DEFAULT_K,
            repeats: 10,
            normalization: ResponsibilityNorm::OverComponents,
            mask_factor: 1e3,
            encrypt_relays: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakagePoint {
    pub iter: usize,
    /// Mean normalized MI over repeats.
    pub nmi: f64,
    /// Standard error of that mean.
    pub stderr: f64,
    /// Mean raw MI in nats.
    pub mi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageReport {
    pub protocol: Protocol,
    pub feature_dim: usize,
    pub points: Vec<LeakagePoint>,
    /// Target data (first column) and view features of the first repeat, one
    /// matrix per EM iteration.
    pub samples: Vec<Matrix<f64>>,
}

/// Keeps the entries worth estimating against: with one component the
/// masses are constant and dropped.
fn reduce(stacked: &[f64], c: usize) -> Vec<f64> {
    if c == 1 {
        stacked[1..].to_vec()
    } else {
        stacked.to_vec()
    }
}

/// `b/a` of the heaviest component of a stacked `[a, b, C]` vector (`d = 1`).
fn ratio_estimate(stacked: &[f64], c: usize) -> Option<f64> {
    (0..c)
        .map(|j| (stacked[3 * j], stacked[3 * j + 1]))
        .filter(|&(a, _)| a > RECOVERY_THRESHOLD)
        .max_by(|p, q| p.0.total_cmp(&q.0))
        .map(|(a, b)| b / a)
}

struct Setup {
    cycle: Option<Vec<NodeId>>,
    honest: Vec<NodeId>,
    federated_corrupt: BTreeSet<NodeId>,
    mask_sigmas: Vec<f64>,
}

fn view_of(cfg: &LeakageConfig, transcript: &Transcript<f64>, states: &[NodeState<f64>], corrupt: &BTreeSet<NodeId>) -> AdversaryView<f64> {
    match cfg.adversary {
        Adversary::Passive => passive_view(transcript, states, corrupt),
        Adversary::Eavesdrop => eavesdrop_view(transcript),
    }
}

fn features(
    cfg: &LeakageConfig,
    setup: &Setup,
    protocol: Protocol,
    t: usize,
    locals: &BTreeMap<NodeId, Vec<f64>>,
    seeds: &SeedStream,
) -> Result<Vec<f64>> {
    let c = cfg.components;
    let states = |extra: Option<NodeState<f64>>| -> Vec<NodeState<f64>> {
        locals
            .iter()
            .map(|(&node, v)| NodeState {
                em_iter: Some(t),
                node,
                kind: StateKind::LocalUpdate,
                payload: v.clone(),
            })
            .chain(extra)
            .collect()
    };
    match protocol {
        Protocol::Federated => {
            let pairs: Vec<(NodeId, Vec<f64>)> = locals.iter().map(|(&v, x)| (v, x.clone())).collect();
            let (_, msgs) = federated_round(t, &pairs, c, 1)?;
            let transcript: Transcript<f64> = msgs.into_iter().collect();
            let view = view_of(cfg, &transcript, &states(None), &setup.federated_corrupt);
            let rec = reconstruct_federated(&view, c, 1, t, &[])?;
            Ok(rec.get(&cfg.target).cloned().unwrap_or_default())
        }
        Protocol::SecureSum => {
            let cycle = setup.cycle.as_ref().expect("cycle found during setup");
            let mask = draw_mask(&setup.mask_sigmas, &mut seeds.child("mask").nth(t as u64).rng());
            let (_, msgs) = secure_sum_round(t, cycle, locals, &mask, cfg.encrypt_relays)?;
            let transcript: Transcript<f64> = msgs.into_iter().collect();
            let mask_state = NodeState {
                em_iter: Some(t),
                node: cycle[0],
                kind: StateKind::Mask,
                payload: mask,
            };
            let view = view_of(cfg, &transcript, &states(Some(mask_state)), &cfg.corrupt);
            let rec = reconstruct_secure_sum(&view, cycle, t)?;
            Ok(match rec.about(cfg.target) {
                Some((members, v)) if members.len() == 1 => ratio_estimate(v, c).into_iter().collect(),
                Some((_, v)) => reduce(v, c),
                None => Vec::new(),
            })
        }
        Protocol::Subspace => {
            let sum = crate::adversary::honest_sum(locals.iter().map(|(&v, x)| (v, x.as_slice())), &setup.honest);
            Ok(reduce(&sum, c))
        }
    }
}

/// Runs the experiment for every protocol in `cfg` on shared draws and
/// reports per-iteration NMI between the target's datum and the adversary's
/// features.
pub fn monte_carlo_leakage(cfg: &LeakageConfig) -> Result<Vec<LeakageReport>> {
    let nodes = cfg.graph.nodes().to_vec();
    if !cfg.graph.contains(cfg.target) {
        return Err(Error::InvalidArgument(format!("target {} is not in the graph", cfg.target)));
    }
    if cfg.corrupt.contains(&cfg.target) {
        return Err(Error::InvalidArgument(format!("target {} must be honest", cfg.target)));
    }
    if cfg.components == 0 || cfg.em_iters == 0 || cfg.repeats == 0 {
        return Err(Error::InvalidArgument("components, em_iters and repeats must be positive".into()));
    }
    let needs = |p: Protocol| cfg.protocols.contains(&p);
    let setup = Setup {
        cycle: if needs(Protocol::SecureSum) {
            Some(cfg.graph.find_hamiltonian_cycle()?)
        } else {
            None
        },
        honest: match (needs(Protocol::Subspace), cfg.adversary) {
            (true, Adversary::Passive) => honest_set(&cfg.graph, &cfg.corrupt)?,
            _ => nodes.clone(),
        },
        federated_corrupt: cfg.corrupt.iter().copied().chain([NodeId::SERVER]).collect(),
        mask_sigmas: default_mask_sigmas(cfg.components, 1, cfg.mask_factor, 1.0),
    };
    let c = cfg.components;
    let root = SeedStream::new(cfg.seed);
    let target_idx = nodes.iter().position(|&v| v == cfg.target).expect("checked above");
    // nmi[protocol][iter][repeat], mi likewise
    let mut nmi = vec![vec![Vec::with_capacity(cfg.repeats); cfg.em_iters]; cfg.protocols.len()];
    let mut mi = nmi.clone();
    let mut samples = vec![Vec::new(); cfg.protocols.len()];
    let mut dims = vec![0usize; cfg.protocols.len()];
    for r in 0..cfg.repeats {
        let rep = root.child("repeat").nth(r as u64);
        let mut xs = Vec::with_capacity(cfg.trials);
        // rows[protocol][iter] = flattened features of every trial
        let mut rows = vec![vec![Vec::new(); cfg.em_iters]; cfg.protocols.len()];
        for trial in 0..cfg.trials {
            let seeds = rep.nth(trial as u64);
            let mut rng = seeds.child("data").rng();
            let x: Vec<f64> = nodes.iter().map(|_| normal(&mut rng, 1.0)).collect();
            xs.push(x[target_idx]);
            let mut means = vec![0.0; c];
            for t in 0..cfg.em_iters {
                let resp: Vec<Vec<f64>> = draw_responsibilities(nodes.len(), c, cfg.normalization, &mut rng);
                let mut locals = BTreeMap::new();
                for (k, &v) in nodes.iter().enumerate() {
                    let mut stacked = Vec::with_capacity(3 * c);
                    for j in 0..c {
                        let rj = resp[k][j];
                        let dx = x[k] - means[j];
                        stacked.extend([rj, rj * x[k], rj * dx * dx]);
                    }
                    locals.insert(v, stacked);
                }
                for (p, &protocol) in cfg.protocols.iter().enumerate() {
                    let f = features(cfg, &setup, protocol, t, &locals, &seeds)?;
                    if trial == 0 && r == 0 && t == 0 {
                        dims[p] = f.len();
                    }
                    if f.len() != dims[p] {
                        return Err(Error::InvalidArgument(format!("{protocol} features changed shape")));
                    }
                    rows[p][t].extend(f);
                }
                for (j, m) in means.iter_mut().enumerate() {
                    let a: f64 = locals.values().map(|s| s[3 * j]).sum();
                    let b: f64 = locals.values().map(|s| s[3 * j + 1]).sum();
                    if a > RECOVERY_THRESHOLD {
                        *m = b / a;
                    }
                }
            }
        }
        let x = Matrix::from_vec(cfg.trials, 1, xs)?;
        for p in 0..cfg.protocols.len() {
            for t in 0..cfg.em_iters {
                let feats = std::mem::take(&mut rows[p][t]);
                let (value, normalized) = if dims[p] == 0 {
                    (0.0, 0.0)
                } else {
                    let y = Matrix::from_vec(cfg.trials, dims[p], feats.clone())?;
                    let est = normalized_mi(&x, &y, cfg.k)?;
                    (est.value, est.normalized)
                };
                nmi[p][t].push(normalized);
                mi[p][t].push(value);
                if r == 0 {
                    let mut joined = Vec::with_capacity(cfg.trials * (dims[p] + 1));
                    for (i, &xi) in x.as_slice().iter().enumerate() {
                        joined.push(xi);
                        joined.extend_from_slice(&feats[i * dims[p]..(i + 1) * dims[p]]);
                    }
                    samples[p].push(Matrix::from_vec(cfg.trials, dims[p] + 1, joined)?);
                }
            }
        }
    }
    Ok(cfg
        .protocols
        .iter()
        .enumerate()
        .map(|(p, &protocol)| LeakageReport {
            protocol,
            feature_dim: dims[p],
            points: (0..cfg.em_iters)
                .map(|t| {
                    let (m, se) = mean_and_stderr(&nmi[p][t]);
                    let (raw, _) = mean_and_stderr(&mi[p][t]);
                    LeakagePoint {
                        iter: t,
                        nmi: m,
                        stderr: se,
                        mi: raw,
                    }
                })
                .collect(),
            samples: std::mem::take(&mut samples[p]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_on_fig1_smoke() {
        let mut cfg = LeakageConfig::fig1(2_000, 7);
        cfg.em_iters = 2;
        cfg.repeats = 3;
        let reports = monte_carlo_leakage(&cfg).unwrap();
        let by = |p: Protocol| reports.iter().find(|r| r.protocol == p).unwrap();
        for t in 0..2 {
            let (f, s, u) = (
                by(Protocol::Federated).points[t].nmi,
                by(Protocol::SecureSum).points[t].nmi,
                by(Protocol::Subspace).points[t].nmi,
            );
            assert_eq!(f, 1.0);
            assert!(u < s && s < f, "iter {t}: {u} {s} {f}");
        }
        assert_eq!(by(Protocol::Federated).feature_dim, 1);
        assert_eq!(by(Protocol::SecureSum).feature_dim, 2);
        assert_eq!(by(Protocol::Subspace).feature_dim, 2);
    }

    #[test]
    fn target_must_be_honest() {
        let mut cfg = LeakageConfig::fig1(100, 0);
        cfg.target = NodeId(2);
        assert!(monte_carlo_leakage(&cfg).is_err());
    }

    #[test]
    fn too_few_trials() {
        let mut cfg = LeakageConfig::fig1(10, 0);
        cfg.repeats = 1;
        assert!(matches!(monte_carlo_leakage(&cfg), Err(Error::InsufficientSamples { .. })));
    }
}
