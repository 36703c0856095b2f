//! PDMM average consensus with subspace-perturbed dual initialization.
//!
//! Every undirected edge `l = (i, j)` with `i < j` owns two duals:
//! `λ_{i|j}` at index `l` and `λ_{j|i}` at index `l + m`. Node `i` consumes
//! `λ_{j|i}` in its primal update; `λ_{i|j}` is produced from `i`'s broadcast.

mod diagnostics;

pub use diagnostics::{estimate_convergent_subspace, subspace_diagnostics, ConvergentSubspace, SubspaceTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sign, Graph, NodeId};
use crate::rng::{normal, Rng, SeedStream};
use crate::scalar::Real;
use crate::transcript::{Message, MessageKind, Transcript};

/// Average consensus over a connected graph. `inputs[k]` belongs to
/// `graph.nodes()[k]`; every input has the same dimension `q`.
#[derive(Clone, Debug)]
pub struct ConsensusProblem<'g, T> {
    graph: &'g Graph,
    inputs: Vec<Vec<T>>,
    rho: T,
    links: Vec<Vec<Link>>,
}

/// One neighbor of a node, seen from that node.
#[derive(Clone, Copy, Debug)]
struct Link {
    neighbor: usize,
    /// index of `λ_{self|neighbor}`
    outgoing: usize,
    /// index of `λ_{neighbor|self}`
    incoming: usize,
    /// `B_{self|neighbor}`
    sign: i8,
}

impl<'g, T: Real> ConsensusProblem<'g, T> {
    pub fn new(graph: &'g Graph, inputs: Vec<Vec<T>>, rho: T) -> Result<Self> {
        if inputs.len() != graph.node_count() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs for {} nodes",
                inputs.len(),
                graph.node_count()
            )));
        }
        let q = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|s| s.len() != q) {
            return Err(Error::InvalidArgument("inputs differ in dimension".into()));
        }
        if !(rho > T::zero()) {
            return Err(Error::InvalidArgument("rho must be positive".into()));
        }
        if !graph.is_connected() {
            return Err(Error::InvalidArgument("consensus needs a connected graph".into()));
        }
        let m = graph.edge_count();
        let mut links = vec![Vec::new(); graph.node_count()];
        for (l, &(lo, hi)) in graph.edges().iter().enumerate() {
            let a = graph.index_of(lo).expect("edge endpoint");
            let b = graph.index_of(hi).expect("edge endpoint");
            links[a].push(Link {
                neighbor: b,
                outgoing: l,
                incoming: l + m,
                sign: sign(lo, hi),
            });
            links[b].push(Link {
                neighbor: a,
                outgoing: l + m,
                incoming: l,
                sign: sign(hi, lo),
            });
        }
        for list in &mut links {
            list.sort_by_key(|k| k.neighbor);
        }
        Ok(Self { graph, inputs, rho, links })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Arithmetic mean of the inputs: the fixed point every node should reach.
    pub fn true_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim()];
        for s in &self.inputs {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let n = T::from_count(self.inputs.len());
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    fn node_index(&self, v: NodeId) -> Result<usize> {
        self.graph
            .index_of(v)
            .ok_or_else(|| Error::InvalidArgument(format!("node {v} is not in the graph")))
    }

    /// Index of `λ_{i|j}` in [`ConsensusState::lambda`].
    pub fn dual_index(&self, i: NodeId, j: NodeId) -> Option<usize> {
        let a = self.graph.index_of(i)?;
        let b = self.graph.index_of(j)?;
        self.links[a].iter().find(|k| k.neighbor == b).map(|k| k.outgoing)
    }
}

/// Primal values per node and one dual vector per directed edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ConsensusState<T> {
    pub y: Vec<Vec<T>>,
    pub lambda: Vec<Vec<T>>,
    pub t: usize,
}

impl<T: Real> ConsensusState<T> {
    /// `‖y − y*‖₂` over all nodes stacked.
    pub fn residual(&self, target: &[T]) -> T {
        self.y
            .iter()
            .flat_map(|y| y.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)))
            .sum::<T>()
            .sqrt()
    }
}

/// Draws every `λ_{i|j}⁽⁰⁾` entry from `N(0, σ²)` and logs it as an encrypted
/// message from `i` to `j`. Primal values start at the inputs.
pub fn init_duals<T: Real>(problem: &ConsensusProblem<'_, T>, sigma_lambda: T, rng: &mut Rng) -> (ConsensusState<T>, Transcript<T>) {
    let q = problem.dim();
    let m = problem.graph.edge_count();
    let lambda: Vec<Vec<T>> = (0..2 * m).map(|_| (0..q).map(|_| normal(rng, sigma_lambda)).collect()).collect();
    let nodes = problem.graph.nodes();
    let mut transcript = Transcript::new();
    for (a, links) in problem.links.iter().enumerate() {
        for link in links {
            transcript.push(Message {
                em_iter: None,
                round: 0,
                from: nodes[a],
                to: vec![nodes[link.neighbor]],
                kind: MessageKind::DualInit,
                encrypted: true,
                payload: lambda[link.outgoing].clone(),
            });
        }
    }
    let state = ConsensusState {
        y: problem.inputs.clone(),
        lambda,
        t: 0,
    };
    (state, transcript)
}

fn primal_at<T: Real>(problem: &ConsensusProblem<'_, T>, state: &ConsensusState<T>, a: usize) -> Vec<T> {
    let rho = problem.rho;
    let mut acc = problem.inputs[a].clone();
    for link in &problem.links[a] {
        let b = T::lit(f64::from(link.sign));
        for ((v, &yj), &lam) in acc.iter_mut().zip(&state.y[link.neighbor]).zip(&state.lambda[link.incoming]) {
            *v += rho * yj - b * lam;
        }
    }
    let denom = T::one() + rho * T::from_count(problem.links[a].len());
    acc.iter_mut().for_each(|v| *v /= denom);
    acc
}

/// `yᵢ⁺ = (sᵢ + Σⱼ (ρ yⱼ − B_{i|j} λ_{j|i})) / (1 + ρ dᵢ)`
pub fn pdmm_primal_update<T: Real>(problem: &ConsensusProblem<'_, T>, state: &ConsensusState<T>, node: NodeId) -> Result<Vec<T>> {
    Ok(primal_at(problem, state, problem.node_index(node)?))
}

/// `λ_{i|j}⁺ = λ_{j|i} + ρ B_{i|j} (yᵢ⁺ − yⱼ)`: the dual neighbor `j` will
/// consume after broadcaster `i` announces `yᵢ⁺`.
pub fn pdmm_dual_update<T: Real>(
    problem: &ConsensusProblem<'_, T>,
    state: &ConsensusState<T>,
    broadcaster: NodeId,
    neighbor: NodeId,
    new_y: &[T],
) -> Result<Vec<T>> {
    let a = problem.node_index(broadcaster)?;
    let b = problem.node_index(neighbor)?;
    let link = problem.links[a]
        .iter()
        .find(|k| k.neighbor == b)
        .ok_or_else(|| Error::InvalidArgument(format!("{broadcaster} and {neighbor} are not adjacent")))?;
    Ok(dual_value(problem, state, link, new_y))
}

fn dual_value<T: Real>(problem: &ConsensusProblem<'_, T>, state: &ConsensusState<T>, link: &Link, new_y: &[T]) -> Vec<T> {
    let scale = problem.rho * T::lit(f64::from(link.sign));
    state.lambda[link.incoming]
        .iter()
        .zip(new_y)
        .zip(&state.y[link.neighbor])
        .map(|((&lam, &yi), &yj)| lam + scale * (yi - yj))
        .collect()
}

/// Activates `senders` simultaneously: new primal values come from the state
/// at the start of the round, then every affected dual is refreshed from the
/// same snapshot. Returns the broadcast values in `senders` order.
fn apply_round<T: Real>(problem: &ConsensusProblem<'_, T>, state: &mut ConsensusState<T>, senders: &[usize]) -> Vec<Vec<T>> {
    let fresh: Vec<Vec<T>> = senders.iter().map(|&a| primal_at(problem, state, a)).collect();
    let mut dual_writes = Vec::new();
    for (&a, y_new) in senders.iter().zip(&fresh) {
        for link in &problem.links[a] {
            dual_writes.push((link.outgoing, dual_value(problem, state, link, y_new)));
        }
    }
    for (idx, v) in dual_writes {
        state.lambda[idx] = v;
    }
    for (&a, y_new) in senders.iter().zip(&fresh) {
        state.y[a] = y_new.clone();
    }
    state.t += 1;
    fresh
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every node updates each round, then every dual.
    Synchronous,
    /// One uniformly random node activates per tick.
    Asynchronous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop when `‖y − y*‖₂ ≤ tol`, with `y*` the true mean known to the simulator.
    OracleMean,
    /// Stop when `‖y⁽ᵗ⁾ − y⁽ᵗ⁻¹⁾‖₂ ≤ tol`; usable without an oracle.
    Successive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ConsensusOptions<T> {
    pub mode: Mode,
    pub sigma_lambda: T,
    pub tol: T,
    /// Rounds in synchronous mode, ticks in asynchronous mode.
    pub max_iters: usize,
    pub stop: StopRule,
    /// Keep the full dual vector after every round (synchronous diagnostics).
    pub record_duals: bool,
}

impl<T: Real> Default for ConsensusOptions<T> {
    fn default() -> Self {
        Self {
            mode: Mode::Synchronous,
            sigma_lambda: T::zero(),
            tol: T::lit(1e-8),
            max_iters: 100_000,
            stop: StopRule::OracleMean,
            record_duals: false,
        }
    }
}

/// Default PDMM step constant.
pub const DEFAULT_RHO: f64 = 0.4;

#[derive(Clone, Debug)]
pub struct ConsensusOutcome<T> {
    /// Final `yᵢ`, in graph node order.
    pub averages: Vec<Vec<T>>,
    pub iterations: usize,
    pub residual: T,
    pub transcript: Transcript<T>,
    pub final_state: ConsensusState<T>,
    /// `λ⁽⁰⁾, λ⁽¹⁾, …` when requested.
    pub dual_trajectory: Option<Vec<Vec<Vec<T>>>>,
}

/// Runs PDMM until the stop rule fires. Dual noise and node activation
/// draw from separate children of `seeds`.
pub fn run_consensus<T: Real>(
    problem: &ConsensusProblem<'_, T>,
    opts: &ConsensusOptions<T>,
    seeds: SeedStream,
) -> Result<ConsensusOutcome<T>> {
    if !(opts.sigma_lambda >= T::zero()) {
        return Err(Error::InvalidArgument("sigma_lambda must be non-negative".into()));
    }
    let mut dual_rng = seeds.child("duals").rng();
    let mut activation = seeds.child("activation").rng();
    let (mut state, mut transcript) = init_duals(problem, opts.sigma_lambda, &mut dual_rng);
    let target = problem.true_mean();
    let nodes = problem.graph.nodes();
    let everyone: Vec<usize> = (0..nodes.len()).collect();
    let mut trajectory = opts.record_duals.then(|| vec![state.lambda.clone()]);

    let mut residual = state.residual(&target);
    let mut done = opts.stop == StopRule::OracleMean && residual <= opts.tol;
    while !done {
        if state.t >= opts.max_iters {
            return Err(Error::MaxItersExceeded {
                iterations: state.t,
                residual: residual.as_f64(),
            });
        }
        let senders = match opts.mode {
            Mode::Synchronous => everyone.clone(),
            Mode::Asynchronous => {
                use rand::Rng as _;
                vec![activation.gen_range(0..nodes.len())]
            }
        };
        let before = (opts.stop == StopRule::Successive).then(|| state.y.clone());
        let values = apply_round(problem, &mut state, &senders);
        for (&a, y) in senders.iter().zip(values) {
            transcript.push(Message {
                em_iter: None,
                round: state.t,
                from: nodes[a],
                to: problem.links[a].iter().map(|k| nodes[k.neighbor]).collect(),
                kind: MessageKind::PrimalBroadcast,
                encrypted: false,
                payload: y,
            });
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(state.lambda.clone());
        }
        residual = state.residual(&target);
        done = match before {
            None => residual <= opts.tol,
            Some(prev) => {
                let step: T = prev
                    .iter()
                    .zip(&state.y)
                    .flat_map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)))
                    .sum::<T>()
                    .sqrt();
                step <= opts.tol
            }
        };
    }
    Ok(ConsensusOutcome {
        averages: state.y.clone(),
        iterations: state.t,
        residual,
        transcript,
        final_state: state,
        dual_trajectory: trajectory,
    })
}

/// Re-executes a run from its transcript: duals come from the `dual_init`
/// messages and every recorded primal broadcast must be reproduced bit for
/// bit. Broadcasts sharing a round are applied simultaneously.
pub fn replay_consensus<T: Real>(problem: &ConsensusProblem<'_, T>, transcript: &Transcript<T>) -> Result<ConsensusState<T>> {
    let m = problem.graph.edge_count();
    let mut lambda = vec![Vec::new(); 2 * m];
    let mut seen = 0;
    for msg in transcript.iter().filter(|m| m.kind == MessageKind::DualInit) {
        let to = *msg
            .to
            .first()
            .ok_or_else(|| Error::InvalidArgument("dual_init without recipient".into()))?;
        let idx = problem
            .dual_index(msg.from, to)
            .ok_or_else(|| Error::InvalidArgument(format!("dual_init on non-edge ({}, {to})", msg.from)))?;
        lambda[idx] = msg.payload.clone();
        seen += 1;
    }
    if seen != 2 * m || lambda.iter().any(|l| l.len() != problem.dim()) {
        return Err(Error::InvalidArgument(format!(
            "expected {} dual_init messages, found {seen}",
            2 * m
        )));
    }
    let mut state = ConsensusState {
        y: problem.inputs.clone(),
        lambda,
        t: 0,
    };
    let broadcasts: Vec<&Message<T>> = transcript.iter().filter(|m| m.kind == MessageKind::PrimalBroadcast).collect();
    for group in broadcasts.chunk_by(|a, b| a.round == b.round) {
        let senders = group.iter().map(|msg| problem.node_index(msg.from)).collect::<Result<Vec<_>>>()?;
        let values = apply_round(problem, &mut state, &senders);
        for (msg, v) in group.iter().zip(values) {
            let identical = msg.payload.len() == v.len()
                && msg
                    .payload
                    .iter()
                    .zip(&v)
                    .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
            if !identical {
                return Err(Error::InvalidArgument(format!(
                    "replay diverged at round {} for node {}",
                    msg.round, msg.from
                )));
            }
        }
    }
    Ok(state)
}
