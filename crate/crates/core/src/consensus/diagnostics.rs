use serde::{Deserialize, Serialize};

use super::{run_consensus, ConsensusOptions, ConsensusProblem, Mode, StopRule};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{dot, norm2};
use crate::rng::{normal, SeedStream};
use crate::scalar::Real;

/// Orthonormal basis of the subspace swept by noiseless dual iterates.
/// Dual noise outside it is never damped by the iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergentSubspace {
    ambient: usize,
    basis: Vec<Vec<f64>>,
}

impl ConvergentSubspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for b in &self.basis {
            let c = dot(b, v);
            out.iter_mut().zip(b).for_each(|(o, &x)| *o += c * x);
        }
        out
    }

    /// Adds `v` to the basis if it has a component outside the current span.
    fn absorb(&mut self, v: &[f64]) -> bool {
        let scale = norm2(v);
        if scale == 0.0 || self.basis.len() == self.ambient {
            return false;
        }
        let mut r = v.to_vec();
        for _ in 0..2 {
            for b in &self.basis {
                let c = dot(b, &r);
                r.iter_mut().zip(b).for_each(|(x, &y)| *x -= c * y);
            }
        }
        let rest = norm2(&r);
        if rest <= 1e-9 * scale {
            return false;
        }
        r.iter_mut().for_each(|x| *x /= rest);
        self.basis.push(r);
        true
    }
}

/// Spans the dual iterates of `runs` noiseless synchronous runs with random
/// scalar inputs on `graph`.
pub fn estimate_convergent_subspace(graph: &Graph, rho: f64, runs: usize, seeds: SeedStream) -> Result<ConvergentSubspace> {
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one reference run".into()));
    }
    let mut space = ConvergentSubspace {
        ambient: 2 * graph.edge_count(),
        basis: Vec::new(),
    };
    let opts = ConsensusOptions {
        mode: Mode::Synchronous,
        sigma_lambda: 0.0,
        tol: 1e-10,
        max_iters: 20_000,
        stop: StopRule::OracleMean,
        record_duals: true,
    };
    for r in 0..runs {
        let run_seeds = seeds.nth(r as u64);
        let mut rng = run_seeds.child("inputs").rng();
        let inputs: Vec<Vec<f64>> = (0..graph.node_count()).map(|_| vec![normal(&mut rng, 1.0)]).collect();
        let problem = ConsensusProblem::new(graph, inputs, rho)?;
        let out = run_consensus(&problem, &opts, run_seeds)?;
        for lambda in out.dual_trajectory.unwrap_or_default() {
            let flat: Vec<f64> = lambda.iter().map(|l| l[0]).collect();
            space.absorb(&flat);
        }
    }
    Ok(space)
}

/// Per-round split of a dual trajectory into its convergent part and the
/// orthogonal remainder. Each of the `q` coordinates is projected separately;
/// norms are taken over all coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubspaceTrace {
    /// `‖Π_H λ⁽ᵗ⁾‖`
    pub in_subspace: Vec<f64>,
    /// `‖(I − Π_H) λ⁽ᵗ⁾‖`
    pub orthogonal: Vec<f64>,
    /// `‖Π_H (λ⁽ᵗ⁺²⁾ − λ⁽ᵗ⁾)‖`
    pub even_step: Vec<f64>,
}

pub fn subspace_diagnostics<T: Real>(space: &ConvergentSubspace, trajectory: &[Vec<Vec<T>>]) -> Result<SubspaceTrace> {
    let mut trace = SubspaceTrace::default();
    let mut projected = Vec::with_capacity(trajectory.len());
    for lambda in trajectory {
        if lambda.len() != space.ambient {
            return Err(Error::InvalidArgument(format!(
                "dual vector has {} entries, subspace lives in {}",
                lambda.len(),
                space.ambient
            )));
        }
        let q = lambda.first().map_or(0, Vec::len);
        let (mut inside, mut outside) = (0.0, 0.0);
        let mut columns = Vec::with_capacity(q);
        for c in 0..q {
            let col: Vec<f64> = lambda.iter().map(|l| l[c].as_f64()).collect();
            let p = space.project(&col);
            inside += p.iter().map(|x| x * x).sum::<f64>();
            outside += col.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            columns.push(p);
        }
        trace.in_subspace.push(inside.sqrt());
        trace.orthogonal.push(outside.sqrt());
        projected.push(columns);
    }
    for t in 2..projected.len() {
        let d: f64 = projected[t]
            .iter()
            .zip(&projected[t - 2])
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        trace.even_step.push(d.sqrt());
    }
    Ok(trace)
}
