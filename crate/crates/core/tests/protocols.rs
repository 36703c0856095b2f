use std::collections::BTreeMap;

use ppem_core::consensus::{ConsensusOptions, StopRule};
use ppem_core::data::synthetic_gmm_data;
use ppem_core::gmm::{centralized_em, init_params, EmOptions, GmmParams};
use ppem_core::graph::{connected_geometric_graph, connectivity_radius, Graph, NodeId};
use ppem_core::linalg::Matrix;
use ppem_core::protocols::{
    relay_value, run_federated_em, run_secure_sum_em, run_subspace_em, NodeData, RunOptions, SecureSumOptions, SubspaceOptions,
};
use ppem_core::transcript::MessageKind;
use ppem_core::SeedStream;

fn two_blobs(count: usize, seed: u64) -> Matrix<f64> {
    let truth = GmmParams {
        weights: vec![0.4, 0.6],
        means: vec![vec![-3.0, 1.0], vec![2.5, -1.0]],
        covariances: vec![
            Matrix::diag(&[1.0, 0.5]),
            Matrix::from_rows(&[vec![1.5, 0.4], vec![0.4, 1.0]]).unwrap(),
        ],
    };
    synthetic_gmm_data(&truth, count, seed).unwrap().0
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Setup {
    graph: Graph,
    data: NodeData<f64>,
    init: GmmParams<f64>,
    opts: RunOptions<f64>,
    central: Vec<f64>,
}

fn setup(n: usize, points: usize, iters: usize) -> Setup {
    let graph = if n == 5 {
        Graph::fig1()
    } else {
        connected_geometric_graph(n, connectivity_radius(n), SeedStream::new(11), 100)
            .unwrap()
            .0
    };
    let pts = two_blobs(points, 5);
    let em = EmOptions::for_data(&pts);
    let init = init_params(&pts, 2, 4, &em).unwrap();
    let central = centralized_em(&pts, iters, &init, &em).unwrap().loglik;
    Setup {
        data: NodeData::contiguous(&pts, graph.nodes()).unwrap(),
        graph,
        init,
        opts: RunOptions::new(iters, em),
        central,
    }
}

#[test]
fn federated_and_secure_sum_match_centralized() {
    let s = setup(5, 60, 15);
    let fed = run_federated_em(&s.data, &s.init, &s.opts).unwrap();
    let sec = run_secure_sum_em(
        &s.graph,
        &s.data,
        &s.init,
        &s.opts,
        &SecureSumOptions::default(),
        SeedStream::new(1),
    )
    .unwrap();
    assert!(max_dev(&fed.trace.loglik, &s.central) <= 1e-12);
    assert!(max_dev(&sec.trace.loglik, &s.central) <= 1e-12);
    for (p, q) in fed.trace.params.iter().zip(&sec.trace.params) {
        assert!(p.max_abs_diff(q) <= 1e-12);
    }
}

#[test]
fn federated_message_counts() {
    let s = setup(5, 40, 7);
    let run = run_federated_em(&s.data, &s.init, &s.opts).unwrap();
    assert_eq!(run.transcript.count_kind(MessageKind::Upload), 5 * 7);
    assert_eq!(run.transcript.count_kind(MessageKind::GlobalBroadcast), 7);
    assert_eq!(run.transcript.len(), 5 * 7 + 7);
    assert!(run
        .transcript
        .iter()
        .filter(|m| m.kind == MessageKind::Upload)
        .all(|m| m.to == [NodeId::SERVER]));
}

#[test]
fn secure_sum_conserves_totals() {
    let s = setup(5, 40, 6);
    let run = run_secure_sum_em(
        &s.graph,
        &s.data,
        &s.init,
        &s.opts,
        &SecureSumOptions::default(),
        SeedStream::new(2),
    )
    .unwrap();
    assert_eq!(run.transcript.count_kind(MessageKind::Relay), 5 * 6);
    assert_eq!(run.transcript.count_kind(MessageKind::SumBroadcast), 6);
    for t in 0..6 {
        let locals = run.local_updates_at(t);
        let q = locals.values().next().unwrap().len();
        let expected: Vec<f64> = (0..q).map(|k| locals.values().map(|v| v[k]).sum()).collect();
        let broadcast = run
            .transcript
            .iter()
            .find(|m| m.em_iter == Some(t) && m.kind == MessageKind::SumBroadcast)
            .unwrap();
        let scale = expected.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        assert!(max_dev(&broadcast.payload, &expected) <= 1e-12 * scale, "iter {t}");
        // every relay is dominated by the mask
        for m in run
            .transcript
            .iter()
            .filter(|m| m.em_iter == Some(t) && m.kind == MessageKind::Relay)
        {
            assert!(max_dev(&relay_value(&m.payload), &expected) > 1.0);
        }
    }
}

#[test]
fn secure_sum_without_cycle_fails() {
    let star = Graph::new(4, &[(1, 2), (1, 3), (1, 4)]).unwrap();
    let pts = two_blobs(12, 1);
    let em = EmOptions::for_data(&pts);
    let init = init_params(&pts, 2, 0, &em).unwrap();
    let data = NodeData::contiguous(&pts, star.nodes()).unwrap();
    let err = run_secure_sum_em(
        &star,
        &data,
        &init,
        &RunOptions::new(2, em),
        &SecureSumOptions::default(),
        SeedStream::new(0),
    );
    assert!(matches!(err, Err(ppem_core::Error::NotFound)));
}

fn subspace(s: &Setup, sigma: f64, tol: f64) -> ppem_core::ProtocolRun {
    let opts = SubspaceOptions {
        consensus: ConsensusOptions {
            sigma_lambda: sigma,
            tol,
            ..ConsensusOptions::default()
        },
        ..SubspaceOptions::default()
    };
    run_subspace_em(&s.graph, &s.data, &s.init, &s.opts, &opts, SeedStream::new(3)).unwrap()
}

#[test]
fn subspace_error_shrinks_with_tolerance() {
    let s = setup(20, 80, 10);
    let devs: Vec<f64> = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&tol| max_dev(&subspace(&s, 1e3, tol).trace.loglik, &s.central))
        .collect();
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    assert!(devs[2] < 1e-5);
}

#[test]
fn subspace_accuracy_does_not_depend_on_dual_noise() {
    let s = setup(20, 80, 8);
    for sigma in [0.0, 1e3] {
        let run = subspace(&s, sigma, 1e-9);
        assert!(max_dev(&run.trace.loglik, &s.central) < 1e-5, "sigma {sigma}");
        assert!(run.consensus.iter().all(|c| c.max_disagreement < 1e-6));
    }
}

#[test]
fn subspace_transcript_encrypts_only_dual_inits() {
    let s = setup(5, 40, 3);
    let run = subspace(&s, 10.0, 1e-8);
    let per_iter: BTreeMap<usize, usize> = run.transcript.iter().filter(|m| m.encrypted).fold(BTreeMap::new(), |mut acc, m| {
        assert_eq!(m.kind, MessageKind::DualInit);
        *acc.entry(m.em_iter.unwrap()).or_default() += 1;
        acc
    });
    assert_eq!(per_iter, (0..3).map(|t| (t, 2 * s.graph.edge_count())).collect());
    assert_eq!(run.consensus.len(), 3);
    assert!(run.consensus.iter().all(|c| c.residual <= 1e-8));
}

#[test]
fn successive_stop_rule_also_converges() {
    let s = setup(5, 40, 4);
    let opts = SubspaceOptions {
        consensus: ConsensusOptions {
            sigma_lambda: 1e2,
            tol: 1e-12,
            stop: StopRule::Successive,
            ..ConsensusOptions::default()
        },
        ..SubspaceOptions::default()
    };
    let run = run_subspace_em(&s.graph, &s.data, &s.init, &s.opts, &opts, SeedStream::new(9)).unwrap();
    assert!(max_dev(&run.trace.loglik, &s.central) < 1e-6);
}
