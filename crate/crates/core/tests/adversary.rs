use std::collections::BTreeSet;

use ppem_core::adversary::{eavesdrop_view, honest_set, passive_view, reconstruct_federated, reconstruct_secure_sum, subspace_honest_sums};
use ppem_core::consensus::ConsensusOptions;
use ppem_core::gmm::{init_params, EmOptions};
use ppem_core::graph::{connected_geometric_graph, connectivity_radius, Graph, NodeId};
use ppem_core::linalg::Matrix;
use ppem_core::protocols::{run_federated_em, run_secure_sum_em, run_subspace_em, NodeData, RunOptions, SecureSumOptions, SubspaceOptions};
use ppem_core::rng::normal;
use ppem_core::SeedStream;
use proptest::prelude::*;

fn ids(v: &[usize]) -> BTreeSet<NodeId> {
    v.iter().map(|&i| NodeId(i)).collect()
}

fn gaussian_points(n: usize, d: usize, seed: u64) -> Matrix<f64> {
    let mut rng = SeedStream::new(seed).rng();
    let data = (0..n * d)
        .map(|k| normal(&mut rng, 1.0) + if k % 2 == 0 { 4.0 } else { -1.0 })
        .collect();
    Matrix::from_vec(n, d, data).unwrap()
}

#[test]
fn federated_single_points_are_recovered_exactly() {
    let n = 30;
    for seed in 0..6u64 {
        let (graph, _) = connected_geometric_graph(n, connectivity_radius(n), SeedStream::new(seed), 100).unwrap();
        let pts = gaussian_points(n, 2, seed + 100);
        let data = NodeData::single_points(&pts, graph.nodes()).unwrap();
        let em = EmOptions::for_data(&pts);
        let init = init_params(&pts, 3, seed, &em).unwrap();
        let run = run_federated_em(&data, &init, &RunOptions::new(10, em)).unwrap();
        let view = passive_view(&run.transcript, &run.states, &ids(&[0]));
        for t in 0..10 {
            let rec = reconstruct_federated(&view, 3, 2, t, &run.trace.params[..=t]).unwrap();
            assert_eq!(rec.len(), n);
            for (k, &v) in graph.nodes().iter().enumerate() {
                assert_eq!(rec[&v], pts.row(k), "seed {seed} node {v} iter {t}");
            }
        }
        // the uploads are in the clear, so an eavesdropper gets the same
        let eve = eavesdrop_view(&run.transcript);
        assert_eq!(reconstruct_federated(&eve, 3, 2, 0, &[]).unwrap().len(), n);
    }
}

fn fig1_secure_run(iters: usize) -> ppem_core::ProtocolRun {
    let graph = Graph::fig1();
    let pts = gaussian_points(10, 1, 3);
    let data = NodeData::contiguous(&pts, graph.nodes()).unwrap();
    let em = EmOptions::for_data(&pts);
    let init = init_params(&pts, 2, 1, &em).unwrap();
    run_secure_sum_em(
        &graph,
        &data,
        &init,
        &RunOptions::new(iters, em),
        &SecureSumOptions::default(),
        SeedStream::new(4),
    )
    .unwrap()
}

#[test]
fn secure_sum_attack_recovers_node_three() {
    let run = fig1_secure_run(8);
    let cycle = run.cycle.clone().unwrap();
    let view = passive_view(&run.transcript, &run.states, &ids(&[2, 4]));
    for t in 0..8 {
        let rec = reconstruct_secure_sum(&view, &cycle, t).unwrap();
        let truth = run.local_updates_at(t)[&NodeId(3)];
        let got = &rec.exact[&NodeId(3)];
        let scale = truth.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (g, e) in got.iter().zip(truth) {
            assert!((g - e).abs() <= 1e-12 * scale, "iter {t}: {g} vs {e}");
        }
        // nodes 5 and 1 are only seen through their sum
        assert!(!rec.exact.contains_key(&NodeId(1)) && !rec.exact.contains_key(&NodeId(5)));
        let (members, sum) = rec.about(NodeId(1)).unwrap();
        assert_eq!(members.iter().copied().collect::<BTreeSet<_>>(), ids(&[1, 5]));
        let locals = run.local_updates_at(t);
        for (k, s) in sum.iter().enumerate() {
            let direct = locals[&NodeId(1)][k] + locals[&NodeId(5)][k];
            assert!((s - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        }
    }
}

#[test]
fn secure_sum_eavesdropper_reads_everything() {
    let run = fig1_secure_run(2);
    let cycle = run.cycle.clone().unwrap();
    let rec = reconstruct_secure_sum(&eavesdrop_view(&run.transcript), &cycle, 1).unwrap();
    // relay differences give nodes 2..5; the broadcast total then gives node 1
    assert_eq!(rec.exact.keys().copied().collect::<BTreeSet<_>>(), ids(&[1, 2, 3, 4, 5]));
}

proptest! {
    #[test]
    fn views_grow_with_the_coalition(small in prop::collection::btree_set(1usize..=5, 0..4), extra in prop::collection::btree_set(0usize..=5, 0..3)) {
        let run = fig1_secure_run(2);
        let s1: BTreeSet<NodeId> = small.iter().map(|&v| NodeId(v)).collect();
        let s2: BTreeSet<NodeId> = s1.iter().copied().chain(extra.iter().map(|&v| NodeId(v))).collect();
        let v1 = passive_view(&run.transcript, &run.states, &s1);
        let v2 = passive_view(&run.transcript, &run.states, &s2);
        prop_assert!(v1.is_subset_of(&v2));
    }
}

#[test]
fn subspace_honest_sums_match_direct_sums() {
    let graph = Graph::fig1();
    let pts = gaussian_points(15, 2, 8);
    let data = NodeData::contiguous(&pts, graph.nodes()).unwrap();
    let em = EmOptions::for_data(&pts);
    let init = init_params(&pts, 2, 2, &em).unwrap();
    let sub = SubspaceOptions {
        consensus: ConsensusOptions {
            sigma_lambda: 1e3,
            tol: 1e-9,
            ..ConsensusOptions::default()
        },
        ..SubspaceOptions::default()
    };
    let run = run_subspace_em(&graph, &data, &init, &RunOptions::new(4, em), &sub, SeedStream::new(5)).unwrap();
    let corrupt = ids(&[2, 4]);
    let sums = subspace_honest_sums(&run, &graph, &corrupt).unwrap();
    let honest = honest_set(&graph, &corrupt).unwrap();
    assert_eq!(honest, [1, 3, 5].map(NodeId));
    for (t, s) in sums.iter().enumerate() {
        let locals = run.local_updates_at(t);
        for (k, &v) in s.iter().enumerate() {
            let direct: f64 = honest.iter().map(|h| locals[h][k]).sum();
            assert!((v - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
    assert!(subspace_honest_sums(&run, &graph, &ids(&[1, 4])).is_err());
}
