use std::collections::BTreeSet;

use ppem_core::adversary::honest_set;
use ppem_core::graph::{random_geometric_graph, Graph, NodeId};
use ppem_core::Error;
use proptest::prelude::*;

fn edges_strategy(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (1..=n).flat_map(|a| ((a + 1)..=n).map(move |b| (a, b))).collect();
    prop::collection::vec(prop::bool::weighted(0.45), pairs.len())
        .prop_map(move |keep| pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(&p, _)| p).collect())
}

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| edges_strategy(n).prop_map(move |e| Graph::new(n, &e).unwrap()))
}

/// Reachability by repeated relaxation over the edge list.
fn brute_connected(nodes: &[NodeId], edges: &[(NodeId, NodeId)]) -> bool {
    let Some(&start) = nodes.first() else { return false };
    let mut seen: BTreeSet<NodeId> = [start].into_iter().collect();
    loop {
        let before = seen.len();
        for &(a, b) in edges {
            if seen.contains(&a) || seen.contains(&b) {
                seen.insert(a);
                seen.insert(b);
            }
        }
        if seen.len() == before {
            return seen.len() == nodes.len();
        }
    }
}

fn permutations(items: &[NodeId]) -> Vec<Vec<NodeId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn is_hamiltonian_cycle(g: &Graph, cycle: &[NodeId]) -> bool {
    let distinct: BTreeSet<_> = cycle.iter().collect();
    distinct.len() == g.node_count()
        && cycle.len() == g.node_count()
        && cycle.iter().all(|&v| g.contains(v))
        && (0..cycle.len()).all(|k| g.has_edge(cycle[k], cycle[(k + 1) % cycle.len()]))
}

proptest! {
    #[test]
    fn degrees_sum_to_twice_the_edges(g in graph_strategy(12)) {
        let total: usize = g.nodes().iter().map(|&v| g.degree(v)).sum();
        prop_assert_eq!(total, 2 * g.edge_count());
    }

    #[test]
    fn edge_signs_are_antisymmetric(g in graph_strategy(12)) {
        let signs = g.edge_signs();
        prop_assert_eq!(signs.len(), 2 * g.edge_count());
        for &(a, b) in g.edges() {
            prop_assert_eq!(signs.get(a, b).unwrap() + signs.get(b, a).unwrap(), 0);
            prop_assert_eq!(signs.get(b, a).unwrap(), 1);
        }
    }

    #[test]
    fn edge_list_round_trips(g in graph_strategy(12)) {
        prop_assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn hamiltonian_search_agrees_with_enumeration(g in graph_strategy(7)) {
        let rest: Vec<NodeId> = g.nodes()[1..].to_vec();
        let exists = g.node_count() >= 3
            && permutations(&rest).iter().any(|p| {
                let mut cycle = vec![g.nodes()[0]];
                cycle.extend(p);
                is_hamiltonian_cycle(&g, &cycle)
            });
        match g.find_hamiltonian_cycle() {
            Ok(cycle) => prop_assert!(exists && is_hamiltonian_cycle(&g, &cycle)),
            Err(Error::NotFound) => prop_assert!(!exists),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn removal_connectivity_matches_brute_force_exhaustively() {
    // every graph on 5 nodes, every removed subset
    let pairs: Vec<(usize, usize)> = (1..=5).flat_map(|a| ((a + 1)..=5).map(move |b| (a, b))).collect();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &p)| p)
            .collect();
        let g = Graph::new(5, &edges).unwrap();
        for removed_mask in 0u32..31 {
            let removed: BTreeSet<NodeId> = (1..=5).filter(|v| removed_mask >> (v - 1) & 1 == 1).map(NodeId).collect();
            let sub = g.remove_nodes(&removed).unwrap();
            let kept: Vec<NodeId> = g.nodes().iter().copied().filter(|v| !removed.contains(v)).collect();
            let kept_edges: Vec<_> = g
                .edges()
                .iter()
                .copied()
                .filter(|(a, b)| !removed.contains(a) && !removed.contains(b))
                .collect();
            assert_eq!(
                sub.is_connected(),
                brute_connected(&kept, &kept_edges),
                "edges {mask:b} removed {removed:?}"
            );
        }
    }
}

#[test]
fn removal_connectivity_on_random_eight_node_graphs() {
    for seed in 0..200u64 {
        let g = random_geometric_graph(8, 0.5, seed).unwrap();
        for removed_mask in 0u32..255 {
            let removed: BTreeSet<NodeId> = (1..=8).filter(|v| removed_mask >> (v - 1) & 1 == 1).map(NodeId).collect();
            let sub = g.remove_nodes(&removed).unwrap();
            let kept_edges: Vec<_> = g
                .edges()
                .iter()
                .copied()
                .filter(|(a, b)| !removed.contains(a) && !removed.contains(b))
                .collect();
            assert_eq!(sub.is_connected(), brute_connected(sub.nodes(), &kept_edges));
        }
    }
}

#[test]
fn fig1_cycle_and_honest_gate() {
    let g = Graph::fig1();
    let cycle = g.find_hamiltonian_cycle().unwrap();
    assert_eq!(cycle, [1, 2, 3, 4, 5].map(NodeId));
    assert!(is_hamiltonian_cycle(&g, &cycle));

    let corrupt = |v: &[usize]| v.iter().copied().map(NodeId).collect::<BTreeSet<_>>();
    assert_eq!(honest_set(&g, &corrupt(&[2, 4])).unwrap(), [1, 3, 5].map(NodeId));
    // removing 1 and 4 strands 5 from {2, 3}
    assert!(matches!(
        honest_set(&g, &corrupt(&[1, 4])),
        Err(Error::HonestSubgraphDisconnected { .. })
    ));
}

#[test]
fn geometric_graphs_are_deterministic() {
    assert_eq!(
        random_geometric_graph(30, 0.3, 5).unwrap(),
        random_geometric_graph(30, 0.3, 5).unwrap()
    );
}
