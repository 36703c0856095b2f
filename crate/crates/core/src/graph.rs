//! Undirected network topologies with 1-based node labels.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// 1-based node label. Label 0 is reserved for the federated server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const SERVER: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v)
    }
}

/// Undirected simple graph. Edges are stored as `(low, high)` pairs in
/// ascending order; edge `l` (1-based) is `edges[l - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
}

impl Graph {
    /// Graph on nodes `1..=n`.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let nodes: Vec<NodeId> = (1..=n).map(NodeId).collect();
        let edges: Vec<(NodeId, NodeId)> = edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b))).collect();
        Self::with_nodes(nodes, &edges)
    }

    /// Graph on an arbitrary label set.
    pub fn with_nodes(nodes: Vec<NodeId>, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let node_set: BTreeSet<NodeId> = nodes.iter().copied().collect();
        if node_set.len() != nodes.len() {
            return Err(Error::InvalidArgument("duplicate node label".into()));
        }
        if node_set.contains(&NodeId::SERVER) {
            return Err(Error::InvalidArgument("node labels start at 1".into()));
        }
        let mut normalized = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on node {a}")));
            }
            if !node_set.contains(&a) || !node_set.contains(&b) {
                return Err(Error::InvalidArgument(format!("edge ({a},{b}) references an unknown node")));
            }
            if !normalized.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({a},{b})")));
            }
        }
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = node_set.iter().map(|&v| (v, Vec::new())).collect();
        for &(a, b) in &normalized {
            adjacency.get_mut(&a).expect("known node").push(b);
            adjacency.get_mut(&b).expect("known node").push(a);
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }
        Ok(Self {
            nodes: node_set.into_iter().collect(),
            edges: normalized.into_iter().collect(),
            adjacency,
        })
    }

    /// Five-node example network: edges 12, 13, 23, 24, 34, 15, 45.
    pub fn fig1() -> Self {
        Self::new(5, &[(1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (1, 5), (4, 5)]).expect("valid fixture")
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (1..=n).flat_map(|i| ((i + 1)..=n).map(move |j| (i, j))).collect();
        Self::new(n, &edges).expect("valid complete graph")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.adjacency.contains_key(&v)
    }

    /// Neighbors in ascending label order; empty for unknown nodes.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        self.adjacency.get(&v).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    /// Dense position of a label in [`Graph::nodes`].
    pub fn index_of(&self, v: NodeId) -> Option<usize> {
        self.nodes.binary_search(&v).ok()
    }

    /// Breadth-first reachability from the lowest label.
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.first() else {
            return false;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in self.neighbors(v) {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Induced subgraph on the remaining nodes. Labels are kept as is.
    pub fn remove_nodes(&self, removed: &BTreeSet<NodeId>) -> Result<Graph> {
        if let Some(v) = removed.iter().find(|v| !self.contains(**v)) {
            return Err(Error::InvalidArgument(format!("node {v} is not in the graph")));
        }
        let nodes: Vec<NodeId> = self.nodes.iter().copied().filter(|v| !removed.contains(v)).collect();
        if nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .copied()
            .filter(|(a, b)| !removed.contains(a) && !removed.contains(b))
            .collect();
        Graph::with_nodes(nodes, &edges)
    }

    pub fn edge_signs(&self) -> EdgeSigns {
        EdgeSigns::new(self)
    }

    /// Exact backtracking search for a Hamiltonian cycle starting at the
    /// lowest label, trying neighbors in ascending order. The returned list
    /// does not repeat the start node. Branches that leave some unvisited node
    /// with fewer than two usable neighbors, or that disconnect the unvisited
    /// nodes from the path ends, are cut; graphs with a node of degree below
    /// two or a cut vertex are rejected up front.
    ///
    /// The ascending search has a step budget; when it runs out the search is
    /// repeated visiting the neighbor with the fewest remaining options first.
    /// If that also runs out the result is [`Error::NotFound`] even though a
    /// cycle might exist.
    pub fn find_hamiltonian_cycle(&self) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        if n < 3 || !self.is_connected() {
            return Err(Error::NotFound);
        }
        let adj: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|&v| self.neighbors(v).iter().map(|&u| self.index_of(u).expect("neighbor")).collect())
            .collect();
        if adj.iter().any(|a| a.len() < 2) || has_cut_vertex(&adj) {
            return Err(Error::NotFound);
        }
        for ordering in [Ordering::Ascending, Ordering::FewestOptions] {
            let mut search = CycleSearch {
                adj: &adj,
                used: vec![false; n],
                path: vec![0],
                ordering,
                budget: HAMILTONIAN_BUDGET,
            };
            search.used[0] = true;
            match search.extend() {
                Some(true) => return Ok(search.path.iter().map(|&k| self.nodes[k]).collect()),
                Some(false) => return Err(Error::NotFound),
                None => continue,
            }
        }
        Err(Error::NotFound)
    }

    /// Edge-list text: header `n m`, then one `i j` line per edge.
    /// `n` is the largest label so graphs on `1..=n` round-trip exactly.
    pub fn to_edge_list(&self) -> String {
        let n = self.nodes.last().map_or(0, |v| v.0);
        let mut out = format!("{n} {}\n", self.edges.len());
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Graph> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::ParseError {
            line: 1,
            column: 1,
            message: "missing 'n m' header".into(),
        })?;
        let (n, m) = parse_pair(hline, header)?;
        let mut edges = Vec::with_capacity(m);
        for (line, l) in lines {
            edges.push(parse_pair(line, l)?);
        }
        if edges.len() != m {
            return Err(Error::ParseError {
                line: hline,
                column: 1,
                message: format!("header announces {m} edges, found {}", edges.len()),
            });
        }
        Graph::new(n, &edges)
    }
}

fn parse_pair(line: usize, text: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::ParseError {
            line,
            column: 1,
            message: format!("expected two integers, got {text:?}"),
        });
    }
    let parse = |col: usize, s: &str| {
        s.parse::<usize>().map_err(|_| Error::ParseError {
            line,
            column: col,
            message: format!("not an integer: {s:?}"),
        })
    };
    Ok((parse(1, fields[0])?, parse(2, fields[1])?))
}

/// Per-directed-edge signs `B_{i|j}`: `+1` when `i > j`, `-1` when `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSigns {
    entries: BTreeMap<(NodeId, NodeId), i8>,
}

impl EdgeSigns {
    fn new(g: &Graph) -> Self {
        let mut entries = BTreeMap::new();
        for &(a, b) in g.edges() {
            entries.insert((a, b), sign(a, b));
            entries.insert((b, a), sign(b, a));
        }
        Self { entries }
    }

    /// `B_{i|j}`, or `None` when `(i, j)` is not an edge.
    pub fn get(&self, i: NodeId, j: NodeId) -> Option<i8> {
        self.entries.get(&(i, j)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((NodeId, NodeId), i8)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

const HAMILTONIAN_BUDGET: usize = 2_000_000;

#[derive(Clone, Copy)]
enum Ordering {
    Ascending,
    FewestOptions,
}

struct CycleSearch<'a> {
    adj: &'a [Vec<usize>],
    used: Vec<bool>,
    path: Vec<usize>,
    ordering: Ordering,
    budget: usize,
}

impl CycleSearch<'_> {
    /// `None` when the step budget ran out.
    fn extend(&mut self) -> Option<bool> {
        let last = *self.path.last().expect("non-empty path");
        if self.path.len() == self.adj.len() {
            return Some(self.adj[last].contains(&0));
        }
        let mut candidates: Vec<usize> = self.adj[last].iter().copied().filter(|&u| !self.used[u]).collect();
        if let Ordering::FewestOptions = self.ordering {
            candidates.sort_by_key(|&u| (self.adj[u].iter().filter(|&&w| !self.used[w]).count(), u));
        }
        for next in candidates {
            if self.budget == 0 {
                return None;
            }
            self.budget -= 1;
            self.path.push(next);
            self.used[next] = true;
            if self.feasible() && self.extend()? {
                return Some(true);
            }
            self.used[next] = false;
            self.path.pop();
        }
        Some(false)
    }

    fn feasible(&self) -> bool {
        let last = *self.path.last().expect("non-empty path");
        let usable = |v: usize| !self.used[v] || v == last || v == 0;
        let mut remaining = 0;
        for v in 0..self.adj.len() {
            if self.used[v] {
                continue;
            }
            remaining += 1;
            if self.adj[v].iter().filter(|&&u| usable(u)).count() < 2 {
                return false;
            }
        }
        if remaining == 0 {
            return true;
        }
        let mut seen = vec![false; self.adj.len()];
        let mut stack = vec![last];
        seen[last] = true;
        let mut reached = 0;
        while let Some(v) = stack.pop() {
            for &u in &self.adj[v] {
                if !seen[u] && !self.used[u] {
                    seen[u] = true;
                    reached += 1;
                    stack.push(u);
                }
            }
        }
        reached == remaining
    }
}

/// Iterative articulation-point test over an adjacency list.
fn has_cut_vertex(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut timer = 0;
    let mut root_children = 0;
    // frames of (node, parent, next neighbor position)
    let mut stack = vec![(0usize, usize::MAX, 0usize)];
    disc[0] = 0;
    low[0] = 0;
    timer += 1;
    while let Some(&mut (v, parent, ref mut pos)) = stack.last_mut() {
        if *pos < adj[v].len() {
            let u = adj[v][*pos];
            *pos += 1;
            if disc[u] == usize::MAX {
                disc[u] = timer;
                low[u] = timer;
                timer += 1;
                if v == 0 {
                    root_children += 1;
                }
                stack.push((u, v, 0));
            } else if u != parent {
                low[v] = low[v].min(disc[u]);
            }
        } else {
            stack.pop();
            if parent != usize::MAX {
                low[parent] = low[parent].min(low[v]);
                if parent != 0 && low[v] >= disc[parent] {
                    return true;
                }
            }
        }
    }
    root_children > 1
}

/// Sign convention shared by the PDMM updates.
#[inline]
pub fn sign(i: NodeId, j: NodeId) -> i8 {
    if i > j {
        1
    } else {
        -1
    }
}

/// A random geometric graph together with the node coordinates it came from.
#[derive(Clone, Debug)]
pub struct GeometricGraph {
    pub graph: Graph,
    /// `positions[k]` belongs to node `k + 1`.
    pub positions: Vec<[f64; 2]>,
}

/// Nodes uniform in the unit square; an edge joins every pair within `radius`.
pub fn random_geometric_layout(n: usize, radius: f64, seed: u64) -> Result<GeometricGraph> {
    if n < 2 {
        return Err(Error::InvalidArgument("a geometric graph needs at least two nodes".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument("radius must be non-negative".into()));
    }
    let mut rng = SeedStream::new(seed).rng();
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i + 1, j + 1));
            }
        }
    }
    Ok(GeometricGraph {
        graph: Graph::new(n, &edges)?,
        positions,
    })
}

pub fn random_geometric_graph(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    random_geometric_layout(n, radius, seed).map(|g| g.graph)
}

/// Radius `sqrt(2 ln n / n)`, connected with probability at least `1 - 1/n²`.
pub fn connectivity_radius(n: usize) -> f64 {
    let n = n as f64;
    (2.0 * n.ln() / n).sqrt()
}

/// Draws geometric graphs from successive sub-seeds until one is connected.
/// Returns the graph and the number of rejected draws.
pub fn connected_geometric_graph(n: usize, radius: f64, seeds: SeedStream, max_attempts: usize) -> Result<(Graph, usize)> {
    for attempt in 0..max_attempts {
        let g = random_geometric_graph(n, radius, seeds.nth(attempt as u64).seed())?;
        if g.is_connected() {
            return Ok((g, attempt));
        }
    }
    Err(Error::RetriesExhausted { attempts: max_attempts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[usize]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn fig1_is_connected_and_has_cycle() {
        let g = Graph::fig1();
        assert!(g.is_connected());
        assert_eq!(g.find_hamiltonian_cycle().unwrap(), ids(&[1, 2, 3, 4, 5]));
    }

    #[test]
    fn two_isolated_nodes_are_disconnected() {
        assert!(!Graph::new(2, &[]).unwrap().is_connected());
    }

    #[test]
    fn removing_corrupt_nodes_keeps_labels() {
        let g = Graph::fig1();
        let h = g.remove_nodes(&BTreeSet::from([NodeId(2), NodeId(4)])).unwrap();
        assert_eq!(h.nodes(), ids(&[1, 3, 5]).as_slice());
        assert_eq!(h.edges(), &[(NodeId(1), NodeId(3)), (NodeId(1), NodeId(5))]);
        assert!(h.is_connected());
        assert_eq!(g.remove_nodes(&BTreeSet::new()).unwrap(), g);
        let single = g.remove_nodes(&ids(&[1, 2, 3, 4]).into_iter().collect()).unwrap();
        assert_eq!(single.node_count(), 1);
        assert_eq!(single.edge_count(), 0);
        assert!(matches!(
            g.remove_nodes(&g.nodes().iter().copied().collect()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn sign_convention() {
        let g = Graph::new(5, &[(1, 2), (4, 5)]).unwrap();
        let s = g.edge_signs();
        assert_eq!(s.get(NodeId(1), NodeId(2)), Some(-1));
        assert_eq!(s.get(NodeId(2), NodeId(1)), Some(1));
        assert_eq!(s.get(NodeId(5), NodeId(4)), Some(1));
        assert_eq!(s.get(NodeId(1), NodeId(3)), None);
        let f = Graph::fig1().edge_signs();
        assert_eq!(f.len(), 14);
        for ((i, j), b) in f.iter() {
            assert_eq!(b + f.get(j, i).unwrap(), 0);
        }
    }

    #[test]
    fn complete_and_star_cycles() {
        assert_eq!(Graph::complete(4).find_hamiltonian_cycle().unwrap(), ids(&[1, 2, 3, 4]));
        let star = Graph::new(5, &[(1, 2), (1, 3), (1, 4), (1, 5)]).unwrap();
        assert!(matches!(star.find_hamiltonian_cycle(), Err(Error::NotFound)));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::new(3, &[(1, 1)]).is_err());
        assert!(Graph::new(3, &[(1, 2), (2, 1)]).is_err());
        assert!(Graph::new(3, &[(1, 4)]).is_err());
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let g = Graph::fig1();
        let text = g.to_edge_list();
        assert!(text.starts_with("5 7\n"));
        assert_eq!(Graph::from_edge_list(&text).unwrap(), g);
        assert!(matches!(Graph::from_edge_list(""), Err(Error::ParseError { .. })));
        assert!(matches!(Graph::from_edge_list("3 2\n1 2\n"), Err(Error::ParseError { .. })));
        assert!(matches!(
            Graph::from_edge_list("3 1\n1 x\n"),
            Err(Error::ParseError { line: 2, column: 2, .. })
        ));
    }

    #[test]
    fn geometric_two_nodes_full_radius() {
        for seed in 0..20 {
            let g = random_geometric_graph(2, 2f64.sqrt() + 1e-9, seed).unwrap();
            assert_eq!(g.edges(), &[(NodeId(1), NodeId(2))]);
        }
    }

    #[test]
    fn geometric_edges_match_brute_force_distances() {
        let layout = random_geometric_layout(10, 0.0001, 3).unwrap();
        let mut expected = 0;
        for i in 0..10 {
            for j in (i + 1)..10 {
                let d = ((layout.positions[i][0] - layout.positions[j][0]).powi(2)
                    + (layout.positions[i][1] - layout.positions[j][1]).powi(2))
                .sqrt();
                if d <= 0.0001 {
                    expected += 1;
                }
            }
        }
        assert_eq!(layout.graph.edge_count(), expected);
        assert_eq!(expected, 0);
    }

    #[test]
    fn geometric_is_deterministic() {
        let r = connectivity_radius(30);
        assert_eq!(
            random_geometric_graph(30, r, 11).unwrap(),
            random_geometric_graph(30, r, 11).unwrap()
        );
    }

    #[test]
    fn zero_radius_exhausts_retries() {
        assert!(matches!(
            connected_geometric_graph(5, 0.0, SeedStream::new(1), 4),
            Err(Error::RetriesExhausted { attempts: 4 })
        ));
    }
}
