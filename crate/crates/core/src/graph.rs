//! Primal road-network graphs, their dual (edge-adjacency) graphs, and
//! receptive-field subnetwork extraction.
//!
//! In the primal graph nodes are intersections and edges are directed road
//! segments. The dual graph has one node per primal edge and one
//! *between-edge* for every ordered pair of consecutive segments
//! `((u, v), (v, w))`, with `v` recorded as the connector.

use std::collections::{BTreeSet, HashSet, VecDeque};

use crate::error::{Result, RfnError};

/// Orientation of a stored relation relative to the element whose
/// neighborhood is being enumerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// The relation points from the element to the neighbor.
    Outgoing,
    /// The relation points from the neighbor to the element.
    Incoming,
}

impl Direction {
    pub fn flag(self) -> f64 {
        match self {
            Direction::Outgoing => 1.0,
            Direction::Incoming => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub neighbor: usize,
    pub relation: usize,
    pub direction: Direction,
}

/// Anything with elements, relations between them and symmetric
/// neighborhoods.
pub trait GraphView {
    fn element_count(&self) -> usize;
    fn relation_count(&self) -> usize;
    /// Out- and in-relations of `id`, one entry per relation, sorted by
    /// ascending relation id (an outgoing entry precedes the incoming one for
    /// self-relations).
    fn neighborhood(&self, id: usize) -> Result<Vec<Neighbor>>;

    /// Distinct neighbor ids in order of first appearance in
    /// [`GraphView::neighborhood`].
    fn neighbor_set(&self, id: usize) -> Result<Vec<usize>> {
        let mut seen = HashSet::new();
        Ok(self
            .neighborhood(id)?
            .into_iter()
            .filter_map(|n| seen.insert(n.neighbor).then_some(n.neighbor))
            .collect())
    }
}

fn merge_neighbors(
    out: impl Iterator<Item = (usize, usize)>,
    inc: impl Iterator<Item = (usize, usize)>,
) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = out
        .map(|(neighbor, relation)| Neighbor {
            neighbor,
            relation,
            direction: Direction::Outgoing,
        })
        .chain(inc.map(|(neighbor, relation)| Neighbor {
            neighbor,
            relation,
            direction: Direction::Incoming,
        }))
        .collect();
    all.sort_by_key(|n| (n.relation, n.direction == Direction::Incoming));
    all
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphOptions {
    pub allow_self_loops: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimalGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl PrimalGraph {
    /// Builds a graph rejecting self-loops and parallel edges.
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::with_options(node_count, edges, GraphOptions::default())
    }

    pub fn with_options(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        options: GraphOptions,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut out_edges = vec![Vec::new(); node_count];
        let mut in_edges = vec![Vec::new(); node_count];
        for (id, &(u, v)) in edges.iter().enumerate() {
            for endpoint in [u, v] {
                if endpoint >= node_count {
                    return Err(RfnError::Referential(format!(
                        "edge {id} ({u}->{v}) references node {endpoint}, but only {node_count} nodes exist"
                    )));
                }
            }
            if u == v && !options.allow_self_loops {
                return Err(RfnError::Referential(format!(
                    "edge {id} is a self-loop on node {u}"
                )));
            }
            if !seen.insert((u, v)) {
                return Err(RfnError::Referential(format!(
                    "edge {id} duplicates directed edge {u}->{v}"
                )));
            }
            out_edges[u].push(id);
            in_edges[v].push(id);
        }
        Ok(PrimalGraph {
            node_count,
            edges,
            out_edges,
            in_edges,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Result<(usize, usize)> {
        self.edges.get(id).copied().ok_or(RfnError::Bounds {
            what: "edge",
            index: id,
            len: self.edges.len(),
        })
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_edges[node].len()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_edges[node].len()
    }
}

impl GraphView for PrimalGraph {
    fn element_count(&self) -> usize {
        self.node_count
    }

    fn relation_count(&self) -> usize {
        self.edges.len()
    }

    fn neighborhood(&self, id: usize) -> Result<Vec<Neighbor>> {
        if id >= self.node_count {
            return Err(RfnError::Bounds {
                what: "node",
                index: id,
                len: self.node_count,
            });
        }
        Ok(merge_neighbors(
            self.out_edges[id].iter().map(|&e| (self.edges[e].1, e)),
            self.in_edges[id].iter().map(|&e| (self.edges[e].0, e)),
        ))
    }
}

/// A pair of consecutive primal edges `from = (u, v)`, `to = (v, w)` meeting
/// at `connector = v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BetweenEdge {
    pub from: usize,
    pub to: usize,
    pub connector: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualGraph {
    edge_count: usize,
    between: Vec<BetweenEdge>,
    out_between: Vec<Vec<usize>>,
    in_between: Vec<Vec<usize>>,
}

impl DualGraph {
    pub fn from_between(edge_count: usize, between: Vec<BetweenEdge>) -> Result<Self> {
        let mut out_between = vec![Vec::new(); edge_count];
        let mut in_between = vec![Vec::new(); edge_count];
        for (id, b) in between.iter().enumerate() {
            for e in [b.from, b.to] {
                if e >= edge_count {
                    return Err(RfnError::Bounds {
                        what: "dual node",
                        index: e,
                        len: edge_count,
                    });
                }
            }
            out_between[b.from].push(id);
            in_between[b.to].push(id);
        }
        Ok(DualGraph {
            edge_count,
            between,
            out_between,
            in_between,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn between_count(&self) -> usize {
        self.between.len()
    }

    pub fn between_edges(&self) -> &[BetweenEdge] {
        &self.between
    }

    pub fn between(&self, id: usize) -> BetweenEdge {
        self.between[id]
    }

    pub fn out_between(&self, e: usize) -> &[usize] {
        &self.out_between[e]
    }

    pub fn in_between(&self, e: usize) -> &[usize] {
        &self.in_between[e]
    }
}

impl GraphView for DualGraph {
    fn element_count(&self) -> usize {
        self.edge_count
    }

    fn relation_count(&self) -> usize {
        self.between.len()
    }

    fn neighborhood(&self, id: usize) -> Result<Vec<Neighbor>> {
        if id >= self.edge_count {
            return Err(RfnError::Bounds {
                what: "dual node",
                index: id,
                len: self.edge_count,
            });
        }
        Ok(merge_neighbors(
            self.out_between[id].iter().map(|&b| (self.between[b].to, b)),
            self.in_between[id].iter().map(|&b| (self.between[b].from, b)),
        ))
    }
}

/// Dual graph including U-turn pairs `((u, v), (v, u))`.
pub fn build_dual(g: &PrimalGraph) -> DualGraph {
    build_dual_with(g, true)
}

/// Between-edges are ordered by `from` edge id, then by `to` edge id.
pub fn build_dual_with(g: &PrimalGraph, include_u_turns: bool) -> DualGraph {
    let mut between = Vec::new();
    for (from, &(u, v)) in g.edges().iter().enumerate() {
        for &to in g.out_edges(v) {
            let w = g.edges()[to].1;
            if !include_u_turns && w == u {
                continue;
            }
            between.push(BetweenEdge {
                from,
                to,
                connector: v,
            });
        }
    }
    DualGraph::from_between(g.edge_count(), between).expect("between-edges reference valid edges")
}

/// A subnetwork with dense local ids and maps back to the parent network.
#[derive(Clone, Debug)]
pub struct Subnetwork {
    pub primal: PrimalGraph,
    pub dual: DualGraph,
    /// local node id -> parent node id
    pub node_map: Vec<usize>,
    /// local edge id -> parent edge id
    pub edge_map: Vec<usize>,
    /// local between-edge id -> parent between-edge id
    pub between_map: Vec<usize>,
    /// local ids of the seed edges, in seed order
    pub seeds: Vec<usize>,
}

/// Edges within `k` undirected dual hops of any seed.
pub fn dual_ball(dual: &DualGraph, seeds: &[usize], k: usize) -> Result<BTreeSet<usize>> {
    let mut dist = vec![usize::MAX; dual.edge_count()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if s >= dual.edge_count() {
            return Err(RfnError::Bounds {
                what: "seed edge",
                index: s,
                len: dual.edge_count(),
            });
        }
        if dist[s] == usize::MAX {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(e) = queue.pop_front() {
        if dist[e] == k {
            continue;
        }
        for n in dual.neighborhood(e)? {
            if dist[n.neighbor] == usize::MAX {
                dist[n.neighbor] = dist[e] + 1;
                queue.push_back(n.neighbor);
            }
        }
    }
    Ok((0..dual.edge_count()).filter(|&e| dist[e] <= k).collect())
}

/// Extracts the part of the network a `k`-layer relational fusion network
/// reads when computing edge outputs for `seeds`.
///
/// The result holds every edge within `k` undirected dual hops of a seed,
/// all between-edges among the selected edges and all nodes they reference.
/// For `k > 2` it is widened with the primal neighborhoods the node path
/// consumes, so that a forward pass on the subnetwork reproduces full-graph
/// outputs at the seeds.
pub fn k_hop_subnetwork(
    primal: &PrimalGraph,
    dual: &DualGraph,
    seeds: &[usize],
    k: usize,
) -> Result<Subnetwork> {
    if seeds.is_empty() {
        return Err(RfnError::contract("k_hop_subnetwork needs at least one seed"));
    }
    if k == 0 {
        return Err(RfnError::contract("k_hop_subnetwork needs k >= 1"));
    }
    if dual.edge_count() != primal.edge_count() {
        return Err(RfnError::contract("dual graph does not match primal graph"));
    }

    let mut edges: BTreeSet<usize> = dual_ball(dual, seeds, k)?;
    let mut nodes: BTreeSet<usize> = BTreeSet::new();

    // Layer-by-layer closure over what each layer's outputs read.
    let mut need_e: BTreeSet<usize> = seeds.iter().copied().collect();
    let mut need_v: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..k {
        let mut next_e = need_e.clone();
        let mut next_v = need_v.clone();
        for &e in &need_e {
            for n in dual.neighborhood(e)? {
                next_e.insert(n.neighbor);
                next_v.insert(dual.between(n.relation).connector);
            }
        }
        for &v in &need_v {
            for n in primal.neighborhood(v)? {
                next_v.insert(n.neighbor);
                next_e.insert(n.relation);
            }
        }
        need_e = next_e;
        need_v = next_v;
    }
    edges.extend(need_e);
    nodes.extend(need_v);
    for &e in &edges {
        let (u, v) = primal.edges()[e];
        nodes.insert(u);
        nodes.insert(v);
    }

    let node_map: Vec<usize> = nodes.into_iter().collect();
    let edge_map: Vec<usize> = edges.into_iter().collect();
    let mut node_local = vec![usize::MAX; primal.node_count()];
    for (l, &g) in node_map.iter().enumerate() {
        node_local[g] = l;
    }
    let mut edge_local = vec![usize::MAX; primal.edge_count()];
    for (l, &g) in edge_map.iter().enumerate() {
        edge_local[g] = l;
    }

    let sub_edges = edge_map
        .iter()
        .map(|&e| {
            let (u, v) = primal.edges()[e];
            (node_local[u], node_local[v])
        })
        .collect();
    let sub_primal = PrimalGraph::with_options(
        node_map.len(),
        sub_edges,
        GraphOptions {
            allow_self_loops: true,
        },
    )?;

    let mut between_map = Vec::new();
    let mut sub_between = Vec::new();
    for (id, b) in dual.between_edges().iter().enumerate() {
        let (lf, lt) = (edge_local[b.from], edge_local[b.to]);
        if lf != usize::MAX && lt != usize::MAX {
            between_map.push(id);
            sub_between.push(BetweenEdge {
                from: lf,
                to: lt,
                connector: node_local[b.connector],
            });
        }
    }
    let sub_dual = DualGraph::from_between(edge_map.len(), sub_between)?;
    let seeds = seeds.iter().map(|&s| edge_local[s]).collect();

    Ok(Subnetwork {
        primal: sub_primal,
        dual: sub_dual,
        node_map,
        edge_map,
        between_map,
        seeds,
    })
}

/// A small three-way intersection used in examples and tests.
pub mod fixtures {
    use super::*;

    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const C: usize = 2;
    pub const D: usize = 3;

    pub const AB: usize = 0;
    pub const BA: usize = 1;
    pub const BC: usize = 2;
    pub const CB: usize = 3;
    pub const BD: usize = 4;
    pub const DB: usize = 5;

    /// Three-way intersection: B joined to A, C and D by two-way segments.
    pub fn three_way() -> PrimalGraph {
        PrimalGraph::new(4, vec![(A, B), (B, A), (B, C), (C, B), (B, D), (D, B)]).unwrap()
    }
}
