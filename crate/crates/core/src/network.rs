//! A road network with its features and the gather/segment indices the
//! models read during a forward pass.

use std::sync::Arc;

use crate::error::{Result, RfnError};
use crate::features::FeatureMatrices;
use crate::graph::{build_dual_with, k_hop_subnetwork, DualGraph, GraphView, PrimalGraph, Subnetwork};
use crate::tensor::{Segments, Tensor};

/// Flattened neighborhoods of a graph view: entry `i` is the relation
/// `rel[i]` between element `src[i]` and neighbor `tgt[i]`; the entries of
/// element `v` occupy the contiguous range `segments.range(v)`.
#[derive(Clone, Debug)]
pub struct RelationIndex {
    pub src: Arc<[usize]>,
    pub rel: Arc<[usize]>,
    pub tgt: Arc<[usize]>,
    /// 1 for relations stored element -> neighbor, 0 otherwise (`n x 1`).
    pub direction: Tensor,
    pub segments: Arc<Segments>,
}

impl RelationIndex {
    pub fn build(view: &impl GraphView) -> Result<Self> {
        let mut src = Vec::new();
        let mut rel = Vec::new();
        let mut tgt = Vec::new();
        let mut flags = Vec::new();
        let mut offsets = vec![0];
        for v in 0..view.element_count() {
            for n in view.neighborhood(v)? {
                src.push(v);
                rel.push(n.relation);
                tgt.push(n.neighbor);
                flags.push(n.direction.flag());
            }
            offsets.push(src.len());
        }
        Ok(RelationIndex {
            src: src.into(),
            rel: rel.into(),
            tgt: tgt.into(),
            direction: Tensor::column_vector(&flags),
            segments: Arc::new(Segments::contiguous(offsets)),
        })
    }

    pub fn entry_count(&self) -> usize {
        self.src.len()
    }
}

/// Distinct-neighbor lists per element, for the baselines that aggregate
/// neighbor representations directly.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    /// Element owning each entry.
    pub owner: Arc<[usize]>,
    /// Neighbor id of each entry.
    pub neighbor: Arc<[usize]>,
    pub segments: Arc<Segments>,
}

impl NeighborIndex {
    pub fn build(view: &impl GraphView, include_self: bool) -> Result<Self> {
        let mut owner = Vec::new();
        let mut neighbor = Vec::new();
        let mut offsets = vec![0];
        for v in 0..view.element_count() {
            if include_self {
                owner.push(v);
                neighbor.push(v);
            }
            for n in view.neighbor_set(v)? {
                if include_self && n == v {
                    continue;
                }
                owner.push(v);
                neighbor.push(n);
            }
            offsets.push(owner.len());
        }
        Ok(NeighborIndex {
            owner: owner.into(),
            neighbor: neighbor.into(),
            segments: Arc::new(Segments::contiguous(offsets)),
        })
    }
}

/// Everything a forward pass needs, built once per network.
#[derive(Clone, Debug)]
pub struct PreparedNetwork {
    pub primal: PrimalGraph,
    pub dual: DualGraph,
    pub features: FeatureMatrices,
    pub primal_relations: RelationIndex,
    pub dual_relations: RelationIndex,
    pub dual_neighbors: NeighborIndex,
    pub dual_neighbors_with_self: NeighborIndex,
    /// Connector node of every between-edge.
    pub connectors: Arc<[usize]>,
}

impl PreparedNetwork {
    pub fn new(primal: PrimalGraph, dual: DualGraph, features: FeatureMatrices) -> Result<Self> {
        let (nv, ne, nb) = (
            features.nodes.rows(),
            features.edges.rows(),
            features.between.rows(),
        );
        if nv != primal.node_count() || ne != primal.edge_count() || nb != dual.between_count() {
            return Err(RfnError::contract(format!(
                "feature rows ({nv}, {ne}, {nb}) do not match graph sizes ({}, {}, {})",
                primal.node_count(),
                primal.edge_count(),
                dual.between_count()
            )));
        }
        if dual.edge_count() != primal.edge_count() {
            return Err(RfnError::contract("dual graph does not match primal graph"));
        }
        let primal_relations = RelationIndex::build(&primal)?;
        let dual_relations = RelationIndex::build(&dual)?;
        let dual_neighbors = NeighborIndex::build(&dual, false)?;
        let dual_neighbors_with_self = NeighborIndex::build(&dual, true)?;
        let connectors = dual.between_edges().iter().map(|b| b.connector).collect();
        Ok(PreparedNetwork {
            primal,
            dual,
            features,
            primal_relations,
            dual_relations,
            dual_neighbors,
            dual_neighbors_with_self,
            connectors,
        })
    }

    /// Convenience constructor building the dual graph.
    pub fn from_primal(primal: PrimalGraph, features: FeatureMatrices, include_u_turns: bool) -> Result<Self> {
        let dual = build_dual_with(&primal, include_u_turns);
        Self::new(primal, dual, features)
    }

    pub fn edge_count(&self) -> usize {
        self.primal.edge_count()
    }

    /// The receptive-field subnetwork of `seeds` for a `hops`-layer model,
    /// with features restricted accordingly.
    pub fn subnetwork(&self, seeds: &[usize], hops: usize) -> Result<(PreparedNetwork, Subnetwork)> {
        let sub = k_hop_subnetwork(&self.primal, &self.dual, seeds, hops.max(1))?;
        let features = self.features.restrict(&sub)?;
        let prepared = PreparedNetwork::new(sub.primal.clone(), sub.dual.clone(), features)?;
        Ok((prepared, sub))
    }
}
