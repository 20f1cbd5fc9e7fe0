use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::features::{encode, AttributeTable, CategoryVocabulary, EdgeAttributes, EncodeOptions, FeatureScaling, NodeAttributes, TurnThresholds, ZoneFlags};
use crate::graph::{build_dual_with, PrimalGraph};
use crate::network::PreparedNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    City,
    Rural,
    SummerCottage,
}

impl Zone {
    pub fn flags(zone: Option<Zone>) -> ZoneFlags {
        match zone {
            Some(Zone::City) => ZoneFlags::CITY,
            Some(Zone::Rural) => ZoneFlags::RURAL,
            Some(Zone::SummerCottage) => ZoneFlags::SUMMER_COTTAGE,
            None => ZoneFlags::default(),
        }
    }

    fn from_flags(flags: ZoneFlags) -> Option<Zone> {
        if flags.city {
            Some(Zone::City)
        } else if flags.rural {
            Some(Zone::Rural)
        } else if flags.summer_cottage {
            Some(Zone::SummerCottage)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    pub zone: Option<Zone>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: usize,
    pub source: usize,
    pub target: usize,
    pub category: String,
    pub length_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Vec<[f64; 2]>>,
}

/// The on-disk JSON network document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

/// A validated road network: graph plus attributes, ids dense from 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    pub primal: PrimalGraph,
    pub attributes: AttributeTable,
}

/// Element counts after building the dual graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub nodes: usize,
    pub edges: usize,
    pub between: usize,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nodes={} edges={} between={}", self.nodes, self.edges, self.between)
    }
}

fn dense_order<T>(items: &[T], id: impl Fn(&T) -> usize, what: &str) -> Result<Vec<usize>> {
    let mut slot = vec![usize::MAX; items.len()];
    for (pos, item) in items.iter().enumerate() {
        let i = id(item);
        if i >= items.len() {
            return Err(RfnError::Format(format!("{what} id {i} is not dense (expected ids 0..{})", items.len())));
        }
        if slot[i] != usize::MAX {
            return Err(RfnError::Format(format!("duplicate {what} id {i}")));
        }
        slot[i] = pos;
    }
    Ok(slot)
}

impl NetworkFile {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| RfnError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        if file.nodes.is_empty() {
            return Err(RfnError::Parse {
                source_name: source_name.to_string(),
                message: "node list is empty".into(),
            });
        }
        Ok(file)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| RfnError::Format(e.to_string()))
    }

    pub fn from_network(net: &RoadNetwork) -> Self {
        let nodes = net
            .attributes
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeRecord {
                id,
                lon: n.lon,
                lat: n.lat,
                zone: Zone::from_flags(n.zone),
            })
            .collect();
        let edges = net
            .attributes
            .edges
            .iter()
            .enumerate()
            .map(|(id, e)| {
                let (source, target) = net.primal.edges()[id];
                EdgeRecord {
                    id,
                    source,
                    target,
                    category: e.category.clone(),
                    length_m: e.length_m,
                    geometry: e.geometry.clone(),
                }
            })
            .collect();
        NetworkFile { nodes, edges }
    }

    /// Validates ids and references and builds the graph.
    pub fn into_network(self) -> Result<RoadNetwork> {
        let node_slots = dense_order(&self.nodes, |n| n.id, "node")?;
        let edge_slots = dense_order(&self.edges, |e| e.id, "edge")?;
        let nodes: Vec<NodeAttributes> = node_slots
            .iter()
            .map(|&p| {
                let n = &self.nodes[p];
                NodeAttributes {
                    zone: Zone::flags(n.zone),
                    lon: n.lon,
                    lat: n.lat,
                }
            })
            .collect();
        let mut pairs = Vec::with_capacity(self.edges.len());
        let mut edges = Vec::with_capacity(self.edges.len());
        for &p in &edge_slots {
            let e = &self.edges[p];
            for (end, node) in [("source", e.source), ("target", e.target)] {
                if node >= nodes.len() {
                    return Err(RfnError::Referential(format!(
                        "edge {} has {end} node {node}, but the network has {} nodes",
                        e.id,
                        nodes.len()
                    )));
                }
            }
            if !(e.length_m >= 0.0 && e.length_m.is_finite()) {
                return Err(RfnError::Format(format!("edge {} has invalid length_m {}", e.id, e.length_m)));
            }
            pairs.push((e.source, e.target));
            edges.push(EdgeAttributes {
                category: e.category.clone(),
                length_m: e.length_m,
                geometry: e.geometry.clone(),
            });
        }
        let primal = PrimalGraph::new(nodes.len(), pairs)?;
        Ok(RoadNetwork {
            primal,
            attributes: AttributeTable { nodes, edges },
        })
    }
}

impl RoadNetwork {
    pub fn report(&self, include_u_turns: bool) -> ValidationReport {
        let dual = build_dual_with(&self.primal, include_u_turns);
        ValidationReport {
            nodes: self.primal.node_count(),
            edges: self.primal.edge_count(),
            between: dual.between_count(),
        }
    }

    /// Builds the dual graph, encodes features and indexes everything.
    pub fn prepare(&self, vocabulary: &CategoryVocabulary, scaling: Option<FeatureScaling>, include_u_turns: bool) -> Result<PreparedNetwork> {
        let dual = build_dual_with(&self.primal, include_u_turns);
        let features = encode(
            &self.attributes,
            &self.primal,
            &dual,
            &EncodeOptions {
                vocabulary,
                scaling,
                thresholds: TurnThresholds::default(),
            },
        )?;
        PreparedNetwork::new(self.primal.clone(), dual, features)
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RfnError::io(path, e))?;
    NetworkFile::parse(&text, &path.display().to_string())?.into_network()
}

pub fn save_network(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<()> {
    let path = path.as_ref();
    let text = NetworkFile::from_network(net).to_json()?;
    std::fs::write(path, text).map_err(|e| RfnError::io(path, e))
}
