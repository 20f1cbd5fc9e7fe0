//! Converts OpenStreetMap highway data (Overpass API JSON with `out geom`
//! or plain node/way elements) into a [`NetworkFile`].
//!
//! Ways are split at intersections (nodes shared by several ways, and way
//! endpoints). Each piece becomes one edge per permitted direction, with
//! its polyline as geometry. Highway tags outside the category vocabulary
//! map to `unclassified`; `*_link` tags map to `link`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::network_file::{EdgeRecord, NetworkFile, NodeRecord};
use super::polyline_length_m;
use crate::error::{Result, RfnError};
use crate::features::CategoryVocabulary;

#[derive(Debug, Deserialize)]
struct Overpass {
    elements: Vec<Element>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Element {
    Node {
        id: i64,
        lat: f64,
        lon: f64,
    },
    Way {
        id: i64,
        nodes: Vec<i64>,
        #[serde(default)]
        tags: BTreeMap<String, String>,
    },
    #[serde(other)]
    Other,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OsmReport {
    pub ways: usize,
    pub edges: usize,
    /// Highway tags mapped to `unclassified`, with counts.
    pub unknown_tags: BTreeMap<String, usize>,
    pub dropped_loops: usize,
    pub dropped_duplicates: usize,
    pub missing_nodes: usize,
}

pub fn map_highway(tag: &str, vocabulary: &CategoryVocabulary) -> Option<String> {
    if vocabulary.index_of(tag).is_ok() {
        return Some(tag.to_string());
    }
    if tag.ends_with("_link") && vocabulary.index_of("link").is_ok() {
        return Some("link".into());
    }
    None
}

enum Direction {
    Both,
    Forward,
    Backward,
}

fn direction(tags: &BTreeMap<String, String>) -> Direction {
    match tags.get("oneway").map(String::as_str) {
        Some("yes" | "true" | "1") => Direction::Forward,
        Some("-1" | "reverse") => Direction::Backward,
        Some(_) => Direction::Both,
        None if tags.get("highway").map(String::as_str) == Some("motorway") => Direction::Forward,
        None if tags.get("junction").map(String::as_str) == Some("roundabout") => Direction::Forward,
        None => Direction::Both,
    }
}

pub fn convert_overpass(text: &str, source_name: &str, vocabulary: &CategoryVocabulary) -> Result<(NetworkFile, OsmReport)> {
    let doc: Overpass = serde_json::from_str(text).map_err(|e| RfnError::Parse {
        source_name: source_name.to_string(),
        message: e.to_string(),
    })?;
    let mut coords: HashMap<i64, [f64; 2]> = HashMap::new();
    let mut ways = Vec::new();
    for el in doc.elements {
        match el {
            Element::Node { id, lat, lon } => {
                coords.insert(id, [lon, lat]);
            }
            Element::Way { id, nodes, tags } if tags.contains_key("highway") => ways.push((id, nodes, tags)),
            _ => {}
        }
    }
    ways.sort_by_key(|w| w.0);

    let mut report = OsmReport {
        ways: ways.len(),
        ..OsmReport::default()
    };
    // Usage counts decide which nodes split ways.
    let mut uses: HashMap<i64, usize> = HashMap::new();
    for (_, nodes, _) in &ways {
        for (i, n) in nodes.iter().enumerate() {
            let w = if i == 0 || i + 1 == nodes.len() { 2 } else { 1 };
            *uses.entry(*n).or_default() += w;
        }
    }

    let mut node_ids: BTreeMap<i64, usize> = BTreeMap::new();
    let mut pieces: Vec<(i64, i64, Vec<[f64; 2]>, String, bool, bool)> = Vec::new();
    for (_, nodes, tags) in &ways {
        if nodes.iter().any(|n| !coords.contains_key(n)) {
            report.missing_nodes += 1;
            continue;
        }
        let highway = &tags["highway"];
        let category = map_highway(highway, vocabulary).unwrap_or_else(|| {
            *report.unknown_tags.entry(highway.clone()).or_default() += 1;
            "unclassified".into()
        });
        let (fwd, bwd) = match direction(tags) {
            Direction::Both => (true, true),
            Direction::Forward => (true, false),
            Direction::Backward => (false, true),
        };
        let mut start = 0;
        for i in 1..nodes.len() {
            if i + 1 == nodes.len() || uses[&nodes[i]] > 1 {
                let geom: Vec<[f64; 2]> = nodes[start..=i].iter().map(|n| coords[n]).collect();
                pieces.push((nodes[start], nodes[i], geom, category.clone(), fwd, bwd));
                start = i;
            }
        }
    }

    let mut seen: BTreeSet<(i64, i64)> = BTreeSet::new();
    let mut edges = Vec::new();
    for (a, b, geom, category, fwd, bwd) in pieces {
        if a == b {
            report.dropped_loops += 1;
            continue;
        }
        let length_m = polyline_length_m(&geom);
        let mut directed = Vec::new();
        if fwd {
            directed.push((a, b, geom.clone()));
        }
        if bwd {
            let mut rev = geom.clone();
            rev.reverse();
            directed.push((b, a, rev));
        }
        for (u, v, g) in directed {
            if !seen.insert((u, v)) {
                report.dropped_duplicates += 1;
                continue;
            }
            let next = node_ids.len();
            let su = *node_ids.entry(u).or_insert(next);
            let next = node_ids.len();
            let sv = *node_ids.entry(v).or_insert(next);
            edges.push(EdgeRecord {
                id: edges.len(),
                source: su,
                target: sv,
                category: category.clone(),
                length_m,
                geometry: Some(g),
            });
        }
    }
    let mut nodes: Vec<NodeRecord> = node_ids
        .iter()
        .map(|(osm, &id)| NodeRecord {
            id,
            lon: coords[osm][0],
            lat: coords[osm][1],
            zone: None,
        })
        .collect();
    nodes.sort_by_key(|n| n.id);
    report.edges = edges.len();
    Ok((NetworkFile { nodes, edges }, report))
}
