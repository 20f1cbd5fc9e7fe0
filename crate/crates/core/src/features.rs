//! Encoding of node, edge and between-edge attributes into the model's
//! input matrices.
//!
//! * node rows: `[city, rural, summer_cottage]` as 0/1
//! * edge rows: `[category one-hot | scaled length | source node row | target node row]`
//! * between-edge rows: `[straight, left, right, u-turn] one-hot | angle / 180`

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::graph::{DualGraph, PrimalGraph, Subnetwork};
use crate::tensor::Tensor;

pub const NODE_FEATURES: usize = 3;
pub const BETWEEN_FEATURES: usize = 5;

/// Width of an encoded edge row for a vocabulary of `n` categories.
pub fn edge_feature_width(vocabulary_len: usize) -> usize {
    vocabulary_len + 1 + 2 * NODE_FEATURES
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneFlags {
    pub city: bool,
    pub rural: bool,
    pub summer_cottage: bool,
}

impl ZoneFlags {
    pub const CITY: ZoneFlags = ZoneFlags {
        city: true,
        rural: false,
        summer_cottage: false,
    };
    pub const RURAL: ZoneFlags = ZoneFlags {
        city: false,
        rural: true,
        summer_cottage: false,
    };
    pub const SUMMER_COTTAGE: ZoneFlags = ZoneFlags {
        city: false,
        rural: false,
        summer_cottage: true,
    };

    fn encode(self) -> [f64; NODE_FEATURES] {
        [
            f64::from(u8::from(self.city)),
            f64::from(u8::from(self.rural)),
            f64::from(u8::from(self.summer_cottage)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeAttributes {
    pub zone: ZoneFlags,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttributes {
    pub category: String,
    pub length_m: f64,
    /// `(lon, lat)` points oriented in travel direction.
    pub geometry: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    pub nodes: Vec<NodeAttributes>,
    pub edges: Vec<EdgeAttributes>,
}

impl AttributeTable {
    /// Travel-direction polyline of an edge, falling back to the straight
    /// line between its endpoint nodes.
    pub fn edge_polyline(&self, g: &PrimalGraph, e: usize) -> Vec<[f64; 2]> {
        match &self.edges[e].geometry {
            Some(pts) if pts.len() >= 2 => pts.clone(),
            _ => {
                let (u, v) = g.edges()[e];
                let (a, b) = (&self.nodes[u], &self.nodes[v]);
                vec![[a.lon, a.lat], [b.lon, b.lat]]
            }
        }
    }

    pub fn restrict(&self, sub: &Subnetwork) -> AttributeTable {
        AttributeTable {
            nodes: sub.node_map.iter().map(|&v| self.nodes[v].clone()).collect(),
            edges: sub.edge_map.iter().map(|&e| self.edges[e].clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    StraightAhead,
    Left,
    Right,
    UTurn,
}

impl TurnDirection {
    pub fn index(self) -> usize {
        match self {
            TurnDirection::StraightAhead => 0,
            TurnDirection::Left => 1,
            TurnDirection::Right => 2,
            TurnDirection::UTurn => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetweenAttributes {
    pub angle_deg: f64,
    pub direction: TurnDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnThresholds {
    /// Deviations below this are straight-ahead.
    pub straight_below_deg: f64,
    /// Deviations above this are U-turns.
    pub u_turn_above_deg: f64,
}

impl Default for TurnThresholds {
    fn default() -> Self {
        TurnThresholds {
            straight_below_deg: 30.0,
            u_turn_above_deg: 160.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    labels: Vec<String>,
}

impl Default for CategoryVocabulary {
    fn default() -> Self {
        CategoryVocabulary::new(
            [
                "motorway",
                "trunk",
                "primary",
                "secondary",
                "tertiary",
                "unclassified",
                "residential",
                "service",
                "link",
            ]
            .map(String::from)
            .to_vec(),
        )
        .expect("default vocabulary is valid")
    }
}

impl CategoryVocabulary {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(RfnError::config("category vocabulary is empty"));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(RfnError::config(format!("duplicate category label '{l}'")));
            }
        }
        Ok(CategoryVocabulary { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| RfnError::Vocabulary {
                label: label.to_string(),
                vocabulary: self.labels.join(", "),
            })
    }
}

/// Parameters of a min-max scaler: `(v - lo) / (hi - lo)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub lo: f64,
    pub hi: f64,
}

impl MinMax {
    pub fn apply(self, v: f64) -> f64 {
        if self.hi > self.lo {
            ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Scales `values` to `[0, 1]`, fitting `(lo, hi)` when `fit` is set and
/// otherwise applying `params` with clamping.
pub fn minmax_scale(values: &[f64], fit: bool, params: Option<MinMax>) -> Result<(Vec<f64>, MinMax)> {
    let p = if fit {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            MinMax { lo: 0.0, hi: 0.0 }
        } else {
            MinMax { lo, hi }
        }
    } else {
        let p = params.ok_or_else(|| RfnError::contract("minmax_scale: no parameters to apply"))?;
        if p.hi < p.lo {
            return Err(RfnError::contract(format!(
                "minmax_scale: hi {} below lo {}",
                p.hi, p.lo
            )));
        }
        p
    };
    Ok((values.iter().map(|&v| p.apply(v)).collect(), p))
}

/// Scaling parameters fitted on a training network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub length: MinMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrices {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub between: Tensor,
    pub scaling: FeatureScaling,
}

impl FeatureMatrices {
    pub fn widths(&self) -> (usize, usize, usize) {
        (self.nodes.cols(), self.edges.cols(), self.between.cols())
    }

    pub fn restrict(&self, sub: &Subnetwork) -> Result<FeatureMatrices> {
        Ok(FeatureMatrices {
            nodes: self.nodes.select_rows(&sub.node_map)?,
            edges: self.edges.select_rows(&sub.edge_map)?,
            between: self.between.select_rows(&sub.between_map)?,
            scaling: self.scaling,
        })
    }
}

const SAME_POINT_TOLERANCE: f64 = 1e-7;

fn same_point(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() <= SAME_POINT_TOLERANCE && (a[1] - b[1]).abs() <= SAME_POINT_TOLERANCE
}

/// Compass bearing in degrees (0 = north, 90 = east) from `a` to `b` on an
/// equirectangular projection around latitude `ref_lat`.
fn bearing(a: [f64; 2], b: [f64; 2], ref_lat: f64) -> f64 {
    let dx = (b[0] - a[0]) * ref_lat.to_radians().cos();
    let dy = b[1] - a[1];
    dx.atan2(dy).to_degrees()
}

fn first_segment(points: &[[f64; 2]]) -> Option<([f64; 2], [f64; 2])> {
    let start = *points.first()?;
    points
        .iter()
        .find(|&&p| !same_point(p, start))
        .map(|&p| (start, p))
}

/// Turn angle and direction when moving along `incoming` into `connector`
/// and leaving along `outgoing`. The angle is the deviation from continuing
/// straight, in `[0, 180]`.
pub fn derive_turn_attributes(
    incoming: &[[f64; 2]],
    outgoing: &[[f64; 2]],
    connector: [f64; 2],
    thresholds: TurnThresholds,
) -> Result<BetweenAttributes> {
    let mut inc: Vec<[f64; 2]> = incoming.to_vec();
    let mut out: Vec<[f64; 2]> = outgoing.to_vec();
    let (Some(&inc_last), Some(&inc_first)) = (inc.last(), inc.first()) else {
        return Err(RfnError::Geometry("empty incoming geometry".into()));
    };
    if !same_point(inc_last, connector) && same_point(inc_first, connector) {
        inc.reverse();
    }
    let (Some(&out_first), Some(&out_last)) = (out.first(), out.last()) else {
        return Err(RfnError::Geometry("empty outgoing geometry".into()));
    };
    if !same_point(out_first, connector) && same_point(out_last, connector) {
        out.reverse();
    }
    if !same_point(*inc.last().unwrap(), connector) || !same_point(out[0], connector) {
        return Err(RfnError::Geometry(format!(
            "geometries do not meet at connector ({}, {})",
            connector[0], connector[1]
        )));
    }
    inc.reverse();
    let (c_in, p_in) = first_segment(&inc)
        .ok_or_else(|| RfnError::Geometry("zero-length incoming geometry".into()))?;
    let (c_out, p_out) = first_segment(&out)
        .ok_or_else(|| RfnError::Geometry("zero-length outgoing geometry".into()))?;
    let heading_in = bearing(p_in, c_in, connector[1]);
    let heading_out = bearing(c_out, p_out, connector[1]);
    let mut delta = heading_out - heading_in;
    while delta > 180.0 {
        delta -= 360.0;
    }
    while delta <= -180.0 {
        delta += 360.0;
    }
    let angle_deg = delta.abs();
    let direction = if angle_deg > thresholds.u_turn_above_deg {
        TurnDirection::UTurn
    } else if angle_deg < thresholds.straight_below_deg {
        TurnDirection::StraightAhead
    } else if delta > 0.0 {
        TurnDirection::Right
    } else {
        TurnDirection::Left
    };
    Ok(BetweenAttributes {
        angle_deg,
        direction,
    })
}

/// Turn attributes for every between-edge of `dual`.
pub fn between_attributes(
    attrs: &AttributeTable,
    primal: &PrimalGraph,
    dual: &DualGraph,
    thresholds: TurnThresholds,
) -> Result<Vec<BetweenAttributes>> {
    dual.between_edges()
        .iter()
        .map(|b| {
            let c = &attrs.nodes[b.connector];
            derive_turn_attributes(
                &attrs.edge_polyline(primal, b.from),
                &attrs.edge_polyline(primal, b.to),
                [c.lon, c.lat],
                thresholds,
            )
            .map_err(|e| {
                RfnError::Geometry(format!("between-edge {}->{}: {e}", b.from, b.to))
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodeOptions<'a> {
    pub vocabulary: &'a CategoryVocabulary,
    /// Stored scaling to reuse (cross-network inference). `None` fits a new
    /// scaling on this network.
    pub scaling: Option<FeatureScaling>,
    pub thresholds: TurnThresholds,
}

/// Encodes attributes with turn attributes derived from geometry.
pub fn encode(
    attrs: &AttributeTable,
    primal: &PrimalGraph,
    dual: &DualGraph,
    options: &EncodeOptions<'_>,
) -> Result<FeatureMatrices> {
    let turns = between_attributes(attrs, primal, dual, options.thresholds)?;
    encode_with_turns(attrs, primal, &turns, options.vocabulary, options.scaling)
}

pub fn encode_with_turns(
    attrs: &AttributeTable,
    primal: &PrimalGraph,
    turns: &[BetweenAttributes],
    vocabulary: &CategoryVocabulary,
    scaling: Option<FeatureScaling>,
) -> Result<FeatureMatrices> {
    if attrs.nodes.len() != primal.node_count() || attrs.edges.len() != primal.edge_count() {
        return Err(RfnError::contract(format!(
            "attribute table covers {} nodes / {} edges, graph has {} / {}",
            attrs.nodes.len(),
            attrs.edges.len(),
            primal.node_count(),
            primal.edge_count()
        )));
    }
    let mut nodes = Tensor::zeros(primal.node_count(), NODE_FEATURES);
    for (i, n) in attrs.nodes.iter().enumerate() {
        nodes.row_mut(i).copy_from_slice(&n.zone.encode());
    }

    let lengths: Vec<f64> = attrs.edges.iter().map(|e| e.length_m).collect();
    if let Some((i, l)) = lengths.iter().enumerate().find(|(_, l)| !(**l >= 0.0)) {
        return Err(RfnError::contract(format!("edge {i} has invalid length {l}")));
    }
    let (scaled, length) = match scaling {
        Some(s) => minmax_scale(&lengths, false, Some(s.length))?,
        None => minmax_scale(&lengths, true, None)?,
    };

    let vocab_len = vocabulary.len();
    let width = edge_feature_width(vocab_len);
    let mut edges = Tensor::zeros(primal.edge_count(), width);
    for (e, ea) in attrs.edges.iter().enumerate() {
        let cat = vocabulary.index_of(&ea.category)?;
        let (u, v) = primal.edges()[e];
        let row = edges.row_mut(e);
        row[cat] = 1.0;
        row[vocab_len] = scaled[e];
        row[vocab_len + 1..vocab_len + 1 + NODE_FEATURES].copy_from_slice(nodes.row(u));
        row[vocab_len + 1 + NODE_FEATURES..].copy_from_slice(nodes.row(v));
    }

    let mut between = Tensor::zeros(turns.len(), BETWEEN_FEATURES);
    for (b, t) in turns.iter().enumerate() {
        if !(0.0..=180.0).contains(&t.angle_deg) {
            return Err(RfnError::contract(format!(
                "between-edge {b} has angle {} outside [0, 180]",
                t.angle_deg
            )));
        }
        let row = between.row_mut(b);
        row[t.direction.index()] = 1.0;
        row[4] = t.angle_deg / 180.0;
    }

    Ok(FeatureMatrices {
        nodes,
        edges,
        between,
        scaling: FeatureScaling { length },
    })
}
