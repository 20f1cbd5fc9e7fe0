//! Synthetic road networks with volatile homophily.
//!
//! Every region is a jittered grid of two-way streets sharing one road
//! category, one zone and one base speed. Transition roads join pairs of
//! regions, so a driver crossing from one region into another meets an
//! abrupt change in speed. Optionally, streets leading into a junction
//! with a transition road are slower (`approach_slowdown`): drivers brake
//! before entering the larger road. This effect depends on the direction
//! of travel relative to the junction and is invisible in a segment's own
//! attributes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network_file::{RoadNetwork, Zone};
use super::observations::Observation;
use super::haversine_m;
use crate::error::{Result, RfnError};
use crate::features::{AttributeTable, EdgeAttributes, NodeAttributes};
use crate::graph::PrimalGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub category: String,
    pub zone: Zone,
    /// Mean driving speed in km/h.
    pub speed: f64,
    /// Speed-limit class label.
    pub limit: String,
}

impl RegionProfile {
    fn new(category: &str, zone: Zone, speed: f64, limit: &str) -> Self {
        RegionProfile {
            category: category.into(),
            zone,
            speed,
            limit: limit.into(),
        }
    }

    /// Profiles cycled over regions. Category and city flag differ between
    /// all of them, so they determine the speed.
    pub fn defaults() -> Vec<RegionProfile> {
        vec![
            RegionProfile::new("residential", Zone::City, 32.0, "50"),
            RegionProfile::new("secondary", Zone::Rural, 78.0, "80"),
            RegionProfile::new("primary", Zone::City, 55.0, "60"),
            RegionProfile::new("residential", Zone::Rural, 45.0, "50"),
            RegionProfile::new("tertiary", Zone::SummerCottage, 40.0, "40"),
            RegionProfile::new("unclassified", Zone::Rural, 62.0, "80"),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub regions: usize,
    /// Target number of directed street edges per region.
    pub edges_per_region: usize,
    /// Two-way roads joining consecutive regions.
    pub transition_edges: usize,
    pub profiles: Vec<RegionProfile>,
    pub transition: RegionProfile,
    /// Observation noise (km/h standard deviation).
    pub noise_sigma: f64,
    pub observations_per_edge: usize,
    /// Relative speed reduction on streets whose target node is a
    /// transition junction. 0 disables the effect.
    pub approach_slowdown: f64,
    /// Grid spacing in degrees.
    pub spacing_deg: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            regions: 4,
            edges_per_region: 98,
            transition_edges: 4,
            profiles: RegionProfile::defaults(),
            transition: RegionProfile::new("trunk", Zone::Rural, 90.0, "90"),
            noise_sigma: 3.0,
            observations_per_edge: 10,
            approach_slowdown: 0.0,
            spacing_deg: 0.001,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.regions == 0 {
            return Err(RfnError::config("synth: regions must be at least 1"));
        }
        if self.edges_per_region < 4 {
            return Err(RfnError::config("synth: edges_per_region must be at least 4"));
        }
        if self.transition_edges > 0 && self.regions < 2 {
            return Err(RfnError::config("synth: transition_edges need at least 2 regions"));
        }
        if self.profiles.is_empty() {
            return Err(RfnError::config("synth: no region profiles"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(RfnError::config(format!("synth: noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.observations_per_edge == 0 {
            return Err(RfnError::config("synth: observations_per_edge must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.approach_slowdown) {
            return Err(RfnError::config("synth: approach_slowdown must lie in [0, 1)"));
        }
        let speeds = self.profiles.iter().map(|p| p.speed).chain([self.transition.speed]);
        if speeds.into_iter().any(|s| !(s > 0.0)) {
            return Err(RfnError::config("synth: speeds must be positive"));
        }
        if !(self.spacing_deg > 0.0) {
            return Err(RfnError::config("synth: spacing_deg must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub network: RoadNetwork,
    /// Speed observations (km/h).
    pub speeds: Vec<Observation>,
    /// One speed-limit label per edge.
    pub limits: Vec<Observation>,
    /// Noise-free speed of every edge.
    pub true_speeds: Vec<f64>,
    /// Region of every edge (`None` for transition roads).
    pub edge_region: Vec<Option<usize>>,
}

/// Directed edge count of an `a x b` grid of two-way streets.
fn grid_edges(a: usize, b: usize) -> usize {
    2 * (a * (b - 1) + b * (a - 1))
}

fn grid_shape(target: usize) -> (usize, usize) {
    let mut best = (2, 2);
    for a in 2..=64 {
        for b in a..=64 {
            let diff = grid_edges(a, b).abs_diff(target);
            if diff < grid_edges(best.0, best.1).abs_diff(target) {
                best = (a, b);
            }
        }
    }
    best
}

const EPOCH_START: i64 = 1_600_000_000;
const DAY: i64 = 86_400;

pub fn synth_network(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, cols) = grid_shape(spec.edges_per_region);
    let s = spec.spacing_deg;
    let jitter = 0.25 * s;

    let mut nodes = Vec::new();
    let mut pairs = Vec::new();
    let mut edge_region = Vec::new();
    let mut region_nodes = Vec::with_capacity(spec.regions);
    for r in 0..spec.regions {
        let profile = &spec.profiles[r % spec.profiles.len()];
        let base = nodes.len();
        let origin_lon = r as f64 * (cols + 2) as f64 * s;
        for i in 0..rows {
            for j in 0..cols {
                nodes.push(NodeAttributes {
                    zone: Zone::flags(Some(profile.zone)),
                    lon: origin_lon + j as f64 * s + rng.random_range(-jitter..=jitter),
                    lat: 55.0 + i as f64 * s + rng.random_range(-jitter..=jitter),
                });
            }
        }
        let id = |i: usize, j: usize| base + i * cols + j;
        for i in 0..rows {
            for j in 0..cols {
                if j + 1 < cols {
                    pairs.push((id(i, j), id(i, j + 1)));
                    pairs.push((id(i, j + 1), id(i, j)));
                }
                if i + 1 < rows {
                    pairs.push((id(i, j), id(i + 1, j)));
                    pairs.push((id(i + 1, j), id(i, j)));
                }
            }
        }
        edge_region.resize(pairs.len(), Some(r));
        region_nodes.push((base..nodes.len()).collect::<Vec<_>>());
    }

    let mut transition_nodes = std::collections::BTreeSet::new();
    for t in 0..spec.transition_edges {
        let (ra, rb) = (t % spec.regions, (t + 1) % spec.regions);
        // Fresh endpoints keep transition roads from coinciding.
        let pick = |rng: &mut ChaCha8Rng, used: &std::collections::BTreeSet<usize>, r: usize| {
            let free: Vec<usize> = region_nodes[r].iter().copied().filter(|n| !used.contains(n)).collect();
            free.choose(rng).copied()
        };
        let (Some(u), Some(v)) = (pick(&mut rng, &transition_nodes, ra), pick(&mut rng, &transition_nodes, rb)) else {
            return Err(RfnError::config("synth: more transition roads than free region nodes"));
        };
        transition_nodes.insert(u);
        transition_nodes.insert(v);
        pairs.push((u, v));
        pairs.push((v, u));
        edge_region.push(None);
        edge_region.push(None);
    }

    let primal = PrimalGraph::new(nodes.len(), pairs.clone())?;
    let mut edges = Vec::with_capacity(pairs.len());
    let mut true_speeds = Vec::with_capacity(pairs.len());
    let mut limits_by_edge = Vec::with_capacity(pairs.len());
    for (e, &(u, v)) in pairs.iter().enumerate() {
        let length_m = haversine_m([nodes[u].lon, nodes[u].lat], [nodes[v].lon, nodes[v].lat]);
        let (profile, speed) = match edge_region[e] {
            Some(r) => {
                let p = &spec.profiles[r % spec.profiles.len()];
                let speed = if transition_nodes.contains(&v) {
                    p.speed * (1.0 - spec.approach_slowdown)
                } else {
                    p.speed
                };
                (p, speed)
            }
            None => (&spec.transition, spec.transition.speed),
        };
        edges.push(EdgeAttributes {
            category: profile.category.clone(),
            length_m,
            geometry: None,
        });
        true_speeds.push(speed);
        limits_by_edge.push(profile.limit.clone());
    }

    // Each edge is observed on its own day, so a temporal split of the
    // rows mostly separates whole edges.
    let mut days: Vec<usize> = (0..pairs.len()).collect();
    days.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| RfnError::config(format!("synth: {e}")))?;
    let mut speeds = Vec::with_capacity(pairs.len() * spec.observations_per_edge);
    let mut limits = Vec::with_capacity(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&e| days[e]);
    for e in order {
        let day_start = EPOCH_START + days[e] as i64 * DAY;
        for k in 0..spec.observations_per_edge {
            let v = (true_speeds[e] + noise.sample(&mut rng)).max(1.0);
            speeds.push(Observation::speed(e, day_start + 60 * k as i64, v));
        }
        limits.push(Observation::label(e, day_start, limits_by_edge[e].clone()));
    }

    Ok(SynthOutput {
        network: RoadNetwork {
            primal,
            attributes: AttributeTable { nodes, edges },
        },
        speeds,
        limits,
        true_speeds,
        edge_region,
    })
}
