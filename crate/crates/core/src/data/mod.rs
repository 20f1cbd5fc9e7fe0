//! File formats, dataset splitting, checkpoints, and the synthetic network
//! generator.

pub mod checkpoint;
pub mod network_file;
pub mod observations;
pub mod osm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use network_file::{load_network, save_network, NetworkFile, RoadNetwork, ValidationReport, Zone};
pub use observations::{
    load_observations, save_observations, temporal_split, ClassVocabulary, Observation, Split,
};
pub use synth::{synth_network, SynthOutput, SynthSpec};

/// Great-circle distance in meters between two `(lon, lat)` points.
pub fn haversine_m(a: [f64; 2], b: [f64; 2]) -> f64 {
    const EARTH_RADIUS_M: f64 = 6_371_008.8;
    let (lat1, lat2) = (a[1].to_radians(), b[1].to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b[0] - a[0]).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn polyline_length_m(points: &[[f64; 2]]) -> f64 {
    points.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}
