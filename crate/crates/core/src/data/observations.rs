use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::learn::EdgeTargets;

/// One row of an observation file: a speed (km/h) or a class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub edge_id: usize,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub value: String,
}

impl Observation {
    pub fn speed(edge_id: usize, timestamp: i64, kmh: f64) -> Self {
        Observation {
            edge_id,
            timestamp,
            value: kmh.to_string(),
        }
    }

    pub fn label(edge_id: usize, timestamp: i64, label: impl Into<String>) -> Self {
        Observation {
            edge_id,
            timestamp,
            value: label.into(),
        }
    }
}

fn parse_error(source_name: &str, e: impl std::fmt::Display) -> RfnError {
    RfnError::Parse {
        source_name: source_name.to_string(),
        message: e.to_string(),
    }
}

/// Reads comma-separated `edge_id,timestamp,value` rows with a header.
pub fn read_observations(reader: impl std::io::Read, source_name: &str) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|row| row.map_err(|e| parse_error(source_name, e))).collect()
}

pub fn write_observations(writer: impl std::io::Write, rows: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| RfnError::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| RfnError::Format(e.to_string()))
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| RfnError::io(path, e))?;
    read_observations(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn save_observations(path: impl AsRef<Path>, rows: &[Observation]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| RfnError::io(path, e))?;
    write_observations(std::io::BufWriter::new(file), rows)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Observation>,
    pub val: Vec<Observation>,
    pub test: Vec<Observation>,
}

/// Sorts by timestamp (stable, so ties keep input order) and cuts at the
/// given fractions: oldest rows train, newest rows test.
pub fn temporal_split(rows: &[Observation], fractions: (f64, f64, f64)) -> Result<Split> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(RfnError::config(format!("split fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.timestamp);
    let n = sorted.len() as f64;
    // The epsilon absorbs binary rounding in products like 10 * 0.7.
    let cut = |f: f64| ((n * f) + 1e-9).floor() as usize;
    let n_train = cut(a).min(sorted.len());
    let n_val = cut(a + b).clamp(n_train, sorted.len());
    let test = sorted.split_off(n_val);
    let val = sorted.split_off(n_train);
    Ok(Split { train: sorted, val, test })
}

/// Class labels in a fixed order: numerically when every label is a
/// number (speed limits), lexicographically otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    pub labels: Vec<String>,
}

impl ClassVocabulary {
    pub fn from_observations<'a>(rows: impl IntoIterator<Item = &'a Observation>) -> Self {
        let mut labels: Vec<String> = rows.into_iter().map(|r| r.value.clone()).collect();
        labels.sort();
        labels.dedup();
        if labels.iter().all(|l| l.parse::<f64>().is_ok()) {
            labels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
        }
        ClassVocabulary { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| RfnError::contract(format!("class label `{label}` is not in the class vocabulary {:?}", self.labels)))
    }
}

fn check_edge(r: &Observation, edge_count: usize) -> Result<()> {
    if r.edge_id >= edge_count {
        return Err(RfnError::Referential(format!(
            "observation at t={} references edge {}, but the network has {edge_count} edges",
            r.timestamp, r.edge_id
        )));
    }
    Ok(())
}

/// Groups speed rows per edge.
pub fn speed_targets(rows: &[Observation], edge_count: usize) -> Result<EdgeTargets> {
    let mut speeds = vec![Vec::new(); edge_count];
    for r in rows {
        check_edge(r, edge_count)?;
        let v: f64 = r
            .value
            .parse()
            .map_err(|_| RfnError::Format(format!("edge {}: speed `{}` is not a number", r.edge_id, r.value)))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(RfnError::Format(format!("edge {}: speed {v} must be positive", r.edge_id)));
        }
        speeds[r.edge_id].push(v);
    }
    Ok(EdgeTargets::Speeds(speeds))
}

/// One class per labeled edge; the last row wins if an edge repeats.
pub fn class_targets(rows: &[Observation], edge_count: usize, classes: &ClassVocabulary) -> Result<EdgeTargets> {
    let mut labels = vec![None; edge_count];
    for r in rows {
        check_edge(r, edge_count)?;
        labels[r.edge_id] = Some(classes.index_of(&r.value)?);
    }
    Ok(EdgeTargets::Classes(labels))
}
