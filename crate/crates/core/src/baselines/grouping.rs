use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::features::NODE_FEATURES;
use crate::tensor::Tensor;

/// Road category and whether the segment touches a city zone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub category: usize,
    pub city: bool,
}

impl GroupKey {
    /// Reads the key from an encoded edge feature row
    /// (`[category one-hot | length | source zones | target zones]`).
    pub fn from_edge_row(row: &[f64]) -> Result<Self> {
        let vocab_len = row
            .len()
            .checked_sub(1 + 2 * NODE_FEATURES)
            .filter(|&v| v > 0)
            .ok_or_else(|| RfnError::contract(format!("edge feature row of width {} is too narrow", row.len())))?;
        let category = row[..vocab_len]
            .iter()
            .position(|&x| x == 1.0)
            .ok_or_else(|| RfnError::contract("edge feature row has no category set"))?;
        let src_city = row[vocab_len + 1] > 0.5;
        let tgt_city = row[vocab_len + 1 + NODE_FEATURES] > 0.5;
        Ok(GroupKey {
            category,
            city: src_city || tgt_city,
        })
    }

    pub fn from_edge_features(edges: &Tensor) -> Result<Vec<GroupKey>> {
        (0..edges.rows()).map(|e| GroupKey::from_edge_row(edges.row(e))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatistic {
    Mean,
    Mode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub key: GroupKey,
    pub value: f64,
}

/// Predicts the training mean (regression) or mode (classification) of the
/// segment's group; unseen groups get the global statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingModel {
    pub statistic: GroupStatistic,
    pub groups: Vec<GroupEntry>,
    pub fallback: f64,
}

fn mode(labels: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum is the lowest id.
    let mut best = (0, 0);
    for (&label, &count) in &counts {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

impl GroupingModel {
    /// One target per training segment (e.g. its mean observed speed).
    pub fn fit_mean(keys: &[GroupKey], targets: &[f64]) -> Result<Self> {
        check_lengths(keys.len(), targets.len())?;
        let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
        for (k, &t) in keys.iter().zip(targets) {
            groups.entry(*k).or_default().push(t);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(GroupingModel {
            statistic: GroupStatistic::Mean,
            groups: groups
                .iter()
                .map(|(k, v)| GroupEntry { key: *k, value: mean(v) })
                .collect(),
            fallback: mean(targets),
        })
    }

    /// Mode per group; ties go to the lowest class id.
    pub fn fit_mode(keys: &[GroupKey], labels: &[usize]) -> Result<Self> {
        check_lengths(keys.len(), labels.len())?;
        let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (k, &l) in keys.iter().zip(labels) {
            groups.entry(*k).or_default().push(l);
        }
        Ok(GroupingModel {
            statistic: GroupStatistic::Mode,
            groups: groups
                .iter()
                .map(|(k, v)| GroupEntry {
                    key: *k,
                    value: mode(v) as f64,
                })
                .collect(),
            fallback: mode(labels) as f64,
        })
    }

    pub fn predict(&self, key: GroupKey) -> f64 {
        self.groups
            .iter()
            .find(|g| g.key == key)
            .map_or(self.fallback, |g| g.value)
    }

    pub fn predict_all(&self, keys: &[GroupKey]) -> Vec<f64> {
        keys.iter().map(|&k| self.predict(k)).collect()
    }
}

fn check_lengths(keys: usize, targets: usize) -> Result<()> {
    if keys == 0 {
        return Err(RfnError::contract("grouping estimator needs a non-empty training set"));
    }
    if keys != targets {
        return Err(RfnError::contract(format!("{keys} group keys but {targets} targets")));
    }
    Ok(())
}
