use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, RfnError};

/// Splits `ids` into batches whose label mix follows the global mix.
///
/// Each label's (shuffled) ids are dealt round-robin over the batches, so a
/// batch holds either `floor` or `ceil` of its proportional share of every
/// label. Batch sizes are as even as possible, at most `batch_size`.
pub fn stratified_batches(ids: &[usize], labels: &[usize], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(RfnError::config("batch size must be at least 1"));
    }
    if ids.len() != labels.len() {
        return Err(RfnError::contract(format!("{} ids but {} stratification labels", ids.len(), labels.len())));
    }
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let batch_count = ids.len().div_ceil(batch_size);
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&id, &l) in ids.iter().zip(labels) {
        by_label.entry(l).or_default().push(id);
    }
    let mut batches = vec![Vec::with_capacity(batch_size); batch_count];
    let mut next = 0;
    for members in by_label.values_mut() {
        members.shuffle(rng);
        for &id in members.iter() {
            batches[next].push(id);
            next = (next + 1) % batch_count;
        }
    }
    Ok(batches)
}

/// Resamples every class up to the size of the largest class; the original
/// examples are kept and the deficit is drawn with replacement.
pub fn oversample(ids: &[usize], labels: &[usize], classes: usize, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if ids.len() != labels.len() {
        return Err(RfnError::contract(format!("{} ids but {} labels", ids.len(), labels.len())));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (&id, &l) in ids.iter().zip(labels) {
        by_class
            .get_mut(l)
            .ok_or_else(|| RfnError::contract(format!("label {l} outside {classes} classes")))?
            .push(id);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(RfnError::contract(format!("class {c} has no examples to oversample")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out_ids = Vec::with_capacity(target * classes);
    let mut out_labels = Vec::with_capacity(target * classes);
    for (c, members) in by_class.iter().enumerate() {
        out_ids.extend_from_slice(members);
        for _ in members.len()..target {
            out_ids.push(members[rng.random_range(0..members.len())]);
        }
        out_labels.extend(std::iter::repeat_n(c, target));
    }
    Ok((out_ids, out_labels))
}

/// Index of the best score; ties go to the earliest epoch.
pub fn early_stopping_select(scores: &[f64], higher_is_better: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) if higher_is_better => s > scores[b],
            Some(b) => s < scores[b],
        };
        if better {
            best = Some(i);
        }
    }
    best
}
