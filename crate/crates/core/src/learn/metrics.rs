use serde::{Deserialize, Serialize};

/// Segments with fewer observations are left out of the MAE.
pub const MIN_OBSERVATIONS: usize = 10;

/// A metric value, or the explicit signal that nothing qualified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Value(f64),
    Empty,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Empty => None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v:.6}"),
            Metric::Empty => f.write_str("empty"),
        }
    }
}

/// Mean over qualifying segments of `|prediction - mean(observations)|`.
pub fn mae_per_segment(predictions: &[f64], observations: &[&[f64]], min_observations: usize) -> Metric {
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, obs) in predictions.iter().zip(observations) {
        if obs.len() < min_observations.max(1) {
            continue;
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        total += (p - mean).abs();
        count += 1;
    }
    if count == 0 {
        Metric::Empty
    } else {
        Metric::Value(total / count as f64)
    }
}

/// Unweighted mean of per-class F1 over `classes` classes. A class with no
/// true positives (including one absent from both inputs) scores 0.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            if p < classes {
                tp[p] += 1;
            }
        } else {
            if p < classes {
                fp[p] += 1;
            }
            if t < classes {
                fn_[t] += 1;
            }
        }
    }
    let mut sum = 0.0;
    for c in 0..classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    sum / classes as f64
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(probs: &crate::tensor::Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
