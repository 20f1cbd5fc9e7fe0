use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::batching::{early_stopping_select, oversample, stratified_batches};
use super::metrics::{argmax_rows, mae_per_segment, macro_f1, Metric, MIN_OBSERVATIONS};
use crate::baselines::{GroupKey, GroupingModel};
use crate::error::{Result, RfnError};
use crate::model::{Model, Task};
use crate::network::PreparedNetwork;
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor};

/// Per-edge supervision for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum EdgeTargets {
    /// Observed speeds per edge (empty when unobserved).
    Speeds(Vec<Vec<f64>>),
    /// Class id per labeled edge.
    Classes(Vec<Option<usize>>),
}

impl EdgeTargets {
    pub fn edge_count(&self) -> usize {
        match self {
            EdgeTargets::Speeds(s) => s.len(),
            EdgeTargets::Classes(c) => c.len(),
        }
    }

    /// Edges carrying at least one target, ascending.
    pub fn labeled_edges(&self) -> Vec<usize> {
        match self {
            EdgeTargets::Speeds(s) => (0..s.len()).filter(|&e| !s[e].is_empty()).collect(),
            EdgeTargets::Classes(c) => (0..c.len()).filter(|&e| c[e].is_some()).collect(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            EdgeTargets::Speeds(_) => Task::SpeedEstimation,
            EdgeTargets::Classes(_) => Task::SpeedLimit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratify {
    /// By road category (read from the edge features).
    Category,
    /// By class label (classification only).
    Class,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_stopping: bool,
    pub oversample: bool,
    pub stratify: Stratify,
    /// Propagate each batch over its receptive-field subnetwork only.
    pub subnetworks: bool,
}

impl TrainConfig {
    pub fn for_task(task: Task, learning_rate: f64, seed: u64) -> Self {
        let classification = task == Task::SpeedLimit;
        TrainConfig {
            learning_rate,
            batch_size: 256,
            epochs: task.default_epochs(),
            seed,
            early_stopping: classification,
            oversample: classification,
            stratify: if classification { Stratify::Class } else { Stratify::Category },
            subnetworks: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RfnError::config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(RfnError::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Metric,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub selected_epoch: Option<usize>,
}

impl MetricHistory {
    /// Line-delimited table: a header, then one tab-separated row per epoch.
    pub fn write_table(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch\ttrain_loss\tval_metric")?;
        for r in &self.records {
            writeln!(w, "{}\t{:.17e}\t{}", r.epoch, r.train_loss, r.val_metric)?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut buf = Vec::new();
        self.write_table(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii table")
    }
}

/// A model together with what is needed to turn its outputs into task
/// predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub model: Model,
    pub task: Task,
    /// Regression outputs are in units of this speed (km/h).
    pub target_scale: f64,
}

/// Task-level predictions for every edge.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Speeds(Vec<f64>),
    Classes(Vec<usize>),
}

impl Trained {
    pub fn predict(&self, net: &PreparedNetwork) -> Result<Predictions> {
        let raw = self.model.predict(net)?;
        Ok(self.decode(&raw))
    }

    pub fn decode(&self, raw: &Tensor) -> Predictions {
        match (&self.model, self.task) {
            (Model::Grouping(_), Task::SpeedEstimation) => Predictions::Speeds(raw.data().to_vec()),
            (Model::Grouping(_), Task::SpeedLimit) => Predictions::Classes(raw.data().iter().map(|&v| v as usize).collect()),
            (_, Task::SpeedEstimation) => Predictions::Speeds(raw.data().iter().map(|v| v * self.target_scale).collect()),
            (_, Task::SpeedLimit) => Predictions::Classes(argmax_rows(raw)),
        }
    }

    pub fn evaluate(&self, net: &PreparedNetwork, targets: &EdgeTargets, classes: usize) -> Result<Metric> {
        evaluate(&self.predict(net)?, targets, classes)
    }
}

/// Per-segment MAE for speeds, macro F1 for classes.
pub fn evaluate(predictions: &Predictions, targets: &EdgeTargets, classes: usize) -> Result<Metric> {
    match (predictions, targets) {
        (Predictions::Speeds(p), EdgeTargets::Speeds(obs)) => {
            check_len(p.len(), obs.len())?;
            let obs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
            Ok(mae_per_segment(p, &obs, MIN_OBSERVATIONS))
        }
        (Predictions::Classes(p), EdgeTargets::Classes(truth)) => {
            check_len(p.len(), truth.len())?;
            let (pred, truth): (Vec<usize>, Vec<usize>) = p.iter().zip(truth).filter_map(|(&p, t)| t.map(|t| (p, t))).unzip();
            if truth.is_empty() {
                return Ok(Metric::Empty);
            }
            Ok(Metric::Value(macro_f1(&pred, &truth, classes)))
        }
        _ => Err(RfnError::contract("predictions and targets are for different tasks")),
    }
}

fn check_len(pred: usize, targets: usize) -> Result<()> {
    if pred != targets {
        return Err(RfnError::contract(format!("{pred} predictions for {targets} edges")));
    }
    Ok(())
}

/// Fits the grouping estimator on the training targets.
pub fn fit_grouping(net: &PreparedNetwork, train: &EdgeTargets) -> Result<Trained> {
    let keys = GroupKey::from_edge_features(&net.features.edges)?;
    let edges = train.labeled_edges();
    let group_keys: Vec<GroupKey> = edges.iter().map(|&e| keys[e]).collect();
    let model = match train {
        EdgeTargets::Speeds(s) => {
            let means: Vec<f64> = edges.iter().map(|&e| s[e].iter().sum::<f64>() / s[e].len() as f64).collect();
            GroupingModel::fit_mean(&group_keys, &means)?
        }
        EdgeTargets::Classes(c) => {
            let labels: Vec<usize> = edges.iter().map(|&e| c[e].expect("labeled")).collect();
            GroupingModel::fit_mode(&group_keys, &labels)?
        }
    };
    Ok(Trained {
        model: Model::Grouping(model),
        task: train.task(),
        target_scale: 1.0,
    })
}

struct Batch {
    net: Option<PreparedNetwork>,
    /// Rows of the batch edges within the batch network.
    rows: Vec<usize>,
    /// Parent edge ids.
    edges: Vec<usize>,
}

fn category_of(row: &[f64], vocab_len: usize) -> usize {
    row[..vocab_len].iter().position(|&x| x == 1.0).unwrap_or(vocab_len)
}

/// Trains a neural model with ADAM over stratified mini-batches.
///
/// Deterministic for a given `config.seed`. Returns the model with the
/// parameters of the last epoch, or of the best validation epoch when
/// early stopping is on.
pub fn train(
    mut model: Model,
    net: &PreparedNetwork,
    train: &EdgeTargets,
    val: Option<&EdgeTargets>,
    classes: usize,
    config: &TrainConfig,
) -> Result<(Trained, MetricHistory)> {
    config.validate()?;
    if model.params().is_none() {
        return Err(RfnError::contract("train needs a neural model; use fit_grouping for the grouping estimator"));
    }
    if train.edge_count() != net.edge_count() {
        return Err(RfnError::contract(format!(
            "training targets cover {} edges, network has {}",
            train.edge_count(),
            net.edge_count()
        )));
    }
    let task = train.task();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut ids = train.labeled_edges();
    if ids.is_empty() {
        return Err(RfnError::contract("no labeled training edges"));
    }
    let target_scale = match train {
        EdgeTargets::Speeds(s) => {
            let (sum, n) = ids.iter().flat_map(|&e| &s[e]).fold((0.0, 0usize), |(a, n), v| (a + v, n + 1));
            let mean = sum / n as f64;
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(RfnError::contract(format!("mean training speed {mean} is not positive")));
            }
            mean
        }
        EdgeTargets::Classes(_) => 1.0,
    };

    let vocab_len = net.features.edges.cols().saturating_sub(7);
    let class_labels = |ids: &[usize]| -> Vec<usize> {
        match train {
            EdgeTargets::Classes(c) => ids.iter().map(|&e| c[e].expect("labeled")).collect(),
            EdgeTargets::Speeds(_) => vec![0; ids.len()],
        }
    };
    let mut strat = match config.stratify {
        Stratify::Category => ids.iter().map(|&e| category_of(net.features.edges.row(e), vocab_len)).collect(),
        Stratify::Class => class_labels(&ids),
        Stratify::None => vec![0; ids.len()],
    };
    if config.oversample && task == Task::SpeedLimit {
        let labels = class_labels(&ids);
        let present: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
        // Classes absent from the training split cannot be oversampled;
        // remap to the present ones so every present class is balanced.
        let dense: Vec<usize> = present.iter().copied().collect();
        let local: Vec<usize> = labels.iter().map(|l| dense.binary_search(l).expect("present")).collect();
        let (new_ids, new_local) = oversample(&ids, &local, dense.len(), &mut rng)?;
        ids = new_ids;
        strat = match config.stratify {
            Stratify::Category => ids.iter().map(|&e| category_of(net.features.edges.row(e), vocab_len)).collect(),
            Stratify::Class => new_local,
            Stratify::None => vec![0; ids.len()],
        };
    }

    let hops = model.receptive_hops();
    let mut batches = Vec::new();
    for edges in stratified_batches(&ids, &strat, config.batch_size, &mut rng)? {
        let batch = if config.subnetworks {
            let (sub_net, sub) = net.subnetwork(&edges, hops)?;
            Batch {
                net: Some(sub_net),
                rows: sub.seeds,
                edges,
            }
        } else {
            Batch {
                net: None,
                rows: edges.clone(),
                edges,
            }
        };
        batches.push(batch);
    }

    let adam = AdamConfig::new(config.learning_rate);
    let mut state = AdamState::new(model.params().expect("neural"));
    let mut history = MetricHistory::default();
    let mut snapshots: Vec<ParamStore> = Vec::new();
    let mut order: Vec<usize> = (0..batches.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_weight = 0usize;
        for &b in &order {
            let batch = &batches[b];
            let batch_net = batch.net.as_ref().unwrap_or(net);
            let params = model.params().expect("neural");
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = model.forward_edges(&mut tape, &bound, batch_net)?;
            let pred = tape.gather_rows(out, batch.rows.clone())?;
            let loss = match train {
                EdgeTargets::Speeds(s) => {
                    let scaled: Vec<Vec<f64>> = batch.edges.iter().map(|&e| s[e].iter().map(|v| v / target_scale).collect()).collect();
                    let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
                    tape.per_segment_mse(pred, &refs)?
                }
                EdgeTargets::Classes(c) => {
                    let labels: Vec<usize> = batch.edges.iter().map(|&e| c[e].expect("labeled")).collect();
                    tape.cross_entropy(pred, &labels)?
                }
            };
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(RfnError::Divergence {
                    what: "training loss".into(),
                    detail: format!("epoch {epoch}: loss is {value}"),
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = bound
                .vars()
                .iter()
                .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec))
                .collect();
            adam_step(&adam, &mut state, model.params_mut().expect("neural"), &grads).map_err(|e| match e {
                RfnError::Divergence { what, detail } => RfnError::Divergence {
                    what,
                    detail: format!("epoch {epoch}: {detail}"),
                },
                other => other,
            })?;
            loss_sum += value * batch.edges.len() as f64;
            loss_weight += batch.edges.len();
        }
        let train_loss = loss_sum / loss_weight.max(1) as f64;

        let trained = Trained {
            model,
            task,
            target_scale,
        };
        let val_metric = match val {
            Some(v) => trained.evaluate(net, v, classes)?,
            None => Metric::Empty,
        };
        model = trained.model;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
        });
        if config.early_stopping {
            snapshots.push(model.params().expect("neural").clone());
        }
    }

    if config.early_stopping && !snapshots.is_empty() {
        // Empty validation metrics never win the selection.
        let higher_is_better = task == Task::SpeedLimit;
        let worst = if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY };
        let scores: Vec<f64> = history.records.iter().map(|r| r.val_metric.value().unwrap_or(worst)).collect();
        if let Some(best) = early_stopping_select(&scores, higher_is_better) {
            *model.params_mut().expect("neural") = snapshots.swap_remove(best);
            history.selected_epoch = Some(best + 1);
        }
    } else if config.epochs > 0 {
        history.selected_epoch = Some(config.epochs);
    }

    Ok((
        Trained {
            model,
            task,
            target_scale,
        },
        history,
    ))
}
