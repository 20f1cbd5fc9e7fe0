//! Model kinds by name, default hyperparameters, and one dispatch type over
//! the relational fusion network and the baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{GatConfig, GatModel, GroupKey, GroupingModel, MlpConfig, MlpModel, SageConfig, SageModel, SageVariant};
use crate::error::{Result, RfnError};
use crate::network::PreparedNetwork;
use crate::params::{Bound, ParamStore};
use crate::rfn::{AggregatorKind, FusionKind, Head, InputWidths, RfnConfig, RfnModel};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "rfn-n+a")]
    RfnNA,
    #[serde(rename = "rfn-a+a")]
    RfnAA,
    #[serde(rename = "rfn-n+i")]
    RfnNI,
    #[serde(rename = "rfn-a+i")]
    RfnAI,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "graphsage-mean")]
    GraphSageMean,
    #[serde(rename = "graphsage-maxpool")]
    GraphSageMaxPool,
    #[serde(rename = "gat")]
    Gat,
    #[serde(rename = "grouping")]
    Grouping,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::RfnNA,
        ModelKind::RfnAA,
        ModelKind::RfnNI,
        ModelKind::RfnAI,
        ModelKind::Mlp,
        ModelKind::GraphSageMean,
        ModelKind::GraphSageMaxPool,
        ModelKind::Gat,
        ModelKind::Grouping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RfnNA => "rfn-n+a",
            ModelKind::RfnAA => "rfn-a+a",
            ModelKind::RfnNI => "rfn-n+i",
            ModelKind::RfnAI => "rfn-a+i",
            ModelKind::Mlp => "mlp",
            ModelKind::GraphSageMean => "graphsage-mean",
            ModelKind::GraphSageMaxPool => "graphsage-maxpool",
            ModelKind::Gat => "gat",
            ModelKind::Grouping => "grouping",
        }
    }

    pub fn valid_names() -> String {
        ModelKind::ALL.map(ModelKind::name).join(", ")
    }

    /// Aggregator and fusion of an RFN variant ("N" = mean, "A" = attentional
    /// aggregation; "A" = additive, "I" = interactional fusion).
    pub fn rfn_variant(self) -> Option<(AggregatorKind, FusionKind)> {
        match self {
            ModelKind::RfnNA => Some((AggregatorKind::Mean, FusionKind::Additive)),
            ModelKind::RfnAA => Some((AggregatorKind::Attentional, FusionKind::Additive)),
            ModelKind::RfnNI => Some((AggregatorKind::Mean, FusionKind::Interactional)),
            ModelKind::RfnAI => Some((AggregatorKind::Attentional, FusionKind::Interactional)),
            _ => None,
        }
    }

    pub fn is_neural(self) -> bool {
        self != ModelKind::Grouping
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = RfnError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| RfnError::config(format!("unknown model kind `{s}`; valid kinds: {}", ModelKind::valid_names())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Driving-speed regression.
    SpeedEstimation,
    /// Speed-limit classification.
    SpeedLimit,
}

impl Task {
    pub fn default_epochs(self) -> usize {
        match self {
            Task::SpeedEstimation => 20,
            Task::SpeedLimit => 30,
        }
    }

    pub fn head(self, classes: usize) -> Head {
        match self {
            Task::SpeedEstimation => Head::Regression,
            Task::SpeedLimit => Head::Classification { classes },
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::SpeedEstimation => "mae",
            Task::SpeedLimit => "macro_f1",
        }
    }
}

/// Width, heads and learning rate of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden: usize,
    pub heads: usize,
    pub learning_rate: f64,
}

impl Hyper {
    /// Best grid-search configurations per model and task.
    pub fn defaults(kind: ModelKind, task: Task) -> Hyper {
        let regression = task == Task::SpeedEstimation;
        let (hidden, learning_rate) = match kind {
            ModelKind::RfnNA | ModelKind::RfnAA | ModelKind::RfnNI | ModelKind::RfnAI if regression => (32, 0.01),
            ModelKind::RfnNA => (64, 0.1),
            ModelKind::RfnAA => (32, 0.1),
            ModelKind::RfnNI => (32, 0.01),
            ModelKind::RfnAI => (64, 0.01),
            ModelKind::Mlp => (128, if regression { 0.01 } else { 0.1 }),
            ModelKind::Gat => (32, if regression { 0.01 } else { 0.001 }),
            ModelKind::GraphSageMean | ModelKind::GraphSageMaxPool => (64, if regression { 0.01 } else { 0.001 }),
            ModelKind::Grouping => (0, 0.0),
        };
        Hyper {
            hidden,
            heads: if kind == ModelKind::Gat { 8 } else { 1 },
            learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Model {
    Rfn(RfnModel),
    Mlp(MlpModel),
    GraphSage(SageModel),
    Gat(GatModel),
    Grouping(GroupingModel),
}

impl Model {
    /// Builds an untrained neural model. The grouping estimator has no
    /// parameters to initialize; it is created by fitting.
    pub fn build(kind: ModelKind, hyper: &Hyper, head: Head, input: InputWidths, rng: &mut impl Rng) -> Result<Model> {
        if let Some((aggregator, fusion)) = kind.rfn_variant() {
            let cfg = RfnConfig::two_layer(fusion, aggregator, input, hyper.hidden, head);
            return Ok(Model::Rfn(RfnModel::new(cfg, rng)?));
        }
        Ok(match kind {
            ModelKind::Mlp => Model::Mlp(MlpModel::new(
                MlpConfig {
                    input: input.edge,
                    hidden: hyper.hidden,
                    head,
                },
                rng,
            )?),
            ModelKind::GraphSageMean | ModelKind::GraphSageMaxPool => {
                let variant = if kind == ModelKind::GraphSageMean {
                    SageVariant::Mean
                } else {
                    SageVariant::MaxPool
                };
                Model::GraphSage(SageModel::new(SageConfig::two_layer(variant, input.edge, hyper.hidden, head), rng)?)
            }
            ModelKind::Gat => Model::Gat(GatModel::new(GatConfig::two_layer(input.edge, hyper.hidden, hyper.heads, head), rng)?),
            _ => {
                return Err(RfnError::config("the grouping estimator is fitted, not built"));
            }
        })
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            Model::Rfn(m) => Some(&m.params),
            Model::Mlp(m) => Some(&m.params),
            Model::GraphSage(m) => Some(&m.params),
            Model::Gat(m) => Some(&m.params),
            Model::Grouping(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore> {
        match self {
            Model::Rfn(m) => Some(&mut m.params),
            Model::Mlp(m) => Some(&mut m.params),
            Model::GraphSage(m) => Some(&mut m.params),
            Model::Gat(m) => Some(&mut m.params),
            Model::Grouping(_) => None,
        }
    }

    /// Dual-graph hops an edge output depends on.
    pub fn receptive_hops(&self) -> usize {
        match self {
            Model::Rfn(m) => m.layer_count(),
            Model::GraphSage(m) => m.layers.len(),
            Model::Gat(m) => m.layers.len(),
            Model::Mlp(_) | Model::Grouping(_) => 0,
        }
    }

    /// Edge outputs of a neural model on `net`.
    pub fn forward_edges(&self, tape: &mut Tape, bound: &Bound, net: &PreparedNetwork) -> Result<Var> {
        match self {
            Model::Rfn(m) => Ok(m.forward(tape, bound, net)?.edges),
            Model::Mlp(m) => m.forward_features(tape, bound, &net.features.edges),
            Model::GraphSage(m) => {
                let h = tape.constant(net.features.edges.clone());
                m.forward(tape, bound, &net.dual_neighbors, h)
            }
            Model::Gat(m) => {
                let h = tape.constant(net.features.edges.clone());
                m.forward(tape, bound, &net.dual_neighbors_with_self, h)
            }
            Model::Grouping(_) => Err(RfnError::contract("the grouping estimator has no differentiable forward pass")),
        }
    }

    /// Raw model outputs for every edge of `net` (`|E| x out`). The grouping
    /// estimator yields one column holding its group statistic.
    pub fn predict(&self, net: &PreparedNetwork) -> Result<Tensor> {
        match self {
            Model::Grouping(g) => {
                let keys = GroupKey::from_edge_features(&net.features.edges)?;
                Ok(Tensor::column_vector(&g.predict_all(&keys)))
            }
            _ => {
                let params = self.params().expect("neural model");
                let mut tape = Tape::new();
                let bound = params.bind_frozen(&mut tape);
                let out = self.forward_edges(&mut tape, &bound, net)?;
                Ok(tape.take_value(out))
            }
        }
    }

    /// [`Model::predict`] over `threads` contiguous edge chunks, each run on
    /// its receptive-field subnetwork. Outputs agree with the full forward
    /// pass up to summation order; a fixed `threads` gives fixed results.
    pub fn predict_parallel(&self, net: &PreparedNetwork, threads: usize) -> Result<Tensor> {
        let e = net.edge_count();
        if threads <= 1 || e < 2 || matches!(self, Model::Grouping(_)) {
            return self.predict(net);
        }
        let chunk = e.div_ceil(threads);
        let chunks: Vec<Vec<usize>> = (0..e).step_by(chunk).map(|s| (s..(s + chunk).min(e)).collect()).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|err| RfnError::config(format!("thread pool: {err}")))?;
        let hops = self.receptive_hops();
        let parts: Vec<Result<Tensor>> = pool.install(|| {
            chunks
                .par_iter()
                .map(|seeds| {
                    let (sub_net, sub) = net.subnetwork(seeds, hops)?;
                    self.predict(&sub_net)?.select_rows(&sub.seeds)
                })
                .collect()
        });
        let mut data = Vec::new();
        let mut cols = 0;
        for part in parts {
            let part = part?;
            cols = part.cols();
            data.extend_from_slice(part.data());
        }
        Tensor::from_vec(e, cols, data)
    }
}
