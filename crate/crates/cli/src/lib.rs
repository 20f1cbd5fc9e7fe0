//! Run configuration and the train/evaluate pipeline behind the `rfn`
//! command-line tool.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rfn::data::observations::{class_targets, speed_targets};
use rfn::data::{temporal_split, Checkpoint, ClassVocabulary, Observation, RoadNetwork, SynthSpec};
use rfn::features::CategoryVocabulary;
use rfn::learn::{evaluate, fit_grouping, train, EdgeTargets, Metric, MetricHistory, Predictions, Stratify, TrainConfig, Trained};
use rfn::model::{Hyper, Model, ModelKind, Task};
use rfn::network::PreparedNetwork;
use rfn::rfn::InputWidths;
use rfn::tensor::{Tape, Tensor};
use rfn::{Result, RfnError};

/// Which observations an evaluation scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    #[default]
    Test,
    /// Every row, e.g. on a network the model was not trained on.
    All,
}

/// The JSON run configuration. Unset hyperparameters take the defaults
/// of the chosen model and task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub task: Task,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub early_stopping: Option<bool>,
    pub oversample: Option<bool>,
    pub stratify: Option<Stratify>,
    pub subnetworks: bool,
    /// Train / validation / test fractions of the time-sorted rows.
    pub split: (f64, f64, f64),
    pub eval_split: EvalSplit,
    pub include_u_turns: bool,
    /// Road categories; defaults to the nine-category vocabulary.
    pub vocabulary: Option<Vec<String>>,
    pub network: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::RfnAI.name().into(),
            task: Task::SpeedEstimation,
            hidden: None,
            heads: None,
            learning_rate: None,
            batch_size: None,
            epochs: None,
            early_stopping: None,
            oversample: None,
            stratify: None,
            subnetworks: true,
            split: (0.6, 0.2, 0.2),
            eval_split: EvalSplit::Test,
            include_u_turns: true,
            vocabulary: None,
            network: None,
            observations: None,
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| RfnError::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        if let Err(RfnError::Config(msg)) = cfg.kind() {
            return Err(RfnError::config(format!("{source_name}: {msg}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| RfnError::io(path, e))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.model
            .parse()
            .map_err(|e: RfnError| match e {
                RfnError::Config(msg) => RfnError::config(format!("field `model`: {msg}")),
                other => other,
            })
    }

    pub fn hyper(&self) -> Result<Hyper> {
        let d = Hyper::defaults(self.kind()?, self.task);
        Ok(Hyper {
            hidden: self.hidden.unwrap_or(d.hidden),
            heads: self.heads.unwrap_or(d.heads),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
        })
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::for_task(self.task, self.hyper()?.learning_rate, seed);
        let cfg = TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            early_stopping: self.early_stopping.unwrap_or(base.early_stopping),
            oversample: self.oversample.unwrap_or(base.oversample),
            stratify: self.stratify.unwrap_or(base.stratify),
            subnetworks: self.subnetworks,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn category_vocabulary(&self) -> Result<CategoryVocabulary> {
        match &self.vocabulary {
            Some(labels) => CategoryVocabulary::new(labels.clone()).map_err(|e| RfnError::config(format!("field `vocabulary`: {e}"))),
            None => Ok(CategoryVocabulary::default()),
        }
    }
}

/// Targets of one task over `edge_count` edges.
pub fn targets(task: Task, rows: &[Observation], edge_count: usize, classes: Option<&ClassVocabulary>) -> Result<EdgeTargets> {
    match task {
        Task::SpeedEstimation => speed_targets(rows, edge_count),
        Task::SpeedLimit => {
            let classes = classes.ok_or_else(|| RfnError::contract("speed-limit targets need a class vocabulary"))?;
            class_targets(rows, edge_count, classes)
        }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: MetricHistory,
    pub val: Metric,
    pub test: Metric,
}

/// Splits the observations in time, trains (or fits) the configured model
/// on the oldest rows, and scores it on validation and test rows.
pub fn train_run(cfg: &RunConfig, network: &RoadNetwork, rows: &[Observation], seed: u64) -> Result<TrainRun> {
    let kind = cfg.kind()?;
    let hyper = cfg.hyper()?;
    let vocabulary = cfg.category_vocabulary()?;
    let split = temporal_split(rows, cfg.split)?;
    let net = network.prepare(&vocabulary, None, cfg.include_u_turns)?;
    let e = net.edge_count();
    let classes = (cfg.task == Task::SpeedLimit).then(|| ClassVocabulary::from_observations(rows));
    let n_classes = classes.as_ref().map_or(0, ClassVocabulary::len);
    let train_t = targets(cfg.task, &split.train, e, classes.as_ref())?;
    let val_t = targets(cfg.task, &split.val, e, classes.as_ref())?;
    let test_t = targets(cfg.task, &split.test, e, classes.as_ref())?;

    let (trained, history, train_config) = if kind.is_neural() {
        let train_config = cfg.train_config(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nv, ne, nb) = net.features.widths();
        let input = InputWidths {
            node: nv,
            edge: ne,
            between: nb,
        };
        let model = Model::build(kind, &hyper, cfg.task.head(n_classes), input, &mut rng)?;
        let (trained, history) = train(model, &net, &train_t, Some(&val_t), n_classes, &train_config)?;
        (trained, history, Some(train_config))
    } else {
        (fit_grouping(&net, &train_t)?, MetricHistory::default(), None)
    };
    let val = trained.evaluate(&net, &val_t, n_classes)?;
    let test = trained.evaluate(&net, &test_t, n_classes)?;
    Ok(TrainRun {
        checkpoint: Checkpoint {
            kind,
            hyper,
            trained,
            scaling: net.features.scaling,
            vocabulary,
            classes,
            include_u_turns: cfg.include_u_turns,
            train_config,
        },
        history,
        val,
        test,
    })
}

/// Prepares `network` with the checkpoint's vocabulary and stored scaling.
pub fn prepare_for(ckpt: &Checkpoint, network: &RoadNetwork) -> Result<PreparedNetwork> {
    network.prepare(&ckpt.vocabulary, Some(ckpt.scaling), ckpt.include_u_turns)
}

/// Per-edge predictions, computed over `threads` chunks.
pub fn predict(ckpt: &Checkpoint, net: &PreparedNetwork, threads: usize) -> Result<Predictions> {
    let raw = ckpt.trained.model.predict_parallel(net, threads)?;
    Ok(ckpt.trained.decode(&raw))
}

/// Scores a checkpoint on `rows` (restricted to `split` of them).
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    network: &RoadNetwork,
    rows: &[Observation],
    split: EvalSplit,
    fractions: (f64, f64, f64),
    threads: usize,
) -> Result<Metric> {
    let net = prepare_for(ckpt, network)?;
    let parts;
    let rows = match split {
        EvalSplit::All => rows,
        _ => {
            parts = temporal_split(rows, fractions)?;
            match split {
                EvalSplit::Train => &parts.train[..],
                EvalSplit::Val => &parts.val[..],
                _ => &parts.test[..],
            }
        }
    };
    let task = ckpt.trained.task;
    let targets = targets(task, rows, net.edge_count(), ckpt.classes.as_ref())?;
    let n_classes = ckpt.classes.as_ref().map_or(0, ClassVocabulary::len);
    evaluate(&predict(ckpt, &net, threads)?, &targets, n_classes)
}

/// Edge representations after every RFN layer.
pub fn edge_activations(trained: &Trained, net: &PreparedNetwork) -> Result<Vec<Tensor>> {
    let Model::Rfn(model) = &trained.model else {
        return Err(RfnError::config("activation export is only available for rfn models"));
    };
    let mut tape = Tape::new();
    let bound = model.params.bind_frozen(&mut tape);
    let out = model.forward(&mut tape, &bound, net)?;
    Ok(out.edge_layers.iter().map(|&v| tape.take_value(v)).collect())
}

/// Reads the eval thread cap from `RFN_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("RFN_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(RfnError::config(format!("RFN_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}
