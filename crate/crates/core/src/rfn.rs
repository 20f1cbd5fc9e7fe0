//! Relational fusion networks.
//!
//! A relational fusion layer updates node representations on the primal
//! graph and edge representations on the dual graph. For every element `v`
//! and every relation `(v, n)` it concatenates source, relation and target
//! representations into a relational row, fuses that row into a vector,
//! aggregates the fused vectors of `v`'s neighborhood and optionally
//! L2-normalizes the result. Edge-relational fusion uses between-edge
//! representations joined with their connector node as relation features.
//!
//! Relation rows carry one extra column: 1 when the stored relation points
//! from the element to its neighbor, 0 when it points the other way.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfnError};
use crate::learn::init::xavier_uniform;
use crate::network::{PreparedNetwork, RelationIndex};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Activation, ReduceKind, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Additive,
    Interactional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Attentional,
    Mean,
}

/// What the last layer predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// One non-negative value per element (ReLU output).
    Regression,
    /// A probability distribution over `classes` (softmax output).
    Classification { classes: usize },
}

impl Head {
    pub fn output_width(self) -> usize {
        match self {
            Head::Regression => 1,
            Head::Classification { classes } => classes,
        }
    }

    /// Activation applied inside the last layer's transforms.
    pub fn inner_activation(self) -> Activation {
        match self {
            Head::Regression => Activation::Relu,
            Head::Classification { .. } => Activation::Identity,
        }
    }

    /// Initial output bias. Regression targets are scaled to a training mean
    /// of 1, so starting the bias there keeps the ReLU output active.
    pub fn initial_bias(self) -> f64 {
        match self {
            Head::Regression => 1.0,
            Head::Classification { .. } => 0.0,
        }
    }

    /// Activation applied after aggregation and normalization.
    pub fn output_activation(self) -> Option<Activation> {
        match self {
            Head::Regression => None,
            Head::Classification { .. } => Some(Activation::SoftmaxRows),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputWidths {
    pub node: usize,
    pub edge: usize,
    pub between: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfnConfig {
    pub fusion: FusionKind,
    pub aggregator: AggregatorKind,
    pub input: InputWidths,
    /// Output widths of layers `1..K-1`; the last layer's width comes from
    /// the head. `K = hidden.len() + 1`.
    pub hidden: Vec<usize>,
    pub head: Head,
    /// L2-normalize the output of each of the `K` layers.
    pub normalize: Vec<bool>,
    pub hidden_activation: Activation,
    pub coefficient_activation: Activation,
    /// Also propagate nodes and between-edges through the last layer.
    pub all_outputs: bool,
}

impl RfnConfig {
    /// Two-layer model with the defaults of the best grid-search
    /// configurations: ELU hidden layer, L2 normalization on layer 1 for
    /// regression and on both layers for classification.
    pub fn two_layer(
        fusion: FusionKind,
        aggregator: AggregatorKind,
        input: InputWidths,
        hidden: usize,
        head: Head,
    ) -> Self {
        let normalize = match head {
            Head::Regression => vec![true, false],
            Head::Classification { .. } => vec![true, true],
        };
        RfnConfig {
            fusion,
            aggregator,
            input,
            hidden: vec![hidden],
            head,
            normalize,
            hidden_activation: Activation::Elu,
            coefficient_activation: Activation::leaky_relu(),
            all_outputs: false,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    fn validate(&self) -> Result<()> {
        let k = self.layer_count();
        if self.normalize.len() != k {
            return Err(RfnError::config(format!(
                "normalize has {} flags for {k} layers",
                self.normalize.len()
            )));
        }
        if self.hidden.contains(&0) || self.head.output_width() == 0 {
            return Err(RfnError::config("layer widths must be positive"));
        }
        if self.input.node == 0 || self.input.edge == 0 || self.input.between == 0 {
            return Err(RfnError::config("input widths must be positive"));
        }
        if matches!(self.hidden_activation, Activation::SoftmaxRows) {
            return Err(RfnError::config("softmax is only valid as a head activation"));
        }
        Ok(())
    }
}

/// Parameters of a fusion function over `d_r`-wide relational rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub kind: FusionKind,
    pub w_r: ParamId,
    pub bias: ParamId,
    pub w_i: Option<ParamId>,
    pub activation: Activation,
    pub input_width: usize,
    pub output_width: usize,
}

impl FusionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        kind: FusionKind,
        input_width: usize,
        output_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_i = match kind {
            FusionKind::Interactional => Some(store.add(
                format!("{prefix}.w_i"),
                xavier_uniform(input_width, input_width, rng)?,
            )),
            FusionKind::Additive => None,
        };
        let w_r = store.add(
            format!("{prefix}.w_r"),
            xavier_uniform(input_width, output_width, rng)?,
        );
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(1, output_width));
        Ok(FusionParams {
            kind,
            w_r,
            bias,
            w_i,
            activation,
            input_width,
            output_width,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    pub kind: AggregatorKind,
    /// `d_r x 1` coefficient weights (attentional only).
    pub w_c: Option<ParamId>,
    pub coefficient_activation: Activation,
}

impl AggregatorParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        kind: AggregatorKind,
        input_width: usize,
        coefficient_activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_c = match kind {
            AggregatorKind::Attentional => Some(store.add(
                format!("{prefix}.w_c"),
                xavier_uniform(input_width, 1, rng)?,
            )),
            AggregatorKind::Mean => None,
        };
        Ok(AggregatorParams {
            kind,
            w_c,
            coefficient_activation,
        })
    }
}

/// Fusion + aggregation + normalization for one view (node or edge).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationalPath {
    pub fusion: FusionParams,
    pub aggregator: AggregatorParams,
    pub normalize: bool,
    pub output_activation: Option<Activation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfnLayer {
    /// `None` when node propagation is skipped in the last layer.
    pub node: Option<RelationalPath>,
    pub edge: RelationalPath,
    /// `None` when between-edge propagation is skipped in the last layer.
    pub between: Option<FeedForward>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfnModel {
    pub config: RfnConfig,
    pub params: ParamStore,
    pub layers: Vec<RfnLayer>,
}

/// Output representations of a forward pass.
#[derive(Clone, Debug)]
pub struct RfnOutputs {
    pub nodes: Var,
    pub edges: Var,
    pub between: Var,
    /// Edge representations after each layer (`H^{E,1..K}`).
    pub edge_layers: Vec<Var>,
}

/// Fuses relational rows `h_r` (one relation per row).
pub fn fuse_rows(tape: &mut Tape, bound: &Bound, p: &FusionParams, h_r: Var) -> Result<Var> {
    let (_, d) = tape.shape(h_r);
    if d != p.input_width {
        return Err(RfnError::Dimension {
            op: "fuse",
            left: (tape.shape(h_r).0, d),
            right: (p.input_width, p.output_width),
        });
    }
    match p.kind {
        FusionKind::Additive => {
            let lin = tape.matmul(h_r, bound[p.w_r])?;
            let pre = tape.add(lin, bound[p.bias])?;
            tape.activation(pre, p.activation)
        }
        FusionKind::Interactional => {
            let w_i = p
                .w_i
                .ok_or_else(|| RfnError::config("interactional fusion without W^I"))?;
            let mixed = tape.matmul(h_r, bound[w_i])?;
            let inter = tape.mul(mixed, h_r)?;
            let lin = tape.matmul(inter, bound[p.w_r])?;
            let act = tape.activation(lin, p.activation)?;
            tape.add(act, bound[p.bias])
        }
    }
}

/// Fuses source, relation and target rows (row-aligned, typically `1 x d`).
pub fn fuse(
    tape: &mut Tape,
    bound: &Bound,
    p: &FusionParams,
    h_src: Var,
    h_rel: Var,
    h_tgt: Var,
) -> Result<Var> {
    let h_r = tape.concat_cols(&[h_src, h_rel, h_tgt])?;
    fuse_rows(tape, bound, p, h_r)
}

/// Attention weights of relational rows within each segment:
/// softmax over `sigma_C(h_r * W^C)`.
pub fn attention_weights(
    tape: &mut Tape,
    bound: &Bound,
    p: &AggregatorParams,
    h_r: Var,
    segments: &std::sync::Arc<crate::tensor::Segments>,
) -> Result<Var> {
    let w_c = p
        .w_c
        .ok_or_else(|| RfnError::config("attentional aggregator without W^C"))?;
    let scores = tape.matmul(h_r, bound[w_c])?;
    let coeff = tape.activation(scores, p.coefficient_activation)?;
    tape.segment_softmax(coeff, segments)
}

/// Relational fusion over one graph view: returns one row per element.
pub fn relational_fusion(
    tape: &mut Tape,
    bound: &Bound,
    path: &RelationalPath,
    index: &RelationIndex,
    elements: Var,
    relations: Var,
) -> Result<Var> {
    let src = tape.gather_rows(elements, index.src.clone())?;
    let rel = tape.gather_rows(relations, index.rel.clone())?;
    let flags = tape.constant(index.direction.clone());
    let tgt = tape.gather_rows(elements, index.tgt.clone())?;
    let h_r = tape.concat_cols(&[src, rel, flags, tgt])?;
    let fused = fuse_rows(tape, bound, &path.fusion, h_r)?;
    let mut out = match path.aggregator.kind {
        AggregatorKind::Mean => tape.segment_reduce(fused, &index.segments, ReduceKind::Mean)?,
        AggregatorKind::Attentional => {
            let w = attention_weights(tape, bound, &path.aggregator, h_r, &index.segments)?;
            tape.segment_reduce(fused, &index.segments, ReduceKind::WeightedSum(w))?
        }
    };
    if path.normalize {
        out = tape.l2_normalize_rows(out)?;
    }
    if let Some(act) = path.output_activation {
        out = tape.activation(out, act)?;
    }
    Ok(out)
}

/// Appends the connector node's row to every between-edge row.
pub fn join(tape: &mut Tape, between: Var, nodes: Var, connectors: &std::sync::Arc<[usize]>) -> Result<Var> {
    let conn = tape.gather_rows(nodes, connectors.clone())?;
    tape.concat_cols(&[between, conn])
}

impl RfnModel {
    pub fn new(config: RfnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layer_count());
        let (mut dv, mut de, mut db) = (config.input.node, config.input.edge, config.input.between);
        let k = config.layer_count();
        for layer in 1..=k {
            let last = layer == k;
            let width = if last {
                config.head.output_width()
            } else {
                config.hidden[layer - 1]
            };
            let act = if last {
                config.head.inner_activation()
            } else {
                config.hidden_activation
            };
            let out_act = if last { config.head.output_activation() } else { None };
            let normalize = config.normalize[layer - 1];
            let keep_side_paths = !last || config.all_outputs;

            let node = if keep_side_paths {
                let d_r = dv + de + 1 + dv;
                let prefix = format!("layer{layer}.node");
                Some(RelationalPath {
                    fusion: FusionParams::init(
                        &mut params,
                        &format!("{prefix}.fuse"),
                        config.fusion,
                        d_r,
                        width,
                        act,
                        rng,
                    )?,
                    aggregator: AggregatorParams::init(
                        &mut params,
                        &format!("{prefix}.aggregate"),
                        config.aggregator,
                        d_r,
                        config.coefficient_activation,
                        rng,
                    )?,
                    normalize,
                    output_activation: out_act,
                })
            } else {
                None
            };

            let d_r = de + (db + dv) + 1 + de;
            let prefix = format!("layer{layer}.edge");
            let edge = RelationalPath {
                fusion: FusionParams::init(
                    &mut params,
                    &format!("{prefix}.fuse"),
                    config.fusion,
                    d_r,
                    width,
                    act,
                    rng,
                )?,
                aggregator: AggregatorParams::init(
                    &mut params,
                    &format!("{prefix}.aggregate"),
                    config.aggregator,
                    d_r,
                    config.coefficient_activation,
                    rng,
                )?,
                normalize,
                output_activation: out_act,
            };

            // Interactional fusion adds the bias outside the ReLU, so every
            // element whose ReLU term is inactive outputs the bias. Starting
            // it at zero lets it settle at the lowest target from below.
            if last && config.fusion == FusionKind::Additive {
                let paths = node.iter().chain([&edge]);
                for p in paths {
                    *params.get_mut(p.fusion.bias) = Tensor::filled(1, width, config.head.initial_bias());
                }
            }

            let between = if keep_side_paths {
                let w = params.add(format!("layer{layer}.between.w"), xavier_uniform(db, width, rng)?);
                let bias = params.add(format!("layer{layer}.between.b"), Tensor::zeros(1, width));
                Some(FeedForward {
                    w,
                    bias,
                    activation: if last { Activation::Identity } else { act },
                })
            } else {
                None
            };

            layers.push(RfnLayer { node, edge, between });
            if keep_side_paths {
                dv = width;
                db = width;
            }
            de = width;
        }
        Ok(RfnModel {
            config,
            params,
            layers,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn check_inputs(&self, net: &PreparedNetwork) -> Result<()> {
        let (v, e, b) = net.features.widths();
        let want = self.config.input;
        if (v, e, b) != (want.node, want.edge, want.between) {
            return Err(RfnError::Dimension {
                op: "rfn forward (node/edge widths)",
                left: (v, e),
                right: (want.node, want.edge),
            });
        }
        Ok(())
    }

    /// Forward propagation through all layers on `net`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, net: &PreparedNetwork) -> Result<RfnOutputs> {
        self.check_inputs(net)?;
        let mut h_v = tape.constant(net.features.nodes.clone());
        let mut h_e = tape.constant(net.features.edges.clone());
        let mut h_b = tape.constant(net.features.between.clone());
        let mut edge_layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next_v = match &layer.node {
                Some(path) => relational_fusion(tape, bound, path, &net.primal_relations, h_v, h_e)?,
                None => h_v,
            };
            let joined = join(tape, h_b, h_v, &net.connectors)?;
            let next_e = relational_fusion(tape, bound, &layer.edge, &net.dual_relations, h_e, joined)?;
            let next_b = match &layer.between {
                Some(ff) => {
                    let lin = tape.matmul(h_b, bound[ff.w])?;
                    let pre = tape.add(lin, bound[ff.bias])?;
                    tape.activation(pre, ff.activation)?
                }
                None => h_b,
            };
            h_v = next_v;
            h_e = next_e;
            h_b = next_b;
            edge_layers.push(h_e);
        }
        Ok(RfnOutputs {
            nodes: h_v,
            edges: h_e,
            between: h_b,
            edge_layers,
        })
    }
}
