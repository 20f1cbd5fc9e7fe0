use rand::Rng;
use serde::{Deserialize, Serialize};

use super::default_normalize;
use crate::error::{Result, RfnError};
use crate::learn::init::xavier_uniform;
use crate::network::NeighborIndex;
use crate::params::{Bound, ParamId, ParamStore};
use crate::rfn::Head;
use crate::tensor::{Activation, ReduceKind, Tape, Tensor, Var};

/// Upper bound on `heads * hidden` for the concatenated first layer.
pub const GAT_BUDGET: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub input: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head: Head,
    pub normalize: Vec<bool>,
}

impl GatConfig {
    pub fn two_layer(input: usize, hidden: usize, heads: usize, head: Head) -> Self {
        GatConfig {
            input,
            hidden,
            heads,
            head,
            normalize: default_normalize(head),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub w: ParamId,
    /// Halves of the attention vector `a`, for the element and the neighbor.
    pub a_self: ParamId,
    pub a_neighbor: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    pub heads: Vec<AttentionHead>,
    /// Concatenate head outputs (otherwise average them).
    pub concat: bool,
    pub bias: ParamId,
    pub activation: Activation,
    pub normalize: bool,
    pub output_activation: Option<Activation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatModel {
    pub config: GatConfig,
    pub params: ParamStore,
    pub layers: Vec<GatLayer>,
}

impl GatModel {
    pub fn new(config: GatConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.heads == 0 {
            return Err(RfnError::config("gat needs at least one attention head"));
        }
        if config.input == 0 || config.hidden == 0 || config.head.output_width() == 0 {
            return Err(RfnError::config("gat widths must be positive"));
        }
        if config.heads * config.hidden > GAT_BUDGET {
            return Err(RfnError::config(format!(
                "gat heads x width = {} x {} exceeds the budget of {GAT_BUDGET}",
                config.heads, config.hidden
            )));
        }
        if config.normalize.len() != 2 {
            return Err(RfnError::config("gat has two layers; give two normalize flags"));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(2);
        let mut d_in = config.input;
        for layer in 1..=2 {
            let last = layer == 2;
            let d_out = if last { config.head.output_width() } else { config.hidden };
            let mut heads = Vec::with_capacity(config.heads);
            for k in 0..config.heads {
                let prefix = format!("layer{layer}.head{k}");
                heads.push(AttentionHead {
                    w: params.add(format!("{prefix}.w"), xavier_uniform(d_in, d_out, rng)?),
                    a_self: params.add(format!("{prefix}.a_self"), xavier_uniform(d_out, 1, rng)?),
                    a_neighbor: params.add(format!("{prefix}.a_neighbor"), xavier_uniform(d_out, 1, rng)?),
                });
            }
            let width = if last { d_out } else { d_out * config.heads };
            let init = if last { config.head.initial_bias() } else { 0.0 };
            let bias = params.add(format!("layer{layer}.b"), Tensor::filled(1, width, init));
            layers.push(GatLayer {
                heads,
                concat: !last,
                bias,
                activation: if last {
                    config.head.inner_activation()
                } else {
                    Activation::Elu
                },
                normalize: config.normalize[layer - 1],
                output_activation: if last { config.head.output_activation() } else { None },
            });
            d_in = width;
        }
        Ok(GatModel { config, params, layers })
    }

    pub fn layer1_width(&self) -> usize {
        self.config.hidden * self.config.heads
    }

    /// Forward with neighbor lists that include each element itself.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, neighbors: &NeighborIndex, h: Var) -> Result<Var> {
        let (rows, cols) = tape.shape(h);
        if cols != self.config.input {
            return Err(RfnError::Dimension {
                op: "gat forward",
                left: (rows, cols),
                right: (self.config.input, self.config.hidden),
            });
        }
        let mut h = h;
        for layer in &self.layers {
            h = gat_layer(tape, bound, layer, neighbors, h)?;
        }
        Ok(h)
    }
}

/// Attention weights of one head, one per neighbor entry.
pub fn head_attention(
    tape: &mut Tape,
    bound: &Bound,
    head: &AttentionHead,
    neighbors: &NeighborIndex,
    z: Var,
) -> Result<Var> {
    let s_self = tape.matmul(z, bound[head.a_self])?;
    let s_nbr = tape.matmul(z, bound[head.a_neighbor])?;
    let s_self = tape.gather_rows(s_self, neighbors.owner.clone())?;
    let s_nbr = tape.gather_rows(s_nbr, neighbors.neighbor.clone())?;
    let score = tape.add(s_self, s_nbr)?;
    let score = tape.activation(score, Activation::leaky_relu())?;
    tape.segment_softmax(score, &neighbors.segments)
}

pub fn gat_layer(tape: &mut Tape, bound: &Bound, layer: &GatLayer, neighbors: &NeighborIndex, h: Var) -> Result<Var> {
    let mut outputs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let z = tape.matmul(h, bound[head.w])?;
        let alpha = head_attention(tape, bound, head, neighbors, z)?;
        let rows = tape.gather_rows(z, neighbors.neighbor.clone())?;
        outputs.push(tape.segment_reduce(rows, &neighbors.segments, ReduceKind::WeightedSum(alpha))?);
    }
    let combined = if layer.concat {
        tape.concat_cols(&outputs)?
    } else {
        let mut sum = outputs[0];
        for &o in &outputs[1..] {
            sum = tape.add(sum, o)?;
        }
        tape.scale(sum, 1.0 / outputs.len() as f64)?
    };
    let pre = tape.add(combined, bound[layer.bias])?;
    let mut out = tape.activation(pre, layer.activation)?;
    if layer.normalize {
        out = tape.l2_normalize_rows(out)?;
    }
    if let Some(act) = layer.output_activation {
        out = tape.activation(out, act)?;
    }
    Ok(out)
}
