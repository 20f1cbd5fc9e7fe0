//! Comparison models: an MLP without graph access, GraphSAGE (mean and
//! max-pool), GAT, and the Grouping Estimator. The graph baselines run on
//! the dual graph, i.e. their elements are road segments.

pub mod gat;
pub mod graphsage;
pub mod grouping;
pub mod mlp;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gat::{GatConfig, GatModel, GAT_BUDGET};
pub use graphsage::{SageVariant, SageConfig, SageModel};
pub use grouping::{GroupKey, GroupingModel};
pub use mlp::{MlpConfig, MlpModel};

use crate::error::Result;
use crate::learn::init::xavier_uniform;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Activation, Tape, Tensor, Var};

/// A fully connected layer `act(x * W + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{prefix}.w"), xavier_uniform(input, output, rng)?);
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(1, output));
        Ok(Dense { w, bias, activation })
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let lin = tape.matmul(x, bound[self.w])?;
        let pre = tape.add(lin, bound[self.bias])?;
        tape.activation(pre, self.activation)
    }
}

/// Normalization flags for a two-layer baseline: layer 1 always, layer 2
/// only for classification.
pub(crate) fn default_normalize(head: crate::rfn::Head) -> Vec<bool> {
    match head {
        crate::rfn::Head::Regression => vec![true, false],
        crate::rfn::Head::Classification { .. } => vec![true, true],
    }
}
