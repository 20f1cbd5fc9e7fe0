//! Finite-difference gradient checks of whole models on small random
//! networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RfnError};
use crate::features::{FeatureMatrices, FeatureScaling, MinMax};
use crate::graph::PrimalGraph;
use crate::model::{Hyper, Model, ModelKind};
use crate::network::PreparedNetwork;
use crate::params::Bound;
use crate::rfn::{Head, InputWidths};
use crate::tensor::{finite_diff_check, GradCheckReport, Tensor};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Input widths of the random check networks.
pub const CHECK_WIDTHS: InputWidths = InputWidths {
    node: 3,
    edge: 6,
    between: 5,
};

fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

/// A random digraph with at most `max_edges` edges and features drawn
/// uniformly from `[-1, 1)`.
pub fn random_network(max_edges: usize, widths: InputWidths, rng: &mut impl Rng) -> Result<PreparedNetwork> {
    if max_edges < 2 {
        return Err(RfnError::config("random network needs room for at least 2 edges"));
    }
    let nodes = rng.random_range(3..=8usize);
    let mut pairs: Vec<(usize, usize)> = (0..nodes)
        .flat_map(|u| (0..nodes).filter(move |&v| v != u).map(move |v| (u, v)))
        .collect();
    pairs.shuffle(rng);
    let count = rng.random_range(2..=max_edges.min(pairs.len()));
    pairs.truncate(count);
    let primal = PrimalGraph::new(nodes, pairs)?;
    let dual = crate::graph::build_dual(&primal);
    let features = FeatureMatrices {
        nodes: uniform(nodes, widths.node, rng),
        edges: uniform(count, widths.edge, rng),
        between: uniform(dual.between_count(), widths.between, rng),
        scaling: FeatureScaling {
            length: MinMax { lo: 0.0, hi: 1.0 },
        },
    };
    PreparedNetwork::new(primal, dual, features)
}

/// Checks the gradients of a freshly initialized `kind` model with a
/// random linear readout of its edge outputs as the scalar function.
pub fn model_gradient_check(kind: ModelKind, head: Head, seed: u64) -> Result<GradCheckReport> {
    if !kind.is_neural() {
        return Err(RfnError::config("the grouping estimator has no gradients to check"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(20, CHECK_WIDTHS, &mut rng)?;
    let hyper = Hyper {
        hidden: 4,
        heads: 2,
        learning_rate: 0.0,
    };
    let model = Model::build(kind, &hyper, head, CHECK_WIDTHS, &mut rng)?;
    let readout = uniform(net.edge_count(), head.output_width(), &mut rng);
    let params = model.params().expect("neural model").values().to_vec();
    finite_diff_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let out = model.forward_edges(tape, &bound, &net)?;
            let r = tape.constant(readout.clone());
            let weighted = tape.mul(out, r)?;
            tape.sum_all(weighted)
        },
        &params,
        GRADCHECK_STEP,
    )
}
