use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{default_normalize, Dense};
use crate::error::{Result, RfnError};
use crate::network::NeighborIndex;
use crate::params::{Bound, ParamStore};
use crate::rfn::Head;
use crate::tensor::{Activation, ReduceKind, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SageVariant {
    Mean,
    MaxPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    pub variant: SageVariant,
    pub input: usize,
    pub hidden: usize,
    pub head: Head,
    pub normalize: Vec<bool>,
}

impl SageConfig {
    pub fn two_layer(variant: SageVariant, input: usize, hidden: usize, head: Head) -> Self {
        SageConfig {
            variant,
            input,
            hidden,
            head,
            normalize: default_normalize(head),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageLayer {
    /// Neighbor pooling transform (max-pool variant only).
    pub pool: Option<Dense>,
    /// Transform of `concat(self, aggregate)`.
    pub transform: Dense,
    pub normalize: bool,
    pub output_activation: Option<Activation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SageModel {
    pub config: SageConfig,
    pub params: ParamStore,
    pub layers: Vec<SageLayer>,
}

impl SageModel {
    pub fn new(config: SageConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.input == 0 || config.hidden == 0 || config.head.output_width() == 0 {
            return Err(RfnError::config("graphsage widths must be positive"));
        }
        if config.normalize.len() != 2 {
            return Err(RfnError::config("graphsage has two layers; give two normalize flags"));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(2);
        let mut d_in = config.input;
        for layer in 1..=2 {
            let last = layer == 2;
            let d_out = if last { config.head.output_width() } else { config.hidden };
            let prefix = format!("layer{layer}");
            let (pool, agg_width) = match config.variant {
                SageVariant::Mean => (None, d_in),
                SageVariant::MaxPool => {
                    let pool = Dense::init(&mut params, &format!("{prefix}.pool"), d_in, 2 * d_out, Activation::Relu, rng)?;
                    (Some(pool), 2 * d_out)
                }
            };
            let act = if last {
                config.head.inner_activation()
            } else {
                Activation::Elu
            };
            let transform = Dense::init(&mut params, &format!("{prefix}.transform"), d_in + agg_width, d_out, act, rng)?;
            if last {
                *params.get_mut(transform.bias) = Tensor::filled(1, d_out, config.head.initial_bias());
            }
            layers.push(SageLayer {
                pool,
                transform,
                normalize: config.normalize[layer - 1],
                output_activation: if last { config.head.output_activation() } else { None },
            });
            d_in = d_out;
        }
        Ok(SageModel { config, params, layers })
    }

    /// Forward over element representations `h` with neighbor lists
    /// excluding the element itself.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, neighbors: &NeighborIndex, h: Var) -> Result<Var> {
        let (rows, cols) = tape.shape(h);
        if cols != self.config.input {
            return Err(RfnError::Dimension {
                op: "graphsage forward",
                left: (rows, cols),
                right: (self.config.input, self.config.hidden),
            });
        }
        let mut h = h;
        for layer in &self.layers {
            h = sage_layer(tape, bound, layer, neighbors, h)?;
        }
        Ok(h)
    }
}

pub fn sage_layer(tape: &mut Tape, bound: &Bound, layer: &SageLayer, neighbors: &NeighborIndex, h: Var) -> Result<Var> {
    let agg = match &layer.pool {
        None => {
            let rows = tape.gather_rows(h, neighbors.neighbor.clone())?;
            tape.segment_reduce(rows, &neighbors.segments, ReduceKind::Mean)?
        }
        Some(pool) => {
            let pooled = pool.apply(tape, bound, h)?;
            let rows = tape.gather_rows(pooled, neighbors.neighbor.clone())?;
            tape.segment_reduce(rows, &neighbors.segments, ReduceKind::Max)?
        }
    };
    let joined = tape.concat_cols(&[h, agg])?;
    let mut out = layer.transform.apply(tape, bound, joined)?;
    if layer.normalize {
        out = tape.l2_normalize_rows(out)?;
    }
    if let Some(act) = layer.output_activation {
        out = tape.activation(out, act)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{build_dual, fixtures, GraphView, PrimalGraph};

    fn layer_of(model: &SageModel, i: usize) -> SageLayer {
        let mut l = model.layers[i].clone();
        l.normalize = false;
        l.output_activation = None;
        l
    }

    #[test]
    fn single_neighbor_mean_is_that_row() {
        // Path 0 -> 1 -> 2: dual segment 0 has the single neighbor 1.
        let g = PrimalGraph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let d = build_dual(&g);
        let idx = NeighborIndex::build(&d, false).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.0]]));
        let rows = tape.gather_rows(h, idx.neighbor.clone()).unwrap();
        let agg = tape.segment_reduce(rows, &idx.segments, ReduceKind::Mean).unwrap();
        assert_eq!(tape.value(agg).row(0), &[3.0, -4.0]);
        assert_eq!(tape.value(agg).row(1), &[1.0, 2.0]);
    }

    #[test]
    fn maxpool_of_equal_neighbors_is_pooled_row() {
        let g = fixtures::three_way();
        let d = build_dual(&g);
        let idx = NeighborIndex::build(&d, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = SageModel::new(
            SageConfig::two_layer(SageVariant::MaxPool, 2, 3, Head::Regression),
            &mut rng,
        )
        .unwrap();
        let pool = model.layers[0].pool.clone().unwrap();
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let h = tape.constant(Tensor::filled(6, 2, 0.4));
        let pooled = pool.apply(&mut tape, &bound, h).unwrap();
        let rows = tape.gather_rows(pooled, idx.neighbor.clone()).unwrap();
        let agg = tape.segment_reduce(rows, &idx.segments, ReduceKind::Max).unwrap();
        for e in 0..6 {
            assert_eq!(tape.value(agg).row(e), tape.value(pooled).row(0));
        }
    }

    /// Mean variant on the three-way intersection against a scalar loop
    /// with uniform weights over distinct dual neighbors.
    #[test]
    fn mean_layer_matches_hand_computation() {
        let g = fixtures::three_way();
        let d = build_dual(&g);
        let idx = NeighborIndex::build(&d, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = SageModel::new(SageConfig::two_layer(SageVariant::Mean, 2, 2, Head::Regression), &mut rng).unwrap();
        let layer = layer_of(&model, 0);
        let x = Tensor::from_rows(&[
            vec![0.1, 0.9],
            vec![0.2, -0.3],
            vec![0.5, 0.5],
            vec![-1.0, 0.0],
            vec![0.3, 0.7],
            vec![0.0, 0.4],
        ]);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let h = tape.constant(x.clone());
        let out = sage_layer(&mut tape, &bound, &layer, &idx, h).unwrap();

        let w = model.params.get(layer.transform.w).clone();
        let b = model.params.get(layer.transform.bias).clone();
        for e in 0..6 {
            let nbrs = d.neighbor_set(e).unwrap();
            let mut row = x.row(e).to_vec();
            for c in 0..2 {
                row.push(nbrs.iter().map(|&n| x.get(n, c) / nbrs.len() as f64).sum());
            }
            for c in 0..2 {
                let pre: f64 = b.data()[c] + row.iter().enumerate().map(|(i, v)| v * w.get(i, c)).sum::<f64>();
                let want = Activation::Elu.apply_scalar(pre);
                assert!((tape.value(out).get(e, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_shapes() {
        let g = fixtures::three_way();
        let d = build_dual(&g);
        let idx = NeighborIndex::build(&d, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for variant in [SageVariant::Mean, SageVariant::MaxPool] {
            let model = SageModel::new(
                SageConfig::two_layer(variant, 16, 64, Head::Classification { classes: 5 }),
                &mut rng,
            )
            .unwrap();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let h = tape.constant(Tensor::filled(6, 16, 0.1));
            let out = model.forward(&mut tape, &bound, &idx, h).unwrap();
            assert_eq!(tape.shape(out), (6, 5));
        }
    }
}
