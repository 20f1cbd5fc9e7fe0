use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dense;
use crate::error::{Result, RfnError};
use crate::params::{Bound, ParamStore};
use crate::rfn::Head;
use crate::tensor::{Activation, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: usize,
    pub head: Head,
}

/// Two dense layers over edge features; ELU then the head activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub params: ParamStore,
    pub layers: [Dense; 2],
}

impl MlpModel {
    pub fn new(config: MlpConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.input == 0 || config.hidden == 0 || config.head.output_width() == 0 {
            return Err(RfnError::config("mlp widths must be positive"));
        }
        let mut params = ParamStore::new();
        let l1 = Dense::init(&mut params, "layer1", config.input, config.hidden, Activation::Elu, rng)?;
        let head_act = match config.head {
            Head::Regression => Activation::Relu,
            Head::Classification { .. } => Activation::SoftmaxRows,
        };
        let l2 = Dense::init(&mut params, "layer2", config.hidden, config.head.output_width(), head_act, rng)?;
        *params.get_mut(l2.bias) = Tensor::filled(1, config.head.output_width(), config.head.initial_bias());
        Ok(MlpModel {
            config,
            params,
            layers: [l1, l2],
        })
    }

    /// Row-wise forward over `x` (one row per edge); rows never interact.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let (rows, cols) = tape.shape(x);
        if cols != self.config.input {
            return Err(RfnError::Dimension {
                op: "mlp forward",
                left: (rows, cols),
                right: (self.config.input, self.config.hidden),
            });
        }
        let h = self.layers[0].apply(tape, bound, x)?;
        self.layers[1].apply(tape, bound, h)
    }

    pub fn forward_features(&self, tape: &mut Tape, bound: &Bound, x: &Tensor) -> Result<Var> {
        let x = tape.constant(x.clone());
        self.forward(tape, bound, x)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_weights_pass_single_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = MlpModel::new(
            MlpConfig {
                input: 1,
                hidden: 1,
                head: Head::Regression,
            },
            &mut rng,
        )
        .unwrap();
        let w1 = m.layers[0].w;
        let w2 = m.layers[1].w;
        *m.params.get_mut(w1) = Tensor::scalar(1.0);
        *m.params.get_mut(w2) = Tensor::scalar(1.0);
        let b2 = m.layers[1].bias;
        *m.params.get_mut(b2) = Tensor::scalar(0.0);
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let y = m
            .forward_features(&mut tape, &bound, &Tensor::column_vector(&[0.5, 2.0]))
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 2.0]);
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpModel::new(
            MlpConfig {
                input: 3,
                hidden: 8,
                head: Head::Classification { classes: 4 },
            },
            &mut rng,
        )
        .unwrap();
        let a = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.0], vec![0.0, 0.0, 5.0]]);
        let b = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![7.0, 3.0, 2.0], vec![-2.0, 0.5, 0.5]]);
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let ya = m.forward_features(&mut tape, &bound, &a).unwrap();
        let yb = m.forward_features(&mut tape, &bound, &b).unwrap();
        assert_eq!(tape.value(ya).row(0), tape.value(yb).row(0));
    }

    #[test]
    fn width_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpModel::new(
            MlpConfig {
                input: 3,
                hidden: 8,
                head: Head::Regression,
            },
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        assert!(matches!(
            m.forward_features(&mut tape, &bound, &Tensor::zeros(2, 4)),
            Err(RfnError::Dimension { .. })
        ));
    }
}
