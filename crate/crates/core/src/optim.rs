//! Gradient-based parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => arg(format!("unknown optimizer {other:?} (expected adam, sgd)")),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        step: i32,
        m: ModelParams,
        v: ModelParams,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, like: &ModelParams) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return arg(format!("learning rate {lr} must be finite and non-negative"));
        }
        let zeros = || like.map(|t| Tensor::zeros(t.rows(), t.cols()));
        Ok(match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => Self::Adam {
                lr,
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        })
    }

    pub fn lr(&self) -> f64 {
        match self {
            Self::Sgd { lr } | Self::Adam { lr, .. } => *lr,
        }
    }

    /// One update of `params` against `grads` (same layout).
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        match self {
            Self::Sgd { lr } => {
                for (p, g) in params.entries_mut().into_iter().zip(grads.entries()) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= *lr * d;
                    }
                }
            }
            Self::Adam { lr, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                let lr = *lr;
                let grads = grads.entries();
                let ps = params.entries_mut();
                let ms = m.entries_mut();
                let vs = v.entries_mut();
                for (((p, g), m), v) in ps.into_iter().zip(grads).zip(ms).zip(vs) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                    for ((x, &d), (mi, vi)) in it {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        let cfg = ModelConfig {
            hidden: 3,
            fnn_hidden: 2,
            layers: 1,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn tiny_lr_barely_moves() {
        let mut p = params();
        let before = p.clone();
        let grads = p.map(|t| t.map(|x| x + 0.3));
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-12, &p).unwrap();
        opt.step(&mut p, &grads);
        for (a, b) in p.entries().iter().zip(before.entries()) {
            assert!(a.max_abs_diff(b) <= 1e-9);
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let grads = p.map(|t| Tensor::full(t.rows(), t.cols(), 2.0));
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &p).unwrap();
        opt.step(&mut p, &grads);
        for (a, b) in p.entries().iter().zip(before.entries()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - x - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = params();
        let before = p.clone();
        let grads = p.map(|t| Tensor::full(t.rows(), t.cols(), 1.0));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &p).unwrap();
        opt.step(&mut p, &grads);
        assert!((before.head.b_out.data()[0] - p.head.b_out.data()[0] - 0.5).abs() < 1e-15);
        assert!(Optimizer::new(OptimizerKind::Sgd, -1.0, &p).is_err());
    }
}
