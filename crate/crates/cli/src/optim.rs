// SPDX-License-Identifier: Apache-2.0

//! Parameter updates for the tensor-parameter experiments.

use opdiff_core::Tensor;

use crate::config::{OptimizerKind, OptimizerSpec};

pub enum Optimizer {
    Sgd {
        eta: f64,
    },
    /// Adam with the usual defaults (0.9, 0.999, 1e-8) and a fixed rate.
    Adam {
        eta: f64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: i32,
    },
}

const B1: f64 = 0.9;
const B2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(opt: &OptimizerSpec) -> Optimizer {
        match opt.kind {
            OptimizerKind::Sgd => Optimizer::Sgd { eta: opt.step_size },
            OptimizerKind::Adam => Optimizer::Adam { eta: opt.step_size, m: Vec::new(), v: Vec::new(), t: 0 },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        match self {
            Optimizer::Sgd { eta } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let data = p.data().iter().zip(g.data()).map(|(a, b)| a - *eta * b).collect();
                    *p = Tensor::new(p.shape().clone(), data).expect("same shape");
                }
            }
            Optimizer::Adam { eta, m, v, t } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| vec![0.0; g.data().len()]).collect();
                    *v = m.clone();
                }
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let mut data = p.data().to_vec();
                    for (j, (x, &gj)) in data.iter_mut().zip(g.data()).enumerate() {
                        m[k][j] = B1 * m[k][j] + (1.0 - B1) * gj;
                        v[k][j] = B2 * v[k][j] + (1.0 - B2) * gj * gj;
                        *x -= *eta * (m[k][j] / c1) / ((v[k][j] / c2).sqrt() + EPS);
                    }
                    *p = Tensor::new(p.shape().clone(), data).expect("same shape");
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_has_unit_scale() {
        let opt = OptimizerSpec { kind: OptimizerKind::Adam, step_size: 0.1, steps: 1, seed: 0 };
        let mut o = Optimizer::new(&opt);
        let mut p = vec![Tensor::vector(&[1.0, 1.0])];
        o.step(&mut p, &[Tensor::vector(&[1e-3, -50.0])]);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn sgd_step() {
        let opt = OptimizerSpec { kind: OptimizerKind::Sgd, step_size: 0.5, steps: 1, seed: 0 };
        let mut p = vec![Tensor::scalar(2.0)];
        Optimizer::new(&opt).step(&mut p, &[Tensor::scalar(2.0)]);
        assert_eq!(p[0].item(), 1.0);
    }
}
