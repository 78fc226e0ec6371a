//! SGD and Adam, shared by model training and the steering inner loops.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer tag '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Optimizer over a fixed list of parameter tensors (state is positional).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step_count: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Apply one update. `params` and `grads` are parallel slices; the same
    /// ordering must be used every call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() && self.kind == OptimizerKind::Adam {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    /// Single-tensor convenience used by the steering loops.
    pub fn step_single(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        let mut refs = [param];
        self.step(&mut refs, std::slice::from_ref(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_lr_times_grad() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let g = Tensor::from_vec(vec![2.0, -4.0]);
        opt.step_single(&mut p, &g).unwrap();
        assert_eq!(p.data(), &[0.0, 4.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        let mut p = Tensor::from_vec(vec![0.0]);
        let g = Tensor::from_vec(vec![7.3]);
        opt.step_single(&mut p, &g).unwrap();
        // bias-corrected first step is lr·g/(|g|+eps')
        assert!((p.data()[0] + 0.1).abs() < 1e-6, "{}", p.data()[0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        let mut p = Tensor::from_vec(vec![3.0, -2.0]);
        for _ in 0..500 {
            let g = p.scaled(2.0);
            opt.step_single(&mut p, &g).unwrap();
        }
        assert!(p.norm() < 1e-2, "residual {}", p.norm());
    }
}
