//! Cost functions L(x̂0) and their gradients ∇_{x̂0}L.
//!
//! Values follow the squared-norm convention, so for the residual-style
//! kinds the value IS the squared error magnitude E(t) = eᵀe and the
//! gradient of mse-to-target is exactly 2(x̂0 − x_0^ref).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::classifier::Classifier;
use super::degrade::DegradationOp;

#[derive(Debug, Clone)]
pub enum CostFunction {
    /// ‖x̂0 − target‖².
    MseToTarget { target: Tensor },
    /// ‖F(x̂0) − observed‖² with F the (noise-stripped) degradation.
    DegradedMse {
        op: DegradationOp,
        observed: Tensor,
    },
    /// ‖(x̂0 − target)⊙mask‖²; mask 1 = coordinate counted.
    MaskedMse { target: Tensor, mask: Tensor },
    /// −log p(class | x̂0) through the classifier.
    ClassifierNll {
        classifier: Classifier,
        class: usize,
    },
}

impl CostFunction {
    pub fn mse_to_target(target: Tensor) -> CostFunction {
        CostFunction::MseToTarget { target }
    }

    /// Builds the degraded-MSE cost; any additive-noise component of `op`
    /// is stripped (noise corrupts the observation, not the forward model).
    pub fn degraded_mse(op: &DegradationOp, observed: Tensor) -> Result<CostFunction> {
        let det = op.deterministic();
        let (oh, ow) = det.output_dims();
        if observed.len() != oh * ow {
            return Err(Error::invalid(format!(
                "observed sample has {} values, degradation produces {}",
                observed.len(),
                oh * ow
            )));
        }
        let n = observed.len();
        Ok(CostFunction::DegradedMse {
            op: det,
            observed: observed.reshaped(&[n])?,
        })
    }

    pub fn masked_mse(target: Tensor, mask: Tensor) -> Result<CostFunction> {
        if target.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                context: "masked cost",
                left: target.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        Ok(CostFunction::MaskedMse { target, mask })
    }

    pub fn classifier_nll(classifier: Classifier, class: usize) -> Result<CostFunction> {
        if class >= classifier.classes() {
            return Err(Error::invalid(format!(
                "target class {class} out of range for {} classes",
                classifier.classes()
            )));
        }
        Ok(CostFunction::ClassifierNll { classifier, class })
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            CostFunction::MseToTarget { .. } => "mse-to-target",
            CostFunction::DegradedMse { .. } => "degraded-mse",
            CostFunction::MaskedMse { .. } => "masked-mse",
            CostFunction::ClassifierNll { .. } => "classifier-nll",
        }
    }

    /// Whether the value is a squared residual magnitude (then it doubles
    /// as E(t) in traces).
    pub fn is_residual_kind(&self) -> bool {
        !matches!(self, CostFunction::ClassifierNll { .. })
    }

    /// Value and analytic gradient at x̂0 (flat tensor).
    pub fn evaluate(&self, x_hat0: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            CostFunction::MseToTarget { target } => {
                let e = x_hat0.sub(target)?;
                Ok((e.norm_sq(), e.scaled(2.0)))
            }
            CostFunction::MaskedMse { target, mask } => {
                let e = x_hat0.sub(target)?;
                let me = e.mul(mask)?;
                let grad = me.mul(mask)?.scaled(2.0);
                Ok((me.norm_sq(), grad))
            }
            CostFunction::DegradedMse { .. } | CostFunction::ClassifierNll { .. } => {
                // these flow through linear ops / the classifier; reverse
                // mode on a scratch tape is the single source of truth
                let mut tape = Tape::new();
                let xv = tape.input(x_hat0.clone(), true);
                let loss = self.evaluate_tape(&mut tape, xv)?;
                let value = tape.value(loss).item()?;
                let grads = tape.backward(loss)?;
                Ok((value, grads.get_or_zero(&tape, xv)))
            }
        }
    }

    /// Record the cost on an existing tape (x̂0 may be an interior node).
    pub fn evaluate_tape(&self, tape: &mut Tape, x_hat0: Var) -> Result<Var> {
        match self {
            CostFunction::MseToTarget { target } => {
                let tv = tape.constant(target.clone());
                let e = tape.sub(x_hat0, tv)?;
                let sq = tape.mul(e, e)?;
                tape.sum(sq)
            }
            CostFunction::MaskedMse { target, mask } => {
                let tv = tape.constant(target.clone());
                let mv = tape.constant(mask.clone());
                let e = tape.sub(x_hat0, tv)?;
                let me = tape.mul(e, mv)?;
                let sq = tape.mul(me, me)?;
                tape.sum(sq)
            }
            CostFunction::DegradedMse { op, observed } => {
                let fx = op.apply_tape(tape, x_hat0)?;
                let ov = tape.constant(observed.clone());
                let e = tape.sub(fx, ov)?;
                let sq = tape.mul(e, e)?;
                tape.sum(sq)
            }
            CostFunction::ClassifierNll { classifier, class } => {
                let d = classifier.input_dim();
                let row = tape.reshape(x_hat0, &[1, d])?;
                let logp = classifier.log_probs_taped(tape, row)?;
                let mut pick = Tensor::zeros(&[1, classifier.classes()]);
                pick.data_mut()[*class] = -1.0;
                let pv = tape.constant(pick);
                let prod = tape.mul(logp, pv)?;
                tape.sum(prod)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::guidance::degrade::{DegradationKind, Rect};
    use crate::rng::Rng;

    #[test]
    fn mse_minimum_is_zero_with_zero_gradient() {
        let t = Tensor::from_vec(vec![0.5, -1.0]);
        let cost = CostFunction::mse_to_target(t.clone());
        let (v, g) = cost.evaluate(&t).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mse_quadratic_rule() {
        let target = Tensor::from_vec(vec![0.0, 0.0]);
        let cost = CostFunction::mse_to_target(target);
        let x = Tensor::from_vec(vec![1.0, -1.0]);
        let (v, g) = cost.evaluate(&x).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g.data(), &[2.0, -2.0]);
    }

    #[test]
    fn masked_all_ones_equals_mse() {
        let mut rng = Rng::new(1);
        let target = rng.gaussian(&[6]);
        let x = rng.gaussian(&[6]);
        let plain = CostFunction::mse_to_target(target.clone());
        let masked =
            CostFunction::masked_mse(target.clone(), Tensor::full(&[6], 1.0)).unwrap();
        let (v1, g1) = plain.evaluate(&x).unwrap();
        let (v2, g2) = masked.evaluate(&x).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn masked_zero_coordinates_get_zero_gradient() {
        let target = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mask = Tensor::from_vec(vec![1.0, 0.0, 1.0]);
        let cost = CostFunction::masked_mse(target, mask).unwrap();
        let x = Tensor::from_vec(vec![5.0, 5.0, 5.0]);
        let (_, g) = cost.evaluate(&x).unwrap();
        assert_eq!(g.data()[1], 0.0);
        assert_ne!(g.data()[0], 0.0);
    }

    #[test]
    fn plain_and_taped_gradients_agree_for_each_kind() {
        let mut rng = Rng::new(2);
        let target16: Tensor = rng.gaussian(&[16]);
        let op = DegradationOp::new(
            DegradationKind::Compose(vec![
                DegradationKind::BoxMask {
                    rect: Rect::centered(4, 2, 2),
                },
                DegradationKind::GaussianBlur { size: 3, sigma: 1.0 },
            ]),
            4,
            4,
        )
        .unwrap();
        let observed = op.apply(&target16).unwrap();
        let classifier = Classifier::new(16, &[8], 3, &mut rng).unwrap();
        let costs = vec![
            CostFunction::mse_to_target(target16.clone()),
            CostFunction::masked_mse(target16.clone(), {
                let mut m = Tensor::full(&[16], 1.0);
                m.data_mut()[3] = 0.0;
                m
            })
            .unwrap(),
            CostFunction::degraded_mse(&op, observed).unwrap(),
            CostFunction::classifier_nll(classifier, 1).unwrap(),
        ];
        let x = rng.gaussian(&[16]);
        for cost in &costs {
            let (v_plain, g_plain) = cost.evaluate(&x).unwrap();
            let mut tape = Tape::new();
            let xv = tape.input(x.clone(), true);
            let loss = cost.evaluate_tape(&mut tape, xv).unwrap();
            let v_tape = tape.value(loss).item().unwrap();
            let g_tape = tape.backward(loss).unwrap().get_or_zero(&tape, xv);
            assert!(
                (v_plain - v_tape).abs() <= 1e-12 * (1.0 + v_plain.abs()),
                "{}: value mismatch",
                cost.kind_tag()
            );
            for (a, b) in g_plain.data().iter().zip(g_tape.data()) {
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                    "{}: grad mismatch",
                    cost.kind_tag()
                );
            }
        }
    }

    #[test]
    fn classifier_nll_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let classifier = Classifier::new(4, &[8], 3, &mut rng).unwrap();
        let cost = CostFunction::classifier_nll(classifier, 2).unwrap();
        let x = rng.gaussian(&[4]);
        let err = grad_check(|t, v| cost.evaluate_tape(t, v), &x, 1e-5).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn degraded_mse_rejects_shape_mismatch() {
        let op = DegradationOp::new(DegradationKind::Downsample { factor: 2 }, 4, 4).unwrap();
        let bad = Tensor::zeros(&[16]);
        assert!(CostFunction::degraded_mse(&op, bad).is_err());
    }
}
