//! The velocity-field interface and the synthetic fields used by theory
//! checks and oracles.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// A drift field u(x, t, c): everything the sampler and the steering loops
/// need from a model. `eval` and `eval_tape` must compute identical values;
/// the taped form additionally exposes du/dx to reverse mode.
pub trait Velocity {
    fn dim(&self) -> usize;

    fn eval(&self, x: &Tensor, t: f64, label: Option<usize>) -> Result<Tensor>;

    fn eval_tape(&self, tape: &mut Tape, x: Var, t: f64, label: Option<usize>) -> Result<Var>;

    /// Number of condition classes for conditional fields.
    fn conditional_classes(&self) -> Option<usize> {
        None
    }
}

/// u(x, t) = c. The exact straight "single-pair" coupling is the constant
/// field c = x0 − x1, for which x̂0 = x_t + t·u is exact at every t.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub drift: Tensor,
}

impl ConstantField {
    pub fn new(drift: Tensor) -> Self {
        ConstantField { drift }
    }

    pub fn zero(dim: usize) -> Self {
        ConstantField {
            drift: Tensor::zeros(&[dim]),
        }
    }

    /// Field whose trajectories run straight from x1 to x0.
    pub fn from_pair(x0: &Tensor, x1: &Tensor) -> Result<Self> {
        Ok(ConstantField {
            drift: x0.sub(x1)?,
        })
    }
}

impl Velocity for ConstantField {
    fn dim(&self) -> usize {
        self.drift.len()
    }

    fn eval(&self, _x: &Tensor, _t: f64, _label: Option<usize>) -> Result<Tensor> {
        Ok(self.drift.clone())
    }

    fn eval_tape(&self, tape: &mut Tape, _x: Var, _t: f64, _label: Option<usize>) -> Result<Var> {
        Ok(tape.constant(self.drift.clone()))
    }
}

/// u(x) = −rate·x, the contraction toward the origin used by the
/// integrator-order checks.
#[derive(Debug, Clone)]
pub struct ContractionField {
    pub dim: usize,
    pub rate: f64,
}

impl Velocity for ContractionField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Tensor, _t: f64, _label: Option<usize>) -> Result<Tensor> {
        Ok(x.scaled(-self.rate))
    }

    fn eval_tape(&self, tape: &mut Tape, x: Var, _t: f64, _label: Option<usize>) -> Result<Var> {
        tape.scale(x, -self.rate)
    }
}

/// u(x) = A·x + b.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub a: Tensor,
    pub b: Tensor,
}

impl AffineField {
    pub fn new(a: Tensor, b: Tensor) -> Result<Self> {
        let (r, c) = a.dims2("affine field matrix")?;
        if r != c || b.shape() != [r] {
            return Err(Error::invalid(format!(
                "affine field needs square A and matching b, got A {:?}, b {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(AffineField { a, b })
    }

    /// Constant drift plus a rotation of strength `omega` about `pivot` in
    /// the (0, 1) coordinate plane: the curved contrast case for the error
    /// dynamics. 2-D only.
    pub fn rotation_perturbed(drift: &Tensor, omega: f64, pivot: &Tensor) -> Result<Self> {
        if drift.shape() != [2] || pivot.shape() != [2] {
            return Err(Error::invalid(
                "rotation_perturbed is defined for 2-D fields".to_string(),
            ));
        }
        let a = Tensor::new(vec![2, 2], vec![0.0, omega, -omega, 0.0])?;
        // u = drift + A(x − pivot) = (drift − A·pivot) + A·x
        let apivot = tensor::matmul(&a, &pivot.reshaped(&[2, 1])?)?.reshaped(&[2])?;
        let b = drift.sub(&apivot)?;
        AffineField::new(a, b)
    }
}

impl Velocity for AffineField {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &Tensor, _t: f64, _label: Option<usize>) -> Result<Tensor> {
        let col = x.reshaped(&[x.len(), 1])?;
        let ax = tensor::matmul(&self.a, &col)?.reshaped(&[x.len()])?;
        ax.add(&self.b)
    }

    fn eval_tape(&self, tape: &mut Tape, x: Var, _t: f64, _label: Option<usize>) -> Result<Var> {
        let n = tape.value(x).len();
        let a = tape.constant(self.a.clone());
        let b = tape.constant(self.b.clone());
        let col = tape.reshape(x, &[n, 1])?;
        let ax = tape.matmul(a, col)?;
        let flat = tape.reshape(ax, &[n])?;
        tape.add(flat, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn affine_eval_matches_tape_eval_bitwise() {
        let mut rng = Rng::new(3);
        let f = AffineField::new(rng.gaussian(&[3, 3]), rng.gaussian(&[3])).unwrap();
        let x = rng.gaussian(&[3]);
        let plain = f.eval(&x, 0.5, None).unwrap();
        let mut tape = Tape::new();
        let xv = tape.input(x.clone(), true);
        let out = f.eval_tape(&mut tape, xv, 0.5, None).unwrap();
        assert_eq!(&plain, tape.value(out));
    }

    #[test]
    fn rotation_perturbed_rotates_about_pivot() {
        let drift = Tensor::from_vec(vec![1.0, 0.0]);
        let pivot = Tensor::from_vec(vec![2.0, 0.0]);
        let f = AffineField::rotation_perturbed(&drift, 0.5, &pivot).unwrap();
        // at the pivot the perturbation vanishes
        let at_pivot = f.eval(&pivot, 0.0, None).unwrap();
        assert!((at_pivot.data()[0] - 1.0).abs() < 1e-12);
        assert!(at_pivot.data()[1].abs() < 1e-12);
        // one unit above the pivot the rotation contributes (0.5, 0)
        let x = Tensor::from_vec(vec![2.0, 1.0]);
        let v = f.eval(&x, 0.0, None).unwrap();
        assert!((v.data()[0] - 1.5).abs() < 1e-12);
        assert!(v.data()[1].abs() < 1e-12);
    }
}
