//! Masked editing: conditional velocity blending plus masked-cost steering.
//!
//! Gate semantics, counted in outer-step indices over T steps:
//!
//! ```text
//! step index k:   0 ............ T-min_t ............ T-max_full_steps_t ...... T-1
//! guidance:       |---- off ----|---------------- on -------------------------|
//! cost mask:                    |---- 1 - M (preserve) ----|---- all-ones ----|
//! ```
//!
//! i.e. guidance starts after the first (T − min_t) steps, and the cost mask
//! is replaced by all-ones during the final max_full_steps_t steps. The user
//! mask M marks the region free to change (1 = editable); the cost therefore
//! pins 1 − M to the reference, and the velocity blend
//! v = v_edit + (1−M)⊙(v_edit − v_base)·s pushes the conditioned direction
//! outside the editable region.

use crate::error::{Error, Result};
use crate::fields::Velocity;
use crate::optim::Optimizer;
use crate::tensor::Tensor;
use crate::trace::TrajectoryTrace;

use super::cost::CostFunction;
use super::steer::{SteerMode, SteeringConfig};

pub struct EditRequest<'a> {
    pub x0_ref: &'a Tensor,
    /// 1 = region free to change, 0 = preserve.
    pub mask_free: &'a Tensor,
    pub base_label: usize,
    pub edit_label: usize,
}

pub fn edit_into(
    field: &dyn Velocity,
    x_start: &Tensor,
    req: &EditRequest,
    cfg: &SteeringConfig,
    trace: &mut TrajectoryTrace,
) -> Result<Tensor> {
    cfg.validate()?;
    cfg.validate_gates()?;
    if cfg.mode != SteerMode::FlowChef {
        return Err(Error::invalid("editing runs in flowchef mode".to_string()));
    }
    let classes = field
        .conditional_classes()
        .ok_or_else(|| Error::invalid("editing requires a conditional model"))?;
    if req.base_label >= classes || req.edit_label >= classes {
        return Err(Error::invalid(format!(
            "edit labels ({}, {}) out of range for {classes} classes",
            req.base_label, req.edit_label
        )));
    }
    if req.mask_free.shape() != req.x0_ref.shape() {
        return Err(Error::ShapeMismatch {
            context: "edit mask",
            left: req.mask_free.shape().to_vec(),
            right: req.x0_ref.shape().to_vec(),
        });
    }
    if req.mask_free.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("edit mask values must be 0 or 1"));
    }

    let preserve = req.mask_free.map(|v| 1.0 - v);
    let cost_masked = CostFunction::masked_mse(req.x0_ref.clone(), preserve.clone())?;
    let cost_full = CostFunction::masked_mse(
        req.x0_ref.clone(),
        Tensor::full(req.x0_ref.shape(), 1.0),
    )?;

    let steps = cfg.nfe;
    let dt = 1.0 / steps as f64;
    let mut x = x_start.clone();
    trace.note_stored(2);
    for k in 0..steps {
        let t = (steps - k) as f64 / steps as f64;
        let v_edit = field.eval(&x, t, Some(req.edit_label))?;
        let v_base = field.eval(&x, t, Some(req.base_label))?;
        trace.bump_forward(2);
        let push = v_edit
            .sub(&v_base)?
            .mul(&preserve)?
            .scaled(cfg.edit_scale);
        let v = v_edit.add(&push)?;

        let guided = k >= steps - cfg.min_t;
        let full_mask = k >= steps - cfg.max_full_steps_t;
        let cost = if full_mask { &cost_full } else { &cost_masked };

        let x_hat0 = x.add_scaled(&v, t)?;
        let (c0, g0) = cost.evaluate(&x_hat0)?;
        trace.record(k, t, &x, x_hat0, Some(c0), Some(c0), None);

        if guided {
            let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
            let mut grad = g0;
            for n in 0..cfg.inner_steps {
                if n > 0 {
                    let xh = x.add_scaled(&v, t)?;
                    grad = cost.evaluate(&xh)?.1;
                }
                let dir = grad.scaled(cfg.scale / grad.len() as f64);
                opt.step_single(&mut x, &dir)?;
                if !x.all_finite() {
                    return Err(Error::NonFinite {
                        step: k,
                        detail: format!("edit inner update (grad norm {:.3e})", grad.norm()),
                    });
                }
            }
        }
        x = x.add_scaled(&v, dt)?;
        if !x.all_finite() {
            return Err(Error::NonFinite {
                step: k,
                detail: "edit euler update".into(),
            });
        }
    }
    Ok(x)
}

pub fn edit(
    field: &dyn Velocity,
    x_start: &Tensor,
    req: &EditRequest,
    cfg: &SteeringConfig,
) -> Result<(Tensor, TrajectoryTrace)> {
    let mut trace = TrajectoryTrace::new(cfg.snapshot_stride);
    let x = edit_into(field, x_start, req, cfg, &mut trace)?;
    Ok((x, trace))
}
