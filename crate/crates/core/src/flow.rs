//! Rectified-flow velocity fields: the MLP model, flow-matching training,
//! Euler sampling, and reflow.
//!
//! # Flow convention
//!
//! One convention is used everywhere, and the checkpoint format carries its
//! tag so mismatched models are rejected at load time:
//!
//! * t ∈ [0, 1]; t = 1 is pure noise, t = 0 is data.
//! * Forward interpolation: x_t = (1−t)·x0 + t·x1.
//! * The model u(x_t, t, c) is trained toward the target (x0 − x1), so the
//!   one-shot estimate is x̂0 = x_t + t·u and the Euler step toward data is
//!   x_{t−Δt} = x_t + Δt·u.
//!
//! Under this convention the constant field u = x0* − x1* reproduces x0*
//! exactly from any point of the segment, which is what the straightness
//! theory assumes.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fields::Velocity;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trace::TrajectoryTrace;

/// Convention tag embedded in checkpoints.
pub const CONVENTION_TAG: &str = "t1-noise,x0-data,target=x0-x1";

pub const TIME_FEATURES_DEFAULT: usize = 8;
pub const HIDDEN_DEFAULT: &[usize] = &[256, 256];

/// Sinusoidal embedding of t: pairs (sin ω_k t, cos ω_k t), ω_k = π·2^k.
pub fn time_features(t: f64, count: usize) -> Tensor {
    let pairs = count / 2;
    let mut data = Vec::with_capacity(count);
    for k in 0..pairs {
        let omega = std::f64::consts::PI * (1u64 << k) as f64;
        data.push((omega * t).sin());
        data.push((omega * t).cos());
    }
    Tensor::from_vec(data)
}

/// Class conditioning: a learned table row per label, projected into the
/// first hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondSpec {
    pub classes: usize,
    pub dim: usize,
}

/// MLP velocity field u(x, t, c).
///
/// The first layer consumes the concatenation [x, time-features, condition
/// embedding] as three weight blocks (`wx`, `wt`, `wc`), which is the same
/// linear map with the blocks stored separately.
#[derive(Debug, Clone)]
pub struct VelocityField {
    data_dim: usize,
    time_feature_count: usize,
    hidden: Vec<usize>,
    cond: Option<CondSpec>,
    wx: Tensor,
    wt: Tensor,
    wc: Option<Tensor>,
    cond_table: Option<Tensor>,
    b1: Tensor,
    mids: Vec<(Tensor, Tensor)>,
    w_out: Tensor,
    b_out: Tensor,
}

/// Tape handles for the model parameters, in `params()` order.
pub struct TapedParams {
    vars: Vec<Var>,
}

impl VelocityField {
    pub fn new(
        data_dim: usize,
        time_feature_count: usize,
        hidden: &[usize],
        cond: Option<CondSpec>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self::validated_skeleton(data_dim, time_feature_count, hidden, cond)?;
        let init = |rng: &mut Rng, rows: usize, cols: usize| -> Tensor {
            rng.gaussian(&[rows, cols]).scaled(1.0 / (rows as f64).sqrt())
        };
        let h1 = hidden[0];
        model.wx = init(rng, data_dim, h1);
        model.wt = init(rng, time_feature_count, h1);
        if let Some(c) = cond {
            model.wc = Some(init(rng, c.dim, h1));
            model.cond_table = Some(rng.gaussian(&[c.classes, c.dim]));
        }
        for i in 0..hidden.len() - 1 {
            model.mids[i].0 = init(rng, hidden[i], hidden[i + 1]);
        }
        model.w_out = init(rng, *hidden.last().unwrap(), data_dim);
        Ok(model)
    }

    /// All-zero parameters: u ≡ 0 (the identity flow), used by smoke runs.
    pub fn zeros(
        data_dim: usize,
        time_feature_count: usize,
        hidden: &[usize],
        cond: Option<CondSpec>,
    ) -> Result<Self> {
        Self::validated_skeleton(data_dim, time_feature_count, hidden, cond)
    }

    fn validated_skeleton(
        data_dim: usize,
        time_feature_count: usize,
        hidden: &[usize],
        cond: Option<CondSpec>,
    ) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("data_dim must be positive"));
        }
        if time_feature_count == 0 || time_feature_count % 2 != 0 {
            return Err(Error::invalid(format!(
                "time feature count must be even and positive, got {time_feature_count}"
            )));
        }
        if hidden.is_empty() {
            return Err(Error::invalid("at least one hidden layer is required"));
        }
        if let Some(c) = cond {
            if c.classes < 1 || c.dim == 0 {
                return Err(Error::invalid("conditional spec needs classes ≥ 1 and dim ≥ 1"));
            }
        }
        let h1 = hidden[0];
        let mids = (0..hidden.len() - 1)
            .map(|i| (Tensor::zeros(&[hidden[i], hidden[i + 1]]), Tensor::zeros(&[hidden[i + 1]])))
            .collect();
        Ok(VelocityField {
            data_dim,
            time_feature_count,
            hidden: hidden.to_vec(),
            cond,
            wx: Tensor::zeros(&[data_dim, h1]),
            wt: Tensor::zeros(&[time_feature_count, h1]),
            wc: cond.map(|c| Tensor::zeros(&[c.dim, h1])),
            cond_table: cond.map(|c| Tensor::zeros(&[c.classes, c.dim])),
            b1: Tensor::zeros(&[h1]),
            mids,
            w_out: Tensor::zeros(&[*hidden.last().unwrap(), data_dim]),
            b_out: Tensor::zeros(&[data_dim]),
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn time_feature_count(&self) -> usize {
        self.time_feature_count
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn cond(&self) -> Option<CondSpec> {
        self.cond
    }

    /// Parameter tensors in a fixed order (checkpoints and the optimizer
    /// rely on it).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.wx, &self.wt];
        if let Some(wc) = &self.wc {
            out.push(wc);
        }
        if let Some(tb) = &self.cond_table {
            out.push(tb);
        }
        out.push(&self.b1);
        for (w, b) in &self.mids {
            out.push(w);
            out.push(b);
        }
        out.push(&self.w_out);
        out.push(&self.b_out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.wx, &mut self.wt];
        if let Some(wc) = &mut self.wc {
            out.push(wc);
        }
        if let Some(tb) = &mut self.cond_table {
            out.push(tb);
        }
        out.push(&mut self.b1);
        for (w, b) in &mut self.mids {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    pub fn all_params_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    /// Record the parameters on a tape; `requires_grad` is true while
    /// training, false while steering.
    pub fn push_params(&self, tape: &mut Tape, requires_grad: bool) -> TapedParams {
        let vars = self
            .params()
            .into_iter()
            .map(|p| tape.input(p.clone(), requires_grad))
            .collect();
        TapedParams { vars }
    }

    /// Batched forward pass on a tape. `x` is [B, d]; `ts` and `labels` give
    /// one time (and optionally one label) per row.
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        params: &TapedParams,
        x: Var,
        ts: &[f64],
        labels: Option<&[usize]>,
    ) -> Result<Var> {
        let (batch, d) = tape.value(x).dims2("velocity forward input")?;
        if d != self.data_dim {
            return Err(Error::invalid(format!(
                "velocity forward: input dim {d}, model dim {}",
                self.data_dim
            )));
        }
        if ts.len() != batch {
            return Err(Error::invalid(format!(
                "velocity forward: {batch} rows but {} time values",
                ts.len()
            )));
        }
        if self.cond.is_some() != labels.is_some() {
            return Err(Error::invalid(
                "conditional model requires labels (and unconditional forbids them)".to_string(),
            ));
        }
        if let Some(ls) = labels {
            if ls.len() != batch {
                return Err(Error::invalid(format!(
                    "velocity forward: {batch} rows but {} labels",
                    ls.len()
                )));
            }
        }

        let mut pv = params.vars.iter().copied();
        let wx = pv.next().unwrap();
        let wt = pv.next().unwrap();
        let (wc, table) = if self.cond.is_some() {
            (Some(pv.next().unwrap()), Some(pv.next().unwrap()))
        } else {
            (None, None)
        };
        let b1 = pv.next().unwrap();

        let mut tf = Vec::with_capacity(batch * self.time_feature_count);
        for &t in ts {
            tf.extend_from_slice(time_features(t, self.time_feature_count).data());
        }
        let tf = Tensor::new(vec![batch, self.time_feature_count], tf)?;
        let tf = tape.constant(tf);

        let mut h = tape.matmul(x, wx)?;
        let ht = tape.matmul(tf, wt)?;
        h = tape.add(h, ht)?;
        if let (Some(wc), Some(table), Some(ls)) = (wc, table, labels) {
            let emb = tape.embed_rows(table, ls)?;
            let hc = tape.matmul(emb, wc)?;
            h = tape.add(h, hc)?;
        }
        h = tape.add_row(h, b1)?;
        h = tape.silu(h)?;
        for _ in &self.mids {
            let w = pv.next().unwrap();
            let b = pv.next().unwrap();
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            h = tape.silu(h)?;
        }
        let w_out = pv.next().unwrap();
        let b_out = pv.next().unwrap();
        let out = tape.matmul(h, w_out)?;
        tape.add_row(out, b_out)
    }

    /// Plain batched forward. Runs the same kernels as the taped path, so
    /// values agree bit-for-bit.
    pub fn eval_batch(&self, x: &Tensor, ts: &[f64], labels: Option<&[usize]>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.push_params(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward_taped(&mut tape, &params, xv, ts, labels)?;
        Ok(tape.value(out).clone())
    }
}

impl Velocity for VelocityField {
    fn dim(&self) -> usize {
        self.data_dim
    }

    fn eval(&self, x: &Tensor, t: f64, label: Option<usize>) -> Result<Tensor> {
        let row = x.reshaped(&[1, self.data_dim])?;
        let labels = label.map(|l| vec![l]);
        let out = self.eval_batch(&row, &[t], labels.as_deref())?;
        out.reshaped(&[self.data_dim])
    }

    fn eval_tape(&self, tape: &mut Tape, x: Var, t: f64, label: Option<usize>) -> Result<Var> {
        let params = self.push_params(tape, false);
        let row = tape.reshape(x, &[1, self.data_dim])?;
        let labels = label.map(|l| vec![l]);
        let out = self.forward_taped(tape, &params, row, &[t], labels.as_deref())?;
        tape.reshape(out, &[self.data_dim])
    }

    fn conditional_classes(&self) -> Option<usize> {
        self.cond.map(|c| c.classes)
    }
}

/// x_t = (1−t)·x0 + t·x1 for t in [0, 1].
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation time {t} outside [0,1]")));
    }
    if x0.shape() != x1.shape() {
        return Err(Error::ShapeMismatch {
            context: "interpolate",
            left: x0.shape().to_vec(),
            right: x1.shape().to_vec(),
        });
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// One-shot clean-sample estimate x̂0 = x_t + t·u(x_t, t, c).
pub fn estimate_x0(
    field: &dyn Velocity,
    x_t: &Tensor,
    t: f64,
    label: Option<usize>,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("estimate time {t} outside [0,1]")));
    }
    let u = field.eval(x_t, t, label)?;
    x_t.add_scaled(&u, t)
}

/// Euler integration from t = 1 down to t = 0 on the uniform grid
/// t_k = (T−k)/T, recording x̂0 per step into `trace`.
pub fn euler_sample_into(
    field: &dyn Velocity,
    x_start: &Tensor,
    steps: usize,
    label: Option<usize>,
    trace: &mut TrajectoryTrace,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::invalid("euler_sample needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x_start.clone();
    trace.note_stored(1);
    for k in 0..steps {
        let t = (steps - k) as f64 / steps as f64;
        let v = field.eval(&x, t, label)?;
        trace.bump_forward(1);
        let x_hat0 = x.add_scaled(&v, t)?;
        trace.record(k, t, &x, x_hat0, None, None, None);
        x = x.add_scaled(&v, dt)?;
        if !x.all_finite() {
            return Err(Error::NonFinite {
                step: k,
                detail: "euler state became non-finite".into(),
            });
        }
    }
    Ok(x)
}

pub fn euler_sample(
    field: &dyn Velocity,
    x_start: &Tensor,
    steps: usize,
    label: Option<usize>,
) -> Result<(Tensor, TrajectoryTrace)> {
    let mut trace = TrajectoryTrace::new(0);
    let x = euler_sample_into(field, x_start, steps, label, &mut trace)?;
    Ok((x, trace))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be ≥ 1"));
        }
        Ok(())
    }
}

/// Training data: either clean samples paired with fresh prior noise each
/// step, or fixed couplings (reflow pairs).
#[derive(Debug, Clone)]
pub enum TrainData {
    Independent {
        x0: Tensor,
        labels: Option<Vec<usize>>,
    },
    Coupled {
        x0: Tensor,
        x1: Tensor,
        labels: Option<Vec<usize>>,
    },
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Independent { x0, .. } | TrainData::Coupled { x0, .. } => x0.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flow-matching loss for one batch: mean over rows of
/// ‖u(x_t, t, c) − (x0 − x1)‖².
pub fn flow_matching_loss(
    model: &VelocityField,
    tape: &mut Tape,
    params: &TapedParams,
    x0: &Tensor,
    x1: &Tensor,
    ts: &[f64],
    labels: Option<&[usize]>,
) -> Result<Var> {
    let (batch, d) = x0.dims2("flow loss batch")?;
    let mut xt = Vec::with_capacity(batch * d);
    for (row, &t) in ts.iter().enumerate() {
        for j in 0..d {
            let a = x0.data()[row * d + j];
            let b = x1.data()[row * d + j];
            xt.push((1.0 - t) * a + t * b);
        }
    }
    let xt = tape.constant(Tensor::new(vec![batch, d], xt)?);
    let target = tape.constant(x0.sub(x1)?);
    let u = model.forward_taped(tape, params, xt, ts, labels)?;
    let diff = tape.sub(u, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / batch as f64)
}

/// One optimizer update on one batch; returns the loss before the update.
/// t is drawn uniform per sample from `rng`.
pub fn train_step(
    model: &mut VelocityField,
    x0: &Tensor,
    x1: &Tensor,
    labels: Option<&[usize]>,
    rng: &mut Rng,
    opt: &mut Optimizer,
    step_index: usize,
) -> Result<f64> {
    let batch = x0.shape()[0];
    let ts: Vec<f64> = (0..batch).map(|_| rng.uniform()).collect();
    let mut tape = Tape::new();
    let params = model.push_params(&mut tape, true);
    let loss = flow_matching_loss(model, &mut tape, &params, x0, x1, &ts, labels)?;
    let loss_value = tape.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            step: step_index,
            detail: "training loss".into(),
        });
    }
    let grads = tape.backward(loss)?;
    let grad_tensors: Vec<Tensor> = params
        .vars
        .iter()
        .map(|v| grads.get_or_zero(&tape, *v))
        .collect();
    let mut param_refs = model.params_mut();
    opt.step(&mut param_refs, &grad_tensors)?;
    Ok(loss_value)
}

/// Full training loop; returns the per-step loss history.
pub fn train(
    model: &mut VelocityField,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    let d = model.data_dim;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.below(n)).collect();
        let gather = |src: &Tensor| -> Tensor {
            let mut rows = Vec::with_capacity(cfg.batch * d);
            for &i in &idx {
                rows.extend_from_slice(&src.data()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![cfg.batch, d], rows).expect("gather shape")
        };
        let (x0b, x1b, labelsb) = match data {
            TrainData::Independent { x0, labels } => {
                let x0b = gather(x0);
                let x1b = rng.gaussian(&[cfg.batch, d]);
                let lb = labels.as_ref().map(|ls| idx.iter().map(|&i| ls[i]).collect::<Vec<_>>());
                (x0b, x1b, lb)
            }
            TrainData::Coupled { x0, x1, labels } => {
                let lb = labels.as_ref().map(|ls| idx.iter().map(|&i| ls[i]).collect::<Vec<_>>());
                (gather(x0), gather(x1), lb)
            }
        };
        let loss = train_step(model, &x0b, &x1b, labelsb.as_deref(), rng, &mut opt, step)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Couple fresh prior noise with the model's own Euler outputs. Retraining
/// on these pairs straightens the flow (the "2-rectified" model).
pub fn reflow(
    field: &VelocityField,
    rng: &mut Rng,
    pair_count: usize,
    sample_steps: usize,
) -> Result<TrainData> {
    let d = field.data_dim;
    let classes = field.conditional_classes();
    let mut x0_rows = Vec::with_capacity(pair_count * d);
    let mut x1_rows = Vec::with_capacity(pair_count * d);
    let mut labels = classes.map(|_| Vec::with_capacity(pair_count));
    for _ in 0..pair_count {
        let label = classes.map(|k| rng.below(k));
        let x1 = rng.gaussian(&[d]);
        let (x0_hat, _) = euler_sample(field, &x1, sample_steps, label)?;
        x0_rows.extend_from_slice(x0_hat.data());
        x1_rows.extend_from_slice(x1.data());
        if let (Some(ls), Some(l)) = (labels.as_mut(), label) {
            ls.push(l);
        }
    }
    Ok(TrainData::Coupled {
        x0: Tensor::new(vec![pair_count, d], x0_rows)?,
        x1: Tensor::new(vec![pair_count, d], x1_rows)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ConstantField, ContractionField};

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let x0 = Tensor::from_vec(vec![0.0, 0.0]);
        let x1 = Tensor::from_vec(vec![2.0, 4.0]);
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(
            interpolate(&x0, &x1, 0.5).unwrap().data(),
            &[1.0, 2.0]
        );
        assert!(interpolate(&x0, &x1, 1.5).is_err());
    }

    #[test]
    fn interpolate_affine_in_t_on_exact_values() {
        let x0 = Tensor::from_vec(vec![2.0, -6.0, 10.0]);
        let x1 = Tensor::from_vec(vec![4.0, 8.0, -12.0]);
        let (a, b) = (0.25, 0.75);
        let mid = interpolate(&x0, &x1, (a + b) / 2.0).unwrap();
        let ia = interpolate(&x0, &x1, a).unwrap();
        let ib = interpolate(&x0, &x1, b).unwrap();
        let avg = ia.add(&ib).unwrap().scaled(0.5);
        assert_eq!(mid, avg);
    }

    #[test]
    fn euler_zero_field_is_identity() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let f = ConstantField::zero(3);
        let (out, trace) = euler_sample(&f, &x, 7, None).unwrap();
        assert_eq!(out, x);
        assert_eq!(trace.forward_evals, 7);
    }

    #[test]
    fn euler_constant_field_translates_by_drift() {
        let x = Tensor::from_vec(vec![0.5, 0.5]);
        let c = Tensor::from_vec(vec![1.0, -3.0]);
        let f = ConstantField::new(c.clone());
        let (out, _) = euler_sample(&f, &x, 16, None).unwrap();
        for i in 0..2 {
            assert!((out.data()[i] - (x.data()[i] + c.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_linear_field_matches_closed_form() {
        let x = Tensor::from_vec(vec![2.0, -1.0]);
        let f = ContractionField { dim: 2, rate: 1.0 };
        let steps = 50;
        let (out, _) = euler_sample(&f, &x, steps, None).unwrap();
        let factor = (1.0 - 1.0 / steps as f64).powi(steps as i32);
        for i in 0..2 {
            assert!((out.data()[i] - x.data()[i] * factor).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_x0_identity_at_t_zero() {
        let mut rng = Rng::new(1);
        let f = ContractionField { dim: 3, rate: 2.0 };
        let x = rng.gaussian(&[3]);
        assert_eq!(estimate_x0(&f, &x, 0.0, None).unwrap(), x);
    }

    #[test]
    fn estimate_x0_exact_on_single_pair_field() {
        let mut rng = Rng::new(2);
        let x0 = rng.gaussian(&[4]);
        let x1 = rng.gaussian(&[4]);
        let f = ConstantField::from_pair(&x0, &x1).unwrap();
        for &t in &[0.2, 0.5, 0.9, 1.0] {
            let x_t = interpolate(&x0, &x1, t).unwrap();
            let est = estimate_x0(&f, &x_t, t, None).unwrap();
            for i in 0..4 {
                assert!((est.data()[i] - x0.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ideal_predictor_has_zero_loss() {
        // constant field via a zero MLP plus the bias trick: set only b_out.
        let mut rng = Rng::new(3);
        let x0 = rng.gaussian(&[4, 2]);
        let x1 = rng.gaussian(&[4, 2]);
        // target rows differ per sample, so use a single fixed pair instead
        let x0 = {
            let row: Vec<f64> = x0.data()[0..2].to_vec();
            Tensor::new(vec![4, 2], row.repeat(4)).unwrap()
        };
        let x1 = {
            let row: Vec<f64> = x1.data()[0..2].to_vec();
            Tensor::new(vec![4, 2], row.repeat(4)).unwrap()
        };
        let mut model = VelocityField::zeros(2, 4, &[4], None).unwrap();
        let target: Vec<f64> = (0..2)
            .map(|j| x0.data()[j] - x1.data()[j])
            .collect();
        {
            let mut params = model.params_mut();
            let b_out = params.last_mut().unwrap();
            b_out.data_mut().copy_from_slice(&target);
        }
        let mut tape = Tape::new();
        let params = model.push_params(&mut tape, false);
        let ts = vec![0.1, 0.4, 0.7, 0.95];
        let loss = flow_matching_loss(&model, &mut tape, &params, &x0, &x1, &ts, None).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-24);
    }

    #[test]
    fn train_step_gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let mut model = VelocityField::new(2, 4, &[5], None, &mut rng).unwrap();
        let x0 = rng.gaussian(&[3, 2]);
        let x1 = rng.gaussian(&[3, 2]);
        let ts = vec![0.3, 0.6, 0.9];

        let loss_at = |m: &VelocityField| -> f64 {
            let mut tape = Tape::new();
            let params = m.push_params(&mut tape, false);
            let loss = flow_matching_loss(m, &mut tape, &params, &x0, &x1, &ts, None).unwrap();
            tape.value(loss).item().unwrap()
        };

        let mut tape = Tape::new();
        let params = model.push_params(&mut tape, true);
        let loss = flow_matching_loss(&model, &mut tape, &params, &x0, &x1, &ts, None).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = params
            .vars
            .iter()
            .map(|v| grads.get_or_zero(&tape, *v))
            .collect();

        let h = 1e-5;
        for (pi, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let orig = model.params()[pi].data()[i];
                model.params_mut()[pi].data_mut()[i] = orig + h;
                let fp = loss_at(&model);
                model.params_mut()[pi].data_mut()[i] = orig - h;
                let fm = loss_at(&model);
                model.params_mut()[pi].data_mut()[i] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let err = (g.data()[i] - numeric).abs() / numeric.abs().max(1.0);
                assert!(err < 1e-5, "param {pi} coord {i}: err {err}");
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_gauss_mix() {
        let mut rng = Rng::new(7);
        let data = crate::dataset::generate(
            &crate::dataset::DatasetSpec::GaussMix2d {
                modes: 8,
                radius: 4.0,
                sigma: 0.3,
            },
            2048,
            &mut rng,
        )
        .unwrap();
        let mut model = VelocityField::new(2, 8, &[64, 64], None, &mut rng).unwrap();
        let cfg = TrainConfig {
            steps: 500,
            batch: 128,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 7,
        };
        let losses = train(
            &mut model,
            &TrainData::Independent {
                x0: data.data.clone(),
                labels: None,
            },
            &cfg,
            &mut rng,
        )
        .unwrap();
        let head: f64 = losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "loss did not trend down: {head} -> {tail}");
        assert!(model.all_params_finite());
    }

    #[test]
    fn reflow_zero_pairs_is_empty() {
        let mut rng = Rng::new(8);
        let model = VelocityField::new(2, 4, &[8], None, &mut rng).unwrap();
        let pairs = reflow(&model, &mut rng, 0, 4).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn plain_and_taped_model_eval_agree_bitwise() {
        let mut rng = Rng::new(9);
        let model = VelocityField::new(3, 4, &[6, 6], None, &mut rng).unwrap();
        let x = rng.gaussian(&[3]);
        let plain = model.eval(&x, 0.37, None).unwrap();
        let mut tape = Tape::new();
        let xv = tape.input(x.clone(), true);
        let out = model.eval_tape(&mut tape, xv, 0.37, None).unwrap();
        assert_eq!(&plain, tape.value(out));
    }
}
