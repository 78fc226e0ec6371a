//! Per-step trajectory records and compute counters shared by sampling,
//! steering, and analysis.

use crate::tensor::Tensor;

/// One sampling/steering step (or one outer optimization iteration for the
/// full-chain mode).
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    /// State snapshot, kept only on the configured stride.
    pub x_t: Option<Tensor>,
    pub x_hat0: Tensor,
    pub cost: Option<f64>,
    /// E(t) = eᵀe for residual-style costs; equals `cost` for mse-to-target.
    pub error_sq: Option<f64>,
    /// Cosine between ∇_{x_t}L and ∇_{x̂0}L when both were computed.
    pub grad_cosine: Option<f64>,
    pub forward_evals: u64,
    pub backward_evals: u64,
    pub stored_states: u64,
}

/// Trajectory log with cumulative compute counters.
///
/// Counter semantics: `forward_evals` counts velocity-field evaluations
/// (NFEs), `backward_evals` counts reverse passes through one velocity-field
/// evaluation, and `stored_states` is the peak number of trajectory states
/// retained at once for a gradient or update computation (1 plain sampling,
/// 2 for gradient-skipping and stepwise backprop, chain length + 1 for
/// full-chain backprop).
#[derive(Debug, Clone)]
pub struct TrajectoryTrace {
    pub steps: Vec<StepRecord>,
    pub forward_evals: u64,
    pub backward_evals: u64,
    pub stored_states_peak: u64,
    pub snapshot_stride: usize,
}

impl TrajectoryTrace {
    pub fn new(snapshot_stride: usize) -> Self {
        TrajectoryTrace {
            steps: Vec::new(),
            forward_evals: 0,
            backward_evals: 0,
            stored_states_peak: 0,
            snapshot_stride,
        }
    }

    pub fn bump_forward(&mut self, n: u64) {
        self.forward_evals += n;
    }

    pub fn bump_backward(&mut self, n: u64) {
        self.backward_evals += n;
    }

    pub fn note_stored(&mut self, n: u64) {
        self.stored_states_peak = self.stored_states_peak.max(n);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        step: usize,
        t: f64,
        x_t: &Tensor,
        x_hat0: Tensor,
        cost: Option<f64>,
        error_sq: Option<f64>,
        grad_cosine: Option<f64>,
    ) {
        let snap = if self.snapshot_stride > 0 && step % self.snapshot_stride == 0 {
            Some(x_t.clone())
        } else {
            None
        };
        self.steps.push(StepRecord {
            step,
            t,
            x_t: snap,
            x_hat0,
            cost,
            error_sq,
            grad_cosine,
            forward_evals: self.forward_evals,
            backward_evals: self.backward_evals,
            stored_states: self.stored_states_peak,
        });
    }

    /// E(t) series; `None` if any step lacks it.
    pub fn error_series(&self) -> Option<Vec<f64>> {
        self.steps.iter().map(|s| s.error_sq).collect()
    }
}
