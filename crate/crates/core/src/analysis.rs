//! Quantitative checks of the steering theory: error-decay fits, gradient
//! similarity along trajectories, straightness scores, integrator order,
//! and image metrics.

use crate::error::{Error, Result};
use crate::fields::Velocity;
use crate::flow::euler_sample;
use crate::guidance::steer::stepwise_gradient;
use crate::guidance::{CostFunction, SteeringConfig};
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::tensor::{cosine, Tensor};
use crate::trace::TrajectoryTrace;

pub const PSNR_CAP_DB: f64 = 99.0;
/// ln E fits exclude steps below this to keep log underflow out of the
/// regression.
pub const LN_FIT_FLOOR: f64 = 1e-12;

/// Least-squares line fit y ≈ slope·x + intercept with r².
fn line_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid("line fit needs at least 2 points"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("line fit: degenerate x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Exponential-decay fit of ln E against elapsed time.
#[derive(Debug, Clone)]
pub struct DecayFit {
    /// Slope per unit time (−4s for the ideal guided flow).
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Step range the fit used.
    pub window: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ErrorDynamics {
    pub fit: DecayFit,
    /// Elapsed time τ = t_start − t per step.
    pub elapsed: Vec<f64>,
    pub e_values: Vec<f64>,
    /// Central-difference dE/dτ at interior steps 1..n−1.
    pub de_dtau: Vec<f64>,
    /// dE/dτ + 4sE, the discrete estimate of the coupling term 2eᵀε.
    pub residual: Vec<f64>,
}

impl ErrorDynamics {
    pub fn residual_rms(&self) -> f64 {
        let n = self.residual.len().max(1);
        (self.residual.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt()
    }

    pub fn mean_abs_de_dtau(&self) -> f64 {
        let n = self.de_dtau.len().max(1);
        self.de_dtau.iter().map(|d| d.abs()).sum::<f64>() / n as f64
    }
}

/// Fit the error-decay law on a steering trace. The trace must carry E(t)
/// at every step (a residual-style cost); `s` is the continuous guidance
/// strength the run realized.
pub fn error_dynamics(
    trace: &TrajectoryTrace,
    s: f64,
    window: Option<(usize, usize)>,
) -> Result<ErrorDynamics> {
    let n = trace.steps.len();
    if n < 4 {
        return Err(Error::invalid(format!(
            "error dynamics needs at least 4 steps, got {n}"
        )));
    }
    let e: Vec<f64> = trace
        .error_series()
        .ok_or_else(|| Error::invalid("trace lacks E(t); steer with a residual cost"))?;
    let t0 = trace.steps[0].t;
    let tau: Vec<f64> = trace.steps.iter().map(|st| t0 - st.t).collect();

    let mut de = Vec::with_capacity(n.saturating_sub(2));
    let mut residual = Vec::with_capacity(n.saturating_sub(2));
    for k in 1..n - 1 {
        let d = (e[k + 1] - e[k - 1]) / (tau[k + 1] - tau[k - 1]);
        de.push(d);
        residual.push(d + 4.0 * s * e[k]);
    }

    let (lo, hi) = window.unwrap_or((0, n));
    if lo >= hi || hi > n {
        return Err(Error::invalid(format!(
            "bad fit window ({lo}, {hi}) for {n} steps"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in lo..hi {
        if e[k] >= LN_FIT_FLOOR {
            xs.push(tau[k]);
            ys.push(e[k].ln());
        }
    }
    let (slope, intercept, r2) = line_fit(&xs, &ys)?;
    Ok(ErrorDynamics {
        fit: DecayFit {
            slope,
            intercept,
            r2,
            window: (lo, hi),
        },
        elapsed: tau,
        e_values: e,
        de_dtau: de,
        residual,
    })
}

#[derive(Debug, Clone)]
pub struct GradientSimilarityReport {
    pub ts: Vec<f64>,
    /// Per-step cosine between ∇_{x_t}L and ∇_{x̂0}L; missing on
    /// zero-gradient steps.
    pub cosines: Vec<Option<f64>>,
    /// ‖t·Jᵀ∇_{x̂0}L‖ / ‖∇_{x̂0}L‖, computed exactly as
    /// ‖∇_{x_t}L − ∇_{x̂0}L‖ / ‖∇_{x̂0}L‖ via the chain rule.
    pub corrections: Vec<Option<f64>>,
}

impl GradientSimilarityReport {
    pub fn mean_cosine(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let vals: Vec<f64> = self.cosines[range].iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Walk a flowchef-style trajectory and compare the true gradient
/// ∇_{x_t}L (reverse mode through the field) against the skip gradient
/// ∇_{x̂0}L at every outer step. With cfg.scale = 0 this analyses the
/// unguided trajectory; otherwise the trajectory is steered exactly as
/// `steer` would.
pub fn gradient_similarity(
    field: &dyn Velocity,
    x_start: &Tensor,
    cost: &CostFunction,
    cfg: &SteeringConfig,
    label: Option<usize>,
) -> Result<GradientSimilarityReport> {
    cfg.validate()?;
    let steps = cfg.nfe;
    let dt = 1.0 / steps as f64;
    let mut x = x_start.clone();
    let mut ts = Vec::with_capacity(steps);
    let mut cosines = Vec::with_capacity(steps);
    let mut corrections = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = (steps - k) as f64 / steps as f64;
        let (_, g_xt, x_hat0) = stepwise_gradient(field, &x, t, cost, label)?;
        let (_, g_hat) = cost.evaluate(&x_hat0)?;
        ts.push(t);
        cosines.push(cosine(&g_xt, &g_hat)?);
        let denom = g_hat.norm();
        if denom == 0.0 {
            corrections.push(None);
        } else {
            corrections.push(Some(g_xt.sub(&g_hat)?.norm() / denom));
        }

        let v = field.eval(&x, t, label)?;
        if cfg.scale > 0.0 && cfg.inner_steps > 0 {
            let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
            for n in 0..cfg.inner_steps {
                let xh = x.add_scaled(&v, t)?;
                let grad = if n == 0 {
                    g_hat.clone()
                } else {
                    cost.evaluate(&xh)?.1
                };
                let dir = grad.scaled(cfg.scale / grad.len() as f64);
                opt.step_single(&mut x, &dir)?;
            }
        }
        x = x.add_scaled(&v, dt)?;
        if !x.all_finite() {
            return Err(Error::NonFinite {
                step: k,
                detail: "gradient similarity trajectory".into(),
            });
        }
    }
    Ok(GradientSimilarityReport {
        ts,
        cosines,
        corrections,
    })
}

/// Mean-squared deviation (per dimension) between per-step velocities and
/// the realized chord x_0 − x_T, averaged over chains. Exactly 0 for fields
/// constant along their trajectories.
pub fn straightness(
    field: &dyn Velocity,
    rng: &mut Rng,
    chains: usize,
    steps: usize,
    label: Option<usize>,
) -> Result<f64> {
    if chains == 0 || steps == 0 {
        return Err(Error::invalid("straightness needs chains ≥ 1 and steps ≥ 1"));
    }
    let d = field.dim();
    let dt = 1.0 / steps as f64;
    let mut total = 0.0;
    for _ in 0..chains {
        let x1 = rng.gaussian(&[d]);
        let mut x = x1.clone();
        let mut velocities = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = (steps - k) as f64 / steps as f64;
            let v = field.eval(&x, t, label)?;
            x = x.add_scaled(&v, dt)?;
            velocities.push(v);
        }
        let chord = x.sub(&x1)?;
        let mut dev = 0.0;
        for v in &velocities {
            dev += v.sub(&chord)?.norm_sq() / d as f64;
        }
        total += dev / steps as f64;
    }
    Ok(total / chains as f64)
}

/// Outcome of the integrator-order fit.
#[derive(Debug, Clone)]
pub enum ConvergenceOrder {
    /// Errors at machine epsilon (Euler is exact on this field), so no
    /// slope can be fit.
    Exact,
    Slope { slope: f64, intercept: f64 },
}

/// Log-log slope of the endpoint error against Δt over step counts
/// {T, 2T, 4T, 8T}, with a 16x-finer-than-finest reference solution (128T).
/// A coarser reference would contaminate the finest-grid error and bias the
/// fitted slope upward. Errors are taken relative to the reference norm, so
/// the fitted intercept is the relative error constant (stiffer fields get
/// larger intercepts at the same slope).
pub fn convergence_order(
    field: &dyn Velocity,
    x_start: &Tensor,
    base_steps: usize,
    label: Option<usize>,
) -> Result<ConvergenceOrder> {
    if base_steps == 0 {
        return Err(Error::invalid("convergence_order needs base_steps ≥ 1"));
    }
    let (reference, _) = euler_sample(field, x_start, base_steps * 128, label)?;
    if !reference.all_finite() {
        return Err(Error::NonFinite {
            step: base_steps * 128,
            detail: "reference solution".into(),
        });
    }
    let ref_norm = reference.norm();
    let scale = 1.0 + ref_norm;
    let denom = if ref_norm > 0.0 { ref_norm } else { 1.0 };
    let mut ln_dt = Vec::new();
    let mut ln_err = Vec::new();
    let mut all_exact = true;
    for m in [1usize, 2, 4, 8] {
        let steps = base_steps * m;
        let (endpoint, _) = euler_sample(field, x_start, steps, label)?;
        let err = endpoint.sub(&reference)?.norm();
        if err > 1e-12 * scale {
            all_exact = false;
        }
        if err > 0.0 {
            ln_dt.push((1.0 / steps as f64).ln());
            ln_err.push((err / denom).ln());
        }
    }
    if all_exact {
        return Ok(ConvergenceOrder::Exact);
    }
    let (slope, intercept, _) = line_fit(&ln_dt, &ln_err)?;
    Ok(ConvergenceOrder::Slope { slope, intercept })
}

/// Peak signal-to-noise ratio in dB; identical images report the cap.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if peak <= 0.0 {
        return Err(Error::invalid("psnr peak must be positive"));
    }
    let mse = a.sub(b)?.norm_sq() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean local SSIM with a 7×7 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1.0. Valid windows only, so images must be at
/// least 7×7.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    const WIN: usize = 7;
    const SIGMA: f64 = 1.5;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    const L: f64 = 1.0;
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (h, w) = a.dims2("ssim")?;
    if h < WIN || w < WIN {
        return Err(Error::invalid(format!(
            "ssim needs images of side ≥ {WIN}, got {h}x{w}"
        )));
    }
    // normalized Gaussian window
    let mut win = [0.0f64; WIN * WIN];
    let c = (WIN / 2) as f64;
    let mut total = 0.0;
    for y in 0..WIN {
        for x in 0..WIN {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            win[y * WIN + x] = v;
            total += v;
        }
    }
    for v in &mut win {
        *v /= total;
    }

    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - WIN {
        for ox in 0..=w - WIN {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for y in 0..WIN {
                for x in 0..WIN {
                    let wgt = win[y * WIN + x];
                    let va = a.data()[(oy + y) * w + (ox + x)];
                    let vb = b.data()[(oy + y) * w + (ox + x)];
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            acc += score;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Per-image PSNR/SSIM with aggregate means.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, reference: &Tensor, candidate: &Tensor) -> Result<()> {
        self.psnr.push(psnr(candidate, reference, 1.0)?);
        self.ssim.push(ssim(candidate, reference)?);
        Ok(())
    }

    pub fn psnr_mean(&self) -> f64 {
        if self.psnr.is_empty() {
            0.0
        } else {
            self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
        }
    }

    pub fn ssim_mean(&self) -> f64 {
        if self.ssim.is_empty() {
            0.0
        } else {
            self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, ConstantField, ContractionField};
    use crate::guidance::steer::steer;
    use crate::guidance::SteerMode;
    use crate::optim::OptimizerKind;

    /// Steer the exact single-pair flow so that the realized per-step
    /// coefficient on ∇L equals s·Δt (the continuous-limit regime).
    fn straight_decay_trace(s: f64, steps: usize, seed: u64) -> TrajectoryTrace {
        let mut rng = Rng::new(seed);
        let d = 2;
        let x0_ref = rng.gaussian(&[d]);
        let x1 = rng.gaussian(&[d]);
        let field = ConstantField::from_pair(&x0_ref, &x1).unwrap();
        let cost = CostFunction::mse_to_target(x0_ref);
        let start = rng.gaussian(&[d]);
        let cfg = SteeringConfig {
            mode: SteerMode::FlowChef,
            nfe: steps,
            inner_steps: 1,
            scale: s * (d as f64) / steps as f64,
            lr: 1.0,
            optimizer: OptimizerKind::Sgd,
            min_t: steps,
            ..Default::default()
        };
        let (_, trace) = steer(&field, &start, &cost, &cfg, None).unwrap();
        trace
    }

    #[test]
    fn decay_slope_matches_minus_4s_on_straight_flow() {
        for &s in &[0.05f64, 0.1] {
            let trace = straight_decay_trace(s, 2000, 11);
            let dyn_ = error_dynamics(&trace, s, None).unwrap();
            let rel = (dyn_.fit.slope + 4.0 * s).abs() / (4.0 * s);
            assert!(rel < 0.05, "s={s}: slope {} rel err {rel}", dyn_.fit.slope);
            assert!(dyn_.fit.r2 > 0.999, "r2 {}", dyn_.fit.r2);
            let rms = dyn_.residual_rms();
            let scale = dyn_.mean_abs_de_dtau();
            assert!(rms < 0.05 * scale, "residual rms {rms} vs {scale}");
        }
    }

    #[test]
    fn zero_guidance_keeps_e_constant_on_straight_flow() {
        let trace = straight_decay_trace(0.0, 50, 3);
        let e = trace.error_series().unwrap();
        for v in &e {
            assert!((v - e[0]).abs() < 1e-10, "E drifted: {v} vs {}", e[0]);
        }
    }

    #[test]
    fn rotational_perturbation_inflates_residual() {
        let s = 0.1;
        let steps = 400;
        let mut rng = Rng::new(5);
        let x0_ref = rng.gaussian(&[2]);
        let x1 = rng.gaussian(&[2]);
        let start = rng.gaussian(&[2]);
        let cost = CostFunction::mse_to_target(x0_ref.clone());
        let cfg = SteeringConfig {
            nfe: steps,
            inner_steps: 1,
            scale: s * 2.0 / steps as f64,
            lr: 1.0,
            min_t: steps,
            ..Default::default()
        };
        let straight = ConstantField::from_pair(&x0_ref, &x1).unwrap();
        let (_, tr_straight) = steer(&straight, &start, &cost, &cfg, None).unwrap();
        let drift = x0_ref.sub(&x1).unwrap();
        let curved = AffineField::rotation_perturbed(&drift, 1.0, &x0_ref).unwrap();
        let (_, tr_curved) = steer(&curved, &start, &cost, &cfg, None).unwrap();
        let rms_straight = error_dynamics(&tr_straight, s, None).unwrap().residual_rms();
        let rms_curved = error_dynamics(&tr_curved, s, None).unwrap().residual_rms();
        assert!(
            rms_curved > rms_straight,
            "curved {rms_curved} <= straight {rms_straight}"
        );
    }

    #[test]
    fn error_dynamics_rejects_short_traces() {
        let trace = straight_decay_trace(0.1, 3, 1);
        assert!(error_dynamics(&trace, 0.1, None).is_err());
    }

    #[test]
    fn gradient_similarity_is_exact_on_affine_fields() {
        // closed form vs autodiff cosine, every grid time
        let mut rng = Rng::new(6);
        let d = 3;
        let a = rng.gaussian(&[d, d]).scaled(0.4);
        let field = AffineField::new(a.clone(), rng.gaussian(&[d])).unwrap();
        let target = rng.gaussian(&[d]);
        let cost = CostFunction::mse_to_target(target.clone());
        let x_start = rng.gaussian(&[d]);
        let cfg = SteeringConfig {
            nfe: 10,
            scale: 0.0,
            ..Default::default()
        };
        let report = gradient_similarity(&field, &x_start, &cost, &cfg, None).unwrap();

        // replay the unguided trajectory and check each step's cosine
        // against the (I + tA)ᵀ closed form
        let mut x = x_start.clone();
        for (k, t) in report.ts.iter().enumerate() {
            let v = field.eval(&x, *t, None).unwrap();
            let x_hat0 = x.add_scaled(&v, *t).unwrap();
            let g_hat = x_hat0.sub(&target).unwrap().scaled(2.0);
            let ate = crate::tensor::matmul(
                &a.transposed().unwrap(),
                &g_hat.reshaped(&[d, 1]).unwrap(),
            )
            .unwrap()
            .reshaped(&[d])
            .unwrap();
            let g_xt = g_hat.add_scaled(&ate, *t).unwrap();
            let expect = cosine(&g_xt, &g_hat).unwrap().unwrap();
            let got = report.cosines[k].unwrap();
            assert!((got - expect).abs() < 1e-8, "step {k}: {got} vs {expect}");
            x = x.add_scaled(&v, 1.0 / 10.0).unwrap();
        }
    }

    #[test]
    fn gradient_similarity_records_missing_on_zero_gradient() {
        let field = ConstantField::zero(2);
        let x = Tensor::zeros(&[2]);
        // x̂0 is exactly the target along the whole path: zero gradients
        let cost = CostFunction::mse_to_target(Tensor::zeros(&[2]));
        let cfg = SteeringConfig {
            nfe: 4,
            scale: 0.0,
            ..Default::default()
        };
        let report = gradient_similarity(&field, &x, &cost, &cfg, None).unwrap();
        assert!(report.cosines.iter().all(|c| c.is_none()));
    }

    #[test]
    fn cosine_is_one_at_t_zero() {
        let mut rng = Rng::new(7);
        let d = 3;
        let field =
            AffineField::new(rng.gaussian(&[d, d]), rng.gaussian(&[d])).unwrap();
        let cost = CostFunction::mse_to_target(rng.gaussian(&[d]));
        let x = rng.gaussian(&[d]);
        let (_, g_xt, x_hat0) = stepwise_gradient(&field, &x, 0.0, &cost, None).unwrap();
        let (_, g_hat) = cost.evaluate(&x_hat0).unwrap();
        assert_eq!(g_xt, g_hat);
        assert_eq!(x_hat0, x);
    }

    #[test]
    fn straightness_zero_for_constant_field() {
        let mut rng = Rng::new(8);
        let field = ConstantField::new(Tensor::from_vec(vec![1.0, -0.5]));
        let score = straightness(&field, &mut rng, 4, 16, None).unwrap();
        assert!(score < 1e-16, "score {score}");
    }

    #[test]
    fn straightness_positive_for_contraction() {
        let mut rng = Rng::new(9);
        let field = ContractionField { dim: 2, rate: 1.0 };
        let score = straightness(&field, &mut rng, 4, 16, None).unwrap();
        assert!(score > 1e-3, "score {score}");
    }

    #[test]
    fn convergence_order_exact_on_constant_field() {
        let field = ConstantField::new(Tensor::from_vec(vec![0.3, 0.7]));
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        match convergence_order(&field, &x, 8, None).unwrap() {
            ConvergenceOrder::Exact => {}
            ConvergenceOrder::Slope { slope, .. } => panic!("expected exact, got slope {slope}"),
        }
    }

    #[test]
    fn convergence_order_is_first_order_on_contraction() {
        let x = Tensor::from_vec(vec![1.0, -2.0]);
        let gentle = ContractionField { dim: 2, rate: 1.0 };
        let stiff = ContractionField { dim: 2, rate: 5.0 };
        let (s1, i1) = match convergence_order(&gentle, &x, 16, None).unwrap() {
            ConvergenceOrder::Slope { slope, intercept } => (slope, intercept),
            ConvergenceOrder::Exact => panic!("unexpected exact"),
        };
        let (s2, i2) = match convergence_order(&stiff, &x, 16, None).unwrap() {
            ConvergenceOrder::Slope { slope, intercept } => (slope, intercept),
            ConvergenceOrder::Exact => panic!("unexpected exact"),
        };
        assert!((0.85..=1.15).contains(&s1), "slope {s1}");
        assert!((0.85..=1.15).contains(&s2), "slope {s2}");
        // stiffer field, larger error constant
        assert!(i2 > i1, "intercepts {i1} vs {i2}");
    }

    #[test]
    fn psnr_basics() {
        let a = Tensor::full(&[4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v += 0.1;
        }
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "psnr {p}");
        assert_eq!(p, psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        let mut rng = Rng::new(10);
        let img = Tensor::full(&[8, 8], 0.5);
        let noise = rng.gaussian(&[8, 8]);
        let mut prev = f64::INFINITY;
        for &sigma in &[0.01, 0.05, 0.1] {
            let noisy = img.add_scaled(&noise, sigma).unwrap();
            let p = psnr(&img, &noisy, 1.0).unwrap();
            assert!(p < prev, "psnr not decreasing: {p} vs {prev}");
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_and_noise() {
        let mut rng = Rng::new(11);
        let img = rng.gaussian(&[10, 10]).map(|v| 0.5 + 0.1 * v);
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ssim(x,x) = {s}");
        let tiny = img.add_scaled(&rng.gaussian(&[10, 10]), 1e-4).unwrap();
        assert!(ssim(&img, &tiny).unwrap() > 0.99);
    }

    #[test]
    fn ssim_negative_image_scores_low() {
        let mut rng = Rng::new(12);
        let shape = crate::dataset::render_shape(1, &mut rng);
        let neg = shape.map(|v| 1.0 - v);
        let s = ssim(&shape, &neg).unwrap();
        assert!(s < 0.5, "ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(&[5, 5]);
        assert!(ssim(&a, &a).is_err());
    }
}
