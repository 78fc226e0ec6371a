//! Theory experiments: gradient-relationship exactness, error-decay rate,
//! curved-vs-straight contrast, integrator order, and straightness scores.

use std::path::Path;

use flowsteer_core::analysis::{
    convergence_order, error_dynamics, straightness, ConvergenceOrder,
};
use flowsteer_core::fields::{AffineField, ConstantField, ContractionField, Velocity};
use flowsteer_core::guidance::{steer, stepwise_gradient, CostFunction, SteeringConfig};
use flowsteer_core::io::checkpoint;
use flowsteer_core::optim::OptimizerKind;
use flowsteer_core::tensor::{cosine, matmul, Tensor};

use crate::config::ConfigError;
use crate::output::AResult;
use crate::runner::RunContext;

pub fn run(ctx: &mut RunContext) -> AResult<()> {
    match ctx.cfg.theory_kind.as_str() {
        "lemma-affine" => lemma_affine(ctx),
        "prop41-decay" => prop41_decay(ctx),
        "curved-contrast" => curved_contrast(ctx),
        "convergence-order" => order_check(ctx),
        "straightness" => straightness_check(ctx),
        other => Err(ConfigError::BadValue {
            key: "theory.kind".into(),
            detail: format!(
                "'{other}' is not lemma-affine|prop41-decay|curved-contrast|convergence-order|straightness"
            ),
        }
        .into()),
    }
}

/// Autodiff ∇_{x_t}L against the closed form (I + t·A)ᵀ∇_{x̂0}L on random
/// affine fields.
fn lemma_affine(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let d = cfg.theory_dim;
    let mut rows = String::from("field,t,cosine,max_rel_err\n");
    let mut worst_rel = 0.0f64;
    let mut worst_cos = 1.0f64;
    let root = ctx.root_rng();
    for f in 0..cfg.theory_fields {
        let mut rng = root.child(7).child(f as u64);
        let a = rng.gaussian(&[d, d]).scaled(0.5 / (d as f64).sqrt());
        let b = rng.gaussian(&[d]);
        let field = AffineField::new(a.clone(), b)?;
        let target = rng.gaussian(&[d]);
        let cost = CostFunction::mse_to_target(target.clone());
        let x = rng.gaussian(&[d]);
        let at = a.transposed()?;
        for g in 0..cfg.theory_grid {
            let t = (g + 1) as f64 / cfg.theory_grid as f64;
            let (_, auto_grad, x_hat0) = stepwise_gradient(&field, &x, t, &cost, None)?;
            let g_hat = x_hat0.sub(&target)?.scaled(2.0);
            let correction = matmul(&at, &g_hat.reshaped(&[d, 1])?)?.reshaped(&[d])?;
            let closed = g_hat.add_scaled(&correction, t)?;
            let mut rel = 0.0f64;
            for i in 0..d {
                let denom = closed.data()[i].abs().max(1e-12);
                rel = rel.max((auto_grad.data()[i] - closed.data()[i]).abs() / denom);
            }
            let cos = cosine(&auto_grad, &closed)?.unwrap_or(1.0);
            worst_rel = worst_rel.max(rel);
            worst_cos = worst_cos.min(cos);
            rows.push_str(&format!("{f},{t},{cos},{rel}\n"));
        }
    }
    ctx.write_text("lemma.csv", &rows)?;
    ctx.metric("max_rel_err", worst_rel);
    ctx.metric("min_cosine", worst_cos);
    Ok(())
}

/// Decay-rate fit on the exact straight single-pair flow, one run per
/// configured guidance strength. The discrete inner step is s·Δt so the
/// run sits in the continuous-limit regime the decay law describes.
fn prop41_decay(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let d = cfg.theory_dim.max(1);
    let steps = cfg.theory_nfe;
    for (i, &s) in cfg.theory_s.iter().enumerate() {
        let mut rng = ctx.root_rng().child(7).child(i as u64);
        let x0_ref = rng.gaussian(&[d]);
        let x1 = rng.gaussian(&[d]);
        let field = ConstantField::from_pair(&x0_ref, &x1)?;
        let cost = CostFunction::mse_to_target(x0_ref.clone());
        let start = rng.gaussian(&[d]);
        let steering = SteeringConfig {
            nfe: steps,
            inner_steps: 1,
            scale: s * d as f64 / steps as f64,
            lr: 1.0,
            optimizer: OptimizerKind::Sgd,
            min_t: steps,
            ..Default::default()
        };
        let (_, trace) = steer(&field, &start, &cost, &steering, None)?;
        ctx.counters.absorb(&trace);
        let dynamics = error_dynamics(&trace, s, None)?;
        let mut rows = String::from("step,t,tau,E,de_dtau,residual\n");
        for (k, st) in trace.steps.iter().enumerate() {
            let (de, res) = if k >= 1 && k + 1 < trace.steps.len() {
                (
                    Some(dynamics.de_dtau[k - 1]),
                    Some(dynamics.residual[k - 1]),
                )
            } else {
                (None, None)
            };
            rows.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                st.t,
                dynamics.elapsed[k],
                dynamics.e_values[k],
                crate::output::csv_f64(de),
                crate::output::csv_f64(res),
            ));
        }
        ctx.write_text(&format!("decay-s{s}.csv"), &rows)?;
        let rel = (dynamics.fit.slope + 4.0 * s).abs() / (4.0 * s);
        ctx.metric(&format!("slope_s{s}"), dynamics.fit.slope);
        ctx.metric(&format!("slope_rel_err_s{s}"), rel);
        ctx.metric(&format!("r2_s{s}"), dynamics.fit.r2);
        let ratio = dynamics.residual_rms() / dynamics.mean_abs_de_dtau().max(1e-300);
        ctx.metric(&format!("residual_ratio_s{s}"), ratio);
    }
    Ok(())
}

/// Final squared error of identically budgeted skip-grad runs on a straight
/// field versus its rotation-perturbed counterpart, per seed.
fn curved_contrast(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    if cfg.theory_dim != 2 {
        return Err(ConfigError::BadValue {
            key: "theory.dim".into(),
            detail: "curved-contrast is a 2-D experiment".into(),
        }
        .into());
    }
    let steps = cfg.theory_nfe;
    let steering = SteeringConfig {
        nfe: steps,
        inner_steps: cfg.steer_inner.max(1),
        scale: cfg.steer_scale,
        lr: cfg.steer_lr,
        optimizer: cfg.steer_optimizer,
        min_t: steps,
        ..Default::default()
    };
    let mut rows = String::from("seed,e_straight,e_curved,ratio\n");
    let mut min_ratio = f64::INFINITY;
    let mut sum_ratio = 0.0;
    for i in 0..cfg.theory_seeds {
        let mut rng = ctx.root_rng().child(7).child(i as u64);
        let x0_ref = rng.gaussian(&[2]);
        let x1 = rng.gaussian(&[2]);
        let start = rng.gaussian(&[2]);
        let cost = CostFunction::mse_to_target(x0_ref.clone());
        let straight = ConstantField::from_pair(&x0_ref, &x1)?;
        let drift = x0_ref.sub(&x1)?;
        let curved = AffineField::rotation_perturbed(&drift, cfg.theory_omega, &x0_ref)?;
        let (out_s, tr_s) = steer(&straight, &start, &cost, &steering, None)?;
        let (out_c, tr_c) = steer(&curved, &start, &cost, &steering, None)?;
        ctx.counters.absorb(&tr_s);
        ctx.counters.absorb(&tr_c);
        let e_s = out_s.sub(&x0_ref)?.norm_sq();
        let e_c = out_c.sub(&x0_ref)?.norm_sq();
        let ratio = e_c / e_s.max(1e-300);
        min_ratio = min_ratio.min(ratio);
        sum_ratio += ratio;
        rows.push_str(&format!("{i},{e_s},{e_c},{ratio}\n"));
    }
    ctx.write_text("contrast.csv", &rows)?;
    ctx.metric("ratio_min", min_ratio);
    ctx.metric("ratio_mean", sum_ratio / cfg.theory_seeds.max(1) as f64);
    Ok(())
}

/// Integrator-order fits on the synthetic fields (and on a trained model
/// when a checkpoint is configured).
fn order_check(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let mut rows = String::from("field,slope,intercept\n");
    let mut rng = ctx.root_rng().child(7);

    let run_field = |name: &str,
                         field: &dyn Velocity,
                         label: Option<usize>,
                         x: &Tensor,
                         rows: &mut String,
                         ctx: &mut RunContext|
     -> AResult<()> {
        match convergence_order(field, x, cfg.theory_base_steps, label)? {
            ConvergenceOrder::Exact => {
                rows.push_str(&format!("{name},exact,\n"));
                ctx.metric(&format!("slope_{name}"), 1.0);
            }
            ConvergenceOrder::Slope { slope, intercept } => {
                rows.push_str(&format!("{name},{slope},{intercept}\n"));
                ctx.metric(&format!("slope_{name}"), slope);
                ctx.metric(&format!("intercept_{name}"), intercept);
            }
        }
        Ok(())
    };

    let x2 = rng.gaussian(&[2]);
    run_field(
        "contraction-1",
        &ContractionField { dim: 2, rate: 1.0 },
        None,
        &x2,
        &mut rows,
        ctx,
    )?;
    run_field(
        "contraction-5",
        &ContractionField { dim: 2, rate: 5.0 },
        None,
        &x2,
        &mut rows,
        ctx,
    )?;
    if !cfg.model_checkpoint.is_empty() {
        let model = checkpoint::load_model(Path::new(&cfg.model_checkpoint))?;
        let label = model.cond().map(|_| 0usize);
        let x = rng.gaussian(&[model.data_dim()]);
        run_field("model", &model, label, &x, &mut rows, ctx)?;
    }
    ctx.write_text("order.csv", &rows)?;
    Ok(())
}

/// Straightness scores for reference fields and, when configured, a trained
/// checkpoint.
fn straightness_check(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let mut rows = String::from("field,score\n");
    let chains = cfg.theory_seeds.max(1);
    let steps = cfg.theory_nfe.max(2);
    {
        let mut rng = ctx.root_rng().child(7);
        let constant = ConstantField::new(Tensor::from_vec(vec![1.0, -0.5]));
        let s = straightness(&constant, &mut rng, chains, steps, None)?;
        rows.push_str(&format!("constant,{s}\n"));
        ctx.metric("score_constant", s);
    }
    {
        let mut rng = ctx.root_rng().child(7);
        let contraction = ContractionField { dim: 2, rate: 1.0 };
        let s = straightness(&contraction, &mut rng, chains, steps, None)?;
        rows.push_str(&format!("contraction-1,{s}\n"));
        ctx.metric("score_contraction1", s);
    }
    if !cfg.model_checkpoint.is_empty() {
        let model = checkpoint::load_model(Path::new(&cfg.model_checkpoint))?;
        let label = model.cond().map(|_| 0usize);
        let mut rng = ctx.root_rng().child(7);
        let s = straightness(&model, &mut rng, chains, steps, label)?;
        rows.push_str(&format!("model,{s}\n"));
        ctx.metric("score_model", s);
    }
    ctx.write_text("straightness.csv", &rows)?;
    Ok(())
}
