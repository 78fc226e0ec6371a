//! Method-comparison tables: each trial pins one reference sample and one
//! starting noise shared by every method, then reports quality metrics and
//! compute counters per method. Timing lives in a separate CSV so the main
//! table stays byte-reproducible.

use std::time::Instant;

use flowsteer_core::flow::euler_sample_into;
use flowsteer_core::guidance::{
    steer_backprop_full_chain_into, steer_backprop_stepwise_into, steer_into, CostFunction,
    SteerMode,
};
use flowsteer_core::tensor::{upsample_nearest, Tensor};
use flowsteer_core::trace::TrajectoryTrace;

use crate::config::{ConfigError, SteerMethod};
use crate::output::{csv_f64, side_by_side, tensor_hash, AResult};
use crate::runner::{build_degradation, load_dataset, provision_model, RunContext};

pub fn run(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    if cfg.compare_methods.len() < 2 {
        return Err(ConfigError::BadValue {
            key: "compare.methods".into(),
            detail: "need at least two methods, e.g. compare.methods = flowchef,unguided \
                     (choices: flowchef|stepwise-backprop|full-chain-backprop|unguided)"
                .into(),
        }
        .into());
    }
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    let n = cfg.dataset_n.max(cfg.compare_trials);
    let data = load_dataset(cfg, n, &mut data_rng)?;
    let side = data.image_side.ok_or_else(|| ConfigError::BadValue {
        key: "compare.task".into(),
        detail: "comparison tasks need an image dataset".into(),
    })?;
    let d = data.dim;
    let mut init_rng = root.child(2);
    let model = provision_model(cfg, d, data.classes, &mut init_rng)?;

    let mut table = String::from(
        "method,task,trial,seed,xt_hash,status,psnr,ssim,final_cost,forward_evals,backward_evals,stored_states\n",
    );
    let mut wall = String::from("method,task,trial,wall_ms\n");
    let mut psnr_sums: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();

    for trial in 0..cfg.compare_trials {
        let mut trial_rng = root.child(10).child(trial as u64);
        let idx = trial % data.data.shape()[0];
        let reference = Tensor::new(
            vec![d],
            data.data.data()[idx * d..(idx + 1) * d].to_vec(),
        )?;
        let ref_img = reference.reshaped(&[side, side])?;
        let label = if model.cond().is_some() {
            data.labels.as_ref().map(|ls| ls[idx])
        } else {
            None
        };
        let op = build_degradation_for_task(ctx, side)?;
        let (cost, degraded_full) = match &op {
            Some(op) => {
                let y = op.apply(&ref_img)?;
                let flat = y.len();
                let cost = CostFunction::degraded_mse(op, y.reshaped(&[flat])?)?;
                let shown = if y.shape() == [side, side] {
                    y.clone()
                } else {
                    upsample_nearest(&y, ctx.cfg.degrade_factor)?
                };
                (cost, shown)
            }
            None => (
                CostFunction::mse_to_target(reference.clone()),
                ref_img.clone(),
            ),
        };
        let x_start = trial_rng.gaussian(&[d]);
        let xt_hash = tensor_hash(&x_start);

        let mut panel: Vec<Tensor> = vec![ref_img.clone(), degraded_full.clone()];
        for method in &cfg.compare_methods {
            let mut steering = cfg.steering();
            let started = Instant::now();
            let mut trace = TrajectoryTrace::new(0);
            let result: Result<Tensor, flowsteer_core::Error> = match method {
                SteerMethod::Unguided => {
                    euler_sample_into(&model, &x_start, steering.nfe, label, &mut trace)
                }
                SteerMethod::Mode(mode) => {
                    steering.mode = *mode;
                    if *mode == SteerMode::FullChainBackprop {
                        steering.nfe = cfg.compare_chain_nfe;
                    }
                    match mode {
                        SteerMode::FlowChef => {
                            steer_into(&model, &x_start, &cost, &steering, label, &mut trace)
                        }
                        SteerMode::StepwiseBackprop => steer_backprop_stepwise_into(
                            &model, &x_start, &cost, &steering, label, &mut trace,
                        ),
                        SteerMode::FullChainBackprop => steer_backprop_full_chain_into(
                            &model, &x_start, &cost, &steering, label, &mut trace,
                        ),
                    }
                }
            };
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            ctx.counters.absorb(&trace);
            let final_cost = trace.steps.last().and_then(|s| s.cost);
            match result {
                Ok(x0) => {
                    let out_img = x0.reshaped(&[side, side])?;
                    let psnr = flowsteer_core::analysis::psnr(&out_img, &ref_img, 1.0)?;
                    let ssim = flowsteer_core::analysis::ssim(&out_img, &ref_img)?;
                    let entry = psnr_sums.entry(method.tag()).or_insert((0.0, 0));
                    entry.0 += psnr;
                    entry.1 += 1;
                    table.push_str(&format!(
                        "{},{},{trial},{},{xt_hash},ok,{psnr},{ssim},{},{},{},{}\n",
                        method.tag(),
                        cfg.compare_task,
                        cfg.seed,
                        csv_f64(final_cost),
                        trace.forward_evals,
                        trace.backward_evals,
                        trace.stored_states_peak
                    ));
                    panel.push(out_img);
                }
                Err(e) if e.is_numeric_abort() => {
                    table.push_str(&format!(
                        "{},{},{trial},{},{xt_hash},failed,,,{},{},{},{}\n",
                        method.tag(),
                        cfg.compare_task,
                        cfg.seed,
                        csv_f64(final_cost),
                        trace.forward_evals,
                        trace.backward_evals,
                        trace.stored_states_peak
                    ));
                    panel.push(Tensor::zeros(&[side, side]));
                }
                Err(e) => return Err(e.into()),
            }
            wall.push_str(&format!(
                "{},{},{trial},{wall_ms}\n",
                method.tag(),
                cfg.compare_task
            ));
        }
        let refs: Vec<&Tensor> = panel.iter().collect();
        ctx.write_pgm(
            &format!("side-by-side-{trial:03}.pgm"),
            &side_by_side(&refs),
        )?;
    }

    ctx.write_text("compare.csv", &table)?;
    ctx.write_text("compare-wall.csv", &wall)?;
    for (tag, (sum, count)) in psnr_sums {
        ctx.metric(
            &format!("psnr_mean_{tag}"),
            sum / count.max(1) as f64,
        );
    }
    Ok(())
}

fn build_degradation_for_task(
    ctx: &RunContext,
    side: usize,
) -> AResult<Option<flowsteer_core::guidance::DegradationOp>> {
    // compare.task reuses the invert machinery
    let mut cfg = ctx.cfg.clone();
    cfg.invert_task = ctx.cfg.compare_task.clone();
    build_degradation(&cfg, side)
}
