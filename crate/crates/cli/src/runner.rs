//! Experiment execution: wiring datasets, models, steering, analysis, and
//! file outputs into reproducible runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowsteer_core::dataset::{generate, Dataset, DatasetSpec};
use flowsteer_core::flow::{
    euler_sample, euler_sample_into, reflow, train, CondSpec, TrainConfig, TrainData,
    VelocityField,
};
use flowsteer_core::guidance::{
    edit_into, train_classifier, steer_into, steer_backprop_full_chain_into,
    steer_backprop_stepwise_into, CostFunction, DegradationKind, DegradationOp,
    EditRequest, Rect, SteerMode,
};
use flowsteer_core::io::{checkpoint, pgm};
use flowsteer_core::tensor::{upsample_nearest, Tensor};
use flowsteer_core::trace::TrajectoryTrace;
use flowsteer_core::{Error as CoreError, Rng};

use crate::config::{CliOverrides, ConfigError, ExperimentConfig, ExperimentTag};
use crate::output::{
    config_hash, side_by_side, write_trace_csv, AResult, AppError, CounterTotals, RunSummary,
};
use crate::{compare, datasetgen, theory};

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
}

/// Load a config file, resolve it, and execute (fanning out over trials).
pub fn run_file(
    path: &Path,
    cli: &CliOverrides,
    forced: Option<ExperimentTag>,
) -> AResult<Vec<RunOutcome>> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    let cfg = crate::config::resolve(&text, cli, forced)?;
    run_config(&cfg)
}

pub fn run_config(cfg: &ExperimentConfig) -> AResult<Vec<RunOutcome>> {
    if cfg.trials == 1 {
        return Ok(vec![run_resolved(cfg)?]);
    }
    // Each trial is exactly a standalone run with seed base+i in its own
    // subdirectory, so any one of them can be reproduced independently.
    let mut trial_cfgs = Vec::new();
    for i in 0..cfg.trials {
        let mut c = cfg.clone();
        c.seed = cfg.seed + i as u64;
        c.out = cfg.out.join(format!("trial-{i:03}"));
        c.trials = 1;
        trial_cfgs.push(c);
    }
    let workers = worker_count(cfg.trials);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<AResult<RunOutcome>>>> =
        (0..cfg.trials).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= trial_cfgs.len() {
                    break;
                }
                let res = run_resolved(&trial_cfgs[i]);
                *results[i].lock().unwrap() = Some(res);
            });
        }
    });
    let mut out = Vec::with_capacity(cfg.trials);
    for slot in results {
        match slot.into_inner().unwrap() {
            Some(Ok(o)) => out.push(o),
            Some(Err(e)) => return Err(e),
            None => unreachable!("trial not executed"),
        }
    }
    Ok(out)
}

fn worker_count(trials: usize) -> usize {
    let cap = std::env::var("FLOWSTEER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    cap.min(trials).max(1)
}

/// Execute one resolved config in its output directory.
pub fn run_resolved(cfg: &ExperimentConfig) -> AResult<RunOutcome> {
    std::fs::create_dir_all(&cfg.out)?;
    let echo = cfg.echo();
    std::fs::write(cfg.out.join("resolved.cfg"), &echo)?;
    let started = Instant::now();
    let mut ctx = RunContext {
        cfg,
        dir: cfg.out.clone(),
        metrics: BTreeMap::new(),
        counters: CounterTotals::default(),
        outputs: vec!["resolved.cfg".into()],
    };
    let result = match cfg.experiment {
        ExperimentTag::Train => run_train(&mut ctx),
        ExperimentTag::Sample => run_sample(&mut ctx),
        ExperimentTag::Invert => run_invert(&mut ctx),
        ExperimentTag::Edit => run_edit(&mut ctx),
        ExperimentTag::ClassifyGuide => run_classify_guide(&mut ctx),
        ExperimentTag::Theory => theory::run(&mut ctx),
        ExperimentTag::Compare => compare::run(&mut ctx),
        ExperimentTag::Dataset => datasetgen::run(&mut ctx),
    };
    // flush a summary even when a numeric abort interrupted the run
    let summary = RunSummary {
        experiment: cfg.experiment.tag().to_string(),
        preset: cfg.preset.clone(),
        config_hash: config_hash(&echo),
        seed: cfg.seed,
        metrics: ctx.metrics.clone(),
        counters: ctx.counters.clone(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        outputs: ctx.outputs.clone(),
    };
    summary.write(&cfg.out)?;
    result?;
    Ok(RunOutcome {
        out_dir: cfg.out.clone(),
        summary,
    })
}

/// Shared mutable state while one experiment runs.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: PathBuf,
    pub metrics: BTreeMap<String, f64>,
    pub counters: CounterTotals,
    pub outputs: Vec<String>,
}

impl RunContext<'_> {
    pub fn root_rng(&self) -> Rng {
        Rng::new(self.cfg.seed)
    }

    pub fn note_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn write_pgm(&mut self, name: &str, img: &Tensor) -> AResult<()> {
        pgm::write(&self.dir.join(name), img)?;
        self.note_output(name);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> AResult<()> {
        std::fs::write(self.dir.join(name), text)?;
        self.note_output(name);
        Ok(())
    }

    pub fn write_trace(&mut self, name: &str, trace: &TrajectoryTrace) -> AResult<()> {
        write_trace_csv(&self.dir.join(name), trace)?;
        self.note_output(name);
        Ok(())
    }
}

pub fn dataset_spec(cfg: &ExperimentConfig) -> Result<DatasetSpec, ConfigError> {
    match cfg.dataset_kind.as_str() {
        "gauss-mix-2d" => Ok(DatasetSpec::GaussMix2d {
            modes: cfg.dataset_modes,
            radius: cfg.dataset_radius,
            sigma: cfg.dataset_sigma,
        }),
        "two-moons-2d" => Ok(DatasetSpec::TwoMoons2d {
            noise: cfg.dataset_noise,
        }),
        "shapes-16x16" => Ok(DatasetSpec::Shapes16),
        "file-pgm-dir" => {
            if cfg.dataset_dir.is_empty() {
                return Err(ConfigError::Missing("dataset.dir".into()));
            }
            Ok(DatasetSpec::PgmDir {
                path: PathBuf::from(&cfg.dataset_dir),
            })
        }
        other => Err(ConfigError::BadValue {
            key: "dataset.kind".into(),
            detail: format!(
                "'{other}' is not gauss-mix-2d|two-moons-2d|shapes-16x16|file-pgm-dir"
            ),
        }),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, n: usize, rng: &mut Rng) -> AResult<Dataset> {
    let spec = dataset_spec(cfg)?;
    Ok(generate(&spec, n, rng)?)
}

/// Model from checkpoint, or a fresh zero/random one shaped for the
/// dataset.
pub fn provision_model(
    cfg: &ExperimentConfig,
    data_dim: usize,
    classes: Option<usize>,
    rng: &mut Rng,
) -> AResult<VelocityField> {
    if !cfg.model_checkpoint.is_empty() {
        return Ok(checkpoint::load_model(Path::new(&cfg.model_checkpoint))?);
    }
    let cond = if cfg.model_conditional {
        let classes = classes.ok_or_else(|| ConfigError::BadValue {
            key: "model.conditional".into(),
            detail: "dataset has no labels to condition on".into(),
        })?;
        Some(CondSpec {
            classes,
            dim: cfg.model_cond_dim,
        })
    } else {
        None
    };
    let model = match cfg.model_init.as_str() {
        "zero" => VelocityField::zeros(
            data_dim,
            cfg.model_time_features,
            &cfg.model_hidden,
            cond,
        )?,
        "random" => VelocityField::new(
            data_dim,
            cfg.model_time_features,
            &cfg.model_hidden,
            cond,
            rng,
        )?,
        other => {
            return Err(ConfigError::BadValue {
                key: "model.init".into(),
                detail: format!("'{other}' is not zero|random"),
            }
            .into())
        }
    };
    Ok(model)
}

/// Degradation for the configured inverse task (None for reconstruct).
pub fn build_degradation(
    cfg: &ExperimentConfig,
    side: usize,
) -> AResult<Option<DegradationOp>> {
    let base = match cfg.invert_task.as_str() {
        "box-inpaint" => Some(DegradationKind::BoxMask {
            rect: Rect::centered(side, cfg.degrade_box_size, cfg.degrade_box_size),
        }),
        "deblur" => Some(DegradationKind::GaussianBlur {
            size: cfg.degrade_kernel_size,
            sigma: cfg.degrade_kernel_sigma,
        }),
        "super-resolution" => Some(DegradationKind::Downsample {
            factor: cfg.degrade_factor,
        }),
        "reconstruct" => None,
        other => {
            return Err(ConfigError::BadValue {
                key: "invert.task".into(),
                detail: format!(
                    "'{other}' is not box-inpaint|deblur|super-resolution|reconstruct"
                ),
            }
            .into())
        }
    };
    let Some(mut kind) = base else {
        return Ok(None);
    };
    if cfg.degrade_noise_sigma > 0.0 {
        kind = DegradationKind::Compose(vec![
            kind,
            DegradationKind::AdditiveNoise {
                sigma: cfg.degrade_noise_sigma,
                seed: cfg.seed ^ 0xD15E_A5ED,
            },
        ]);
    }
    Ok(Some(DegradationOp::new(kind, side, side)?))
}

/// Dispatch one steering run by mode, flushing the partial trace to
/// `trace.csv` even when the run aborts mid-way.
pub fn run_steering_traced(
    ctx: &mut RunContext,
    field: &VelocityField,
    x_start: &Tensor,
    cost: &CostFunction,
    label: Option<usize>,
) -> AResult<Tensor> {
    let steering = ctx.cfg.steering();
    let mut trace = TrajectoryTrace::new(steering.snapshot_stride);
    let result = match steering.mode {
        SteerMode::FlowChef => steer_into(field, x_start, cost, &steering, label, &mut trace),
        SteerMode::StepwiseBackprop => {
            steer_backprop_stepwise_into(field, x_start, cost, &steering, label, &mut trace)
        }
        SteerMode::FullChainBackprop => {
            steer_backprop_full_chain_into(field, x_start, cost, &steering, label, &mut trace)
        }
    };
    ctx.write_trace("trace.csv", &trace)?;
    ctx.counters.absorb(&trace);
    if let Some(last) = trace.steps.last() {
        if let Some(c) = last.cost {
            ctx.metric("final_cost", c);
        }
    }
    Ok(result?)
}

// --- train ----------------------------------------------------------------

fn run_train(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    let data = load_dataset(cfg, cfg.dataset_n, &mut data_rng)?;
    match cfg.train_target.as_str() {
        "model" => train_model(ctx, &data),
        "classifier" => train_classifier_target(ctx, &data),
        other => Err(ConfigError::BadValue {
            key: "train.target".into(),
            detail: format!("'{other}' is not model|classifier"),
        }
        .into()),
    }
}

fn train_model(ctx: &mut RunContext, data: &Dataset) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut init_rng = root.child(2);
    let mut model = provision_model(cfg, data.dim, data.classes, &mut init_rng)?;

    let base_cfg = TrainConfig {
        steps: cfg.train_steps,
        batch: cfg.train_batch,
        lr: cfg.train_lr,
        optimizer: cfg.train_optimizer,
        seed: cfg.seed,
    };
    let labels = if model.cond().is_some() {
        data.labels.clone()
    } else {
        None
    };
    let train_data = TrainData::Independent {
        x0: data.data.clone(),
        labels,
    };
    let mut train_rng = root.child(3);
    let mut rows = String::from("round,step,loss\n");
    let losses = train(&mut model, &train_data, &base_cfg, &mut train_rng)?;
    for (i, l) in losses.iter().enumerate() {
        rows.push_str(&format!("0,{i},{l}\n"));
    }
    let head = mean(&losses[..losses.len().min(50)]);
    let tail = mean(&losses[losses.len().saturating_sub(50)..]);
    ctx.metric("loss_head_mean", head);
    ctx.metric("loss_tail_mean", tail);

    let mut reflow_rng = root.child(5);
    for round in 0..cfg.train_reflow_rounds {
        let pairs = reflow(
            &model,
            &mut reflow_rng,
            cfg.train_reflow_pairs,
            cfg.train_sample_steps,
        )?;
        let round_cfg = TrainConfig {
            steps: cfg.train_reflow_steps,
            ..base_cfg.clone()
        };
        let losses = train(&mut model, &pairs, &round_cfg, &mut train_rng)?;
        for (i, l) in losses.iter().enumerate() {
            rows.push_str(&format!("{},{i},{l}\n", round + 1));
        }
    }
    ctx.write_text("losses.csv", &rows)?;

    let label = model.cond().map(|_| 0usize);
    let mut straight_rng = root.child(8);
    let score = flowsteer_core::analysis::straightness(
        &model,
        &mut straight_rng,
        16,
        cfg.train_sample_steps,
        label,
    )?;
    ctx.metric("straightness", score);

    checkpoint::save_model(&ctx.dir.join(&cfg.train_save), &model)?;
    let name = cfg.train_save.clone();
    ctx.note_output(&name);
    Ok(())
}

fn train_classifier_target(ctx: &mut RunContext, data: &Dataset) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let tcfg = TrainConfig {
        steps: cfg.classifier_steps,
        batch: cfg.classifier_batch,
        lr: cfg.classifier_lr,
        optimizer: flowsteer_core::optim::OptimizerKind::Adam,
        seed: cfg.seed,
    };
    let mut rng = root.child(6);
    let (model, holdout) = train_classifier(data, &cfg.classifier_hidden, &tcfg, &mut rng)?;
    ctx.metric("holdout_accuracy", holdout);
    checkpoint::save_classifier(&ctx.dir.join(&cfg.train_save), &model)?;
    let name = cfg.train_save.clone();
    ctx.note_output(&name);
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

// --- sample -----------------------------------------------------------------

fn run_sample(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    // one sample is enough to learn the dimensionality
    let probe = load_dataset(cfg, 1, &mut data_rng)?;
    let mut init_rng = root.child(2);
    let model = provision_model(cfg, probe.dim, probe.classes, &mut init_rng)?;
    let classes = model.cond().map(|c| c.classes);

    let mut rng = root.child(4);
    let mut rows = String::from("index,label,coords\n");
    for i in 0..cfg.sample_count {
        let label = classes.map(|k| i % k);
        let x1 = rng.gaussian(&[probe.dim]);
        let mut trace = TrajectoryTrace::new(cfg.steer_snapshot_stride);
        let x0 = euler_sample_into(&model, &x1, cfg.steer_nfe, label, &mut trace)?;
        ctx.counters.absorb(&trace);
        if i == 0 {
            ctx.write_trace("trace.csv", &trace)?;
        }
        if let Some(side) = probe.image_side {
            let img = x0.reshaped(&[side, side])?;
            ctx.write_pgm(&format!("sample-{i:03}.pgm"), &img)?;
        } else {
            let coords = x0
                .data()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            rows.push_str(&format!(
                "{i},{},{coords}\n",
                label.map(|l| l.to_string()).unwrap_or_default()
            ));
        }
    }
    if probe.image_side.is_none() {
        ctx.write_text("samples.csv", &rows)?;
    }
    ctx.metric("sample_count", cfg.sample_count as f64);
    Ok(())
}

// --- invert -------------------------------------------------------------------

fn run_invert(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    let n = cfg.dataset_n.max(cfg.invert_sample_index + 1);
    let data = load_dataset(cfg, n, &mut data_rng)?;
    let side = data.image_side.ok_or_else(|| ConfigError::BadValue {
        key: "invert.task".into(),
        detail: "inverse problems need an image dataset".into(),
    })?;
    let d = data.dim;
    let idx = cfg.invert_sample_index;
    let reference = Tensor::new(
        vec![d],
        data.data.data()[idx * d..(idx + 1) * d].to_vec(),
    )
    .map_err(AppError::Core)?;
    let ref_img = reference.reshaped(&[side, side]).map_err(AppError::Core)?;

    let mut init_rng = root.child(2);
    let model = provision_model(cfg, d, data.classes, &mut init_rng)?;
    let label = if model.cond().is_some() {
        let labels = data.labels.as_ref().ok_or_else(|| ConfigError::BadValue {
            key: "model.conditional".into(),
            detail: "conditional model but the dataset has no labels".into(),
        })?;
        Some(labels[idx])
    } else {
        None
    };

    let op = build_degradation(cfg, side)?;
    let (cost, degraded_img) = match &op {
        Some(op) => {
            let y = op.apply(&ref_img).map_err(AppError::Core)?;
            let flat_len = y.len();
            let cost = CostFunction::degraded_mse(op, y.reshaped(&[flat_len])?)?;
            (cost, y)
        }
        None => (
            CostFunction::mse_to_target(reference.clone()),
            ref_img.clone(),
        ),
    };

    ctx.write_pgm("reference.pgm", &ref_img)?;
    ctx.write_pgm("degraded.pgm", &degraded_img)?;

    let mut xt_rng = root.child(4);
    let x_start = xt_rng.gaussian(&[d]);
    let x0 = run_steering_traced(ctx, &model, &x_start, &cost, label)?;
    let out_img = x0.reshaped(&[side, side]).map_err(AppError::Core)?;
    ctx.write_pgm("output.pgm", &out_img)?;

    // degraded-input comparison image at full resolution
    let degraded_full = if degraded_img.shape() == [side, side] {
        degraded_img.clone()
    } else {
        upsample_nearest(&degraded_img, cfg.degrade_factor).map_err(AppError::Core)?
    };
    let strip = side_by_side(&[&ref_img, &degraded_full, &out_img]);
    ctx.write_pgm("side-by-side.pgm", &strip)?;

    let psnr_degraded = flowsteer_core::analysis::psnr(&degraded_full, &ref_img, 1.0)?;
    let psnr_output = flowsteer_core::analysis::psnr(&out_img, &ref_img, 1.0)?;
    ctx.metric("psnr_degraded", psnr_degraded);
    ctx.metric("psnr_output", psnr_output);
    ctx.metric(
        "ssim_degraded",
        flowsteer_core::analysis::ssim(&degraded_full, &ref_img)?,
    );
    ctx.metric(
        "ssim_output",
        flowsteer_core::analysis::ssim(&out_img, &ref_img)?,
    );
    Ok(())
}

// --- edit ---------------------------------------------------------------------

fn run_edit(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    let data = load_dataset(cfg, cfg.dataset_n, &mut data_rng)?;
    let side = data.image_side.ok_or_else(|| ConfigError::BadValue {
        key: "experiment".into(),
        detail: "editing needs an image dataset".into(),
    })?;
    let labels = data.labels.as_ref().ok_or_else(|| ConfigError::BadValue {
        key: "dataset.kind".into(),
        detail: "editing needs a labeled dataset".into(),
    })?;
    let d = data.dim;

    // the edit.sample-index-th sample of the base class
    let mut seen = 0usize;
    let mut ref_row = None;
    for (i, &l) in labels.iter().enumerate() {
        if l == cfg.edit_base_class {
            if seen == cfg.edit_sample_index {
                ref_row = Some(i);
                break;
            }
            seen += 1;
        }
    }
    let idx = ref_row.ok_or_else(|| ConfigError::BadValue {
        key: "edit.sample-index".into(),
        detail: format!(
            "dataset has fewer than {} samples of class {}",
            cfg.edit_sample_index + 1,
            cfg.edit_base_class
        ),
    })?;
    let reference = Tensor::new(
        vec![d],
        data.data.data()[idx * d..(idx + 1) * d].to_vec(),
    )
    .map_err(AppError::Core)?;

    let (ry, rx, rh, rw) = cfg.edit_mask_rect;
    if ry + rh > side || rx + rw > side {
        return Err(ConfigError::BadValue {
            key: "edit.mask-rect".into(),
            detail: format!("rect {ry},{rx},{rh},{rw} out of bounds for {side}x{side}"),
        }
        .into());
    }
    let mut mask = Tensor::zeros(&[d]);
    for y in ry..ry + rh {
        for x in rx..rx + rw {
            mask.data_mut()[y * side + x] = 1.0;
        }
    }

    let mut init_rng = root.child(2);
    let model = provision_model(cfg, d, data.classes, &mut init_rng)?;
    if model.cond().is_none() {
        return Err(ConfigError::BadValue {
            key: "model.conditional".into(),
            detail: "editing requires a conditional model".into(),
        }
        .into());
    }

    ctx.write_pgm("reference.pgm", &reference.reshaped(&[side, side])?)?;
    ctx.write_pgm("mask.pgm", &mask.reshaped(&[side, side])?)?;

    let steering = cfg.steering();
    let mut xt_rng = root.child(4);
    let x_start = xt_rng.gaussian(&[d]);
    let req = EditRequest {
        x0_ref: &reference,
        mask_free: &mask,
        base_label: cfg.edit_base_class,
        edit_label: cfg.edit_edit_class,
    };
    let mut trace = TrajectoryTrace::new(steering.snapshot_stride);
    let result = edit_into(&model, &x_start, &req, &steering, &mut trace);
    ctx.write_trace("trace.csv", &trace)?;
    ctx.counters.absorb(&trace);
    let x0 = result?;
    let out_img = x0.reshaped(&[side, side]).map_err(AppError::Core)?;
    ctx.write_pgm("output.pgm", &out_img)?;
    let strip = side_by_side(&[
        &reference.reshaped(&[side, side])?,
        &mask.reshaped(&[side, side])?,
        &out_img,
    ]);
    ctx.write_pgm("side-by-side.pgm", &strip)?;

    ctx.metric(
        "preserve_psnr",
        region_psnr(&x0, &reference, &mask, 0.0)?,
    );
    if let Some(last) = trace.steps.last().and_then(|s| s.cost) {
        ctx.metric("final_cost", last);
    }
    if !cfg.classifier_checkpoint.is_empty() {
        let classifier = checkpoint::load_classifier(Path::new(&cfg.classifier_checkpoint))?;
        let lp = classifier.log_probs(&x0)?;
        ctx.metric(
            "edit_class_prob",
            lp.data()[cfg.edit_edit_class].exp(),
        );
    }
    Ok(())
}

/// PSNR restricted to coordinates where `mask` equals `mask_value`.
pub fn region_psnr(a: &Tensor, b: &Tensor, mask: &Tensor, mask_value: f64) -> AResult<f64> {
    if a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(AppError::Core(CoreError::invalid(
            "region_psnr shape mismatch".to_string(),
        )));
    }
    let mut mse = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if mask.data()[i] == mask_value {
            let d = a.data()[i] - b.data()[i];
            mse += d * d;
            count += 1;
        }
    }
    if count == 0 || mse == 0.0 {
        return Ok(flowsteer_core::analysis::PSNR_CAP_DB);
    }
    mse /= count as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(flowsteer_core::analysis::PSNR_CAP_DB))
}

// --- classifier guidance ----------------------------------------------------------

fn run_classify_guide(ctx: &mut RunContext) -> AResult<()> {
    let cfg = ctx.cfg;
    let root = ctx.root_rng();
    let mut data_rng = root.child(1);
    let data = load_dataset(cfg, cfg.dataset_n, &mut data_rng)?;
    let classes = data.classes.ok_or_else(|| ConfigError::BadValue {
        key: "dataset.kind".into(),
        detail: "classifier guidance needs a labeled dataset".into(),
    })?;
    if cfg.guide_class >= classes {
        return Err(ConfigError::BadValue {
            key: "guide.class".into(),
            detail: format!("class {} out of range for {classes} classes", cfg.guide_class),
        }
        .into());
    }

    let mut init_rng = root.child(2);
    let model = provision_model(cfg, data.dim, data.classes, &mut init_rng)?;
    if model.cond().is_some() {
        return Err(ConfigError::BadValue {
            key: "model.checkpoint".into(),
            detail: "classifier guidance expects an unconditional flow model".into(),
        }
        .into());
    }

    let classifier = if cfg.classifier_checkpoint.is_empty() {
        let tcfg = TrainConfig {
            steps: cfg.classifier_steps,
            batch: cfg.classifier_batch,
            lr: cfg.classifier_lr,
            optimizer: flowsteer_core::optim::OptimizerKind::Adam,
            seed: cfg.seed,
        };
        let mut crng = root.child(6);
        let (c, holdout) = train_classifier(&data, &cfg.classifier_hidden, &tcfg, &mut crng)?;
        ctx.metric("classifier_holdout", holdout);
        c
    } else {
        checkpoint::load_classifier(Path::new(&cfg.classifier_checkpoint))?
    };

    let cost = CostFunction::classifier_nll(classifier.clone(), cfg.guide_class)?;
    let steering = cfg.steering();
    let mut rng = root.child(4);
    let mut guided_hits = 0usize;
    let mut unguided_hits = 0usize;
    let mut rows = String::from("index,guided_pred,unguided_pred,guided_coords,unguided_coords\n");
    for i in 0..cfg.guide_samples {
        let x1 = rng.gaussian(&[data.dim]);
        let mut trace = TrajectoryTrace::new(0);
        let guided = match steering.mode {
            SteerMode::FlowChef => steer_into(&model, &x1, &cost, &steering, None, &mut trace),
            SteerMode::StepwiseBackprop => {
                steer_backprop_stepwise_into(&model, &x1, &cost, &steering, None, &mut trace)
            }
            SteerMode::FullChainBackprop => steer_backprop_full_chain_into(
                &model, &x1, &cost, &steering, None, &mut trace,
            ),
        };
        if i == 0 {
            ctx.write_trace("trace.csv", &trace)?;
        }
        ctx.counters.absorb(&trace);
        let guided = guided?;
        let (unguided, utrace) = euler_sample(&model, &x1, steering.nfe, None)?;
        ctx.counters.absorb(&utrace);
        let gp = classifier.predict(&guided)?;
        let up = classifier.predict(&unguided)?;
        if gp == cfg.guide_class {
            guided_hits += 1;
        }
        if up == cfg.guide_class {
            unguided_hits += 1;
        }
        rows.push_str(&format!(
            "{i},{gp},{up},{},{}\n",
            guided
                .data()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            unguided
                .data()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";")
        ));
    }
    ctx.write_text("samples.csv", &rows)?;
    ctx.metric(
        "guided_accuracy",
        guided_hits as f64 / cfg.guide_samples.max(1) as f64,
    );
    ctx.metric(
        "unguided_accuracy",
        unguided_hits as f64 / cfg.guide_samples.max(1) as f64,
    );
    Ok(())
}
