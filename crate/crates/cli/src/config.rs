//! Plain-text `key = value` experiment configuration.
//!
//! Resolution order: preset expansion first, then the file's own keys, then
//! command-line overrides. Unknown keys are rejected (naming the first
//! offender), every field has a documented default, and the fully resolved
//! configuration is echoed to disk next to the run outputs. Re-running on
//! the echo reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use flowsteer_core::guidance::{SteerMode, SteeringConfig};
use flowsteer_core::optim::OptimizerKind;
use thiserror::Error;

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("unknown preset '{0}' (available: {1})")]
    UnknownPreset(String, String),
    #[error("bad value for '{key}': {detail}")]
    BadValue { key: String, detail: String },
    #[error("missing required key '{0}'")]
    Missing(String),
}

type CResult<T> = Result<T, ConfigError>;

/// Every accepted key with its documented default (empty string where the
/// default is "unset"). This doubles as the reference table in the README.
pub const KEY_DEFAULTS: &[(&str, &str)] = &[
    ("experiment", ""),
    ("preset", ""),
    ("seed", "0"),
    ("out", ""),
    ("trials", "1"),
    ("dataset.kind", "shapes-16x16"),
    ("dataset.n", "512"),
    ("dataset.modes", "8"),
    ("dataset.radius", "4.0"),
    ("dataset.sigma", "0.3"),
    ("dataset.noise", "0.1"),
    ("dataset.dir", ""),
    ("model.checkpoint", ""),
    ("model.init", "random"),
    ("model.hidden", "128,128"),
    ("model.time-features", "8"),
    ("model.conditional", "false"),
    ("model.cond-dim", "8"),
    ("train.target", "model"),
    ("train.steps", "1500"),
    ("train.batch", "96"),
    ("train.lr", "0.002"),
    ("train.optimizer", "adam"),
    ("train.reflow-rounds", "1"),
    ("train.reflow-pairs", "1024"),
    ("train.reflow-steps", "1200"),
    ("train.sample-steps", "50"),
    ("train.save", "model.fsm"),
    ("steer.mode", "flowchef"),
    ("steer.nfe", "200"),
    ("steer.inner", "1"),
    ("steer.scale", "64.0"),
    ("steer.lr", "1.0"),
    ("steer.optimizer", "sgd"),
    ("steer.min-t", ""),
    ("steer.max-full-steps", "0"),
    ("steer.edit-scale", "0.5"),
    ("steer.outer-iters", "20"),
    ("steer.snapshot-stride", "0"),
    ("sample.count", "16"),
    ("invert.task", "box-inpaint"),
    ("invert.sample-index", "0"),
    ("degrade.box-size", "6"),
    ("degrade.kernel-size", "5"),
    ("degrade.kernel-sigma", "1.0"),
    ("degrade.factor", "2"),
    ("degrade.noise-sigma", "0.0"),
    ("classifier.checkpoint", ""),
    ("classifier.hidden", "64"),
    ("classifier.steps", "400"),
    ("classifier.batch", "64"),
    ("classifier.lr", "0.005"),
    ("guide.class", "0"),
    ("guide.samples", "500"),
    ("edit.mask-rect", "4,4,8,8"),
    ("edit.base-class", "0"),
    ("edit.edit-class", "1"),
    ("edit.sample-index", "0"),
    ("theory.kind", "lemma-affine"),
    ("theory.dim", "16"),
    ("theory.fields", "20"),
    ("theory.grid", "10"),
    ("theory.s", "0.05,0.1"),
    ("theory.nfe", "2000"),
    ("theory.seeds", "10"),
    ("theory.omega", "1.0"),
    ("theory.base-steps", "16"),
    ("compare.methods", "flowchef,unguided"),
    ("compare.task", "box-inpaint"),
    ("compare.trials", "10"),
    ("compare.chain-nfe", "10"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentTag {
    Train,
    Sample,
    Invert,
    Edit,
    ClassifyGuide,
    Theory,
    Compare,
    Dataset,
}

impl ExperimentTag {
    pub fn parse(s: &str) -> CResult<Self> {
        match s {
            "train" => Ok(Self::Train),
            "sample" => Ok(Self::Sample),
            "invert" => Ok(Self::Invert),
            "edit" => Ok(Self::Edit),
            "classify-guide" => Ok(Self::ClassifyGuide),
            "theory" => Ok(Self::Theory),
            "compare" => Ok(Self::Compare),
            "dataset" => Ok(Self::Dataset),
            other => Err(ConfigError::BadValue {
                key: "experiment".into(),
                detail: format!(
                    "'{other}' is not one of train|sample|invert|edit|classify-guide|theory|compare|dataset"
                ),
            }),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Sample => "sample",
            Self::Invert => "invert",
            Self::Edit => "edit",
            Self::ClassifyGuide => "classify-guide",
            Self::Theory => "theory",
            Self::Compare => "compare",
            Self::Dataset => "dataset",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentTag,
    pub preset: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,

    pub dataset_kind: String,
    pub dataset_n: usize,
    pub dataset_modes: usize,
    pub dataset_radius: f64,
    pub dataset_sigma: f64,
    pub dataset_noise: f64,
    pub dataset_dir: String,

    pub model_checkpoint: String,
    pub model_init: String,
    pub model_hidden: Vec<usize>,
    pub model_time_features: usize,
    pub model_conditional: bool,
    pub model_cond_dim: usize,

    pub train_target: String,
    pub train_steps: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub train_optimizer: OptimizerKind,
    pub train_reflow_rounds: usize,
    pub train_reflow_pairs: usize,
    pub train_reflow_steps: usize,
    pub train_sample_steps: usize,
    pub train_save: String,

    pub steer_mode: SteerMode,
    pub steer_nfe: usize,
    pub steer_inner: usize,
    pub steer_scale: f64,
    pub steer_lr: f64,
    pub steer_optimizer: OptimizerKind,
    pub steer_min_t: usize,
    pub steer_max_full_steps: usize,
    pub steer_edit_scale: f64,
    pub steer_outer_iters: usize,
    pub steer_snapshot_stride: usize,

    pub sample_count: usize,

    pub invert_task: String,
    pub invert_sample_index: usize,

    pub degrade_box_size: usize,
    pub degrade_kernel_size: usize,
    pub degrade_kernel_sigma: f64,
    pub degrade_factor: usize,
    pub degrade_noise_sigma: f64,

    pub classifier_checkpoint: String,
    pub classifier_hidden: Vec<usize>,
    pub classifier_steps: usize,
    pub classifier_batch: usize,
    pub classifier_lr: f64,

    pub guide_class: usize,
    pub guide_samples: usize,

    pub edit_mask_rect: (usize, usize, usize, usize),
    pub edit_base_class: usize,
    pub edit_edit_class: usize,
    pub edit_sample_index: usize,

    pub theory_kind: String,
    pub theory_dim: usize,
    pub theory_fields: usize,
    pub theory_grid: usize,
    pub theory_s: Vec<f64>,
    pub theory_nfe: usize,
    pub theory_seeds: usize,
    pub theory_omega: f64,
    pub theory_base_steps: usize,

    pub compare_methods: Vec<SteerMethod>,
    pub compare_task: String,
    pub compare_trials: usize,
    pub compare_chain_nfe: usize,
}

/// Methods the compare table accepts (steering modes plus unguided).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteerMethod {
    Unguided,
    Mode(SteerMode),
}

impl SteerMethod {
    pub fn parse(s: &str) -> CResult<Self> {
        if s == "unguided" {
            return Ok(SteerMethod::Unguided);
        }
        SteerMode::parse(s)
            .map(SteerMethod::Mode)
            .map_err(|_| ConfigError::BadValue {
                key: "compare.methods".into(),
                detail: format!(
                    "'{s}' is not one of flowchef|stepwise-backprop|full-chain-backprop|unguided"
                ),
            })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SteerMethod::Unguided => "unguided",
            SteerMethod::Mode(m) => m.tag(),
        }
    }
}

/// Command-line overrides applied after file keys.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub trials: Option<usize>,
}

fn parse_pairs(text: &str) -> CResult<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.trim().to_string(),
            });
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.trim().to_string(),
            });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn known_key(key: &str) -> bool {
    KEY_DEFAULTS.iter().any(|(k, _)| *k == key)
}

struct Lookup {
    map: BTreeMap<String, String>,
}

impl Lookup {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str()).filter(|s| !s.is_empty())
    }

    fn string(&self, key: &str) -> String {
        self.get(key)
            .map(|s| s.to_string())
            .unwrap_or_else(|| default_for(key).to_string())
    }

    fn usize(&self, key: &str) -> CResult<usize> {
        let v = self.string(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            detail: format!("'{v}' is not a non-negative integer"),
        })
    }

    fn u64(&self, key: &str) -> CResult<u64> {
        let v = self.string(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            detail: format!("'{v}' is not a 64-bit unsigned integer"),
        })
    }

    fn f64(&self, key: &str) -> CResult<f64> {
        let v = self.string(key);
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            detail: format!("'{v}' is not a number"),
        })
    }

    fn bool(&self, key: &str) -> CResult<bool> {
        let v = self.string(key);
        match v.as_str() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: key.into(),
                detail: format!("'{other}' is not a boolean"),
            }),
        }
    }

    fn usize_list(&self, key: &str) -> CResult<Vec<usize>> {
        let v = self.string(key);
        v.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    detail: format!("'{p}' in '{v}' is not an integer"),
                })
            })
            .collect()
    }

    fn f64_list(&self, key: &str) -> CResult<Vec<f64>> {
        let v = self.string(key);
        v.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    detail: format!("'{p}' in '{v}' is not a number"),
                })
            })
            .collect()
    }
}

fn default_for(key: &str) -> &'static str {
    KEY_DEFAULTS
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, d)| *d)
        .unwrap_or("")
}

/// Resolve config text: preset expansion, file keys, CLI overrides, typed
/// build with defaults. `forced_experiment` pins the tag for the compare
/// and dataset subcommands.
pub fn resolve(
    text: &str,
    cli: &CliOverrides,
    forced_experiment: Option<ExperimentTag>,
) -> CResult<ExperimentConfig> {
    let file_pairs = parse_pairs(text)?;
    // reject unknown keys in file order before anything else
    for (k, _) in &file_pairs {
        if !known_key(k) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
    }
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let preset_name = file_pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "preset")
        .map(|(_, v)| v.clone())
        .filter(|v| !v.is_empty());
    if let Some(name) = &preset_name {
        let base = presets::expand(name).ok_or_else(|| {
            ConfigError::UnknownPreset(name.clone(), presets::names().join(", "))
        })?;
        for (k, v) in base {
            debug_assert!(known_key(k), "preset key {k}");
            map.insert(k.to_string(), v.to_string());
        }
    }
    for (k, v) in file_pairs {
        if k != "preset" {
            map.insert(k, v);
        }
    }
    if let Some(seed) = cli.seed {
        map.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &cli.out {
        map.insert("out".into(), out.clone());
    }
    if let Some(trials) = cli.trials {
        map.insert("trials".into(), trials.to_string());
    }

    let kv = Lookup { map };
    let experiment = match forced_experiment {
        Some(tag) => tag,
        None => {
            let raw = kv
                .get("experiment")
                .ok_or_else(|| ConfigError::Missing("experiment".into()))?;
            ExperimentTag::parse(raw)?
        }
    };
    let steer_nfe = kv.usize("steer.nfe")?;
    let steer_min_t = match kv.get("steer.min-t") {
        Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
            key: "steer.min-t".into(),
            detail: format!("'{v}' is not an integer"),
        })?,
        None => steer_nfe, // default: guidance active for the whole run
    };
    let rect = {
        let parts = kv.usize_list("edit.mask-rect")?;
        if parts.len() != 4 {
            return Err(ConfigError::BadValue {
                key: "edit.mask-rect".into(),
                detail: "expected y,x,h,w".into(),
            });
        }
        (parts[0], parts[1], parts[2], parts[3])
    };
    let out = {
        let raw = kv.string("out");
        if raw.is_empty() {
            PathBuf::from(format!("runs/{}", experiment.tag()))
        } else {
            PathBuf::from(raw)
        }
    };
    let methods = {
        let raw = kv.string("compare.methods");
        let mut ms = Vec::new();
        for part in raw.split(',') {
            let part = part.trim();
            if !part.is_empty() {
                ms.push(SteerMethod::parse(part)?);
            }
        }
        ms
    };

    let cfg = ExperimentConfig {
        experiment,
        preset: preset_name,
        seed: kv.u64("seed")?,
        out,
        trials: kv.usize("trials")?.max(1),

        dataset_kind: kv.string("dataset.kind"),
        dataset_n: kv.usize("dataset.n")?,
        dataset_modes: kv.usize("dataset.modes")?,
        dataset_radius: kv.f64("dataset.radius")?,
        dataset_sigma: kv.f64("dataset.sigma")?,
        dataset_noise: kv.f64("dataset.noise")?,
        dataset_dir: kv.string("dataset.dir"),

        model_checkpoint: kv.string("model.checkpoint"),
        model_init: kv.string("model.init"),
        model_hidden: kv.usize_list("model.hidden")?,
        model_time_features: kv.usize("model.time-features")?,
        model_conditional: kv.bool("model.conditional")?,
        model_cond_dim: kv.usize("model.cond-dim")?,

        train_target: kv.string("train.target"),
        train_steps: kv.usize("train.steps")?,
        train_batch: kv.usize("train.batch")?,
        train_lr: kv.f64("train.lr")?,
        train_optimizer: parse_optimizer(&kv, "train.optimizer")?,
        train_reflow_rounds: kv.usize("train.reflow-rounds")?,
        train_reflow_pairs: kv.usize("train.reflow-pairs")?,
        train_reflow_steps: kv.usize("train.reflow-steps")?,
        train_sample_steps: kv.usize("train.sample-steps")?,
        train_save: kv.string("train.save"),

        steer_mode: parse_mode(&kv, "steer.mode")?,
        steer_nfe,
        steer_inner: kv.usize("steer.inner")?,
        steer_scale: kv.f64("steer.scale")?,
        steer_lr: kv.f64("steer.lr")?,
        steer_optimizer: parse_optimizer(&kv, "steer.optimizer")?,
        steer_min_t,
        steer_max_full_steps: kv.usize("steer.max-full-steps")?,
        steer_edit_scale: kv.f64("steer.edit-scale")?,
        steer_outer_iters: kv.usize("steer.outer-iters")?,
        steer_snapshot_stride: kv.usize("steer.snapshot-stride")?,

        sample_count: kv.usize("sample.count")?,

        invert_task: kv.string("invert.task"),
        invert_sample_index: kv.usize("invert.sample-index")?,

        degrade_box_size: kv.usize("degrade.box-size")?,
        degrade_kernel_size: kv.usize("degrade.kernel-size")?,
        degrade_kernel_sigma: kv.f64("degrade.kernel-sigma")?,
        degrade_factor: kv.usize("degrade.factor")?,
        degrade_noise_sigma: kv.f64("degrade.noise-sigma")?,

        classifier_checkpoint: kv.string("classifier.checkpoint"),
        classifier_hidden: kv.usize_list("classifier.hidden")?,
        classifier_steps: kv.usize("classifier.steps")?,
        classifier_batch: kv.usize("classifier.batch")?,
        classifier_lr: kv.f64("classifier.lr")?,

        guide_class: kv.usize("guide.class")?,
        guide_samples: kv.usize("guide.samples")?,

        edit_mask_rect: rect,
        edit_base_class: kv.usize("edit.base-class")?,
        edit_edit_class: kv.usize("edit.edit-class")?,
        edit_sample_index: kv.usize("edit.sample-index")?,

        theory_kind: kv.string("theory.kind"),
        theory_dim: kv.usize("theory.dim")?,
        theory_fields: kv.usize("theory.fields")?,
        theory_grid: kv.usize("theory.grid")?,
        theory_s: kv.f64_list("theory.s")?,
        theory_nfe: kv.usize("theory.nfe")?,
        theory_seeds: kv.usize("theory.seeds")?,
        theory_omega: kv.f64("theory.omega")?,
        theory_base_steps: kv.usize("theory.base-steps")?,

        compare_methods: methods,
        compare_task: kv.string("compare.task"),
        compare_trials: kv.usize("compare.trials")?,
        compare_chain_nfe: kv.usize("compare.chain-nfe")?,
    };
    Ok(cfg)
}

fn parse_optimizer(kv: &Lookup, key: &str) -> CResult<OptimizerKind> {
    let raw = kv.string(key);
    OptimizerKind::parse(&raw).map_err(|_| ConfigError::BadValue {
        key: key.into(),
        detail: format!("'{raw}' is not sgd|adam"),
    })
}

fn parse_mode(kv: &Lookup, key: &str) -> CResult<SteerMode> {
    let raw = kv.string(key);
    SteerMode::parse(&raw).map_err(|_| ConfigError::BadValue {
        key: key.into(),
        detail: format!("'{raw}' is not flowchef|stepwise-backprop|full-chain-backprop"),
    })
}

impl ExperimentConfig {
    /// Steering section as the core config (gates resolved).
    pub fn steering(&self) -> SteeringConfig {
        SteeringConfig {
            mode: self.steer_mode,
            nfe: self.steer_nfe,
            inner_steps: self.steer_inner,
            scale: self.steer_scale,
            lr: self.steer_lr,
            optimizer: self.steer_optimizer,
            min_t: self.steer_min_t.min(self.steer_nfe),
            max_full_steps_t: self.steer_max_full_steps.min(self.steer_nfe),
            edit_scale: self.steer_edit_scale,
            outer_iters: self.steer_outer_iters,
            snapshot_stride: self.steer_snapshot_stride,
            seed: self.seed,
        }
    }

    /// Canonical resolved echo: every key explicit, sorted, with the preset
    /// recorded as a comment. Parsing the echo reproduces this config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# flowsteer resolved config v1");
        if let Some(p) = &self.preset {
            let _ = writeln!(s, "# expanded from preset: {p}");
        }
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment", self.experiment.tag().into());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("trials", self.trials.to_string());

        put("dataset.kind", self.dataset_kind.clone());
        put("dataset.n", self.dataset_n.to_string());
        put("dataset.modes", self.dataset_modes.to_string());
        put("dataset.radius", self.dataset_radius.to_string());
        put("dataset.sigma", self.dataset_sigma.to_string());
        put("dataset.noise", self.dataset_noise.to_string());
        if !self.dataset_dir.is_empty() {
            put("dataset.dir", self.dataset_dir.clone());
        }

        if !self.model_checkpoint.is_empty() {
            put("model.checkpoint", self.model_checkpoint.clone());
        }
        put("model.init", self.model_init.clone());
        put(
            "model.hidden",
            self.model_hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("model.time-features", self.model_time_features.to_string());
        put("model.conditional", self.model_conditional.to_string());
        put("model.cond-dim", self.model_cond_dim.to_string());

        put("train.target", self.train_target.clone());
        put("train.steps", self.train_steps.to_string());
        put("train.batch", self.train_batch.to_string());
        put("train.lr", self.train_lr.to_string());
        put("train.optimizer", self.train_optimizer.tag().into());
        put("train.reflow-rounds", self.train_reflow_rounds.to_string());
        put("train.reflow-pairs", self.train_reflow_pairs.to_string());
        put("train.reflow-steps", self.train_reflow_steps.to_string());
        put("train.sample-steps", self.train_sample_steps.to_string());
        put("train.save", self.train_save.clone());

        put("steer.mode", self.steer_mode.tag().into());
        put("steer.nfe", self.steer_nfe.to_string());
        put("steer.inner", self.steer_inner.to_string());
        put("steer.scale", self.steer_scale.to_string());
        put("steer.lr", self.steer_lr.to_string());
        put("steer.optimizer", self.steer_optimizer.tag().into());
        put("steer.min-t", self.steer_min_t.to_string());
        put(
            "steer.max-full-steps",
            self.steer_max_full_steps.to_string(),
        );
        put("steer.edit-scale", self.steer_edit_scale.to_string());
        put("steer.outer-iters", self.steer_outer_iters.to_string());
        put(
            "steer.snapshot-stride",
            self.steer_snapshot_stride.to_string(),
        );

        put("sample.count", self.sample_count.to_string());

        put("invert.task", self.invert_task.clone());
        put("invert.sample-index", self.invert_sample_index.to_string());

        put("degrade.box-size", self.degrade_box_size.to_string());
        put("degrade.kernel-size", self.degrade_kernel_size.to_string());
        put(
            "degrade.kernel-sigma",
            self.degrade_kernel_sigma.to_string(),
        );
        put("degrade.factor", self.degrade_factor.to_string());
        put("degrade.noise-sigma", self.degrade_noise_sigma.to_string());

        if !self.classifier_checkpoint.is_empty() {
            put("classifier.checkpoint", self.classifier_checkpoint.clone());
        }
        put(
            "classifier.hidden",
            self.classifier_hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("classifier.steps", self.classifier_steps.to_string());
        put("classifier.batch", self.classifier_batch.to_string());
        put("classifier.lr", self.classifier_lr.to_string());

        put("guide.class", self.guide_class.to_string());
        put("guide.samples", self.guide_samples.to_string());

        let (y, x, h, w) = self.edit_mask_rect;
        put("edit.mask-rect", format!("{y},{x},{h},{w}"));
        put("edit.base-class", self.edit_base_class.to_string());
        put("edit.edit-class", self.edit_edit_class.to_string());
        put("edit.sample-index", self.edit_sample_index.to_string());

        put("theory.kind", self.theory_kind.clone());
        put("theory.dim", self.theory_dim.to_string());
        put("theory.fields", self.theory_fields.to_string());
        put("theory.grid", self.theory_grid.to_string());
        put(
            "theory.s",
            self.theory_s
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("theory.nfe", self.theory_nfe.to_string());
        put("theory.seeds", self.theory_seeds.to_string());
        put("theory.omega", self.theory_omega.to_string());
        put("theory.base-steps", self.theory_base_steps.to_string());

        put(
            "compare.methods",
            self.compare_methods
                .iter()
                .map(|m| m.tag().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("compare.task", self.compare_task.clone());
        put("compare.trials", self.compare_trials.to_string());
        put("compare.chain-nfe", self.compare_chain_nfe.to_string());
        s
    }
}
