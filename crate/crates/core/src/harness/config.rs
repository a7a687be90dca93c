//! Experiment configuration: JSON-backed with defaults, dotted-path
//! overrides, and a canonical hash that ignores key order.

use crate::diffusion::{CfgConfig, SamplerConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::unlearn::{BaselineConfig, TrainSettings, UnlearnConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: usize,
    pub radius: f64,
    pub sigma: f64,
    pub samples_per_class: usize,
    pub forget_classes: Vec<usize>,
    /// Fraction withheld from all training as the unseen set.
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            radius: 3.0,
            sigma: 0.35,
            samples_per_class: 2000,
            forget_classes: vec![2],
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t_max: 200, beta_start: 1e-4, beta_end: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], time_embed_dim: 16, class_embed_dim: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch_size: 128, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub kind: SamplerKind,
    pub eta: f64,
    pub steps: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { kind: SamplerKind::Ddim, eta: 0.0, steps: 20 }
    }
}

impl SamplerSettings {
    pub fn build(&self, t_max: usize) -> Result<SamplerConfig> {
        match self.kind {
            SamplerKind::Ddpm => Ok(SamplerConfig::ddpm()),
            SamplerKind::Ddim => SamplerConfig::ddim(self.eta, self.steps, t_max),
        }
    }
}

/// Per-method knobs for the epoch-driven baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodEpochs {
    pub finetune: usize,
    pub neggrad: usize,
    pub retrain: usize,
    pub so: usize,
}

impl Default for MethodEpochs {
    fn default() -> Self {
        Self { finetune: 20, neggrad: 3, retrain: 300, so: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Generated samples per class for energy distance and accuracy.
    pub samples_per_class: usize,
    /// Monte-Carlo timestep draws per point for loss-based MIA.
    pub loss_draws: usize,
    /// Points per side for the MIA and KL batteries.
    pub max_points: usize,
    pub classifier_iters: usize,
    pub classifier_lr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 400,
            loss_draws: 64,
            max_points: 400,
            classifier_iters: 300,
            classifier_lr: 1.0,
        }
    }
}

pub const METHOD_NAMES: [&str; 8] = [
    "unscrubbed",
    "retrain",
    "finetune",
    "neggrad",
    "blindspot",
    "so",
    "ts",
    "erasediff",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub guidance: CfgConfig,
    pub sampler: SamplerSettings,
    pub method: String,
    pub erasediff: UnlearnConfig,
    pub baseline: BaselineConfig,
    pub epochs: MethodEpochs,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            guidance: CfgConfig { guidance_scale: 0.1, p_uncond: 0.1 },
            sampler: SamplerSettings::default(),
            method: "erasediff".into(),
            erasediff: UnlearnConfig {
                outer_iters: 200,
                inner_steps: 2,
                lr: 1e-3,
                lambda: 0.1,
                batch_remain: 128,
                batch_forget: 128,
                rs_fraction: 0.16,
            },
            baseline: BaselineConfig {
                alpha: 0.5,
                ts_phase1_epochs: 3,
                ts_phase2_epochs: 20,
                blindspot_lambda: 0.1,
                partial_epochs: 10,
                unlearn_epochs: 10,
            },
            epochs: MethodEpochs::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !METHOD_NAMES.contains(&self.method.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "unknown method '{}', expected one of {METHOD_NAMES:?}",
                self.method
            )));
        }
        if self.dataset.forget_classes.is_empty() {
            return Err(Error::InvalidConfig("forget_classes must be nonempty".into()));
        }
        for &c in &self.dataset.forget_classes {
            if c >= self.dataset.classes {
                return Err(Error::UnknownClass { class: c, num_classes: self.dataset.classes });
            }
        }
        if self.dataset.forget_classes.len() >= self.dataset.classes {
            return Err(Error::InvalidConfig("cannot forget every class".into()));
        }
        if !(0.0..1.0).contains(&self.dataset.holdout_fraction) {
            return Err(Error::InvalidConfig("holdout_fraction must lie in [0, 1)".into()));
        }
        self.erasediff.validate()?;
        self.baseline.validate()?;
        self.guidance.validate()?;
        Ok(())
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            weighting: crate::diffusion::LossWeighting::Simplified,
            guidance: self.guidance,
        }
    }

    /// Canonical hash over the full config; key order in the source file is
    /// irrelevant because serialization re-sorts object keys.
    pub fn hash(&self) -> String {
        hash_value(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash over only the fields that determine the unscrubbed model, used
    /// as its cache key.
    pub fn base_hash(&self) -> String {
        let v = serde_json::json!({
            "dataset": self.dataset,
            "schedule": self.schedule,
            "model": self.model,
            "train": self.train,
            "guidance": self.guidance,
            "seed": self.seed,
        });
        hash_value(&v)
    }
}

fn hash_value(v: &serde_json::Value) -> String {
    // serde_json maps are BTree-backed: to_string emits sorted keys.
    let canon = serde_json::to_string(v).expect("value serializes");
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deep-merges `patch` into `base` (objects merge, everything else replaces).
fn merge_value(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted path like `erasediff.lambda` to a JSON-parsed value.
fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidConfig(format!("bad override path '{path}'")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override path '{path}' crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("empty path rejected above")
}

/// Builds a config from defaults, an optional JSON file, and `key=value`
/// overrides, in ascending precedence.
pub fn load_config(
    file: Option<&std::path::Path>,
    overrides: &[String],
    seed: Option<u64>,
    method: Option<&str>,
) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        let patch: serde_json::Value = serde_json::from_str(&text)?;
        merge_value(&mut value, patch);
    }
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override '{entry}' is not key=value")))?;
        // Bare words become strings; everything JSON-parseable is taken as is.
        let parsed = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(&mut value, path, parsed)?;
    }
    if let Some(seed) = seed {
        set_path(&mut value, "seed", serde_json::json!(seed))?;
    }
    if let Some(method) = method {
        set_path(&mut value, "method", serde_json::json!(method))?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}
