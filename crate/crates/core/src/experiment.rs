//! Experiment configuration: one JSON document naming the data, the model
//! and the training run. Unset sections fall back to the per-kind defaults of
//! [`crate::trainer`], and set keys override them one by one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthgen::{presets, GenerativeSpec, Manifest};
use crate::trainer::{default_config, default_model_config, TrainConfig, DATASET_KINDS};

/// Environment variable naming the root that relative dataset paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "CLAP_LAB_DATA_DIR";

/// A generative spec given by preset name or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    Preset(String),
    Inline(Box<GenerativeSpec>),
}

impl SpecSource {
    pub fn resolve(&self, seed: u64) -> Result<GenerativeSpec> {
        let spec = match self {
            SpecSource::Preset(name) => presets::by_name(name, seed)?,
            SpecSource::Inline(s) => (**s).clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Latent widths overriding the kind defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsOverride {
    pub k_c: usize,
    pub k_s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SpecSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Rows generated by `gen-data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Dataset kind; inferred from the manifest when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Partial [`TrainConfig`] merged over the kind default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Value>,
    /// Partial [`crate::objectives::ObjectiveConfig`] merged over the training objective.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsOverride>,
    /// Partial [`ModelConfig`] (arch, likelihood, classifier) merged over the
    /// kind default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            spec: None,
            dataset: None,
            n: None,
            kind: None,
            train: None,
            objective: None,
            dims: None,
            model: None,
            out: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.kind {
            if !DATASET_KINDS.contains(&k.as_str()) {
                return Err(Error::UnknownName {
                    kind: "dataset kind",
                    name: k.clone(),
                    known: DATASET_KINDS.join(", "),
                });
            }
        }
        if self.n == Some(0) {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        for (name, v) in [
            ("train", &self.train),
            ("objective", &self.objective),
            ("model", &self.model),
        ] {
            if v.as_ref().is_some_and(|v| !v.is_object()) {
                return Err(Error::InvalidArgument(format!(
                    "`{name}` must be a JSON object"
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_spec(&self) -> Result<Option<GenerativeSpec>> {
        self.spec.as_ref().map(|s| s.resolve(self.seed)).transpose()
    }

    /// The dataset directory, with relative paths resolved against `root`.
    pub fn dataset_dir(&self, root: Option<&Path>) -> Option<PathBuf> {
        self.dataset.as_ref().map(|p| resolve_data_path(p, root))
    }

    /// Kind named in the config, else inferred: image-shaped data with
    /// ground truth is `toy-image`, other image data `image`, the rest
    /// `vector`.
    pub fn kind_for(&self, manifest: &Manifest) -> String {
        if let Some(k) = &self.kind {
            return k.clone();
        }
        match (manifest.image_shape, manifest.k_core_true) {
            (Some(_), Some(_)) => "toy-image".into(),
            (Some(_), None) => "image".into(),
            (None, _) => "vector".into(),
        }
    }

    pub fn train_config(&self, kind: &str) -> Result<TrainConfig> {
        let mut v = serde_json::to_value(default_config(kind)?)?;
        if let Some(t) = &self.train {
            merge(&mut v, t);
        }
        if let Some(o) = &self.objective {
            merge(&mut v["objective"], o);
        }
        v["seed"] = Value::from(self.seed);
        let cfg: TrainConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, kind: &str, manifest: &Manifest) -> Result<ModelConfig> {
        let mut v = serde_json::to_value(default_model_config(kind, manifest, self.seed)?)?;
        if let Some(m) = &self.model {
            merge(&mut v, m);
        }
        if let Some(d) = self.dims {
            v["dims"]["k_c"] = Value::from(d.k_c);
            v["dims"]["k_s"] = Value::from(d.k_s);
        }
        let cfg: ModelConfig = serde_json::from_value(v)?;
        cfg.dims.validate()?;
        if cfg.dims.obs_dim != manifest.obs_dim || cfg.dims.num_labels != manifest.num_labels {
            return Err(Error::InvalidArgument(
                "model config overrides the dataset's observation or label dims".into(),
            ));
        }
        Ok(cfg)
    }
}

pub fn resolve_data_path(p: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

/// Recursive object merge: keys of `patch` replace or descend into `base`.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
