//! The experiment configuration file: one JSON document covering
//! generation, splitting, training, evaluation, and selection, with
//! dotted-path overrides and a global seed that rederives the per-module
//! seeds. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{ExtractorFamily, GenConfig, Nonlinearity};
use crate::error::{Error, Result};
use crate::metrics::AlignmentOptions;
use crate::seeding::child_seed;
use crate::selector::SelectorConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.6, 0.2, 0.2],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub selector: SelectorConfig,
    pub alignment: AlignmentOptions,
    /// Event-level IoU threshold for parsing reports.
    pub miou: Option<f64>,
    /// Global seed: when set, the gen/split/train seeds are derived from
    /// it, overriding their individual values.
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    /// Applies the global seed derivation. Idempotent.
    pub fn resolve(&mut self) {
        if let Some(seed) = self.seed {
            self.gen.seed = child_seed(seed, 1);
            self.split.seed = child_seed(seed, 2);
            self.train.seed = child_seed(seed, 3);
        }
    }

    pub fn miou_threshold(&self) -> f64 {
        self.miou.unwrap_or(crate::metrics::DEFAULT_MIOU)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        if let Some(m) = self.miou {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Config(format!("miou must be in [0, 1], got {m}")));
            }
        }
        if self.selector.ladder < 2 {
            return Err(Error::Config("selector.ladder must be at least 2".into()));
        }
        Ok(())
    }

    /// Accepts either a bare config document or a `run.json` wrapper
    /// (`{"command": ..., "config": ...}`).
    pub fn from_value(mut value: serde_json::Value) -> Result<Self> {
        if let Some(obj) = value.as_object_mut() {
            if obj.contains_key("command") && obj.contains_key("config") {
                value = obj.remove("config").unwrap();
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<serde_json::Value> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Parse {
            line: e.line(),
            detail: format!("{}: {e}", path.display()),
        })
    }
}

/// Applies `key.path=value` overrides onto a JSON config document. Values
/// parse as JSON when possible and fall back to strings.
pub fn apply_overrides(value: &mut serde_json::Value, sets: &[String]) -> Result<()> {
    for set in sets {
        let (path, raw) = set.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {set:?} must look like key.path=value"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut node = &mut *value;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let is_last = i + 1 == parts.len();
            match node {
                serde_json::Value::Object(map) => {
                    if is_last {
                        map.insert(part.to_string(), parsed.clone());
                        break;
                    }
                    node = map
                        .entry(part.to_string())
                        .or_insert_with(|| serde_json::Value::Object(Default::default()));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "override path {path:?} crosses a non-object"
                    )))
                }
            }
        }
    }
    Ok(())
}

/// The default distinct family pair used by `gen` and the alignment
/// experiments: two independently drawn extractors over the same latents.
pub fn default_families(
    gen: &GenConfig,
    fingerprint_scale: f64,
) -> Result<(ExtractorFamily, ExtractorFamily)> {
    let audio = ExtractorFamily::random(
        "audio_base",
        gen.latent_dim,
        gen.dim_audio,
        fingerprint_scale,
        Nonlinearity::Identity,
        child_seed(gen.seed, 0xFA),
    )?;
    let visual = ExtractorFamily::random(
        "visual_base",
        gen.latent_dim,
        gen.dim_visual,
        fingerprint_scale,
        Nonlinearity::Identity,
        child_seed(gen.seed, 0xFB),
    )?;
    Ok((audio, visual))
}
