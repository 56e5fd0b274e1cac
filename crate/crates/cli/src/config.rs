//! Experiment configuration: TOML file, `--set` overrides and `--seed`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sdnc_core::experiment::{CorpusConfig, TrainingRun};
use sdnc_core::pipeline::PipelineConfig;

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../default.toml");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub training: TrainingRun,
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    /// Parses `text`, applies `key=value` overrides, then the global seed.
    pub fn resolve(text: &str, source: &str, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::InvalidConfig(format!("{source}: {e}")))?;
        let mut value = serde_json::to_value(table).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| CliError::InvalidConfig(format!("{source}: {e}")))?;
        if let Some(s) = seed {
            cfg.apply_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::MissingInput(format!("config {}: {e}", p.display())))?;
                Self::resolve(&text, &p.display().to_string(), overrides, seed)
            }
            None => Self::resolve(DEFAULT_CONFIG, "built-in default", overrides, seed),
        }
    }

    /// One seed drives data generation, initialization, training order and
    /// the simulators.
    pub fn apply_seed(&mut self, seed: u64) {
        self.corpus.synth.seed = seed;
        self.training.init_seed = seed;
        self.training.pretrain.seed = seed;
        self.training.finetune.seed = seed.wrapping_add(1);
        self.pipeline.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: sdnc_core::Error| CliError::InvalidConfig(e.to_string());
        self.corpus.validate().map_err(invalid)?;
        self.training.model.validate().map_err(invalid)?;
        self.training.pretrain.validate().map_err(invalid)?;
        self.training.finetune.validate().map_err(invalid)?;
        self.pipeline.validate().map_err(invalid)?;
        if self.corpus.synth.dim != self.training.model.input_dim {
            return Err(CliError::InvalidConfig(format!(
                "corpus.synth.dim = {} but training.model.input_dim = {}",
                self.corpus.synth.dim, self.training.model.input_dim
            )));
        }
        if self.pipeline.windowing != self.corpus.windowing {
            return Err(CliError::InvalidConfig(
                "pipeline.windowing must equal corpus.windowing".into(),
            ));
        }
        Ok(())
    }

    /// Hash of everything except the system selector, so that the systems
    /// compared on one corpus share a hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(p) = v.get_mut("pipeline").and_then(Value::as_object_mut) {
            p.remove("mode");
        }
        sdnc_core::metrics::config_hash(&v).expect("config serializes")
    }
}

/// `a.b.c=value`, where `value` is read as JSON and falls back to a plain
/// string.
fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::InvalidConfig(format!("--set expects key=value, got {spec:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        if k.is_empty() {
            return Err(CliError::InvalidConfig(format!("empty key in {path:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::InvalidConfig(format!("{path:?}: {} is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_default_matches_the_built_in_defaults() {
        let cfg = ExperimentConfig::resolve(DEFAULT_CONFIG, "default", &[], None).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::resolve(
            "",
            "empty",
            &["corpus.synth.embed_noise_sigma=0.0".into(), "pipeline.mode=cascaded_sc".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.corpus.synth.embed_noise_sigma, 0.0);
        assert_eq!(cfg.pipeline.mode, sdnc_core::Mode::CascadedSc);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for o in ["corpus.nope=1", "pipeline.asr_sub_prob=2.0", "novalue"] {
            let e = ExperimentConfig::resolve("", "empty", &[o.into()], None).unwrap_err();
            assert!(matches!(e, CliError::InvalidConfig(_)), "{o}");
        }
    }

    #[test]
    fn the_hash_ignores_the_system_selector_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.pipeline.mode = sdnc_core::Mode::CascadedSc;
        assert_eq!(a.hash(), b.hash());
        b.apply_seed(9);
        assert_ne!(a.hash(), b.hash());
    }
}
