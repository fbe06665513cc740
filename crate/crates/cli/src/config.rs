//! Run configuration: preset defaults overlaid with a JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use robdistill_core::augment::ContaminationPolicy;
use robdistill_core::distill::DistillConfig;
use robdistill_core::eval_harness::{KwsSpec, ProbeConfig};
use robdistill_core::models::{Preset, PRESET_NAMES};
use robdistill_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Noise categories dropped from the noise corpus by default.
pub const DEFAULT_EXCLUDED: [&str; 2] = ["children_playing", "street_music"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("`{path}` is not valid JSON: {msg}")]
    Json { path: String, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value in config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// Where audio comes from. Unset manifests fall back to the synthetic
/// corpora generated from `synth` and `synth_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorporaConfig {
    pub speech_manifest: Option<PathBuf>,
    pub noise_train_manifest: Option<PathBuf>,
    pub rir_train_manifest: Option<PathBuf>,
    pub noise_test_manifest: Option<PathBuf>,
    pub rir_test_manifest: Option<PathBuf>,
    pub excluded_categories: Vec<String>,
    pub synth: SynthConfig,
    pub synth_seed: u64,
}

impl Default for CorporaConfig {
    fn default() -> Self {
        CorporaConfig {
            speech_manifest: None,
            noise_train_manifest: None,
            rir_train_manifest: None,
            noise_test_manifest: None,
            rir_test_manifest: None,
            excluded_categories: DEFAULT_EXCLUDED.iter().map(|s| s.to_string()).collect(),
            synth: SynthConfig::default(),
            synth_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub kws: KwsSpec,
    pub probe: ProbeConfig,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub breakdown_snr_low_db: f64,
    pub breakdown_snr_high_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            kws: KwsSpec::default(),
            probe: ProbeConfig::default(),
            snr_low_db: -5.0,
            snr_high_db: 20.0,
            breakdown_snr_low_db: -5.0,
            breakdown_snr_high_db: 5.0,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub threads: usize,
    pub policy: ContaminationPolicy,
    pub distill: DistillConfig,
    pub corpora: CorporaConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults for a preset: the full recipe for `base`, desk-scale
    /// settings otherwise.
    pub fn for_preset(name: &str) -> Result<Self, ConfigError> {
        if !PRESET_NAMES.contains(&name) {
            return Err(ConfigError::UnknownPreset(name.to_string()));
        }
        let mut distill = if name == "base" { DistillConfig::full() } else { DistillConfig::toy() };
        let mut synth = SynthConfig::default();
        if name == "tiny" {
            distill.total_steps = 20;
            distill.warmup_steps = 2;
            distill.batch_size = 2;
            distill.crop_s = 0.1;
            distill.checkpoint_every = 10;
            synth.speech_utterances = 4;
            synth.speech_duration_s = 0.5;
            synth.word_utterances = 4;
            synth.word_duration_s = 0.5;
            synth.noise_clips_per_category = 1;
            synth.noise_duration_s = 0.5;
            synth.train_rirs = 2;
            synth.test_rirs_per_bin = 1;
        }
        let mut eval = EvalConfig::default();
        if name == "tiny" {
            eval.kws.train_per_class = 4;
            eval.kws.test_per_class = 2;
            eval.kws.n_classes = 3;
            eval.kws.duration_s = 0.25;
            eval.probe.iterations = 50;
        }
        Ok(RunConfig {
            preset: name.to_string(),
            seed: 0,
            threads: 1,
            policy: ContaminationPolicy::default(),
            distill,
            corpora: CorporaConfig { synth, ..CorporaConfig::default() },
            eval,
        })
    }

    pub fn preset(&self) -> Result<Preset, ConfigError> {
        Preset::by_name(&self.preset).map_err(|_| ConfigError::UnknownPreset(self.preset.clone()))
    }

    /// Distillation settings with the run-level seed and thread count.
    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig { seed: self.seed, threads: self.threads, ..self.distill.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.preset()?;
        self.distill_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval.snr_low_db > self.eval.snr_high_db
            || self.eval.breakdown_snr_low_db > self.eval.breakdown_snr_high_db
        {
            return Err(ConfigError::Invalid("evaluation SNR range is reversed".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Overlays `overlay` onto `base`, failing on keys `base` does not have.
fn merge(base: &mut Value, overlay: Value, path: &str) -> Result<(), ConfigError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let key_path = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key_path)?,
                    None => return Err(ConfigError::UnknownKey(key_path)),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses config text over the defaults of its preset. `preset` overrides
/// the file's own `preset` key; the fallback is `toy`. Empty text yields
/// the defaults.
pub fn parse_config(text: &str, preset: Option<&str>, origin: &str) -> Result<RunConfig, ConfigError> {
    let overlay: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError::Json { path: origin.to_string(), msg: e.to_string() })?
    };
    if !overlay.is_object() {
        return Err(ConfigError::Json { path: origin.to_string(), msg: "top level must be an object".into() });
    }
    let name = match preset {
        Some(p) => p.to_string(),
        None => overlay.get("preset").and_then(Value::as_str).unwrap_or("toy").to_string(),
    };
    let mut merged = serde_json::to_value(RunConfig::for_preset(&name)?).expect("config serializes");
    merge(&mut merged, overlay, "")?;
    merged["preset"] = Value::String(name);
    let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>, preset: Option<&str>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
    parse_config(&text, preset, &shown)
}

pub fn save_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    fs::write(path, cfg.to_json()).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("", None, "<mem>").unwrap();
        assert_eq!(cfg, RunConfig::for_preset("toy").unwrap());
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let err = parse_config(r#"{"policy": {"snr_lo": 3}}"#, None, "<mem>").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(ref k) if k == "policy.snr_lo"), "{err}");
    }

    #[test]
    fn nested_override_keeps_siblings() {
        let cfg = parse_config(r#"{"distill": {"total_steps": 400}, "seed": 9}"#, None, "<mem>").unwrap();
        assert_eq!(cfg.distill.total_steps, 400);
        assert_eq!(cfg.distill.peak_lr, DistillConfig::toy().peak_lr);
        assert_eq!(cfg.distill_config().seed, 9);
    }

    #[test]
    fn preset_argument_wins() {
        let cfg = parse_config(r#"{"preset": "toy"}"#, Some("base"), "<mem>").unwrap();
        assert_eq!(cfg.preset, "base");
        assert_eq!(cfg.distill.total_steps, 200_000);
    }

    #[test]
    fn serialized_config_round_trips() {
        for name in PRESET_NAMES {
            let cfg = RunConfig::for_preset(name).unwrap();
            assert_eq!(parse_config(&cfg.to_json(), None, "<mem>").unwrap(), cfg);
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse_config(r#"{"distill": {"warmup_steps": 5000}}"#, None, "<mem>").is_err());
        assert!(parse_config(r#"{"policy": {"action_weights": [1, 1, 0, 0]}}"#, None, "<mem>").is_err());
        assert!(parse_config("[1]", None, "<mem>").is_err());
        assert!(matches!(parse_config("{}", Some("huge"), "<mem>"), Err(ConfigError::UnknownPreset(_))));
    }
}
