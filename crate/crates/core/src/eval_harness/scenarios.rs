//! Degraded test conditions and the noise-type / room-size breakdowns.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::kws::LabeledSet;
use super::probe::{eval_probe, LinearProbe};
use super::EvalError;
use crate::audio_io::Waveform;
use crate::augment::{contaminate, AugmentError, ContaminationAction, Corpora, ManifestKind};
use crate::dsp::{apply_rir, mix_at_snr, DspError, SnrDb};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "c")]
    Clean,
    #[serde(rename = "n")]
    Noise,
    #[serde(rename = "r")]
    Reverb,
    #[serde(rename = "n+r")]
    NoiseReverb,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Clean, Condition::Noise, Condition::Reverb, Condition::NoiseReverb];

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Clean => "c",
            Condition::Noise => "n",
            Condition::Reverb => "r",
            Condition::NoiseReverb => "n+r",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Condition {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.tag() == s.trim())
            .ok_or_else(|| EvalError::Parse(format!("unknown condition `{s}`")))
    }
}

/// Additive-noise SNR range in dB for the degraded conditions.
pub const TEST_SNR_RANGE: (f64, f64) = (-5.0, 20.0);
pub const BREAKDOWN_SNR_RANGE: (f64, f64) = (-5.0, 5.0);

fn degrade(
    clean: &Waveform,
    cond: Condition,
    corpora: &Corpora,
    snr: (f64, f64),
    seed: u64,
    index: usize,
) -> Result<Waveform, EvalError> {
    let mut rng = rng_for(derive_seed(seed, stream::SCENARIO, cond.index() as u64), 0, index as u64);
    let need = |len: usize, kind| if len == 0 { Err(AugmentError::EmptyCorpus(kind)) } else { Ok(len) };
    let action = match cond {
        Condition::Clean => ContaminationAction::Clean,
        Condition::Noise => {
            let n = need(corpora.noises.len(), ManifestKind::Noise)?;
            let snr_db = rng.random_range(snr.0..=snr.1);
            ContaminationAction::Noise { snr_db, noise: rng.random_range(0..n) }
        }
        Condition::Reverb => {
            let r = need(corpora.rirs.len(), ManifestKind::Rir)?;
            ContaminationAction::Reverb { rir: rng.random_range(0..r) }
        }
        Condition::NoiseReverb => {
            let n = need(corpora.noises.len(), ManifestKind::Noise)?;
            let r = need(corpora.rirs.len(), ManifestKind::Rir)?;
            let snr_db = rng.random_range(snr.0..=snr.1);
            ContaminationAction::NoiseReverb { snr_db, noise: rng.random_range(0..n), rir: rng.random_range(0..r) }
        }
    };
    Ok(contaminate(clean, &action, corpora, &mut rng)?.0)
}

/// Degraded copies of `test` for each requested condition. Every draw
/// comes from `(seed, condition, item)`, so all models see identical sets.
pub fn build_scenarios(
    test: &[Waveform],
    corpora: &Corpora,
    conditions: &[Condition],
    snr: (f64, f64),
    seed: u64,
) -> Result<BTreeMap<Condition, Vec<Waveform>>, EvalError> {
    let mut out = BTreeMap::new();
    for &cond in conditions {
        let set = test
            .par_iter()
            .enumerate()
            .map(|(i, w)| degrade(w, cond, corpora, snr, seed, i))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(cond, set);
    }
    Ok(out)
}

/// Accuracy per condition of a trained probe.
pub fn evaluate_conditions<E: FeatureExtractor + ?Sized>(
    model: &E,
    probe: &LinearProbe,
    scenarios: &BTreeMap<Condition, Vec<Waveform>>,
    labels: &[usize],
) -> Result<BTreeMap<Condition, f64>, EvalError> {
    let before = model.checksum();
    let mut out = BTreeMap::new();
    for (&cond, waves) in scenarios {
        out.insert(cond, eval_probe(model, probe, waves, labels)?);
    }
    if model.checksum() != before {
        return Err(EvalError::UpstreamMutated);
    }
    Ok(out)
}

fn category_key(c: &Option<String>) -> String {
    c.clone().unwrap_or_else(|| "uncategorized".to_string())
}

fn categories<T>(items: &[crate::augment::Labeled<T>]) -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for it in items {
        let k = category_key(&it.category);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

/// Accuracy per noise category with SNR drawn from `snr`. A category that
/// cannot be mixed (silent noise) is skipped with a warning.
pub fn noise_type_breakdown<E: FeatureExtractor + ?Sized>(
    model: &E,
    probe: &LinearProbe,
    test: &LabeledSet,
    corpora: &Corpora,
    snr: (f64, f64),
    seed: u64,
) -> Result<BTreeMap<String, f64>, EvalError> {
    if corpora.noises.is_empty() {
        return Err(AugmentError::EmptyCorpus(ManifestKind::Noise).into());
    }
    let mut out = BTreeMap::new();
    for (ci, cat) in categories(&corpora.noises).into_iter().enumerate() {
        let pool: Vec<&Waveform> =
            corpora.noises.iter().filter(|n| category_key(&n.category) == cat).map(|n| &n.item).collect();
        let degraded: Result<Vec<Waveform>, EvalError> = test
            .waves
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let mut rng = rng_for(derive_seed(seed, stream::BREAKDOWN, ci as u64), 0, i as u64);
                let noise = pool[rng.random_range(0..pool.len())];
                let snr_db = SnrDb::new(rng.random_range(snr.0..=snr.1))?;
                Ok(mix_at_snr(w, noise, snr_db, &mut rng)?)
            })
            .collect();
        match degraded {
            Ok(waves) => {
                out.insert(cat, eval_probe(model, probe, &waves, &test.labels)?);
            }
            Err(EvalError::Dsp(DspError::SilentSignal)) => {
                log::warn!("noise category `{cat}` is silent; excluded from the breakdown");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Accuracy per room-size bin (the RIR category).
pub fn room_size_breakdown<E: FeatureExtractor + ?Sized>(
    model: &E,
    probe: &LinearProbe,
    test: &LabeledSet,
    corpora: &Corpora,
    seed: u64,
) -> Result<BTreeMap<String, f64>, EvalError> {
    if corpora.rirs.is_empty() {
        return Err(AugmentError::EmptyCorpus(ManifestKind::Rir).into());
    }
    let mut out = BTreeMap::new();
    for (ci, cat) in categories(&corpora.rirs).into_iter().enumerate() {
        let pool: Vec<_> = corpora.rirs.iter().filter(|r| category_key(&r.category) == cat).map(|r| &r.item).collect();
        let waves = test
            .waves
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let mut rng = rng_for(derive_seed(seed, stream::BREAKDOWN, 0x100 + ci as u64), 0, i as u64);
                Ok(apply_rir(w, pool[rng.random_range(0..pool.len())])?)
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        out.insert(cat, eval_probe(model, probe, &waves, &test.labels)?);
    }
    Ok(out)
}
