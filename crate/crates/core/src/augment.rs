//! Online contamination policy: corpus manifests, action sampling and
//! per-item seeded batch contamination producing (noisy input, clean
//! target) pairs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{read_wav, resample, wav_duration_s, AudioError, Waveform};
use crate::dsp::{apply_rir, mix_at_snr, DspError, RoomImpulseResponse, SnrDb};
use crate::rng::{rng_for, stream};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: referenced file `{file}` does not exist")]
    MissingFile { path: String, line: usize, file: String },
    #[error("{path}:{line}: kind `{found}` differs from the manifest's kind `{expected}`")]
    MixedKinds { path: String, line: usize, expected: ManifestKind, found: ManifestKind },
    #[error("manifest `{path}` holds `{found}` entries, expected `{expected}`")]
    WrongKind { path: String, expected: ManifestKind, found: ManifestKind },
    #[error("invalid contamination policy: {0}")]
    InvalidPolicy(String),
    #[error("the {0} corpus is empty")]
    EmptyCorpus(ManifestKind),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("action refers to missing {kind} index {index}")]
    UnknownId { kind: ManifestKind, index: usize },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io error on `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Speech,
    Noise,
    Rir,
}

impl std::fmt::Display for ManifestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ManifestKind::Speech => "speech",
            ManifestKind::Noise => "noise",
            ManifestKind::Rir => "rir",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub kind: ManifestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub duration_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    path: String,
    kind: ManifestKind,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    duration_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kind(&self) -> Option<ManifestKind> {
        self.entries.first().map(|e| e.kind)
    }

    /// Distinct categories in first-appearance order.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.entries.iter().filter_map(|e| e.category.clone()).filter(|c| seen.insert(c.clone())).collect()
    }
}

/// Parses a JSON-Lines manifest. Relative paths resolve against the
/// manifest's directory; blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, AugmentError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| AugmentError::Io { path: shown.clone(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| AugmentError::Parse {
            path: shown.clone(),
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(first) = entries.first() {
            if first.kind != raw.kind {
                return Err(AugmentError::MixedKinds {
                    path: shown,
                    line: line_no,
                    expected: first.kind,
                    found: raw.kind,
                });
            }
        }
        let resolved = {
            let p = PathBuf::from(&raw.path);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        if !resolved.is_file() {
            return Err(AugmentError::MissingFile { path: shown, line: line_no, file: raw.path });
        }
        let duration_s = match raw.duration_s {
            Some(d) => d,
            None => wav_duration_s(&resolved)?,
        };
        entries.push(ManifestEntry { path: resolved, kind: raw.kind, category: raw.category, duration_s });
    }
    Ok(CorpusManifest { entries })
}

/// Writes a manifest with paths relative to the manifest's directory when
/// possible.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &CorpusManifest) -> Result<(), AugmentError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    for e in &manifest.entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        let entry = ManifestEntry { path: rel.to_path_buf(), ..e.clone() };
        out.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| AugmentError::Io { path: path.display().to_string(), source })
}

/// An in-memory signal tagged with its manifest identity.
#[derive(Debug, Clone)]
pub struct Labeled<T> {
    pub id: String,
    pub category: Option<String>,
    pub item: T,
}

/// Noise clips and room impulse responses available to the policy, all at
/// one sample rate.
#[derive(Debug, Clone, Default)]
pub struct Corpora {
    pub noises: Vec<Labeled<Waveform>>,
    pub rirs: Vec<Labeled<RoomImpulseResponse>>,
}

impl Corpora {
    /// Reads every clip, resampling to `sample_rate`. Noise entries whose
    /// category is in `excluded` are dropped.
    pub fn from_manifests(
        noise: &CorpusManifest,
        rir: &CorpusManifest,
        sample_rate: u32,
        excluded: &[String],
    ) -> Result<Self, AugmentError> {
        for (m, kind) in [(noise, ManifestKind::Noise), (rir, ManifestKind::Rir)] {
            if let Some(found) = m.kind().filter(|k| *k != kind) {
                return Err(AugmentError::WrongKind { path: String::from("<manifest>"), expected: kind, found });
            }
        }
        let load = |e: &ManifestEntry| -> Result<Waveform, AugmentError> {
            let w = read_wav(&e.path)?;
            Ok(if w.sample_rate() == sample_rate { w } else { resample(&w, sample_rate)? })
        };
        let mut noises = Vec::new();
        for e in &noise.entries {
            if e.category.as_ref().is_some_and(|c| excluded.contains(c)) {
                continue;
            }
            noises.push(Labeled { id: e.path.display().to_string(), category: e.category.clone(), item: load(e)? });
        }
        let mut rirs = Vec::new();
        for e in &rir.entries {
            let id = e.path.display().to_string();
            let rir = RoomImpulseResponse::from_waveform(&load(e)?, id.clone())?;
            rirs.push(Labeled { id, category: e.category.clone(), item: rir });
        }
        Ok(Corpora { noises, rirs })
    }

    /// Keeps only noise clips whose category is not excluded.
    pub fn excluding(mut self, excluded: &[String]) -> Self {
        self.noises.retain(|n| !n.category.as_ref().is_some_and(|c| excluded.contains(c)));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationPolicy {
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    /// Weights of Clean, Noise, Reverb and NoiseReverb.
    pub action_weights: [f64; 4],
}

impl Default for ContaminationPolicy {
    fn default() -> Self {
        ContaminationPolicy { snr_low_db: 0.0, snr_high_db: 20.0, action_weights: [0.25; 4] }
    }
}

impl ContaminationPolicy {
    /// A policy that never contaminates.
    pub fn clean_only() -> Self {
        ContaminationPolicy { action_weights: [1.0, 0.0, 0.0, 0.0], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidPolicy(m));
        if !self.snr_low_db.is_finite() || !self.snr_high_db.is_finite() {
            return bad("SNR bounds must be finite".into());
        }
        if self.snr_low_db > self.snr_high_db {
            return bad(format!("snr_low_db {} exceeds snr_high_db {}", self.snr_low_db, self.snr_high_db));
        }
        if self.action_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("action weights must be nonnegative".into());
        }
        let total: f64 = self.action_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("action weights sum to {total}, not 1"));
        }
        Ok(())
    }
}

/// One policy outcome. Noise and RIR identities are indices into [`Corpora`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ContaminationAction {
    Clean,
    Noise { snr_db: f64, noise: usize },
    Reverb { rir: usize },
    NoiseReverb { snr_db: f64, noise: usize, rir: usize },
}

impl ContaminationAction {
    /// Position of the tag in the policy's weight vector.
    pub fn tag_index(&self) -> usize {
        match self {
            ContaminationAction::Clean => 0,
            ContaminationAction::Noise { .. } => 1,
            ContaminationAction::Reverb { .. } => 2,
            ContaminationAction::NoiseReverb { .. } => 3,
        }
    }

    pub fn tag_name(&self) -> &'static str {
        ["clean", "noise", "reverb", "noise_reverb"][self.tag_index()]
    }

    pub fn snr_db(&self) -> Option<f64> {
        match *self {
            ContaminationAction::Noise { snr_db, .. } | ContaminationAction::NoiseReverb { snr_db, .. } => Some(snr_db),
            _ => None,
        }
    }
}

fn pick_index<R: Rng + ?Sized>(len: usize, kind: ManifestKind, rng: &mut R) -> Result<usize, AugmentError> {
    if len == 0 {
        return Err(AugmentError::EmptyCorpus(kind));
    }
    Ok(rng.random_range(0..len))
}

/// Draws an action tag by the policy weights, then its SNR uniformly in the
/// policy bounds and its noise / RIR uniformly from the corpora.
pub fn sample_action<R: Rng + ?Sized>(
    policy: &ContaminationPolicy,
    corpora: &Corpora,
    rng: &mut R,
) -> Result<ContaminationAction, AugmentError> {
    policy.validate()?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut tag = 3;
    for (i, w) in policy.action_weights.iter().enumerate() {
        acc += w;
        if u < acc {
            tag = i;
            break;
        }
    }
    // Skip zero-weight tags that rounding could otherwise land on.
    while policy.action_weights[tag] == 0.0 {
        tag -= 1;
    }
    let snr = |rng: &mut R| rng.random_range(policy.snr_low_db..=policy.snr_high_db);
    Ok(match tag {
        0 => ContaminationAction::Clean,
        1 => {
            let snr_db = snr(rng);
            let noise = pick_index(corpora.noises.len(), ManifestKind::Noise, rng)?;
            ContaminationAction::Noise { snr_db, noise }
        }
        2 => ContaminationAction::Reverb { rir: pick_index(corpora.rirs.len(), ManifestKind::Rir, rng)? },
        _ => {
            let snr_db = snr(rng);
            let noise = pick_index(corpora.noises.len(), ManifestKind::Noise, rng)?;
            let rir = pick_index(corpora.rirs.len(), ManifestKind::Rir, rng)?;
            ContaminationAction::NoiseReverb { snr_db, noise, rir }
        }
    })
}

fn noise_at(corpora: &Corpora, index: usize) -> Result<&Waveform, AugmentError> {
    corpora.noises.get(index).map(|n| &n.item).ok_or(AugmentError::UnknownId { kind: ManifestKind::Noise, index })
}

fn rir_at(corpora: &Corpora, index: usize) -> Result<&RoomImpulseResponse, AugmentError> {
    corpora.rirs.get(index).map(|r| &r.item).ok_or(AugmentError::UnknownId { kind: ManifestKind::Rir, index })
}

/// Applies `action` to `clean`. Returns `(input, target)`; the target is
/// always the untouched clean waveform. NoiseReverb reverberates first and
/// measures the SNR against the reverberant speech.
pub fn contaminate<R: Rng + ?Sized>(
    clean: &Waveform,
    action: &ContaminationAction,
    corpora: &Corpora,
    rng: &mut R,
) -> Result<(Waveform, Waveform), AugmentError> {
    let input = match *action {
        ContaminationAction::Clean => clean.clone(),
        ContaminationAction::Noise { snr_db, noise } => {
            mix_at_snr(clean, noise_at(corpora, noise)?, SnrDb::new(snr_db)?, rng)?
        }
        ContaminationAction::Reverb { rir } => apply_rir(clean, rir_at(corpora, rir)?)?,
        ContaminationAction::NoiseReverb { snr_db, noise, rir } => {
            let wet = apply_rir(clean, rir_at(corpora, rir)?)?;
            mix_at_snr(&wet, noise_at(corpora, noise)?, SnrDb::new(snr_db)?, rng)?
        }
    };
    Ok((input, clean.clone()))
}

#[derive(Debug, Clone)]
pub struct Contaminated {
    pub input: Waveform,
    pub target: Waveform,
    pub action: ContaminationAction,
}

/// Contaminates every item with its own RNG derived from `(seed, index)`,
/// so the result does not depend on processing order or thread count.
pub fn contaminate_batch(
    batch: &[Waveform],
    policy: &ContaminationPolicy,
    corpora: &Corpora,
    seed: u64,
) -> Result<Vec<Contaminated>, AugmentError> {
    if batch.is_empty() {
        return Err(AugmentError::EmptyBatch);
    }
    policy.validate()?;
    batch.par_iter().enumerate().map(|(i, clean)| contaminate_item(clean, i, policy, corpora, seed)).collect()
}

/// The work done for item `index` of a batch; exposed so callers can
/// process items in any order.
pub fn contaminate_item(
    clean: &Waveform,
    index: usize,
    policy: &ContaminationPolicy,
    corpora: &Corpora,
    seed: u64,
) -> Result<Contaminated, AugmentError> {
    let mut rng = rng_for(seed, stream::AUGMENT_ITEM, index as u64);
    let action = sample_action(policy, corpora, &mut rng)?;
    let (input, target) = contaminate(clean, &action, corpora, &mut rng)?;
    Ok(Contaminated { input, target, action })
}
