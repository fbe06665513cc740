//! Synthetic stand-ins for the speech, noise and room-impulse-response
//! corpora, so the whole pipeline runs without external datasets.
//!
//! Training and test noises come from disjoint generator families so test
//! conditions stay unseen during distillation.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio_io::{rms_of, write_wav, WavEncoding, Waveform};
use crate::augment::{write_manifest, AugmentError, Corpora, CorpusManifest, Labeled, ManifestEntry, ManifestKind};
use crate::dsp::RoomImpulseResponse;
use crate::eval_harness::random_word;
use crate::rng::{derive_seed, rng_for, stream};

pub const TRAIN_NOISE_CATEGORIES: [&str; 6] = ["white", "pink", "brown", "hum", "siren", "engine"];
pub const TEST_NOISE_CATEGORIES: [&str; 3] = ["indoor", "outdoor", "transportation"];
/// Room-size bins and their RT60 in seconds.
pub const ROOM_BINS: [(&str, f64); 3] = [("small", 0.2), ("medium", 0.6), ("large", 1.2)];

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn normalize_rms(mut x: Vec<f64>, target: f64) -> Vec<f64> {
    let r = rms_of(&x).unwrap_or(0.0);
    if r > 0.0 {
        let g = target / r;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

pub fn white<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// 1/f noise from a bank of first-order filters.
pub fn pink<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w = normal(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

pub fn brown<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    (0..n)
        .map(|_| {
            acc = 0.995 * acc + normal(rng) * 0.1;
            acc
        })
        .collect()
}

/// One-pole low-pass filter with cutoff `fc`.
fn lowpass(x: &[f64], fc: f64, sr: f64) -> Vec<f64> {
    let a = (-2.0 * PI * fc / sr).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = (1.0 - a) * v + a * y;
            y
        })
        .collect()
}

fn highpass(x: &[f64], fc: f64, sr: f64) -> Vec<f64> {
    let lp = lowpass(x, fc, sr);
    x.iter().zip(lp).map(|(a, b)| a - b).collect()
}

fn harmonic_hum<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: f64) -> Vec<f64> {
    let f0 = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
    let phases: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=6).map(|k| (2.0 * PI * f0 * k as f64 * t + phases[k - 1]).sin() / k as f64).sum()
        })
        .collect()
}

fn siren<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: f64) -> Vec<f64> {
    let (lo, hi) = (rng.random_range(500.0..800.0), rng.random_range(1100.0..1600.0));
    let rate = rng.random_range(0.3..1.5);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = lo + (hi - lo) * 0.5 * (1.0 + (2.0 * PI * rate * t).sin());
            phase += 2.0 * PI * f / sr;
            phase.sin()
        })
        .collect()
}

fn engine<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.random_range(25.0..45.0);
    let rumble = lowpass(&white(rng, n), 200.0, sr);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let pulses: f64 = (1..=8).map(|k| (2.0 * PI * f0 * k as f64 * t).sin().powi(3) / k as f64).sum();
            pulses + 3.0 * rumble[i]
        })
        .collect()
}

/// Overlapping voices: the indoor test family.
fn babble<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: u32) -> Vec<f64> {
    let voices = rng.random_range(3..6);
    let mut out = vec![0.0; n];
    for _ in 0..voices {
        let v = speech_samples(rng, n, sr);
        out.iter_mut().zip(v).for_each(|(o, s)| *o += s);
    }
    let hum = harmonic_hum(rng, n, sr as f64);
    out.iter_mut().zip(hum).for_each(|(o, h)| *o += 0.02 * h);
    out
}

/// Gusty wind with bird chirps: the outdoor test family.
fn outdoor<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: f64) -> Vec<f64> {
    let wind = lowpass(&white(rng, n), 400.0, sr);
    let gust_rate = rng.random_range(0.2..0.8);
    let mut out: Vec<f64> =
        wind.iter().enumerate().map(|(i, w)| w * (1.2 + (2.0 * PI * gust_rate * i as f64 / sr).sin())).collect();
    let chirps = rng.random_range(2..8);
    for _ in 0..chirps {
        let start = rng.random_range(0..n);
        let len = (rng.random_range(0.03..0.12) * sr) as usize;
        let (f_a, f_b) = (rng.random_range(2500.0..4500.0), rng.random_range(3000.0..6000.0));
        let mut phase = 0.0;
        for j in 0..len.min(n - start) {
            let u = j as f64 / len as f64;
            phase += 2.0 * PI * (f_a + (f_b - f_a) * u) / sr;
            out[start + j] += 0.3 * (PI * u).sin() * phase.sin();
        }
    }
    out
}

/// Road rumble with a passing-vehicle swell: the transportation family.
fn transportation<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: f64) -> Vec<f64> {
    let road = brown(rng, n);
    let tyre = highpass(&lowpass(&white(rng, n), 1500.0, sr), 300.0, sr);
    let pass_at = rng.random_range(0.2..0.8) * n as f64;
    let width = rng.random_range(0.1..0.3) * n as f64;
    let f0 = rng.random_range(80.0..140.0);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let d = (i as f64 - pass_at) / width;
            let swell = 0.3 + (-d * d).exp();
            let doppler = 1.0 - 0.08 * d.tanh();
            phase += 2.0 * PI * f0 * doppler / sr;
            road[i] + swell * (2.0 * tyre[i] + 0.3 * phase.sin())
        })
        .collect()
}

/// A noise clip of the given category, normalized to RMS 0.1.
pub fn noise_clip<R: Rng + ?Sized>(category: &str, rng: &mut R, n: usize, sr: u32) -> Option<Vec<f64>> {
    let f = sr as f64;
    let x = match category {
        "white" => white(rng, n),
        "pink" => pink(rng, n),
        "brown" => brown(rng, n),
        "hum" => harmonic_hum(rng, n, f),
        "siren" => siren(rng, n, f),
        "engine" => engine(rng, n, f),
        "indoor" => babble(rng, n, sr),
        "outdoor" => outdoor(rng, n, f),
        "transportation" => transportation(rng, n, f),
        _ => return None,
    };
    Some(normalize_rms(x, 0.1))
}

/// Formant peaks (Hz) of a few vowel-like spectra.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

fn formant_gain(f: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let bw = 80.0 + 40.0 * i as f64;
            let d = (f - c) / bw;
            (-0.5 * d * d).exp() / (1.0 + i as f64)
        })
        .sum::<f64>()
        + 0.01
}

fn speech_samples<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: u32) -> Vec<f64> {
    let f = sr as f64;
    let mut out = vec![0.0; n];
    let mut pos = (rng.random_range(0.0..0.1) * f) as usize;
    let speaker_f0 = rng.random_range(90.0..230.0);
    while pos < n {
        if rng.random_bool(0.25) {
            // Fricative burst.
            let len = (rng.random_range(0.05..0.12) * f) as usize;
            let burst = highpass(&white(rng, len), rng.random_range(2500.0..4500.0), f);
            for (j, b) in burst.iter().enumerate().take(n.saturating_sub(pos)) {
                let env = (PI * j as f64 / len as f64).sin();
                out[pos + j] += 0.15 * env * b;
            }
            pos += len;
        } else {
            let len = (rng.random_range(0.08..0.25) * f) as usize;
            let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
            let f0_start = speaker_f0 * rng.random_range(0.85..1.15);
            let glide = rng.random_range(-0.2..0.2);
            let n_harm = (4000.0 / f0_start) as usize;
            let mut phase = 0.0;
            for j in 0..len.min(n.saturating_sub(pos)) {
                let u = j as f64 / len as f64;
                let f0 = f0_start * (1.0 + glide * u);
                phase += 2.0 * PI * f0 / f;
                let env = (PI * u).sin().powf(0.7);
                let s: f64 = (1..=n_harm).map(|k| formant_gain(k as f64 * f0, &vowel) * (k as f64 * phase).sin()).sum();
                out[pos + j] += env * s;
            }
            pos += len;
        }
        pos += (rng.random_range(0.02..0.15) * f) as usize;
    }
    out
}

/// A speech-like utterance: voiced syllables with formant structure,
/// fricative bursts and short pauses, normalized to RMS 0.1.
pub fn speech_like<R: Rng + ?Sized>(rng: &mut R, n: usize, sr: u32) -> Vec<f64> {
    normalize_rms(speech_samples(rng, n, sr), 0.1)
}

/// Direct path plus an exponentially decaying noise tail reaching -60 dB at
/// `rt60` seconds.
pub fn synth_rir<R: Rng + ?Sized>(rng: &mut R, rt60: f64, sr: u32) -> Vec<f64> {
    let f = sr as f64;
    let predelay = (rng.random_range(0.002..0.01) * f) as usize;
    let len = predelay + (rt60 * f) as usize;
    let mut taps = vec![0.0; len];
    taps[0] = 1.0;
    let tail_gain = rng.random_range(0.15..0.3);
    for (i, t) in taps.iter_mut().enumerate().skip(predelay) {
        let secs = (i - predelay) as f64 / f;
        *t += tail_gain * normal(rng) * (-6.908 * secs / rt60).exp();
    }
    taps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub speech_utterances: usize,
    pub speech_duration_s: f64,
    /// Keyword-style utterances appended to the speech corpus.
    pub word_utterances: usize,
    pub word_duration_s: f64,
    pub noise_clips_per_category: usize,
    pub noise_duration_s: f64,
    pub train_rirs: usize,
    pub test_rirs_per_bin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16000,
            speech_utterances: 64,
            speech_duration_s: 2.0,
            word_utterances: 64,
            word_duration_s: 1.0,
            noise_clips_per_category: 3,
            noise_duration_s: 2.0,
            train_rirs: 24,
            test_rirs_per_bin: 4,
        }
    }
}

/// Everything a distillation run and the evaluation harness need.
#[derive(Debug, Clone)]
pub struct SynthCorpora {
    pub speech: Vec<Waveform>,
    pub train: Corpora,
    pub test: Corpora,
}

fn noise_set(cfg: &SynthConfig, seed: u64, categories: &[&str], tag: u64) -> Corpora {
    let n = (cfg.noise_duration_s * cfg.sample_rate as f64) as usize;
    let mut noises = Vec::new();
    for (c, cat) in categories.iter().enumerate() {
        for k in 0..cfg.noise_clips_per_category {
            let mut rng = rng_for(derive_seed(seed, stream::CORPUS, tag), c as u64, k as u64);
            let x = noise_clip(cat, &mut rng, n, cfg.sample_rate).expect("known category");
            noises.push(Labeled {
                id: format!("{cat}_{k}"),
                category: Some(cat.to_string()),
                item: Waveform::new(x, cfg.sample_rate).expect("synthetic noise is finite"),
            });
        }
    }
    Corpora { noises, rirs: Vec::new() }
}

impl SynthCorpora {
    pub fn generate(cfg: &SynthConfig, seed: u64) -> Self {
        let sr = cfg.sample_rate;
        let n = (cfg.speech_duration_s * sr as f64) as usize;
        let mut speech: Vec<Waveform> = (0..cfg.speech_utterances)
            .map(|i| {
                let mut rng = rng_for(derive_seed(seed, stream::CORPUS, 0), 0, i as u64);
                Waveform::new(speech_like(&mut rng, n, sr), sr).expect("synthetic speech is finite")
            })
            .collect();
        speech.extend((0..cfg.word_utterances).map(|i| {
            let mut rng = rng_for(derive_seed(seed, stream::CORPUS, 5), 0, i as u64);
            random_word(&mut rng, sr, cfg.word_duration_s)
        }));
        let mut train = noise_set(cfg, seed, &TRAIN_NOISE_CATEGORIES, 1);
        let mut test = noise_set(cfg, seed, &TEST_NOISE_CATEGORIES, 2);
        for i in 0..cfg.train_rirs {
            let mut rng = rng_for(derive_seed(seed, stream::CORPUS, 3), 0, i as u64);
            let rt60 = rng.random_range(0.15..1.0);
            let id = format!("train_rir_{i}");
            let rir = RoomImpulseResponse::new(synth_rir(&mut rng, rt60, sr), sr, id.clone()).expect("direct path");
            train.rirs.push(Labeled { id, category: None, item: rir });
        }
        for (b, (bin, rt60)) in ROOM_BINS.iter().enumerate() {
            for k in 0..cfg.test_rirs_per_bin {
                let mut rng = rng_for(derive_seed(seed, stream::CORPUS, 4), b as u64, k as u64);
                let id = format!("{bin}_{k}");
                let rir =
                    RoomImpulseResponse::new(synth_rir(&mut rng, *rt60, sr), sr, id.clone()).expect("direct path");
                test.rirs.push(Labeled { id, category: Some(bin.to_string()), item: rir });
            }
        }
        SynthCorpora { speech, train, test }
    }

    /// Writes every signal as float32 WAV plus one manifest per corpus:
    /// `speech.jsonl`, `noise_train.jsonl`, `noise_test.jsonl`,
    /// `rir_train.jsonl` and `rir_test.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), AugmentError> {
        let io = |e: std::io::Error| AugmentError::Io { path: dir.display().to_string(), source: e };
        for sub in ["speech", "noise", "rir"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(io)?;
        }
        let entry = |sub: &str, name: &str, w: &Waveform, kind, category: Option<String>| {
            let path = dir.join(sub).join(format!("{name}.wav"));
            write_wav(w, &path, WavEncoding::Float32).map(|_| ManifestEntry {
                path,
                kind,
                category,
                duration_s: w.duration_s(),
            })
        };
        let mut speech = CorpusManifest::default();
        for (i, w) in self.speech.iter().enumerate() {
            speech.entries.push(entry("speech", &format!("utt_{i:04}"), w, ManifestKind::Speech, None)?);
        }
        write_manifest(dir.join("speech.jsonl"), &speech)?;
        for (split, corpora) in [("train", &self.train), ("test", &self.test)] {
            let mut noise = CorpusManifest::default();
            for n in &corpora.noises {
                noise.entries.push(entry("noise", &n.id, &n.item, ManifestKind::Noise, n.category.clone())?);
            }
            write_manifest(dir.join(format!("noise_{split}.jsonl")), &noise)?;
            let mut rir = CorpusManifest::default();
            for r in &corpora.rirs {
                let w = Waveform::new(r.item.taps().to_vec(), r.item.sample_rate())?;
                rir.entries.push(entry("rir", &r.id, &w, ManifestKind::Rir, r.category.clone())?);
            }
            write_manifest(dir.join(format!("rir_{split}.jsonl")), &rir)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_category_generates_normalized_audio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cat in TRAIN_NOISE_CATEGORIES.iter().chain(&TEST_NOISE_CATEGORIES) {
            let x = noise_clip(cat, &mut rng, 4000, 16000).unwrap();
            assert!(x.iter().all(|v| v.is_finite()), "{cat}");
            assert!((rms_of(&x).unwrap() - 0.1).abs() < 1e-12, "{cat}");
        }
        assert!(noise_clip("children_playing", &mut rng, 10, 16000).is_none());
    }

    #[test]
    fn rir_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let taps = synth_rir(&mut rng, 0.6, 16000);
        assert_eq!(taps[0], 1.0);
        let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
        let q = taps.len() / 4;
        assert!(energy(&taps[q..2 * q]) > energy(&taps[3 * q..]));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            speech_utterances: 2,
            noise_clips_per_category: 1,
            train_rirs: 2,
            test_rirs_per_bin: 1,
            ..Default::default()
        };
        let a = SynthCorpora::generate(&cfg, 5);
        let b = SynthCorpora::generate(&cfg, 5);
        assert_eq!(a.speech, b.speech);
        assert_eq!(a.test.noises.len(), 3);
        assert_eq!(a.test.rirs.len(), 3);
        assert_eq!(a.train.noises[0].item, b.train.noises[0].item);
    }
}
