//! Synthetic keyword-spotting corpus: each class is a pattern of chirp
//! segments in its own frequency band over a faint pink-noise carrier.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::rng::{derive_seed, rng_for, stream};
use crate::synth::pink;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KwsSpec {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub sample_rate: u32,
    pub duration_s: f64,
}

impl Default for KwsSpec {
    fn default() -> Self {
        KwsSpec { n_classes: 10, train_per_class: 30, test_per_class: 20, sample_rate: 16000, duration_s: 1.0 }
    }
}

/// Waveforms with class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub waves: Vec<Waveform>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwsCorpus {
    pub n_classes: usize,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    onset: f64,
    length: f64,
    f_start: f64,
    f_end: f64,
}

const BAND: (f64, f64) = (300.0, 3600.0);

fn class_template<R: Rng + ?Sized>(class: usize, n_classes: usize, rng: &mut R) -> Vec<Segment> {
    let (lo, hi) = BAND;
    template_at(lo * (hi / lo).powf(class as f64 / (n_classes.max(2) - 1) as f64), rng)
}

fn template_at<R: Rng + ?Sized>(centre: f64, rng: &mut R) -> Vec<Segment> {
    let n_seg = rng.random_range(2..=3);
    let mut onset = rng.random_range(0.05..0.15);
    (0..n_seg)
        .map(|_| {
            let length = rng.random_range(0.12..0.22);
            let seg = Segment {
                onset,
                length,
                f_start: centre * rng.random_range(0.85..1.15),
                f_end: centre * rng.random_range(0.85..1.15),
            };
            onset += length + rng.random_range(0.02..0.08);
            seg
        })
        .collect()
}

fn render<R: Rng + ?Sized>(template: &[Segment], spec: &KwsSpec, rng: &mut R) -> Waveform {
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let shift = rng.random_range(-0.04..0.04);
    let warp = rng.random_range(0.97..1.03);
    let mut x = pink(rng, n);
    let carrier_rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v *= 0.05 / carrier_rms);
    for seg in template {
        let amp = rng.random_range(0.6..1.0);
        let mut phase = rng.random_range(0.0..2.0 * PI);
        let start = ((seg.onset + shift).max(0.0) * sr) as usize;
        let len = (seg.length * sr) as usize;
        for j in 0..len.min(n.saturating_sub(start)) {
            let u = j as f64 / len as f64;
            phase += 2.0 * PI * warp * (seg.f_start + (seg.f_end - seg.f_start) * u) / sr;
            x[start + j] += amp * (PI * u).sin() * phase.sin();
        }
    }
    let r = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Waveform::new(x.into_iter().map(|v| v * 0.1 / r).collect(), spec.sample_rate).expect("finite synthetic audio")
}

/// An unlabeled utterance in the keyword style with a random centre
/// frequency, for unsupervised training audio.
pub fn random_word<R: Rng + ?Sized>(rng: &mut R, sample_rate: u32, duration_s: f64) -> Waveform {
    let (lo, hi) = BAND;
    let centre = lo * (hi / lo).powf(rng.random_range(0.0..1.0));
    let template = template_at(centre, rng);
    render(&template, &KwsSpec { sample_rate, duration_s, ..KwsSpec::default() }, rng)
}

/// Balanced train and test splits drawn from disjoint seed streams.
pub fn gen_kws_corpus(spec: &KwsSpec, seed: u64) -> KwsCorpus {
    let templates: Vec<Vec<Segment>> = (0..spec.n_classes)
        .map(|c| class_template(c, spec.n_classes, &mut rng_for(seed, stream::KWS_TEMPLATE, c as u64)))
        .collect();
    let split = |tag: u64, per_class: usize| {
        let mut set = LabeledSet::default();
        for k in 0..per_class {
            for (c, t) in templates.iter().enumerate() {
                let mut rng = rng_for(derive_seed(seed, tag, c as u64), 0, k as u64);
                set.waves.push(render(t, spec, &mut rng));
                set.labels.push(c);
            }
        }
        set
    };
    KwsCorpus {
        n_classes: spec.n_classes,
        train: split(stream::KWS_TRAIN, spec.train_per_class),
        test: split(stream::KWS_TEST, spec.test_per_class),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_balance() {
        let spec = KwsSpec { n_classes: 10, train_per_class: 50, test_per_class: 2, ..Default::default() };
        let c = gen_kws_corpus(&spec, 1);
        assert_eq!(c.train.len(), 500);
        for k in 0..10 {
            assert_eq!(c.train.labels.iter().filter(|&&l| l == k).count(), 50);
        }
        assert!(c.train.waves.iter().all(|w| w.len() == 16000));
    }

    #[test]
    fn splits_are_disjoint() {
        let spec = KwsSpec { n_classes: 3, train_per_class: 4, test_per_class: 4, ..Default::default() };
        let c = gen_kws_corpus(&spec, 2);
        for a in &c.train.waves {
            assert!(c.test.waves.iter().all(|b| a != b));
        }
    }
}
