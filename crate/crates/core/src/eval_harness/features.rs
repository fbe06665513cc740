//! Frozen upstream feature extractors for probing.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::EvalError;
use crate::audio_io::Waveform;
use crate::models::{StudentModel, TeacherModel};

/// A frozen model mapping an utterance to a fixed-size vector.
pub trait FeatureExtractor: Sync {
    fn features(&self, w: &Waveform) -> Result<Vec<f64>, EvalError>;

    /// Fingerprint of the upstream weights.
    fn checksum(&self) -> u32;
}

/// Mean-pooled last hidden state of the student.
impl FeatureExtractor for StudentModel {
    fn features(&self, w: &Waveform) -> Result<Vec<f64>, EvalError> {
        Ok(self.pooled_features(w)?)
    }

    fn checksum(&self) -> u32 {
        StudentModel::checksum(self)
    }
}

/// Mean-pooled last layer of the teacher.
impl FeatureExtractor for TeacherModel {
    fn features(&self, w: &Waveform) -> Result<Vec<f64>, EvalError> {
        Ok(self.pooled_features(w)?)
    }

    fn checksum(&self) -> u32 {
        TeacherModel::checksum(self)
    }
}

/// Time-averaged log power spectrum (25 ms Hann frames, 10 ms hop at
/// 16 kHz). A model-free baseline used to check the corpus generator.
#[derive(Debug, Clone, Copy)]
pub struct LogSpectrogram {
    pub frame: usize,
    pub hop: usize,
}

impl Default for LogSpectrogram {
    fn default() -> Self {
        LogSpectrogram { frame: 400, hop: 160 }
    }
}

impl FeatureExtractor for LogSpectrogram {
    fn features(&self, w: &Waveform) -> Result<Vec<f64>, EvalError> {
        let n_fft = self.frame.next_power_of_two();
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
        let window: Vec<f64> = (0..self.frame)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / self.frame as f64).cos())
            .collect();
        let bins = n_fft / 2 + 1;
        let mut acc = vec![0.0; bins];
        let mut frames = 0usize;
        let x = w.samples();
        let mut start = 0;
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        loop {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, wv) in window.iter().enumerate() {
                buf[i].re = x.get(start + i).copied().unwrap_or(0.0) * wv;
            }
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf[..bins]) {
                *a += (c.norm_sqr() + 1e-10).ln();
            }
            frames += 1;
            start += self.hop;
            if start + self.frame > x.len() {
                break;
            }
        }
        Ok(acc.into_iter().map(|a| a / frames as f64).collect())
    }

    fn checksum(&self) -> u32 {
        0
    }
}
