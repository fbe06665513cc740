//! Mono waveforms: WAV reading/writing, resampling and level measurement.

use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV container: {0}")]
    MalformedContainer(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio has no samples")]
    EmptyAudio,
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono audio. Samples are nominally in `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Waveform { samples: vec![0.0; len], sample_rate: sample_rate.max(1) }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `start..start + len`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Waveform {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let n = len.min(self.samples.len() - start);
            out[..n].copy_from_slice(&self.samples[start..start + n]);
        }
        Waveform { samples: out, sample_rate: self.sample_rate }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform { samples: self.samples.iter().map(|v| v * gain).collect(), sample_rate: self.sample_rate }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&v| v as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Divisor mapping 16-bit PCM codes to `[-1, 1)`.
pub const PCM16_SCALE: f64 = 32768.0;

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("unsupported format".into()),
        hound::Error::UnfinishedSample => AudioError::MalformedContainer("truncated sample".into()),
        other => AudioError::MalformedContainer(other.to_string()),
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )));
    }
    let mut reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => {
            reader.samples::<f32>().map(|s| s.map(|v| v as f64)).collect::<Result<_, _>>().map_err(map_hound)?
        }
        (fmt, bits) => return Err(AudioError::UnsupportedEncoding(format!("{fmt:?} with {bits} bits"))),
    };
    let channels = spec.channels.max(1) as usize;
    if interleaved.len() < channels {
        return Err(AudioError::EmptyAudio);
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Duration in seconds from the WAV header alone.
pub fn wav_duration_s(path: impl AsRef<Path>) -> Result<f64, AudioError> {
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

/// Writes a mono WAV. `Pcm16` clamps to `[-1, 1 - 2^-15]` and rounds to the
/// nearest code.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<(), AudioError> {
    if w.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec { channels: 1, sample_rate: w.sample_rate, bits_per_sample: bits, sample_format: fmt };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    let hi = 1.0 - 1.0 / PCM16_SCALE;
    for &v in &w.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let code = (v.clamp(-1.0, hi) * PCM16_SCALE).round() as i16;
                writer.write_sample(code).map_err(map_hound)?;
            }
            WavEncoding::Float32 => writer.write_sample(v as f32).map_err(map_hound)?,
        }
    }
    writer.finalize().map_err(map_hound)
}

pub fn rms(w: &Waveform) -> Result<f64, AudioError> {
    rms_of(w.samples())
}

pub fn rms_of(samples: &[f64]) -> Result<f64, AudioError> {
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    Ok((samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt())
}

const KAISER_BETA: f64 = 8.6;
const TAPS_PER_PHASE: usize = 32;
const ROLLOFF: f64 = 0.95;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase windowed-sinc resampler (Kaiser window, beta 8.6). The
/// kernel has 32 taps per phase at the lower of the two rates.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidRate);
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let (src, dst) = (w.sample_rate as u64, target_rate as u64);
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let out_len = ((w.len() as u128 * dst as u128 + src as u128 / 2) / src as u128) as usize;

    // Cutoff relative to the input Nyquist frequency.
    let ratio = (up as f64 / down as f64).min(1.0);
    let cutoff = ROLLOFF * ratio;
    let half = ((TAPS_PER_PHASE / 2) as f64 / ratio).ceil() as i64;
    let taps = (2 * half) as usize;
    // phase p: output sits p/up input samples past an integer input index
    let table: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut h: Vec<f64> = (0..taps)
                .map(|j| {
                    let t = (j as i64 - half + 1) as f64 - frac;
                    let x = t / half as f64;
                    if x.abs() >= 1.0 {
                        return 0.0;
                    }
                    let arg = PI * cutoff * t;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt())
                })
                .collect();
            let s: f64 = h.iter().sum();
            h.iter_mut().for_each(|v| *v /= s);
            h
        })
        .collect();

    let x = &w.samples;
    let samples = (0..out_len as u64)
        .map(|n| {
            let pos = n * down;
            let (base, phase) = ((pos / up) as i64, (pos % up) as usize);
            table[phase]
                .iter()
                .enumerate()
                .map(|(j, &c)| {
                    let idx = base + j as i64 - half + 1;
                    if idx >= 0 && (idx as usize) < x.len() {
                        c * x[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_cases() {
        assert_eq!(rms(&Waveform::silence(10, 16000)).unwrap(), 0.0);
        let c = Waveform::new(vec![0.5; 7], 16000).unwrap();
        assert!((rms(&c).unwrap() - 0.5).abs() < 1e-15);
        let p = Waveform::new(vec![3.0, 4.0], 16000).unwrap();
        assert!((rms(&p).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rms(&p).unwrap() - 3.53553).abs() < 1e-5);
        assert!(matches!(rms(&Waveform::silence(0, 16000)), Err(AudioError::EmptyAudio)));
    }

    #[test]
    fn waveform_invariants() {
        assert!(matches!(Waveform::new(vec![0.0], 0), Err(AudioError::InvalidRate)));
        assert!(matches!(Waveform::new(vec![0.0, f64::NAN], 8000), Err(AudioError::NonFinite { index: 1 })));
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.6) - 750.461_159_563_165_9).abs() / 750.46 < 1e-12);
    }

    #[test]
    fn resample_identity_and_lengths() {
        let w = Waveform::new((0..100).map(|i| (i as f64 * 0.1).sin() * 0.3).collect(), 8000).unwrap();
        assert_eq!(resample(&w, 8000).unwrap(), w);
        assert_eq!(resample(&w, 16000).unwrap().len(), 200);
        assert_eq!(resample(&w, 16000).unwrap().sample_rate(), 16000);
        assert_eq!(resample(&w, 4000).unwrap().len(), 50);
        assert_eq!(resample(&w, 44100).unwrap().len(), 551);
        assert!(matches!(resample(&w, 0), Err(AudioError::InvalidRate)));
    }
}
