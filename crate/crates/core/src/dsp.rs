//! Signal-level primitives of the contamination policy: FFT convolution,
//! exact-SNR mixing and room-impulse-response application.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio_io::{rms_of, AudioError, Waveform};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("signal is empty")]
    EmptyAudio,
    #[error("signal is silent (zero RMS)")]
    SilentSignal,
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("invalid SNR {0} dB")]
    InvalidSnr(f64),
    #[error("room impulse response `{0}` has no nonzero tap")]
    DegenerateRir(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Signal-to-noise ratio in decibels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct SnrDb(f64);

impl SnrDb {
    pub fn new(db: f64) -> Result<Self, DspError> {
        if db.is_finite() {
            Ok(SnrDb(db))
        } else {
            Err(DspError::InvalidSnr(db))
        }
    }

    pub fn db(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    taps: Vec<f64>,
    sample_rate: u32,
    id: String,
}

impl RoomImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32, id: impl Into<String>) -> Result<Self, DspError> {
        let id = id.into();
        if !taps.iter().any(|&t| t != 0.0) || taps.iter().any(|t| !t.is_finite()) {
            return Err(DspError::DegenerateRir(id));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate.into());
        }
        Ok(RoomImpulseResponse { taps, sample_rate, id })
    }

    pub fn delta(sample_rate: u32, id: impl Into<String>) -> Self {
        RoomImpulseResponse { taps: vec![1.0], sample_rate, id: id.into() }
    }

    pub fn from_waveform(w: &Waveform, id: impl Into<String>) -> Result<Self, DspError> {
        Self::new(w.samples().to_vec(), w.sample_rate(), id)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

fn plan(n: usize) -> (Arc<dyn rustfft::Fft<f64>>, Arc<dyn rustfft::Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Full linear convolution, `len(x) + len(h) - 1` samples, via a
/// power-of-two FFT.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>, DspError> {
    if x.is_empty() || h.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let (fwd, inv) = plan(n);
    let pad = |s: &[f64]| {
        let mut v: Vec<Complex<f64>> = s.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    Ok(a[..out_len].iter().map(|c| c.re * scale).collect())
}

/// Gain `g` such that `clean` over `g * noise` has the requested SNR:
/// `g = rms(clean) / rms(noise) * 10^(-snr / 20)`.
pub fn snr_gain(clean: &Waveform, noise: &Waveform, snr: SnrDb) -> Result<f64, DspError> {
    gain_for(clean.samples(), noise.samples(), snr)
}

fn gain_for(clean: &[f64], noise: &[f64], snr: SnrDb) -> Result<f64, DspError> {
    let (rc, rn) = (rms_of(clean)?, rms_of(noise)?);
    if rc == 0.0 || rn == 0.0 {
        return Err(DspError::SilentSignal);
    }
    Ok(rc / rn * 10f64.powf(-snr.db() / 20.0))
}

/// `10 log10(sum(signal^2) / sum(noise^2))`.
pub fn measure_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let ps: f64 = signal.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * (ps / pn).log10()
}

/// Crops (random offset) or tiles-then-crops `noise` to `len` samples.
pub fn fit_noise<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>, DspError> {
    if noise.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let n = noise.len();
    let offset = if n >= len { rng.random_range(0..=n - len) } else { rng.random_range(0..n) };
    Ok((0..len).map(|i| noise[(offset + i) % n]).collect())
}

/// Adds `noise`, fitted to the length of `clean`, at exactly `snr` dB
/// relative to `clean`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr: SnrDb,
    rng: &mut R,
) -> Result<Waveform, DspError> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(DspError::SampleRateMismatch(clean.sample_rate(), noise.sample_rate()));
    }
    if clean.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let fitted = fit_noise(noise.samples(), clean.len(), rng)?;
    let g = gain_for(clean.samples(), &fitted, snr)?;
    let mixed = clean.samples().iter().zip(&fitted).map(|(c, n)| c + g * n).collect();
    Ok(Waveform::new(mixed, clean.sample_rate())?)
}

/// Convolves with the RIR, truncates to the input length and rescales to
/// the input RMS.
pub fn apply_rir(x: &Waveform, rir: &RoomImpulseResponse) -> Result<Waveform, DspError> {
    if x.sample_rate() != rir.sample_rate() {
        return Err(DspError::SampleRateMismatch(x.sample_rate(), rir.sample_rate()));
    }
    if x.is_empty() {
        return Err(DspError::EmptyAudio);
    }
    let mut y = fft_convolve(x.samples(), rir.taps())?;
    y.truncate(x.len());
    let (rx, ry) = (rms_of(x.samples())?, rms_of(&y)?);
    if ry > 0.0 {
        let g = rx / ry;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Waveform::new(y, x.sample_rate())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_convolution() {
        let y = fft_convolve(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        let expect = [1.0, 3.0, 2.0];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(fft_convolve(&[], &[1.0]), Err(DspError::EmptyAudio)));
    }

    #[test]
    fn gain_examples() {
        let c = Waveform::new(vec![0.1, -0.1, 0.1, -0.1], 16000).unwrap();
        let n = Waveform::new(vec![-0.1, 0.1, 0.1, -0.1], 16000).unwrap();
        assert!((snr_gain(&c, &n, SnrDb::new(0.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        assert!((snr_gain(&c, &n, SnrDb::new(20.0).unwrap()).unwrap() - 0.1).abs() < 1e-12);
        let silent = Waveform::silence(4, 16000);
        assert!(matches!(snr_gain(&c, &silent, SnrDb::new(5.0).unwrap()), Err(DspError::SilentSignal)));
        assert!(SnrDb::new(f64::INFINITY).is_err());
    }

    #[test]
    fn noise_fitting_tiles_and_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let short = [1.0, 2.0, 3.0];
        let f = fit_noise(&short, 7, &mut rng).unwrap();
        assert_eq!(f.len(), 7);
        for w in f.windows(4) {
            assert_eq!(w[0], w[3]);
        }
        let long: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let f = fit_noise(&long, 10, &mut rng).unwrap();
        assert!(f.windows(2).all(|w| w[1] == w[0] + 1.0));
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let a = Waveform::new(vec![0.1; 8], 16000).unwrap();
        let b = Waveform::new(vec![0.1; 8], 8000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mix_at_snr(&a, &b, SnrDb::new(0.0).unwrap(), &mut rng),
            Err(DspError::SampleRateMismatch(16000, 8000))
        ));
        let rir = RoomImpulseResponse::delta(8000, "d");
        assert!(matches!(apply_rir(&a, &rir), Err(DspError::SampleRateMismatch(..))));
        assert!(RoomImpulseResponse::new(vec![0.0, 0.0], 16000, "z").is_err());
    }
}
