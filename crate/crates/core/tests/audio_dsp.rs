use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robdistill_core::audio_io::{read_wav, resample, rms, write_wav, AudioError, WavEncoding, Waveform};
use robdistill_core::dsp::{
    apply_rir, fft_convolve, measure_snr_db, mix_at_snr, snr_gain, DspError, RoomImpulseResponse, SnrDb,
};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in h.iter().enumerate() {
            y[i + j] += a * b;
        }
    }
    y
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn sine(freq: f64, sr: u32, n: usize, amp: f64) -> Waveform {
    let s = (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect();
    Waveform::new(s, sr).unwrap()
}

#[test]
fn float32_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Waveform::new((0..1000).map(|_| rng.random_range(-1.5f32..1.5) as f64).collect(), 22050).unwrap();
    write_wav(&w, &p, WavEncoding::Float32).unwrap();
    assert_eq!(read_wav(&p).unwrap(), w);
}

#[test]
fn pcm16_scaling_and_clamping() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let w = Waveform::new(vec![0.5, 2.0, -2.0, 0.0], 16000).unwrap();
    write_wav(&w, &p, WavEncoding::Pcm16).unwrap();
    let codes: Vec<i16> = hound::WavReader::open(&p).unwrap().samples::<i16>().map(Result::unwrap).collect();
    assert_eq!(codes, vec![16384, 32767, -32768, 0]);
    let back = read_wav(&p).unwrap();
    assert_eq!(back.samples()[0], 0.5);
    assert_eq!(back.samples()[1], 32767.0 / 32768.0);
    assert_eq!(back.samples()[2], -1.0);
}

#[test]
fn stereo_is_downmixed_by_mean() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("st.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 8000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut wr = hound::WavWriter::create(&p, spec).unwrap();
    for _ in 0..50 {
        wr.write_sample(1.0f32).unwrap();
        wr.write_sample(0.0f32).unwrap();
    }
    wr.finalize().unwrap();
    let w = read_wav(&p).unwrap();
    assert_eq!(w.len(), 50);
    assert!(w.samples().iter().all(|&v| v == 0.5));
}

#[test]
fn bad_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_wav(dir.path().join("missing.wav")), Err(AudioError::Io(_))));
    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"RIFF0000WAVEjunk").unwrap();
    assert!(read_wav(&junk).is_err());
    let empty = Waveform::new(vec![], 16000).unwrap();
    assert!(matches!(write_wav(&empty, dir.path().join("e.wav"), WavEncoding::Float32), Err(AudioError::EmptyAudio)));
}

fn peak_bin(x: &[f64]) -> usize {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..n / 2).max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap()).unwrap()
}

#[test]
fn resampled_tone_keeps_its_frequency() {
    let w = sine(440.0, 8000, 8000, 0.5);
    let up = resample(&w, 16000).unwrap();
    assert_eq!(up.len(), 16000);
    let bin_hz = 16000.0 / up.len() as f64;
    let peak = peak_bin(up.samples()) as f64 * bin_hz;
    assert!((peak - 440.0).abs() <= bin_hz, "peak at {peak} Hz");
}

#[test]
fn convolution_examples() {
    assert_eq!(
        fft_convolve(&[1.0, 2.0], &[1.0, 1.0]).unwrap().iter().map(|v| v.round()).collect::<Vec<_>>(),
        vec![1.0, 3.0, 2.0]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, h) = (randv(&mut rng, 257), randv(&mut rng, 63));
    let fast = fft_convolve(&x, &h).unwrap();
    let slow = direct_convolve(&x, &h);
    assert_eq!(fast.len(), slow.len());
    let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
    let delta = fft_convolve(&x, &[1.0]).unwrap();
    assert!(delta.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn gain_examples() {
    let a = Waveform::new(vec![0.1, -0.1, 0.1, -0.1], 16000).unwrap();
    let b = Waveform::new(vec![-0.1, 0.1, 0.1, -0.1], 16000).unwrap();
    assert!((snr_gain(&a, &b, SnrDb::new(0.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    assert!((snr_gain(&a, &b, SnrDb::new(20.0).unwrap()).unwrap() - 0.1).abs() < 1e-12);
    let silent = Waveform::silence(4, 16000);
    assert!(matches!(snr_gain(&a, &silent, SnrDb::new(0.0).unwrap()), Err(DspError::SilentSignal)));
}

#[test]
fn sine_plus_white_noise_at_ten_db() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clean = sine(300.0, 16000, 16000, 0.1 * 2f64.sqrt());
    let noise = Waveform::new(randv(&mut rng, 16000), 16000).unwrap().scaled(0.1 / 3f64.powf(-0.5));
    let mixed = mix_at_snr(&clean, &noise, SnrDb::new(10.0).unwrap(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let residual: Vec<f64> = mixed.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
    assert!((measure_snr_db(clean.samples(), &residual) - 10.0).abs() < 0.01);
    let again = mix_at_snr(&clean, &noise, SnrDb::new(10.0).unwrap(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(mixed, again);
}

#[test]
fn delta_rir_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Waveform::new(randv(&mut rng, 500), 16000).unwrap();
    let y = apply_rir(&x, &RoomImpulseResponse::delta(16000, "delta")).unwrap();
    assert!(y.samples().iter().zip(x.samples()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(RoomImpulseResponse::new(vec![0.0; 8], 16000, "zero").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_is_linear(seed in any::<u64>(), n in 1usize..200, m in 1usize..80, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, h) = (randv(&mut rng, n), randv(&mut rng, n), randv(&mut rng, m));
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = fft_convolve(&combo, &h).unwrap();
        let (cx, cy) = (fft_convolve(&x, &h).unwrap(), fft_convolve(&y, &h).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_hits_the_requested_snr(seed in any::<u64>(), k in 0usize..6, len in 200usize..3000, nlen in 50usize..4000) {
        let snr = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0][k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = Waveform::new(randv(&mut rng, len), 16000).unwrap();
        let noise = Waveform::new(randv(&mut rng, nlen), 16000).unwrap();
        let mixed = mix_at_snr(&clean, &noise, SnrDb::new(snr).unwrap(), &mut rng).unwrap();
        prop_assert_eq!(mixed.len(), clean.len());
        let residual: Vec<f64> = mixed.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
        prop_assert!((measure_snr_db(clean.samples(), &residual) - snr).abs() < 0.01);
    }

    #[test]
    fn reverb_preserves_length_and_rms(seed in any::<u64>(), len in 10usize..2000, taps in 1usize..600) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Waveform::new(randv(&mut rng, len), 16000).unwrap();
        let mut h = randv(&mut rng, taps);
        h[0] = 1.0;
        let y = apply_rir(&x, &RoomImpulseResponse::new(h, 16000, "r").unwrap()).unwrap();
        prop_assert_eq!(y.len(), x.len());
        let (rx, ry) = (rms(&x).unwrap(), rms(&y).unwrap());
        prop_assert!((ry - rx).abs() <= 1e-9 * rx);
    }

    #[test]
    fn rms_is_scale_equivariant(seed in any::<u64>(), a in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new(randv(&mut rng, 100), 8000).unwrap();
        let (r, ra) = (rms(&w).unwrap(), rms(&w.scaled(a)).unwrap());
        prop_assert!((ra - a.abs() * r).abs() <= 1e-12 * (a.abs() * r).max(1e-300));
    }

    #[test]
    fn float32_wav_round_trip(seed in any::<u64>(), len in 1usize..500) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Waveform::new((0..len).map(|_| rng.random_range(-4.0f32..4.0) as f64).collect(), 16000).unwrap();
        write_wav(&w, &p, WavEncoding::Float32).unwrap();
        prop_assert_eq!(read_wav(&p).unwrap(), w);
    }
}

#[test]
fn band_limited_round_trip_through_double_rate() {
    for (f, sr) in [(440.0, 8000u32), (1000.0, 16000), (2500.0, 16000)] {
        let w = sine(f, sr, 4000, 0.8);
        let back = resample(&resample(&w, 2 * sr).unwrap(), sr).unwrap();
        assert_eq!(back.len(), w.len());
        // Skip the filter's edge transients.
        let err = back.samples()[64..w.len() - 64]
            .iter()
            .zip(&w.samples()[64..w.len() - 64])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{f} Hz at {sr}: {err}");
    }
}
