use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robdistill_core::audio_io::Waveform;
use robdistill_core::augment::ContaminationPolicy;
use robdistill_core::distill::{
    adamw_step, distill_loss, lr_at, read_metrics, run_distillation, AdamWConfig, DistillConfig, DistillError,
    OptimizerState, TrainingData,
};
use robdistill_core::models::{Preset, StudentModel, TeacherModel};
use robdistill_core::synth::{SynthConfig, SynthCorpora};
use robdistill_core::tensor::Tensor;

/// Direct evaluation of the per-head L1 + cosine objective.
fn oracle(preds: &[Vec<Vec<f64>>], targets: &[Vec<Vec<f64>>], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        let (n_t, d) = (p.len(), p[0].len());
        let mut l1 = 0.0;
        let mut cos_term = 0.0;
        for (pr, tr) in p.iter().zip(t) {
            for (a, b) in pr.iter().zip(tr) {
                l1 += (a - b).abs();
            }
            let dot: f64 = pr.iter().zip(tr).map(|(a, b)| a * b).sum();
            let np = pr.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nt = tr.iter().map(|a| a * a).sum::<f64>().sqrt();
            let cos = dot / (np * nt);
            cos_term += (1.0 + (-cos).exp()).ln();
        }
        total += l1 / (n_t * d) as f64 + lambda * cos_term / n_t as f64;
    }
    total
}

fn tensors(x: &[Vec<Vec<f64>>]) -> Vec<Tensor<f64>> {
    x.iter().map(|h| Tensor::new(vec![h.len(), h[0].len()], h.iter().flatten().copied().collect()).unwrap()).collect()
}

fn random_heads(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
    (0..3).map(|_| (0..t).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect()).collect()
}

#[test]
fn distill_loss_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (p, t) = (random_heads(&mut rng, 4, 8), random_heads(&mut rng, 4, 8));
    let got = distill_loss(&tensors(&p), &tensors(&t), 1.0).unwrap();
    assert!((got - oracle(&p, &t, 1.0)).abs() < 1e-6, "{got}");
    let same = distill_loss(&tensors(&p), &tensors(&p), 1.0).unwrap();
    assert!((same - 3.0 * (1.0 + (-1f64).exp()).ln()).abs() < 1e-6);
    assert!((same - 0.939786).abs() < 1e-6);
    assert_eq!(distill_loss(&tensors(&p), &tensors(&p), 0.0).unwrap(), 0.0);
    assert!(distill_loss(&tensors(&p[..2]), &tensors(&t), 1.0).is_err());
}

#[test]
fn schedule_anchors() {
    let f = DistillConfig::full();
    assert!((f.lr_at(14_000) - 2e-4).abs() < 1e-12);
    assert!(f.lr_at(200_000).abs() < 1e-12);
    assert!((f.lr_at(107_000) - 1e-4).abs() < 1e-12);
    assert_eq!(f.lr_at(0), 0.0);
}

proptest! {
    #[test]
    fn schedule_is_piecewise_linear(warmup in 1u64..1000, extra in 1u64..5000, peak in 1e-6f64..1e-1, s in 0u64..10_000) {
        let total = warmup + extra;
        let s = s % (total + 1);
        let v = lr_at(s, warmup, total, peak);
        prop_assert!(v >= 0.0 && v <= peak * (1.0 + 1e-12));
        let expected = if s <= warmup {
            peak * s as f64 / warmup as f64
        } else {
            peak * (total - s) as f64 / (total - warmup) as f64
        };
        prop_assert!((v - expected).abs() <= 1e-12 * peak);
        if s > 0 && s < total {
            let step = (lr_at(s + 1, warmup, total, peak) - v).abs();
            prop_assert!(step <= peak / warmup.min(total - warmup) as f64 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn optimizer_streams_are_deterministic() {
    let run = || {
        let mut params = vec![Tensor::<f32>::from_fn(vec![5], |i| i as f32 * 0.1)];
        let mut st = OptimizerState::for_params(&params);
        for k in 0..20 {
            let grads = vec![(0..5).map(|i| ((i + k) as f64 * 0.7).sin()).collect()];
            adamw_step(&mut params, &grads, &mut st, 1e-2, &AdamWConfig::default());
        }
        params
    };
    assert_eq!(run(), run());
}

struct Fixture {
    corpora: SynthCorpora,
    teacher: TeacherModel,
}

fn fixture() -> Fixture {
    let cfg = SynthConfig {
        speech_utterances: 6,
        speech_duration_s: 0.3,
        word_utterances: 2,
        word_duration_s: 0.3,
        noise_clips_per_category: 1,
        noise_duration_s: 0.3,
        train_rirs: 3,
        test_rirs_per_bin: 1,
        ..SynthConfig::default()
    };
    Fixture { corpora: SynthCorpora::generate(&cfg, 1), teacher: TeacherModel::new(&Preset::tiny(), 2).unwrap() }
}

fn tiny_cfg(threads: usize) -> DistillConfig {
    DistillConfig {
        batch_size: 3,
        total_steps: 8,
        warmup_steps: 2,
        crop_s: 0.1,
        threads,
        seed: 4,
        checkpoint_every: 4,
        ..DistillConfig::toy()
    }
}

fn train(
    fx: &Fixture,
    cfg: &DistillConfig,
    policy: &ContaminationPolicy,
) -> (Vec<robdistill_core::distill::StepMetrics>, u32) {
    let mut student = StudentModel::new(&Preset::tiny(), 3, Some(&fx.teacher)).unwrap();
    let data = TrainingData { speech: &fx.corpora.speech, corpora: &fx.corpora.train, policy };
    let out = run_distillation(cfg, &fx.teacher, &mut student, data, None).unwrap();
    (out.metrics, student.checksum())
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let fx = fixture();
    let before = fx.teacher.checksum();
    let policy = ContaminationPolicy::default();
    let a = train(&fx, &tiny_cfg(1), &policy);
    let b = train(&fx, &tiny_cfg(1), &policy);
    let c = train(&fx, &tiny_cfg(3), &policy);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(fx.teacher.checksum(), before);
    assert!(a.0.iter().all(|m| m.loss_enh.is_some() && m.wall_ms.is_none()));
    assert_eq!(a.0.len(), 8);
}

#[test]
fn clean_policy_without_head_is_plain_distillation() {
    let fx = fixture();
    let plain = DistillConfig { augment: false, beta_enh: 0.0, ..tiny_cfg(1) };
    let clean_aug = DistillConfig { augment: true, beta_enh: 0.0, ..tiny_cfg(1) };
    let a = train(&fx, &plain, &ContaminationPolicy::default());
    let b = train(&fx, &clean_aug, &ContaminationPolicy::clean_only());
    assert_eq!(a, b);
    assert!(a.0.iter().all(|m| m.loss_enh.is_none()));
}

#[test]
fn run_directory_holds_metrics_and_checkpoints() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut student = StudentModel::new(&Preset::tiny(), 3, Some(&fx.teacher)).unwrap();
    let policy = ContaminationPolicy::default();
    let data = TrainingData { speech: &fx.corpora.speech, corpora: &fx.corpora.train, policy: &policy };
    let out = run_distillation(&tiny_cfg(1), &fx.teacher, &mut student, data, Some(dir.path())).unwrap();
    assert_eq!(read_metrics(dir.path().join("metrics.jsonl")).unwrap(), out.metrics);
    assert!(dir.path().join("checkpoints/step_0000004.rdck").is_file());
    assert_eq!(out.final_checkpoint.unwrap(), dir.path().join("checkpoints/step_0000008.rdck"));
    let line = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 1);
    assert!(first["wall_ms"].is_null());
}

#[test]
fn invalid_configs_are_rejected() {
    let fx = fixture();
    let mut student = StudentModel::new(&Preset::tiny(), 3, Some(&fx.teacher)).unwrap();
    let policy = ContaminationPolicy::default();
    let data = TrainingData { speech: &fx.corpora.speech, corpora: &fx.corpora.train, policy: &policy };
    let bad = DistillConfig { warmup_steps: 8, ..tiny_cfg(1) };
    assert!(run_distillation(&bad, &fx.teacher, &mut student, data, None).is_err());
    let empty = TrainingData { speech: &[], ..data };
    assert!(run_distillation(&tiny_cfg(1), &fx.teacher, &mut student, empty, None).is_err());
}

#[test]
fn silent_crops_are_redrawn() {
    let fx = fixture();
    let mut speech = fx.corpora.speech.clone();
    let sr = speech[0].sample_rate();
    speech.extend((0..4).map(|_| Waveform::silence(8000, sr)));
    let policy = ContaminationPolicy::default();
    let cfg = DistillConfig { batch_size: 8, ..tiny_cfg(1) };
    let mut student = StudentModel::new(&Preset::tiny(), 3, Some(&fx.teacher)).unwrap();
    let data = TrainingData { speech: &speech, corpora: &fx.corpora.train, policy: &policy };
    assert!(run_distillation(&cfg, &fx.teacher, &mut student, data, None).is_ok());

    let silent = vec![Waveform::silence(8000, sr)];
    let data = TrainingData { speech: &silent, ..data };
    let err = run_distillation(&cfg, &fx.teacher, &mut student, data, None).unwrap_err();
    assert!(matches!(err, DistillError::SilentSpeech { step: 1 }), "{err}");
}
