//! The distillation loop. Each step draws a seeded batch of clean crops,
//! contaminates it, runs teacher inference on the clean targets and a
//! student forward/backward on the noisy inputs, then applies one AdamW
//! update.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use robdistill_tensor::{nn, Graph, Real, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use super::loss::distill_loss_graph;
use super::optim::{adamw_step, clip_global_norm, OptimizerState};
use super::{DistillConfig, DistillError};
use crate::audio_io::Waveform;
use crate::augment::{contaminate_batch, Contaminated, ContaminationAction, ContaminationPolicy, Corpora};
use crate::models::{save_checkpoint, StudentModel, TeacherModel};
use crate::rng::{derive_seed, rng_for, stream};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss_distill: f64,
    pub loss_enh: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Clean speech, contamination sources and the policy applied to them.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub speech: &'a [Waveform],
    pub corpora: &'a Corpora,
    pub policy: &'a ContaminationPolicy,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<StepMetrics>,
    pub teacher_checksum: u32,
    pub final_checkpoint: Option<PathBuf>,
}

struct ItemResult {
    grads: Vec<Vec<f32>>,
    loss_distill: f64,
    loss_enh: Option<f64>,
}

fn wave_const<F: Real>(g: &mut Graph<F>, w: &Waveform) -> Var {
    let data = w.samples().iter().map(|&s| F::lit(s)).collect();
    g.constant(Tensor::new(vec![w.len()], data).expect("1-D shape"))
}

/// Builds the per-item training loss on `g`: distillation of `targets`
/// from the student's pass on `input`, plus `beta_enh` times the L1
/// reconstruction of `clean`. Returns `(total, distill, enh)`.
pub fn item_loss_graph<F: Real>(
    g: &mut Graph<F>,
    v: &[Var],
    student: &StudentModel,
    input: &Waveform,
    clean: &Waveform,
    targets: &[Tensor<F>],
    lambda_cos: f64,
    beta_enh: f64,
) -> Result<(Var, Var, Option<Var>), DistillError> {
    let x = wave_const(g, input);
    let out = student.forward_graph(g, v, x)?;
    let t: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
    let dl = distill_loss_graph(g, &out.predictions, &t, lambda_cos)?;
    if beta_enh == 0.0 {
        return Ok((dl, dl, None));
    }
    let y = student.enhance_graph(g, v, out.last_hidden, clean.len())?;
    let c = wave_const(g, clean);
    let el = nn::l1_loss(g, y, c)?;
    let scaled = g.scale(el, F::lit(beta_enh))?;
    let total = g.add(dl, scaled)?;
    Ok((total, dl, Some(el)))
}

fn non_finite(step: u64, e: DistillError) -> DistillError {
    match e {
        DistillError::Tensor(TensorError::NonFinite { op }) => {
            DistillError::NonFiniteLoss { step, detail: format!("op `{op}` produced a non-finite value") }
        }
        DistillError::Model(crate::models::ModelError::Tensor(TensorError::NonFinite { op })) => {
            DistillError::NonFiniteLoss { step, detail: format!("op `{op}` produced a non-finite value") }
        }
        other => other,
    }
}

fn process_item(
    cfg: &DistillConfig,
    teacher: &TeacherModel,
    student: &StudentModel,
    item: &Contaminated,
) -> Result<ItemResult, DistillError> {
    let targets = teacher.forward(&item.target)?;
    let mut g = Graph::new();
    let v = student.params.bind(&mut g, true);
    let (total, dl, el) =
        item_loss_graph(&mut g, &v, student, &item.input, &item.target, &targets, cfg.lambda_cos, cfg.beta_enh)?;
    let loss_distill = g.scalar(dl) as f64;
    let loss_enh = el.map(|e| g.scalar(e) as f64);
    g.backward(total)?;
    let grads = v
        .iter()
        .zip(student.params.tensors())
        .map(|(&var, t)| g.take_grad(var).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok(ItemResult { grads, loss_distill, loss_enh })
}

/// Redraws allowed per batch item before a silent corpus is reported.
const MAX_CROP_DRAWS: usize = 64;

/// Draws the clean crops of one step. Digitally silent crops carry no
/// signal to mix noise against and are redrawn.
fn draw_batch(cfg: &DistillConfig, speech: &[Waveform], step: u64) -> Result<Vec<Waveform>, DistillError> {
    let mut rng = rng_for(cfg.seed, stream::TRAIN_STEP, step);
    let sr = speech[0].sample_rate();
    let crop = (cfg.crop_s * sr as f64).round() as usize;
    (0..cfg.batch_size)
        .map(|_| {
            for _ in 0..MAX_CROP_DRAWS {
                let utt = &speech[rng.random_range(0..speech.len())];
                let start = if utt.len() > crop { rng.random_range(0..=utt.len() - crop) } else { 0 };
                let w = utt.window(start, crop);
                if w.samples().iter().any(|&v| v != 0.0) {
                    return Ok(w);
                }
            }
            Err(DistillError::SilentSpeech { step })
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DistillError + '_ {
    move |source| DistillError::Io { path: path.display().to_string(), source }
}

/// Trains `student` (and its enhancement head when `beta_enh > 0`) against
/// the frozen `teacher`. When `out_dir` is given, writes `metrics.jsonl`
/// and checkpoints under `checkpoints/`.
pub fn run_distillation(
    cfg: &DistillConfig,
    teacher: &TeacherModel,
    student: &mut StudentModel,
    data: TrainingData<'_>,
    out_dir: Option<&Path>,
) -> Result<RunOutcome, DistillError> {
    cfg.validate()?;
    data.policy.validate()?;
    if data.speech.is_empty() {
        return Err(DistillError::NoSpeech);
    }
    let teacher_before = teacher.checksum();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| DistillError::Config(format!("thread pool: {e}")))?;

    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
            let p = dir.join("metrics.jsonl");
            Some(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
        }
        None => None,
    };

    let mut state = OptimizerState::for_params(student.params.tensors());
    let mut metrics = Vec::with_capacity(cfg.total_steps as usize);
    let mut final_checkpoint = None;
    for step in 1..=cfg.total_steps {
        let started = Instant::now();
        let clean = draw_batch(cfg, data.speech, step)?;
        let items: Vec<Contaminated> = if cfg.augment {
            let seed = derive_seed(cfg.seed, stream::BATCH_ITEM, step);
            pool.install(|| contaminate_batch(&clean, data.policy, data.corpora, seed))?
        } else {
            clean
                .into_iter()
                .map(|w| Contaminated { input: w.clone(), target: w, action: ContaminationAction::Clean })
                .collect()
        };
        let results: Vec<ItemResult> = {
            let s: &StudentModel = student;
            pool.install(|| items.par_iter().map(|it| process_item(cfg, teacher, s, it)).collect::<Result<_, _>>())
                .map_err(|e| non_finite(step, e))?
        };

        // Reduce in item order so the sum is independent of scheduling.
        let n = results.len() as f64;
        let mut grads: Vec<Vec<f64>> = student.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v as f64);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g /= n);
        let loss_distill = results.iter().map(|r| r.loss_distill).sum::<f64>() / n;
        let loss_enh = if cfg.beta_enh > 0.0 {
            Some(results.iter().map(|r| r.loss_enh.unwrap_or(0.0)).sum::<f64>() / n)
        } else {
            None
        };
        if !loss_distill.is_finite() || loss_enh.is_some_and(|l| !l.is_finite()) {
            return Err(DistillError::NonFiniteLoss { step, detail: format!("loss {loss_distill} / {loss_enh:?}") });
        }
        if let Some(max) = cfg.grad_clip {
            clip_global_norm(&mut grads, max);
        }
        let lr = cfg.lr_at(step);
        adamw_step(student.params.tensors_mut(), &grads, &mut state, lr, &cfg.adamw);

        let m = StepMetrics {
            step,
            lr,
            loss_distill,
            loss_enh,
            wall_ms: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        if let (Some(w), Some(dir)) = (log.as_mut(), out_dir) {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(w, "{line}").map_err(io_err(dir))?;
        }
        log::debug!("step {step} lr {lr:.3e} distill {loss_distill:.5} enh {loss_enh:?}");
        metrics.push(m);

        let last = step == cfg.total_steps;
        if let Some(dir) = out_dir {
            if last || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
                let p = dir.join("checkpoints").join(format!("step_{step:07}.rdck"));
                save_checkpoint(&student.to_checkpoint(cfg.seed), &p)?;
                if last {
                    final_checkpoint = Some(p);
                }
            }
        }
    }
    if let (Some(mut w), Some(dir)) = (log, out_dir) {
        w.flush().map_err(io_err(dir))?;
    }
    let teacher_after = teacher.checksum();
    if teacher_after != teacher_before {
        return Err(DistillError::TeacherMutated { before: teacher_before, after: teacher_after });
    }
    Ok(RunOutcome { metrics, teacher_checksum: teacher_after, final_checkpoint })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>, DistillError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(io_err(path))?;
            serde_json::from_str(&l).map_err(|e| DistillError::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Trailing moving average over `window` values, ending at each index.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
