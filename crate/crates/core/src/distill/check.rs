//! End-to-end gradient check of the training loss on the tiny preset.

use rand::Rng;
use rand_distr::StandardNormal;
use robdistill_tensor::{gradcheck, GradcheckReport, Graph, Tensor, TensorError};

use super::trainer::item_loss_graph;
use super::DistillError;
use crate::audio_io::Waveform;
use crate::models::{Preset, StudentModel, TeacherModel};
use crate::rng::{rng_for, stream};

/// Samples in the gradient-check input: two encoder frames of the tiny preset.
pub const GRADCHECK_SAMPLES: usize = 720;

/// Compares analytic and central-difference gradients of the full student
/// loss (distillation plus enhancement) with respect to every student
/// parameter, in f64.
pub fn student_gradcheck(seed: u64, eps: f64, tol: f64) -> Result<GradcheckReport, DistillError> {
    let preset = Preset::tiny();
    let teacher = TeacherModel::new(&preset, seed)?;
    let student = StudentModel::new(&preset, seed.wrapping_add(1), Some(&teacher))?;
    let mut rng = rng_for(seed, stream::PROBE, 1);
    let clean: Vec<f64> = (0..GRADCHECK_SAMPLES)
        .map(|i| 0.3 * (i as f64 * 0.07).sin() + 0.05 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let noisy: Vec<f64> = clean.iter().map(|&c| c + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let clean = Waveform::new(clean, preset.sample_rate)?;
    let noisy = Waveform::new(noisy, preset.sample_rate)?;

    let tp = teacher.params.cast::<f64>();
    let mut g = Graph::<f64>::inference();
    let tv = tp.bind(&mut g, false);
    let x = g.constant(Tensor::new(vec![clean.len()], clean.samples().to_vec())?);
    let targets: Vec<Tensor<f64>> = teacher.forward_graph(&mut g, &tv, x)?.into_iter().map(|t| g.tensor(t)).collect();

    let inputs = student.params.cast::<f64>().tensors().to_vec();
    let report = gradcheck(
        |g, v| {
            item_loss_graph(g, v, &student, &noisy, &clean, &targets, 1.0, 1.0).map(|r| r.0).map_err(|e| match e {
                DistillError::Tensor(t) => t,
                other => TensorError::InvalidArgument { op: "student_loss", msg: other.to_string() },
            })
        },
        &inputs,
        eps,
        tol,
    )?;
    Ok(report)
}
