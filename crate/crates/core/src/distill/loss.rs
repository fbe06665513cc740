//! Layer-wise distillation objective and the waveform reconstruction loss.

use robdistill_tensor::{nn, Graph, Real, Tensor, Var};

use super::DistillError;
use crate::audio_io::Waveform;

pub const COSINE_EPS: f64 = 1e-8;

/// Sum over heads of `L1(pred, target) + lambda_cos * mean_t(-log
/// sigmoid(cos(pred_t, target_t)))`.
pub fn distill_loss_graph<F: Real>(
    g: &mut Graph<F>,
    preds: &[Var],
    targets: &[Var],
    lambda_cos: f64,
) -> Result<Var, DistillError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(DistillError::ShapeMismatch(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut total: Option<Var> = None;
    for (&p, &t) in preds.iter().zip(targets) {
        if g.shape(p) != g.shape(t) || g.shape(p).len() != 2 {
            return Err(DistillError::ShapeMismatch(format!("{:?} vs {:?}", g.shape(p), g.shape(t))));
        }
        let mut term = nn::l1_loss(g, p, t)?;
        if lambda_cos != 0.0 {
            let cos = g.cosine_rows(p, t, COSINE_EPS)?;
            let ls = g.log_sigmoid(cos)?;
            let m = g.mean(ls)?;
            let c = g.scale(m, F::lit(-lambda_cos))?;
            term = g.add(term, c)?;
        }
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one head"))
}

/// [`distill_loss_graph`] evaluated on detached tensors.
pub fn distill_loss<F: Real>(preds: &[Tensor<F>], targets: &[Tensor<F>], lambda_cos: f64) -> Result<f64, DistillError> {
    let mut g = Graph::inference();
    let p: Vec<Var> = preds.iter().map(|t| g.constant(t.clone())).collect();
    let t: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
    let l = distill_loss_graph(&mut g, &p, &t, lambda_cos)?;
    Ok(g.scalar(l).to_f64())
}

/// Mean absolute sample difference.
pub fn enhancement_loss(wave_hat: &Waveform, clean: &Waveform) -> Result<f64, DistillError> {
    if wave_hat.len() != clean.len() || clean.is_empty() {
        return Err(DistillError::ShapeMismatch(format!("{} samples vs {}", wave_hat.len(), clean.len())));
    }
    let s: f64 = wave_hat.samples().iter().zip(clean.samples()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / clean.len() as f64)
}

pub fn total_loss(distill: f64, enh: f64, beta_enh: f64) -> f64 {
    if beta_enh == 0.0 {
        distill
    } else {
        distill + beta_enh * enh
    }
}
