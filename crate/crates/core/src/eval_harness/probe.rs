//! Linear softmax probe on standardized frozen features.

use rayon::prelude::*;
use robdistill_tensor::{nn, Graph, Tensor};
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::kws::LabeledSet;
use super::EvalError;
use crate::audio_io::Waveform;
use crate::distill::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { iterations: 300, lr: 0.05, weight_decay: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[D, C]`
    pub weight: Tensor<f64>,
    /// `[C]`
    pub bias: Tensor<f64>,
}

impl LinearProbe {
    pub fn n_classes(&self) -> usize {
        self.bias.numel()
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let c = self.n_classes();
        let mut out = self.bias.data().to_vec();
        for (i, (&f, (&m, &s))) in features.iter().zip(self.mean.iter().zip(&self.scale)).enumerate() {
            let z = (f - m) / s;
            for (o, &w) in out.iter_mut().zip(&self.weight.data()[i * c..(i + 1) * c]) {
                *o += z * w;
            }
        }
        out
    }

    /// Index of the largest logit; ties resolve to the lowest class.
    pub fn predict(&self, features: &[f64]) -> usize {
        let l = self.logits(features);
        (0..l.len()).fold(0, |best, k| if l[k] > l[best] { k } else { best })
    }
}

/// Features of every utterance, computed in parallel, in input order.
pub fn extract_all<E: FeatureExtractor + ?Sized>(model: &E, waves: &[Waveform]) -> Result<Vec<Vec<f64>>, EvalError> {
    waves.par_iter().map(|w| model.features(w)).collect()
}

/// Fits the probe by full-batch AdamW on softmax cross-entropy from a zero
/// initialization, so the result depends only on the features.
pub fn train_probe<E: FeatureExtractor + ?Sized>(
    model: &E,
    train: &LabeledSet,
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe, EvalError> {
    let before = model.checksum();
    let feats = extract_all(model, &train.waves)?;
    let probe = fit_probe(&feats, &train.labels, n_classes, cfg)?;
    if model.checksum() != before {
        return Err(EvalError::UpstreamMutated);
    }
    Ok(probe)
}

pub fn fit_probe(
    feats: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe, EvalError> {
    if feats.is_empty() || feats.len() != labels.len() {
        return Err(EvalError::EmptySet);
    }
    let (n, d) = (feats.len(), feats[0].len());
    let mean: Vec<f64> = (0..d).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            var.sqrt().max(1e-8)
        })
        .collect();
    let x = Tensor::from_fn(vec![n, d], |i| (feats[i / d][i % d] - mean[i % d]) / scale[i % d]);
    let mut params = vec![Tensor::zeros(vec![d, n_classes]), Tensor::zeros(vec![n_classes])];
    let mut state = OptimizerState::for_params(&params);
    let adam = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.leaf(params[0].clone(), true);
        let b = g.leaf(params[1].clone(), true);
        let logits = nn::linear(&mut g, xv, w, Some(b))?;
        let loss = nn::cross_entropy(&mut g, logits, labels)?;
        g.backward(loss)?;
        let grads = vec![g.grad(w).expect("weight grad").to_vec(), g.grad(b).expect("bias grad").to_vec()];
        adamw_step(&mut params, &grads, &mut state, cfg.lr, &adam);
    }
    let bias = params.pop().expect("bias");
    let weight = params.pop().expect("weight");
    Ok(LinearProbe { mean, scale, weight, bias })
}

/// Percentage of correct predictions, from an integer count.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * correct as f64 / labels.len() as f64
}

pub fn eval_probe<E: FeatureExtractor + ?Sized>(
    model: &E,
    probe: &LinearProbe,
    waves: &[Waveform],
    labels: &[usize],
) -> Result<f64, EvalError> {
    let feats = extract_all(model, waves)?;
    let preds: Vec<usize> = feats.iter().map(|f| probe.predict(f)).collect();
    Ok(accuracy(&preds, labels))
}
