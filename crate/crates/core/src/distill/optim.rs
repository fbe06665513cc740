//! AdamW with decoupled weight decay, global-norm clipping and the
//! warmup / linear-decay learning-rate schedule.

use robdistill_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-6 }
    }
}

/// First and second moments per parameter element plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn for_params<F: Real>(params: &[Tensor<F>]) -> Self {
        OptimizerState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One AdamW update. Weight decay shrinks the parameter by `lr * wd`
/// separately from the bias-corrected adaptive step.
pub fn adamw_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    if state.m.len() != params.len() {
        *state = OptimizerState::for_params(params);
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.numel(), g.len(), "gradient shape");
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mut xv = x.to_f64();
            xv -= lr * cfg.weight_decay * xv;
            xv -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            *x = F::lit(xv);
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Linear warmup from 0 to `peak` over `[0, warmup]`, then linear decay to
/// 0 at `total`; 0 beyond.
pub fn lr_at(step: u64, warmup: u64, total: u64, peak: f64) -> f64 {
    if step >= total {
        0.0
    } else if step <= warmup {
        if warmup == 0 {
            peak
        } else {
            peak * step as f64 / warmup as f64
        }
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::full(vec![3], 0.5)];
        let mut st = OptimizerState::for_params(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &[vec![1.0; 3]], &mut st, 1e-3, &cfg);
        for &x in p[0].data() {
            assert!(((0.5 - x) - 1e-3).abs() / 1e-3 < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = vec![Tensor::<f32>::from_fn(vec![4], |i| i as f32 - 1.5)];
        let before = p.clone();
        let mut st = OptimizerState::for_params(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        for _ in 0..5 {
            adamw_step(&mut p, &[vec![0.0; 4]], &mut st, 1e-2, &cfg);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![Tensor::<f64>::full(vec![1], 2.0)];
        let mut st = OptimizerState::for_params(&p);
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        adamw_step(&mut p, &[vec![0.0]], &mut st, 0.5, &cfg);
        assert!((p[0].data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.1]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_at(0, 10, 100, 1.0), 0.0);
        assert_eq!(lr_at(5, 10, 100, 1.0), 0.5);
        assert_eq!(lr_at(10, 10, 100, 1.0), 1.0);
        assert_eq!(lr_at(55, 10, 100, 1.0), 0.5);
        assert_eq!(lr_at(100, 10, 100, 1.0), 0.0);
        assert_eq!(lr_at(150, 10, 100, 1.0), 0.0);
    }
}
