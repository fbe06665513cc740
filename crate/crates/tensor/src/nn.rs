//! Layers and losses composed from the primitive ops.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// `x @ w + b` with `x: [T, d_in]`, `w: [d_in, d_out]`, `b: [d_out]`.
pub fn linear<F: Real>(g: &mut Graph<F>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add(y, b),
        None => Ok(y),
    }
}

/// Multi-head scaled dot-product self-attention on projected
/// `q, k, v: [T, d]`. Heads split `d` into contiguous blocks.
pub fn multi_head_attention<F: Real>(g: &mut Graph<F>, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
    let s = g.shape(q).to_vec();
    if s.len() != 2 || g.shape(k) != s.as_slice() || g.shape(v) != s.as_slice() {
        return Err(TensorError::shape("attention", &s, g.shape(k)));
    }
    let d = s[1];
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(TensorError::invalid("attention", format!("d_model {d} not divisible by {n_heads} heads")));
    }
    let dh = d / n_heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (g.slice(q, 1, h * dh, dh)?, g.slice(k, 1, h * dh, dh)?, g.slice(v, 1, h * dh, dh)?)
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let p = g.softmax(scores)?;
        heads.push(g.matmul(p, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat(&heads, 1)
    }
}

/// Weights of one LSTM direction. Gate blocks are ordered input, forget,
/// cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `[d_in, 4h]`
    pub w_ih: Var,
    /// `[h, 4h]`
    pub w_hh: Var,
    /// `[4h]`
    pub bias: Var,
}

/// Unrolled LSTM over `x: [T, d_in]` from a zero state, giving `[T, h]`
/// in input time order (also when `reverse` is set).
pub fn lstm<F: Real>(g: &mut Graph<F>, x: Var, p: LstmVars, reverse: bool) -> Result<Var> {
    let sx = g.shape(x).to_vec();
    let sw = g.shape(p.w_hh).to_vec();
    if sx.len() != 2 || sx[0] == 0 || sw.len() != 2 || sw[1] != 4 * sw[0] {
        return Err(TensorError::shape("lstm", &sx, &sw));
    }
    let (steps, h) = (sx[0], sw[0]);
    let xw = g.matmul(x, p.w_ih)?;
    let pre = g.add(xw, p.bias)?;
    let mut h_prev = g.constant(Tensor::zeros(vec![1, h]));
    let mut c_prev = g.constant(Tensor::zeros(vec![1, h]));
    let mut outputs = vec![h_prev; steps];
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let xt = g.slice(pre, 0, t, 1)?;
        let hw = g.matmul(h_prev, p.w_hh)?;
        let gates = g.add(xt, hw)?;
        let i = g.slice(gates, 1, 0, h)?;
        let f = g.slice(gates, 1, h, h)?;
        let c_hat = g.slice(gates, 1, 2 * h, h)?;
        let o = g.slice(gates, 1, 3 * h, h)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let c_hat = g.tanh(c_hat)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, c_hat)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h_t = g.mul(o, tc)?;
        outputs[t] = h_t;
        h_prev = h_t;
        c_prev = c;
    }
    g.concat(&outputs, 0)
}

/// Bidirectional LSTM: forward and backward passes concatenated on the
/// feature axis, `[T, 2h]`.
pub fn bilstm<F: Real>(g: &mut Graph<F>, x: Var, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
    let yf = lstm(g, x, fwd, false)?;
    let yb = lstm(g, x, bwd, true)?;
    g.concat(&[yf, yb], 1)
}

/// Mean absolute difference.
pub fn l1_loss<F: Real>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(TensorError::shape("l1_loss", g.shape(a), g.shape(b)));
    }
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Per-row cosine similarity of `[T, d]` tensors.
pub fn cosine_sim<F: Real>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    g.cosine_rows(a, b, 1e-8)
}

/// Mean softmax cross-entropy of `logits: [N, C]` against class indices.
pub fn cross_entropy<F: Real>(g: &mut Graph<F>, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
        return Err(TensorError::shape("cross_entropy", &s, &[labels.len()]));
    }
    let c = s[1];
    let logp = g.log_softmax(logits)?;
    let onehot = Tensor::from_fn(s.clone(), |i| if labels[i / c] == i % c { F::one() } else { F::zero() });
    let onehot = g.constant(onehot);
    let picked = g.mul(logp, onehot)?;
    let total = g.sum(picked)?;
    g.scale(total, F::lit(-1.0 / labels.len() as f64))
}
