//! Convolutional feature extractor followed by pre-norm transformer blocks.

use rand::Rng;
use robdistill_tensor::{nn, Graph, Real, Tensor, Var};

use super::config::{EncoderConfig, Positional};
use super::params::Params;
use super::ModelError;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    gamma: usize,
    beta: usize,
}

impl Norm {
    fn build<F: Real>(p: &mut Params<F>, name: &str, dim: usize) -> Self {
        Norm {
            gamma: p.push_const(format!("{name}.gamma"), &[dim], 1.0),
            beta: p.push_const(format!("{name}.beta"), &[dim], 0.0),
        }
    }

    fn apply<F: Real>(&self, g: &mut Graph<F>, v: &[Var], x: Var) -> Result<Var, ModelError> {
        Ok(g.layer_norm(x, v[self.gamma], v[self.beta], LN_EPS)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub(crate) fn build<F: Real, R: Rng + ?Sized>(
        p: &mut Params<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Dense {
            weight: p.push_normal(format!("{name}.weight"), &[d_in, d_out], d_in, rng),
            bias: p.push_const(format!("{name}.bias"), &[d_out], 0.0),
        }
    }

    pub(crate) fn apply<F: Real>(&self, g: &mut Graph<F>, v: &[Var], x: Var) -> Result<Var, ModelError> {
        Ok(nn::linear(g, x, v[self.weight], Some(v[self.bias]))?)
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn_norm: Norm,
    q: Dense,
    k: Dense,
    v: Dense,
    out: Dense,
    ffn_norm: Norm,
    ffn_in: Dense,
    ffn_out: Dense,
}

#[derive(Debug, Clone)]
struct PosConv {
    weight: usize,
    bias: usize,
    kernel: usize,
    groups: usize,
}

/// Parameter layout of one encoder inside a [`Params`] store.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    conv: Vec<usize>,
    conv_norm: Norm,
    feature_norm: Norm,
    proj: Dense,
    pos: Option<PosConv>,
    norm: Norm,
    blocks: Vec<Block>,
}

impl Encoder {
    /// Registers the conv stack, projection, positional encoding and
    /// `n_layers` blocks under `prefix`.
    pub fn build<F: Real, R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        n_layers: usize,
        p: &mut Params<F>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut conv = Vec::new();
        let mut c_in = 1;
        for (i, (&c, &k)) in cfg.conv_channels.iter().zip(&cfg.conv_kernels).enumerate() {
            conv.push(p.push_normal(format!("{prefix}.conv.{i}.weight"), &[c, c_in, k], c_in * k, rng));
            c_in = c;
        }
        let conv_norm = Norm::build(p, &format!("{prefix}.conv.norm"), cfg.conv_channels[0]);
        let feature_norm = Norm::build(p, &format!("{prefix}.feature.norm"), c_in);
        let d = cfg.d_model;
        let proj = Dense::build(p, &format!("{prefix}.feature.proj"), c_in, d, rng);
        let pos = match cfg.positional {
            Positional::Sinusoidal => None,
            Positional::Convolutional { kernel, groups } => Some(PosConv {
                weight: p.push_normal(
                    format!("{prefix}.pos.weight"),
                    &[d, d / groups, kernel],
                    d / groups * kernel,
                    rng,
                ),
                bias: p.push_const(format!("{prefix}.pos.bias"), &[d], 0.0),
                kernel,
                groups,
            }),
        };
        let norm = Norm::build(p, &format!("{prefix}.norm"), d);
        let blocks = (0..n_layers)
            .map(|i| {
                let b = format!("{prefix}.layers.{i}");
                Block {
                    attn_norm: Norm::build(p, &format!("{b}.attn_norm"), d),
                    q: Dense::build(p, &format!("{b}.attn.q"), d, d, rng),
                    k: Dense::build(p, &format!("{b}.attn.k"), d, d, rng),
                    v: Dense::build(p, &format!("{b}.attn.v"), d, d, rng),
                    out: Dense::build(p, &format!("{b}.attn.out"), d, d, rng),
                    ffn_norm: Norm::build(p, &format!("{b}.ffn_norm"), d),
                    ffn_in: Dense::build(p, &format!("{b}.ffn.in"), d, cfg.ffn_dim, rng),
                    ffn_out: Dense::build(p, &format!("{b}.ffn.out"), cfg.ffn_dim, d, rng),
                }
            })
            .collect();
        let cfg = EncoderConfig { n_layers, ..cfg.clone() };
        Ok(Encoder { cfg, conv, conv_norm, feature_norm, proj, pos, norm, blocks })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Runs `wave: [L]` through the encoder and returns the hidden state
    /// after every block, each `[T, d_model]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, v: &[Var], wave: Var) -> Result<Vec<Var>, ModelError> {
        let len = g.shape(wave).iter().product::<usize>();
        let frames = self.cfg.frames(len).ok_or(ModelError::TooShort { len, min: self.cfg.receptive_field() })?;
        let mut x = g.reshape(wave, &[1, len])?;
        for (i, (&w, &s)) in self.conv.iter().zip(&self.cfg.conv_strides).enumerate() {
            x = g.conv1d(x, v[w], None, s, 0, 1)?;
            if i == 0 {
                x = self.channel_norm(g, v, x)?;
            } else {
                x = g.gelu(x)?;
            }
        }
        debug_assert_eq!(g.shape(x)[1], frames);
        let x = g.transpose(x)?;
        let x = self.feature_norm.apply(g, v, x)?;
        let mut x = self.proj.apply(g, v, x)?;
        x = match &self.pos {
            None => {
                let table = g.constant(sinusoid_table(frames, self.cfg.d_model));
                g.add(x, table)?
            }
            Some(pc) => {
                let xt = g.transpose(x)?;
                let y = g.conv1d(xt, v[pc.weight], Some(v[pc.bias]), 1, pc.kernel / 2, pc.groups)?;
                let y = g.slice(y, 1, 0, frames)?;
                let y = g.gelu(y)?;
                let y = g.transpose(y)?;
                g.add(x, y)?
            }
        };
        x = self.norm.apply(g, v, x)?;
        let mut hidden = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let h = b.attn_norm.apply(g, v, x)?;
            let (q, k, vv) = (b.q.apply(g, v, h)?, b.k.apply(g, v, h)?, b.v.apply(g, v, h)?);
            let a = nn::multi_head_attention(g, q, k, vv, self.cfg.n_heads)?;
            let a = b.out.apply(g, v, a)?;
            x = g.add(x, a)?;
            let h = b.ffn_norm.apply(g, v, x)?;
            let h = b.ffn_in.apply(g, v, h)?;
            let h = g.gelu(h)?;
            let h = b.ffn_out.apply(g, v, h)?;
            x = g.add(x, h)?;
            hidden.push(x);
        }
        Ok(hidden)
    }

    /// Normalizes each channel of `x: [C, L]` over time, applies a
    /// per-channel affine map and GELU.
    fn channel_norm<F: Real>(&self, g: &mut Graph<F>, v: &[Var], x: Var) -> Result<Var, ModelError> {
        let len = g.shape(x)[1];
        let ones = g.constant(Tensor::full(vec![len], F::one()));
        let zeros = g.constant(Tensor::zeros(vec![len]));
        let y = g.layer_norm(x, ones, zeros, LN_EPS)?;
        let y = g.transpose(y)?;
        let y = g.mul(y, v[self.conv_norm.gamma])?;
        let y = g.add(y, v[self.conv_norm.beta])?;
        let y = g.gelu(y)?;
        Ok(g.transpose(y)?)
    }
}

/// `[T, d]` table with `sin` on even and `cos` on odd columns.
pub fn sinusoid_table<F: Real>(frames: usize, d: usize) -> Tensor<F> {
    Tensor::from_fn(vec![frames, d], |i| {
        let (t, j) = ((i / d) as f64, i % d);
        let rate = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        F::lit(if j % 2 == 0 { (t * rate).sin() } else { (t * rate).cos() })
    })
}
