//! Gradient-check fixtures, one per differentiable op.
//!
//! Every fixture draws small random inputs from a seed, applies the op and
//! reduces the output to a scalar with a fixed non-uniform weighting so
//! that every output coordinate contributes a distinct gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gradcheck::{gradcheck, GradcheckReport};
use crate::graph::{Graph, Var};
use crate::nn::{self, LstmVars};
use crate::tensor::Tensor;

pub type InputFn = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
pub type LossFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

pub struct OpFixture {
    pub name: &'static str,
    pub inputs: InputFn,
    pub loss: LossFn,
}

impl OpFixture {
    pub fn check(&self, seed: u64, eps: f64, tol: f64) -> Result<GradcheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (self.inputs)(&mut rng);
        gradcheck(self.loss, &inputs, eps, tol)
    }
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Normal samples pushed at least `gap` away from zero, for kinks.
fn randn_away(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.sample(StandardNormal);
        v.signum() * (v.abs() + gap)
    })
}

/// `sum(out * w)` with `w_i = cos(0.37 i + 0.1)`.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(Tensor::from_fn(shape, |i| (0.37 * i as f64 + 0.1).cos()));
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn lstm_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (d_in, h) = (3, 4);
    let mut v = vec![randn(rng, &[5, d_in])];
    for _ in 0..2 {
        v.push(Tensor::from_fn(vec![d_in, 4 * h], |_| 0.5 * rng.sample::<f64, _>(StandardNormal)));
        v.push(Tensor::from_fn(vec![h, 4 * h], |_| 0.5 * rng.sample::<f64, _>(StandardNormal)));
        v.push(Tensor::from_fn(vec![4 * h], |_| 0.1 * rng.sample::<f64, _>(StandardNormal)));
    }
    v
}

pub fn op_fixtures() -> Vec<OpFixture> {
    vec![
        OpFixture {
            name: "add_broadcast",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4])],
            loss: |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "sub",
            inputs: |r| vec![randn(r, &[2, 5]), randn(r, &[2, 5])],
            loss: |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "mul_broadcast",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4])],
            loss: |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "scale",
            inputs: |r| vec![randn(r, &[6])],
            loss: |g, v| {
                let y = g.scale(v[0], -1.7)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "matmul",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])],
            loss: |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "transpose",
            inputs: |r| vec![randn(r, &[3, 5])],
            loss: |g, v| {
                let y = g.transpose(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "reshape",
            inputs: |r| vec![randn(r, &[2, 6])],
            loss: |g, v| {
                let y = g.reshape(v[0], &[3, 4])?;
                let y = g.tanh(y)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "concat",
            inputs: |r| vec![randn(r, &[2, 3]), randn(r, &[2, 2]), randn(r, &[1, 5])],
            loss: |g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                let y = g.concat(&[y, v[2]], 0)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "slice",
            inputs: |r| vec![randn(r, &[4, 5])],
            loss: |g, v| {
                let y = g.slice(v[0], 1, 1, 3)?;
                let y = g.slice(y, 0, 2, 2)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "sum_mean",
            inputs: |r| vec![randn(r, &[7])],
            loss: |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let s = g.sum(sq)?;
                let m = g.mean(v[0])?;
                let m = g.scale(m, 3.0)?;
                g.add(s, m)
            },
        },
        OpFixture {
            name: "mean_axis0",
            inputs: |r| vec![randn(r, &[4, 3])],
            loss: |g, v| {
                let y = g.mean_axis0(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "gelu",
            inputs: |r| vec![randn(r, &[9])],
            loss: |g, v| {
                let y = g.gelu(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "sigmoid",
            inputs: |r| vec![randn(r, &[9])],
            loss: |g, v| {
                let y = g.sigmoid(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "tanh",
            inputs: |r| vec![randn(r, &[9])],
            loss: |g, v| {
                let y = g.tanh(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "abs",
            inputs: |r| vec![randn_away(r, &[9], 0.05)],
            loss: |g, v| {
                let y = g.abs(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "log_sigmoid",
            inputs: |r| vec![randn(r, &[9])],
            loss: |g, v| {
                let y = g.log_sigmoid(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "exp",
            inputs: |r| vec![randn(r, &[9])],
            loss: |g, v| {
                let y = g.exp(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "softmax",
            inputs: |r| vec![randn(r, &[3, 5])],
            loss: |g, v| {
                let y = g.softmax(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "log_softmax",
            inputs: |r| vec![randn(r, &[3, 5])],
            loss: |g, v| {
                let y = g.log_softmax(v[0])?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "layer_norm",
            inputs: |r| vec![randn(r, &[3, 6]), randn(r, &[6]), randn(r, &[6])],
            loss: |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "conv1d",
            inputs: |r| vec![randn(r, &[2, 8]), randn(r, &[3, 2, 3]), randn(r, &[3])],
            loss: |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 0, 1)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "conv1d_strided",
            inputs: |r| vec![randn(r, &[2, 11]), randn(r, &[3, 2, 3])],
            loss: |g, v| {
                let y = g.conv1d(v[0], v[1], None, 2, 0, 1)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "conv1d_grouped_padded",
            inputs: |r| vec![randn(r, &[4, 7]), randn(r, &[4, 2, 4]), randn(r, &[4])],
            loss: |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 2, 2)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "conv_transpose1d",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 2, 3]), randn(r, &[2])],
            loss: |g, v| {
                let y = g.conv_transpose1d(v[0], v[1], Some(v[2]), 2)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "cosine_rows",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
            loss: |g, v| {
                let y = g.cosine_rows(v[0], v[1], 1e-8)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "attention",
            inputs: |r| vec![randn(r, &[4, 6]), randn(r, &[4, 6]), randn(r, &[4, 6])],
            loss: |g, v| {
                let y = nn::multi_head_attention(g, v[0], v[1], v[2], 2)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "bilstm",
            inputs: lstm_inputs,
            loss: |g, v| {
                let fwd = LstmVars { w_ih: v[1], w_hh: v[2], bias: v[3] };
                let bwd = LstmVars { w_ih: v[4], w_hh: v[5], bias: v[6] };
                let y = nn::bilstm(g, v[0], fwd, bwd)?;
                weighted_sum(g, y)
            },
        },
        OpFixture {
            name: "l1_loss",
            inputs: |r| {
                let a = randn(r, &[2, 4]);
                let d = randn_away(r, &[2, 4], 0.05);
                let b = Tensor::from_fn(vec![2, 4], |i| a.data()[i] + d.data()[i]);
                vec![a, b]
            },
            loss: |g, v| nn::l1_loss(g, v[0], v[1]),
        },
        OpFixture {
            name: "cross_entropy",
            inputs: |r| vec![randn(r, &[4, 3])],
            loss: |g, v| nn::cross_entropy(g, v[0], &[0, 2, 1, 2]),
        },
    ]
}
