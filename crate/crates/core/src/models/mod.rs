//! Teacher and student encoders, prediction heads, the waveform
//! enhancement head, parameter stores and checkpoints.

mod checkpoint;
mod config;
mod encoder;
mod params;

use rand::Rng;
use robdistill_tensor::{nn, Graph, Real, Tensor, TensorError, Var};
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::rng::{rng_for, stream};

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, Positional, Preset, CONV_KERNELS, CONV_STRIDES, PRESET_NAMES};
pub use encoder::{sinusoid_table, Encoder};
pub use params::Params;

use encoder::Dense;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input of {len} samples is shorter than the receptive field of {min}")]
    TooShort { len: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter `{0}` is missing")]
    MissingParam(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    CorruptChecksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const TEACHER_PREFIX: &str = "teacher";
pub const STUDENT_PREFIX: &str = "student";
pub const ENH_PREFIX: &str = "enh";

fn wave_leaf<F: Real>(g: &mut Graph<F>, w: &Waveform) -> Var {
    let data = w.samples().iter().map(|&s| F::lit(s)).collect();
    g.constant(Tensor::new(vec![w.len()], data).expect("1-D shape"))
}

/// Frozen teacher: a full-depth encoder whose selected layers are the
/// distillation targets.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub preset: Preset,
    pub params: Params<f32>,
    encoder: Encoder,
}

impl TeacherModel {
    /// Random initialization from `seed`.
    pub fn new(preset: &Preset, seed: u64) -> Result<Self, ModelError> {
        preset.validate()?;
        let mut rng = rng_for(seed, stream::TEACHER_INIT, 0);
        let mut params = Params::new();
        let encoder = Encoder::build(&preset.encoder, preset.encoder.n_layers, &mut params, TEACHER_PREFIX, &mut rng)?;
        Ok(TeacherModel { preset: preset.clone(), params, encoder })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Target-layer hidden states on the graph.
    pub fn forward_graph<F: Real>(&self, g: &mut Graph<F>, v: &[Var], wave: Var) -> Result<Vec<Var>, ModelError> {
        let hidden = self.encoder.forward(g, v, wave)?;
        Ok(self.preset.target_layers.iter().map(|&l| hidden[l - 1]).collect())
    }

    /// Hidden states at the target layers, each `[T, d_model]`.
    pub fn forward(&self, w: &Waveform) -> Result<Vec<Tensor<f32>>, ModelError> {
        let mut g = Graph::inference();
        let v = self.params.bind(&mut g, false);
        let x = wave_leaf(&mut g, w);
        let out = self.forward_graph(&mut g, &v, x)?;
        Ok(out.into_iter().map(|o| g.tensor(o)).collect())
    }

    /// Mean over time of the last layer, for probing.
    pub fn pooled_features(&self, w: &Waveform) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::inference();
        let v = self.params.bind(&mut g, false);
        let x = wave_leaf(&mut g, w);
        let hidden = self.encoder.forward(&mut g, &v, x)?;
        let pooled = g.mean_axis0(*hidden.last().expect("at least one layer"))?;
        Ok(g.value(pooled).iter().map(|v| v.to_f64()).collect())
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    pub fn checksum(&self) -> u32 {
        self.params.checksum()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint { preset: self.preset.name.clone(), seed, params: self.params.clone() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut t = Self::new(&Preset::by_name(&ckpt.preset)?, ckpt.seed)?;
        t.params.assign_from(&ckpt.params)?;
        Ok(t)
    }
}

/// BiLSTM over student frames followed by seven transposed convolutions
/// mirroring the conv stack.
#[derive(Debug, Clone)]
pub struct EnhancementHead {
    fwd: [usize; 3],
    bwd: [usize; 3],
    stages: Vec<(usize, usize, usize)>,
}

impl EnhancementHead {
    fn build<R: Rng + ?Sized>(preset: &Preset, p: &mut Params<f32>, rng: &mut R) -> Self {
        let (d, h) = (preset.encoder.d_model, preset.enh_hidden);
        let mut dir = |name: &str| {
            [
                p.push_normal(format!("{ENH_PREFIX}.lstm.{name}.w_ih"), &[d, 4 * h], d + h, rng),
                p.push_normal(format!("{ENH_PREFIX}.lstm.{name}.w_hh"), &[h, 4 * h], d + h, rng),
                p.push_const(format!("{ENH_PREFIX}.lstm.{name}.bias"), &[4 * h], 0.0),
            ]
        };
        let (fwd, bwd) = (dir("fwd"), dir("bwd"));
        let e = &preset.encoder;
        let mut c_in = 2 * h;
        let mut stages = Vec::new();
        for j in 0..7 {
            let layer = 6 - j;
            let c_out = if layer == 0 { 1 } else { e.conv_channels[layer - 1] };
            let (k, s) = (e.conv_kernels[layer], e.conv_strides[layer]);
            let fan_in = (c_in * k).div_ceil(s);
            let w = p.push_normal(format!("{ENH_PREFIX}.up.{j}.weight"), &[c_in, c_out, k], fan_in, rng);
            let b = p.push_const(format!("{ENH_PREFIX}.up.{j}.bias"), &[c_out], 0.0);
            stages.push((w, b, s));
            c_in = c_out;
        }
        EnhancementHead { fwd, bwd, stages }
    }

    /// Reconstructs a `[target_len]` waveform from `hidden: [T, d_model]`,
    /// trimming or zero-padding the upsampled signal on the right.
    pub fn forward<F: Real>(
        &self,
        g: &mut Graph<F>,
        v: &[Var],
        hidden: Var,
        target_len: usize,
    ) -> Result<Var, ModelError> {
        if g.shape(hidden).len() != 2 || g.shape(hidden)[0] == 0 {
            return Err(ModelError::ShapeMismatch(format!("enhancement input {:?}", g.shape(hidden))));
        }
        let lstm = |ids: [usize; 3]| nn::LstmVars { w_ih: v[ids[0]], w_hh: v[ids[1]], bias: v[ids[2]] };
        let y = nn::bilstm(g, hidden, lstm(self.fwd), lstm(self.bwd))?;
        let mut x = g.transpose(y)?;
        for (j, &(w, b, s)) in self.stages.iter().enumerate() {
            x = g.conv_transpose1d(x, v[w], Some(v[b]), s)?;
            if j + 1 < self.stages.len() {
                x = g.gelu(x)?;
            }
        }
        let natural = g.shape(x)[1];
        let x = g.reshape(x, &[natural])?;
        Ok(match natural.cmp(&target_len) {
            std::cmp::Ordering::Equal => x,
            std::cmp::Ordering::Greater => g.slice(x, 0, 0, target_len)?,
            std::cmp::Ordering::Less => {
                let pad = g.constant(Tensor::zeros(vec![target_len - natural]));
                g.concat(&[x, pad], 0)?
            }
        })
    }
}

/// Outputs of a student pass on the graph.
#[derive(Debug, Clone)]
pub struct StudentVars {
    pub predictions: Vec<Var>,
    pub last_hidden: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    pub predictions: Vec<Tensor<f32>>,
    pub last_hidden: Tensor<f32>,
}

/// Shallow student with one linear prediction head per target layer, plus
/// the enhancement head. Both live in one parameter store.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub preset: Preset,
    pub params: Params<f32>,
    encoder: Encoder,
    heads: Vec<Dense>,
    enh: EnhancementHead,
}

impl StudentModel {
    /// Random initialization from `seed` with the conv stack copied from
    /// `teacher` when given.
    pub fn new(preset: &Preset, seed: u64, teacher: Option<&TeacherModel>) -> Result<Self, ModelError> {
        preset.validate()?;
        let mut rng = rng_for(seed, stream::STUDENT_INIT, 0);
        let mut params = Params::new();
        let encoder = Encoder::build(&preset.encoder, preset.student_layers, &mut params, STUDENT_PREFIX, &mut rng)?;
        let d = preset.encoder.d_model;
        let heads = (0..preset.target_layers.len())
            .map(|i| Dense::build(&mut params, &format!("{STUDENT_PREFIX}.heads.{i}"), d, d, &mut rng))
            .collect();
        let enh = EnhancementHead::build(preset, &mut params, &mut rng);
        if let Some(t) = teacher {
            if t.preset.encoder.conv_channels != preset.encoder.conv_channels {
                return Err(ModelError::Config("teacher conv stack differs from the student's".into()));
            }
            params.copy_prefix(&t.params, &format!("{TEACHER_PREFIX}.conv."), &format!("{STUDENT_PREFIX}.conv."))?;
        }
        Ok(StudentModel { preset: preset.clone(), params, encoder, heads, enh })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn enhancement_head(&self) -> &EnhancementHead {
        &self.enh
    }

    pub fn forward_graph<F: Real>(&self, g: &mut Graph<F>, v: &[Var], wave: Var) -> Result<StudentVars, ModelError> {
        let hidden = self.encoder.forward(g, v, wave)?;
        let last_hidden = *hidden.last().expect("at least one layer");
        let predictions = self.heads.iter().map(|h| h.apply(g, v, last_hidden)).collect::<Result<_, _>>()?;
        Ok(StudentVars { predictions, last_hidden })
    }

    pub fn enhance_graph<F: Real>(
        &self,
        g: &mut Graph<F>,
        v: &[Var],
        hidden: Var,
        target_len: usize,
    ) -> Result<Var, ModelError> {
        self.enh.forward(g, v, hidden, target_len)
    }

    pub fn forward(&self, w: &Waveform) -> Result<StudentOutput, ModelError> {
        let mut g = Graph::inference();
        let v = self.params.bind(&mut g, false);
        let x = wave_leaf(&mut g, w);
        let out = self.forward_graph(&mut g, &v, x)?;
        Ok(StudentOutput {
            predictions: out.predictions.iter().map(|&p| g.tensor(p)).collect(),
            last_hidden: g.tensor(out.last_hidden),
        })
    }

    /// Waveform of `target_len` samples reconstructed from `last_hidden`.
    pub fn enhance(&self, last_hidden: &Tensor<f32>, target_len: usize) -> Result<Waveform, ModelError> {
        let mut g = Graph::inference();
        let v = self.params.bind(&mut g, false);
        let h = g.constant(last_hidden.clone());
        let y = self.enh.forward(&mut g, &v, h, target_len)?;
        let samples = g.value(y).iter().map(|&s| s as f64).collect();
        Waveform::new(samples, self.preset.sample_rate).map_err(|e| ModelError::ShapeMismatch(e.to_string()))
    }

    /// Mean over time of the last hidden state, for probing.
    pub fn pooled_features(&self, w: &Waveform) -> Result<Vec<f64>, ModelError> {
        let out = self.forward(w)?;
        let (t, d) = (out.last_hidden.shape()[0], out.last_hidden.shape()[1]);
        let mut acc = vec![0.0f64; d];
        for row in out.last_hidden.data().chunks(d) {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
        }
        Ok(acc.into_iter().map(|a| a / t as f64).collect())
    }

    /// Student encoder and prediction heads; the enhancement head is a
    /// training-time auxiliary and is not counted.
    pub fn count_params(&self) -> usize {
        self.params.count_prefix(&format!("{STUDENT_PREFIX}."))
    }

    pub fn count_enhancement_params(&self) -> usize {
        self.params.count_prefix(&format!("{ENH_PREFIX}."))
    }

    pub fn checksum(&self) -> u32 {
        self.params.checksum()
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint { preset: self.preset.name.clone(), seed, params: self.params.clone() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut s = Self::new(&Preset::by_name(&ckpt.preset)?, ckpt.seed, None)?;
        s.params.assign_from(&ckpt.params)?;
        Ok(s)
    }
}
