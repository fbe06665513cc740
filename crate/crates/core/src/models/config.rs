use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    /// Fixed sinusoidal table added after the feature projection.
    Sinusoidal,
    /// Grouped convolution over time with a residual connection.
    Convolutional { kernel: usize, groups: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub positional: Positional,
}

pub const CONV_KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
pub const CONV_STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

impl EncoderConfig {
    fn with_width(channels: usize, d_model: usize, n_heads: usize, ffn_dim: usize, positional: Positional) -> Self {
        EncoderConfig {
            conv_channels: vec![channels; 7],
            conv_kernels: CONV_KERNELS.to_vec(),
            conv_strides: CONV_STRIDES.to_vec(),
            d_model,
            n_heads,
            ffn_dim,
            n_layers: 12,
            positional,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.conv_channels.len();
        if n != 7 || self.conv_kernels.len() != n || self.conv_strides.len() != n {
            return Err(ModelError::Config("the conv stack needs 7 stages".into()));
        }
        if self.conv_kernels.iter().chain(&self.conv_strides).chain(&self.conv_channels).any(|&v| v == 0) {
            return Err(ModelError::Config("conv sizes must be positive".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if let Positional::Convolutional { kernel, groups } = self.positional {
            if groups == 0 || !self.d_model.is_multiple_of(groups) || kernel % 2 != 0 {
                return Err(ModelError::Config(
                    "positional conv needs an even kernel and groups dividing d_model".into(),
                ));
            }
        }
        Ok(())
    }

    /// Product of the conv strides.
    pub fn downsampling(&self) -> usize {
        self.conv_strides.iter().product()
    }

    /// Samples needed to produce one output frame.
    pub fn receptive_field(&self) -> usize {
        self.conv_kernels.iter().zip(&self.conv_strides).rev().fold(1, |r, (&k, &s)| (r - 1) * s + k)
    }

    /// Number of frames produced from `len` samples, if any.
    pub fn frames(&self, len: usize) -> Option<usize> {
        self.conv_kernels
            .iter()
            .zip(&self.conv_strides)
            .try_fold(len, |l, (&k, &s)| robdistill_tensor::conv_out_len(l, k, s))
    }
}

/// A named model size: teacher encoder, student depth, distilled layers and
/// enhancement head width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub encoder: EncoderConfig,
    pub student_layers: usize,
    /// 1-based teacher layers the three student heads regress.
    pub target_layers: [usize; 3],
    pub enh_hidden: usize,
    pub sample_rate: u32,
}

pub const PRESET_NAMES: [&str; 3] = ["tiny", "toy", "base"];

impl Preset {
    /// Minimal sizes for finite-difference checks.
    pub fn tiny() -> Self {
        Preset {
            name: "tiny".into(),
            encoder: EncoderConfig::with_width(4, 8, 2, 16, Positional::Sinusoidal),
            student_layers: 2,
            target_layers: [4, 8, 12],
            enh_hidden: 3,
            sample_rate: 16000,
        }
    }

    /// Desk-scale sizes used for training runs and the evaluation harness.
    pub fn toy() -> Self {
        Preset {
            name: "toy".into(),
            encoder: EncoderConfig::with_width(32, 64, 4, 128, Positional::Sinusoidal),
            student_layers: 2,
            target_layers: [4, 8, 12],
            enh_hidden: 32,
            sample_rate: 16000,
        }
    }

    /// Full-size base encoder geometry.
    pub fn base() -> Self {
        Preset {
            name: "base".into(),
            encoder: EncoderConfig::with_width(
                512,
                768,
                12,
                3072,
                Positional::Convolutional { kernel: 128, groups: 16 },
            ),
            student_layers: 2,
            target_layers: [4, 8, 12],
            enh_hidden: 256,
            sample_rate: 16000,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, ModelError> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "toy" => Ok(Self::toy()),
            "base" => Ok(Self::base()),
            other => Err(ModelError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.target_layers.iter().any(|&l| l == 0 || l > self.encoder.n_layers) {
            return Err(ModelError::Config("target layers must lie within the teacher".into()));
        }
        if self.student_layers == 0 || self.enh_hidden == 0 {
            return Err(ModelError::Config("student depth and head width must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_geometry() {
        let e = Preset::base().encoder;
        assert_eq!(e.downsampling(), 320);
        assert_eq!(e.receptive_field(), 400);
        assert_eq!(e.frames(16000), Some(49));
        assert_eq!(e.frames(400), Some(1));
        assert_eq!(e.frames(399), None);
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            Preset::by_name(name).unwrap().validate().unwrap();
        }
        assert!(Preset::by_name("huge").is_err());
    }
}
