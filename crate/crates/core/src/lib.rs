pub mod audio_io;
pub mod augment;
pub mod distill;
pub mod dsp;
pub mod eval_harness;
pub mod models;
pub mod rng;
pub mod synth;

pub use robdistill_tensor as tensor;
