//! Evaluation protocol: synthetic keyword-spotting probe, degraded test
//! conditions, noise-type and room-size breakdowns and result tables.

mod features;
mod kws;
mod probe;
mod report;
mod scenarios;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::dsp::DspError;
use crate::models::ModelError;
use robdistill_tensor::TensorError;

pub use features::{FeatureExtractor, LogSpectrogram};
pub use kws::{gen_kws_corpus, random_word, KwsCorpus, KwsSpec, LabeledSet};
pub use probe::{accuracy, eval_probe, extract_all, fit_probe, train_probe, LinearProbe, ProbeConfig};
pub use report::{
    aggregate_overall, parse_csv_report, render_breakdown, render_report, ReportFormat, ResultsRow, ResultsTable,
};
pub use scenarios::{
    build_scenarios, evaluate_conditions, noise_type_breakdown, room_size_breakdown, Condition, BREAKDOWN_SNR_RANGE,
    TEST_SNR_RANGE,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("upstream model weights changed during evaluation")]
    UpstreamMutated,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
