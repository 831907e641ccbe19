//! File formats shared with the trainer and the analysis pipeline.

pub mod config;
pub mod evalset;
pub mod json;
pub mod pipeline;
pub mod predlog;
pub mod tables;

/// Version written into every JSONL header.
pub const FORMAT_VERSION: u32 = 1;

/// Eval-set file name template; `{D}` is the task diversity.
pub const EVAL_SET_REF: &str = "eval_id_D{D}.jsonl";

pub use config::RunConfig;
pub use evalset::{
    read_eval_set, read_mixture, read_training_sequences, write_eval_set, write_mixture, write_training_sequences,
};
pub use pipeline::{prepare, run_pipeline, synthesize_log, PipelineSummary, Prepared};
pub use predlog::{load_prediction_log, LogHeader, LogRecord, PredictionLog, PredictionLogWriter};
