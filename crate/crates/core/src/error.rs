use thiserror::Error;

use crate::taskgen::{EvalMode, SettingKind};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),

    #[error("{mode:?} evaluation is not supported for {setting:?}")]
    UnsupportedMode { mode: EvalMode, setting: SettingKind },

    #[error("could not build an IWL context without the query task after {attempts} attempts")]
    IwlExhausted { attempts: usize },

    #[error("every task assigns zero likelihood to the observed prefix")]
    DegeneratePosterior,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("setting mismatch: expected {expected:?}, found {found:?}")]
    SettingMismatch { expected: SettingKind, found: SettingKind },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("memorizing and generalizing predictions are indistinguishable (d_MG = 0)")]
    DegenerateGeometry,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("all codecs failed: {0}")]
    AllCodecsFailed(String),

    #[error("underdetermined fit: {cells} usable cells for {params} parameters")]
    Underdetermined { cells: usize, params: usize },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("prediction log is missing cell N={n}, D={d}")]
    MissingCell { n: u64, d: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
