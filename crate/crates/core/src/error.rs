use thiserror::Error;

/// Crate-wide error type.
///
/// Every failure carries enough context to name the offending frame, bone,
/// file, or batch. The CLI maps errors onto process exit codes via
/// [`Error::exit_code`]: 2 for configuration errors, 3 for data errors,
/// 4 for numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bone: frame {frame}, bone {bone} has length {length:.3e} (< 1e-8)")]
    DegenerateBone { frame: usize, bone: usize, length: f64 },

    #[error("pose sequence has no root trajectory")]
    MissingRoot,

    #[error("topology error: {0}")]
    Topology(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch { context: String, expected: String, got: String },

    #[error("audio clip too short: {0}")]
    TooShortClip(String),

    #[error("no beats found: onset envelope is flat")]
    NoBeatsFound,

    #[error("no beat poses to generate: all beats fall inside the seed window")]
    EmptyBeats,

    #[error("frame coverage error: {0}")]
    CoverageError(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("too few segments: {0}")]
    TooFewSegments(String),

    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),

    #[error("manifest error: {0}")]
    ManifestError(String),

    #[error("format error in {file}: {message}")]
    FormatError { file: String, message: String },

    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("seed motion too short: need {need} frames, got {got}")]
    TooShortSeed { need: usize, got: usize },

    #[error("audio too short: need {need:.2} s, got {got:.2} s")]
    TooShortAudio { need: f64, got: f64 },

    #[error("missing joint {0:?} in topology")]
    MissingJoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// CLI exit code for this error: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) => 2,
            NonFiniteLoss(_) | TooFewSegments(_) | DegenerateCorpus(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
