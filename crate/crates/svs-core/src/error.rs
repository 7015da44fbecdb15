//! Error types shared across the core pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed transcription line (expected {expected} fields, got {got}): {line}")]
    MalformedLine {
        expected: usize,
        got: usize,
        line: String,
    },

    #[error("parallel sequences differ in length for {id}: {detail}")]
    LengthMismatch { id: String, detail: String },

    #[error("unknown phoneme {symbol:?} (utterance {id})")]
    UnknownPhoneme { id: String, symbol: String },

    #[error("cannot read audio {path}: {reason}")]
    UnreadableAudio { path: PathBuf, reason: String },

    #[error("unsupported sample-rate conversion {from} -> {to} Hz")]
    UnsupportedRate { from: u32, to: u32 },

    #[error("insufficient data: requested {requested} train utterances from a corpus of {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("invalid analysis config: {0}")]
    ConfigInvalid(String),

    #[error("MIDI pitch id {0} outside [0, 127]")]
    PitchOutOfRange(i64),

    #[error("rest pitch has no frequency; mask rests before converting")]
    RestPitch,

    #[error("semantic provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider token count does not align with lyric characters: {0}")]
    TokenizationMismatch(String),

    #[error("cannot align lexicon phonemes with utterance {id}: {detail}")]
    AlignmentFailure { id: String, detail: String },

    #[error("expansion plan inconsistent with embeddings: {0}")]
    PlanMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
