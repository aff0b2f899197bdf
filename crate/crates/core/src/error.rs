//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}: not a RIFF/WAVE file")]
    NotWav(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated WAV file: {0}")]
    TruncatedFile(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty signal")]
    EmptySignal,
    #[error("window length {0} is shorter than 2 samples")]
    WindowTooShort(usize),
    #[error("signal of {signal} samples is shorter than one {frame}-sample frame")]
    SignalTooShort { signal: usize, frame: usize },
    #[error("noise signal has zero power")]
    SilentNoise,
    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),

    #[error("fft size {0} must be a power of two no smaller than the frame")]
    BadFftSize(usize),
    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),
    #[error("filterbank too dense: filter {0} has no spectrum bin with positive weight")]
    TooManyFilters(usize),
    #[error("cepstral order {order} outside 1..={filters}")]
    BadOrder { order: usize, filters: usize },

    #[error("frame of {frame} samples too short for lag {lag}")]
    FrameTooShort { frame: usize, lag: usize },
    #[error("autocorrelation sequence is singular or not positive definite")]
    SingularAutocorrelation,
    #[error("trivial-root division left remainder {0:e}")]
    NonzeroRemainder(f64),
    #[error("found {found} unit-circle roots, expected {expected}")]
    RootCountMismatch { found: usize, expected: usize },
    #[error("LSF interlacing violated at index {0}")]
    InterlacingViolated(usize),

    #[error("{frames} frames is too few for delta window {window}")]
    TooFewFrames { frames: usize, window: usize },
    #[error("frame-count mismatch: {0} vs {1}")]
    FrameCountMismatch(usize, usize),
    #[error("mask of length {0} does not match {1} frames")]
    LengthMismatch(usize, usize),
    #[error("voice-activity mask removed every frame")]
    AllFramesRemoved,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training class `{0}` has no examples")]
    EmptyClass(String),
    #[error("utterance has no frames")]
    EmptyUtterance,
    #[error("trials contain only one class")]
    OneClassOnly,
    #[error("degenerate data: zero variance in every column")]
    DegenerateData,

    #[error("no model for speaker {0}")]
    MissingModel(String),
    #[error("{path}:{line}: model parse error: {msg}")]
    ModelParseError {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: feature file parse error: {msg}")]
    FeatureParseError {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("manifest error: {0}")]
    ManifestError(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
