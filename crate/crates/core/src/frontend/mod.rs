//! Audio loading, fixed-length conditioning and per-layer encoder features.

mod audio;
mod encoder;
mod whlf;

pub use audio::{load_audio, pad_or_truncate, pad_or_truncate_to, write_wav, Waveform};
pub use encoder::{sidecar_path, EncoderConfig, FeatureBackend, FileBackend, MockEncoder};
pub use whlf::{read_features, write_features, FeatureFileHeader, LayerStack, DTYPE_F16, DTYPE_F32, WHLF_MAGIC, WHLF_VERSION};

use std::path::PathBuf;

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
/// 30 s at 16 kHz.
pub const CLIP_SAMPLES: usize = 480_000;
pub const ENCODER_FRAMES: usize = 1500;
pub const ENCODER_LAYERS: usize = 12;
pub const ENCODER_DIM: usize = 768;

#[derive(Error, Debug)]
pub enum FrontendError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported codec ({detail}); only 16-bit PCM and 32-bit float WAV are read")]
    UnsupportedCodec { path: PathBuf, detail: String },
    #[error("{path}: expected 16000 Hz, got {actual} Hz; resample the file externally")]
    SampleRate { path: PathBuf, actual: u32 },
    #[error("empty waveform{}", .0.as_ref().map(|p| format!(" from {p}")).unwrap_or_default())]
    EmptyWaveform(Option<String>),
    #[error("{path}: bad magic {found:?}, expected \"WHLF\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported WHLF version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: dtype code {code} is not supported")]
    DtypeMismatch { path: PathBuf, code: u32 },
    #[error("{path}: truncated payload, expected {expected} bytes, found {actual}")]
    TruncatedPayload { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: payload has {extra} bytes beyond the declared {expected}")]
    TrailingBytes { path: PathBuf, expected: u64, extra: u64 },
    #[error("{path}: truncated header")]
    TruncatedHeader { path: PathBuf },
    #[error("missing feature file {0}")]
    MissingSidecar(PathBuf),
    #[error("{path}: feature shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        path: PathBuf,
        found: [usize; 3],
        expected: [usize; 3],
    },
    #[error("layer stack holds non-finite values")]
    NonFinite,
    #[error("invalid encoder config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FrontendError>;
