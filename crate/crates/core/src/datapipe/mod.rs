//! Manifests, weighted epoch sampling, dynamic mixing, augmentation and
//! annotation-export ingestion.

mod augment;
mod labelstudio;
mod manifest;
mod mix;
mod sampler;

pub use augment::{augment, frame_drop, freq_drop, quantize_bits, sign_flip, speed_perturb, AugmentConfig, Augmentation};
pub use labelstudio::{ingest_labelstudio, ingest_labelstudio_str, IngestReport};
pub use manifest::{parse_manifest, read_manifest_str, write_manifest, ManifestEntry, Split};
pub use mix::{
    dynamic_mix, fit_length, mix_at_snr, AudioSource, Family, FileAudioSource, MixConfig, MixOutput, MixPools, MixRecord, PoolKind,
};
pub use sampler::{batches, compute_class_weights, iterations_per_epoch, sample_epoch, sample_weighted, SamplerWeights};

use std::path::PathBuf;

use thiserror::Error;

use crate::frontend::FrontendError;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("{path}: line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: malformed JSON at byte {offset} (line {line}, column {column}): {msg}")]
    Json {
        path: PathBuf,
        offset: usize,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Audio(#[from] FrontendError),
    #[error("{0} is silent (RMS <= 1e-6); cannot mix at a target SNR")]
    Silent(&'static str),
    #[error("mixing pool {0} is empty but enabled")]
    EmptyPool(&'static str),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
