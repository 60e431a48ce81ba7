use std::path::Path;

use super::{FrontendError, Result, CLIP_SAMPLES, SAMPLE_RATE};

/// Mono 16 kHz audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, source_path: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            source_path: source_path.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub(crate) fn rms(xs: &[f32]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Reads a PCM WAV file, downmixing multi-channel audio by channel mean.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| FrontendError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => FrontendError::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => FrontendError::UnsupportedCodec {
            path: path.to_path_buf(),
            detail: "unsupported WAV format tag".into(),
        },
        other => wav_err(other),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(FrontendError::SampleRate {
            path: path.to_path_buf(),
            actual: spec.sample_rate,
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(wav_err)?,
        (fmt, bits) => {
            return Err(FrontendError::UnsupportedCodec {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} {bits}-bit"),
            })
        }
    };
    let channels = spec.channels.max(1) as usize;
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
        source_path: path.display().to_string(),
    })
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| FrontendError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Zero-pads the tail or keeps the head so the clip is exactly 30 s.
pub fn pad_or_truncate(w: &Waveform) -> Result<Waveform> {
    pad_or_truncate_to(w, CLIP_SAMPLES)
}

pub fn pad_or_truncate_to(w: &Waveform, len: usize) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(FrontendError::EmptyWaveform(Some(w.source_path.clone())));
    }
    let mut samples = w.samples.clone();
    samples.resize(len, 0.0);
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
        source_path: w.source_path.clone(),
    })
}
