//! Feature backends: precomputed WHLF sidecars or a deterministic mock encoder.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::audio::{load_audio, pad_or_truncate_to, Waveform};
use super::whlf::{read_features, LayerStack};
use super::{FrontendError, Result, CLIP_SAMPLES, ENCODER_DIM, ENCODER_LAYERS};

/// Shape of the encoder output and the mock encoder's fixed transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub clip_samples: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub bands: usize,
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            clip_samples: CLIP_SAMPLES,
            hop: 320,
            n_fft: 512,
            bands: 8,
            layers: ENCODER_LAYERS,
            dim: ENCODER_DIM,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn frames(&self) -> usize {
        self.clip_samples / self.hop
    }

    pub fn stack_dims(&self) -> [usize; 3] {
        [self.layers, self.frames(), self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let bins = self.n_fft / 2 + 1;
        if self.hop == 0 || self.frames() == 0 || self.bands == 0 || self.bands > bins || self.layers == 0 || self.dim == 0 {
            return Err(FrontendError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `<audio_path>.whlf`
pub fn sidecar_path(audio_path: impl AsRef<Path>) -> PathBuf {
    let mut s = audio_path.as_ref().as_os_str().to_owned();
    s.push(".whlf");
    PathBuf::from(s)
}

pub trait FeatureBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Output shape `[layers, frames, dim]`.
    fn dims(&self) -> [usize; 3];

    /// Number of samples the backend expects after padding.
    fn clip_samples(&self) -> usize;

    /// Whether features depend on the waveform samples (false for sidecar files).
    fn reads_samples(&self) -> bool;

    /// Features for an already padded waveform.
    fn extract(&self, w: &Waveform) -> Result<LayerStack>;

    /// Features for an audio file referenced from a manifest.
    fn extract_path(&self, audio_path: &Path) -> Result<LayerStack> {
        let w = load_audio(audio_path)?;
        self.extract(&pad_or_truncate_to(&w, self.clip_samples())?)
    }
}

/// Reads precomputed stacks from `<audio_path>.whlf`.
#[derive(Debug, Clone)]
pub struct FileBackend {
    pub expected: [usize; 3],
    pub clip_samples: usize,
}

impl FileBackend {
    pub fn new(expected: [usize; 3]) -> Self {
        Self {
            expected,
            clip_samples: CLIP_SAMPLES,
        }
    }
}

impl FeatureBackend for FileBackend {
    fn name(&self) -> &'static str {
        "file"
    }

    fn dims(&self) -> [usize; 3] {
        self.expected
    }

    fn clip_samples(&self) -> usize {
        self.clip_samples
    }

    fn reads_samples(&self) -> bool {
        false
    }

    fn extract(&self, w: &Waveform) -> Result<LayerStack> {
        self.extract_path(Path::new(&w.source_path))
    }

    fn extract_path(&self, audio_path: &Path) -> Result<LayerStack> {
        let side = sidecar_path(audio_path);
        if !side.is_file() {
            return Err(FrontendError::MissingSidecar(side));
        }
        let stack = read_features(&side)?;
        if stack.dims() != self.expected {
            return Err(FrontendError::ShapeMismatch {
                path: side,
                found: stack.dims(),
                expected: self.expected,
            });
        }
        Ok(stack)
    }
}

/// Deterministic stand-in for a pretrained encoder.
///
/// Each hop-spaced frame gets `bands` log band energies from a Hann-windowed
/// magnitude spectrum (rectangular band partition), a fixed seeded projection
/// to `dim`, and per layer `tanh(scale_l * h + shift_l)` with fixed seeded
/// `scale_l`, `shift_l`.
pub struct MockEncoder {
    config: EncoderConfig,
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    band_edges: Vec<usize>,
    projection: Vec<f32>, // [bands, dim]
    scale: Vec<f32>,      // [layers, dim]
    shift: Vec<f32>,      // [layers, dim]
}

impl std::fmt::Debug for MockEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockEncoder").field("config", &self.config).finish()
    }
}

impl MockEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (config.bands as f32).sqrt();
        let projection = (0..config.bands * config.dim).map(|_| rng.gen_range(-bound..bound)).collect();
        let scale = (0..config.layers * config.dim).map(|_| rng.gen_range(0.05..0.25)).collect();
        let shift = (0..config.layers * config.dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bins = config.n_fft / 2 + 1;
        let band_edges = (0..=config.bands).map(|b| b * bins / config.bands).collect();
        let n = config.n_fft;
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f32 / n as f32).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            config,
            fft,
            window,
            band_edges,
            projection,
            scale,
            shift,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `shift_l`: the layer output for a frame with zero energy is `tanh(shift_l)`.
    pub fn layer_shift(&self, layer: usize) -> &[f32] {
        &self.shift[layer * self.config.dim..(layer + 1) * self.config.dim]
    }

    /// Log band energies `ln(1 + Σ|X_k|²)` per frame, `[frames, bands]`.
    pub fn band_energies(&self, samples: &[f32]) -> Vec<f32> {
        let c = &self.config;
        let frames = c.frames();
        let mut out = Vec::with_capacity(frames * c.bands);
        let mut buf = vec![Complex32::new(0.0, 0.0); c.n_fft];
        let mut scratch = vec![Complex32::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * c.hop;
            for (i, z) in buf.iter_mut().enumerate() {
                let s = samples.get(start + i).copied().unwrap_or(0.0);
                *z = Complex32::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for b in 0..c.bands {
                let e: f32 = buf[self.band_edges[b]..self.band_edges[b + 1]].iter().map(|z| z.norm_sqr()).sum();
                out.push(e.ln_1p());
            }
        }
        out
    }
}

impl FeatureBackend for MockEncoder {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn dims(&self) -> [usize; 3] {
        self.config.stack_dims()
    }

    fn clip_samples(&self) -> usize {
        self.config.clip_samples
    }

    fn reads_samples(&self) -> bool {
        true
    }

    fn extract(&self, w: &Waveform) -> Result<LayerStack> {
        let c = &self.config;
        if w.len() != c.clip_samples {
            return Err(FrontendError::Config(format!(
                "mock encoder expects {} samples, got {}; pad or truncate first",
                c.clip_samples,
                w.len()
            )));
        }
        let frames = c.frames();
        let energies = self.band_energies(&w.samples);
        let mut data = vec![0.0f32; c.layers * frames * c.dim];
        let mut h = vec![0.0f32; c.dim];
        for t in 0..frames {
            h.iter_mut().for_each(|x| *x = 0.0);
            for b in 0..c.bands {
                let e = energies[t * c.bands + b];
                let row = &self.projection[b * c.dim..(b + 1) * c.dim];
                h.iter_mut().zip(row).for_each(|(x, &p)| *x += e * p);
            }
            for l in 0..c.layers {
                let base = (l * frames + t) * c.dim;
                let sc = &self.scale[l * c.dim..(l + 1) * c.dim];
                let sh = &self.shift[l * c.dim..(l + 1) * c.dim];
                for d in 0..c.dim {
                    data[base + d] = (sc[d] * h[d] + sh[d]).tanh();
                }
            }
        }
        LayerStack::new(c.layers, frames, c.dim, data)
    }
}
