//! Additive mixing at a target SNR and on-the-fly batch mixing.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use super::{DataError, ManifestEntry, Result};
use crate::frontend::{load_audio, Waveform};
use crate::labels::LabelVector;

const SILENCE_RMS: f64 = 1e-6;

/// A mixture together with its scaled components, so the realized SNR can
/// be recomputed after peak normalization.
#[derive(Debug, Clone)]
pub struct MixOutput {
    pub mixture: Waveform,
    pub target: Vec<f32>,
    pub interferer: Vec<f32>,
    /// Gain applied to the interferer before normalization.
    pub gain: f64,
    /// Peak-normalization factor applied to the whole mixture (1 if none).
    pub peak_scale: f64,
}

impl MixOutput {
    /// `20·log10(rms(target) / rms(interferer))` of the retained components.
    pub fn realized_snr_db(&self) -> f64 {
        20.0 * (rms(&self.target) / rms(&self.interferer)).log10()
    }
}

fn rms(xs: &[f32]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|&x| x as f64 * x as f64).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Tiles a shorter signal or crops a longer one, starting at `offset`.
pub fn fit_length(x: &[f32], len: usize, offset: usize) -> Vec<f32> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    (0..len).map(|i| x[(offset + i) % x.len()]).collect()
}

/// `target + g·interferer` with `g = rms(t)/rms(i) · 10^(-snr/20)`.
///
/// The interferer is looped or truncated to the target length. If the
/// mixture peaks above 1 the whole mixture (and both components) is scaled
/// down, which leaves the SNR unchanged.
pub fn mix_at_snr(target: &Waveform, interferer: &Waveform, snr_db: f64) -> Result<MixOutput> {
    let rt = target.rms();
    if rt <= SILENCE_RMS {
        return Err(DataError::Silent("target"));
    }
    let inter = fit_length(&interferer.samples, target.len(), 0);
    let ri = rms(&inter);
    if ri <= SILENCE_RMS {
        return Err(DataError::Silent("interferer"));
    }
    let gain = rt / ri * 10f64.powf(-snr_db / 20.0);
    let mut t: Vec<f32> = target.samples.clone();
    let mut i: Vec<f32> = inter.iter().map(|&x| (x as f64 * gain) as f32).collect();
    let peak = t.iter().zip(&i).map(|(&a, &b)| (a as f64 + b as f64).abs()).fold(0.0, f64::max);
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_scale < 1.0 {
        t.iter_mut().for_each(|x| *x = (*x as f64 * peak_scale) as f32);
        i.iter_mut().for_each(|x| *x = (*x as f64 * peak_scale) as f32);
    }
    let samples = t.iter().zip(&i).map(|(&a, &b)| (a + b).clamp(-1.0, 1.0)).collect();
    Ok(MixOutput {
        mixture: Waveform {
            samples,
            sample_rate: target.sample_rate,
            source_path: target.source_path.clone(),
        },
        target: t,
        interferer: i,
        gain,
        peak_scale,
    })
}

/// Interference families, each mixed into its own quarter of the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Speech,
    Noise,
    Music,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    English,
    Foreign,
    Synthetic,
    Noise,
    Music,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::English => "english_speech",
            PoolKind::Foreign => "foreign_speech",
            PoolKind::Synthetic => "synthetic_speech",
            PoolKind::Noise => "noise",
            PoolKind::Music => "music",
        }
    }

    fn is_speech(self) -> bool {
        matches!(self, PoolKind::English | PoolKind::Foreign | PoolKind::Synthetic)
    }
}

/// Interferer pools. Entries carry their own labels (e.g. a foreign speech
/// clip has `foreign = true`, one speaker), which are OR-ed into the mixture.
#[derive(Debug, Clone, Default)]
pub struct MixPools {
    pub english_speech: Vec<ManifestEntry>,
    pub foreign_speech: Vec<ManifestEntry>,
    pub synthetic_speech: Vec<ManifestEntry>,
    pub music: Vec<ManifestEntry>,
    pub noise: Vec<ManifestEntry>,
}

impl MixPools {
    pub fn pool(&self, kind: PoolKind) -> &[ManifestEntry] {
        match kind {
            PoolKind::English => &self.english_speech,
            PoolKind::Foreign => &self.foreign_speech,
            PoolKind::Synthetic => &self.synthetic_speech,
            PoolKind::Noise => &self.noise,
            PoolKind::Music => &self.music,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// english : foreign : synthetic draw proportions for speech mixing.
    pub speech_proportions: [f64; 3],
    pub speech: bool,
    pub noise: bool,
    pub music: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            snr_min_db: -5.0,
            snr_max_db: 10.0,
            speech_proportions: [2.0, 1.0, 1.0],
            speech: true,
            noise: true,
            music: true,
        }
    }
}

/// Supplies interferer audio for pool entries.
pub trait AudioSource {
    fn load(&self, entry: &ManifestEntry) -> Result<Waveform>;
}

/// Reads WAV files, resolving relative paths against `base`.
#[derive(Debug, Clone)]
pub struct FileAudioSource {
    pub base: PathBuf,
}

impl FileAudioSource {
    pub fn new(base: impl AsRef<Path>) -> Self {
        Self {
            base: base.as_ref().to_path_buf(),
        }
    }
}

impl AudioSource for FileAudioSource {
    fn load(&self, entry: &ManifestEntry) -> Result<Waveform> {
        Ok(load_audio(entry.resolve(&self.base))?)
    }
}

/// What `dynamic_mix` did to one batch item.
#[derive(Debug, Clone)]
pub struct MixRecord {
    pub index: usize,
    pub family: Family,
    pub pool: PoolKind,
    pub interferer: String,
    pub snr_db: f64,
    pub realized_snr_db: f64,
    pub labels_before: LabelVector,
    pub labels_after: LabelVector,
}

fn pick_speech_pool(cfg: &MixConfig, rng: &mut impl Rng) -> PoolKind {
    let total: f64 = cfg.speech_proportions.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (kind, &p) in [PoolKind::English, PoolKind::Foreign, PoolKind::Synthetic]
        .iter()
        .zip(&cfg.speech_proportions)
    {
        if u < p {
            return *kind;
        }
        u -= p;
    }
    PoolKind::Synthetic
}

/// Mixes interferers into the batch in place.
///
/// For each enabled family in the order speech, noise, music, `floor(B/4)`
/// distinct items are chosen and mixed with a random pool clip at an SNR drawn
/// uniformly from the configured range; items may be chosen by several
/// families. Interferers are tiled when short and randomly cropped when long.
pub fn dynamic_mix(
    batch: &mut [(Waveform, LabelVector)],
    pools: &MixPools,
    source: &dyn AudioSource,
    cfg: &MixConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MixRecord>> {
    if batch.len() < 4 {
        return Err(DataError::Config(format!(
            "dynamic mixing needs a batch of at least 4, got {}",
            batch.len()
        )));
    }
    if !(cfg.snr_min_db <= cfg.snr_max_db) {
        return Err(DataError::Config("snr_min_db must not exceed snr_max_db".into()));
    }
    let families = [(Family::Speech, cfg.speech), (Family::Noise, cfg.noise), (Family::Music, cfg.music)];
    // Validate every pool the configuration can draw from before touching the batch.
    for (family, enabled) in families {
        if !enabled {
            continue;
        }
        let kinds: Vec<PoolKind> = match family {
            Family::Speech => [PoolKind::English, PoolKind::Foreign, PoolKind::Synthetic]
                .into_iter()
                .zip(cfg.speech_proportions)
                .filter(|(_, p)| *p > 0.0)
                .map(|(k, _)| k)
                .collect(),
            Family::Noise => vec![PoolKind::Noise],
            Family::Music => vec![PoolKind::Music],
        };
        if kinds.is_empty() {
            return Err(DataError::Config("speech mixing enabled with all proportions zero".into()));
        }
        for k in kinds {
            if pools.pool(k).is_empty() {
                return Err(DataError::EmptyPool(k.name()));
            }
        }
    }

    let quarter = batch.len() / 4;
    let mut records = Vec::new();
    for (family, enabled) in families {
        if !enabled {
            continue;
        }
        let chosen = index::sample(rng, batch.len(), quarter).into_vec();
        for i in chosen {
            let kind = match family {
                Family::Speech => pick_speech_pool(cfg, rng),
                Family::Noise => PoolKind::Noise,
                Family::Music => PoolKind::Music,
            };
            let pool = pools.pool(kind);
            let entry = &pool[rng.gen_range(0..pool.len())];
            let snr_db = rng.gen_range(cfg.snr_min_db..=cfg.snr_max_db);
            let raw = source.load(entry)?;
            let (target, before) = &batch[i];
            let offset = if raw.len() > target.len() {
                rng.gen_range(0..=raw.len() - target.len())
            } else {
                0
            };
            let inter = Waveform {
                samples: fit_length(&raw.samples, target.len(), offset),
                ..raw
            };
            let out = mix_at_snr(target, &inter, snr_db)?;
            let extra = if kind.is_speech() { entry.labels.speaker_count() } else { 0 };
            let after = before.compose(&entry.labels, extra);
            records.push(MixRecord {
                index: i,
                family,
                pool: kind,
                interferer: entry.audio_path.clone(),
                snr_db,
                realized_snr_db: out.realized_snr_db(),
                labels_before: *before,
                labels_after: after,
            });
            batch[i] = (out.mixture, after);
        }
    }
    Ok(records)
}
