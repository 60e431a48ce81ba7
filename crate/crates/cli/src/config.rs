//! Layered settings: stage defaults, then an INI config file, then flags.
//!
//! Every key lives in exactly one `[section]` of the config file and is also
//! accepted as `--key-name` on the command line (underscores become dashes).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use tensorcore::{AdamConfig, LrSchedule};
use whilter::datapipe::{AugmentConfig, MixConfig, Split};
use whilter::frontend::{EncoderConfig, FeatureBackend, FileBackend, MockEncoder, CLIP_SAMPLES};
use whilter::model::ModelConfig;
use whilter::{Class, NUM_CLASSES};

use crate::error::{CliError, Result};

pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(section: &'static str, name: &'static str, help: &'static str) -> Key {
    Key { section, name, help }
}

pub const KEYS: &[Key] = &[
    key(
        "run",
        "seed",
        "seed for initialisation, sampling, mixing, augmentation and dropout [0]",
    ),
    key("run", "stage", "training stage: simulated or finetune (implied by the subcommand)"),
    key("run", "epochs", "epochs to train [simulated 10, finetune 100]"),
    key("run", "samples_per_epoch", "weighted draws per epoch [15000]"),
    key("run", "batch_size", "batch size [64]"),
    key("run", "eta", "initial learning rate [1e-5]"),
    key("run", "gamma", "per-epoch learning-rate decay [simulated 0.7, finetune 0.98]"),
    key("run", "out_dir", "output directory for checkpoints, logs and reports"),
    key("run", "base_checkpoint", "checkpoint to fine-tune from"),
    key("run", "resume", "continue from <out_dir>/last if present [false]"),
    key("run", "cache_audio", "keep decoded training audio in memory [false]"),
    key("data", "train_manifest", "training manifest (entries with split=train are used)"),
    key("data", "val_manifest", "validation manifest (entries with split=val are used)"),
    key(
        "data",
        "data_root",
        "base directory for relative audio paths [train manifest's directory]",
    ),
    key("data", "pool_english", "manifest of English speech interferers"),
    key("data", "pool_foreign", "manifest of foreign-language speech interferers"),
    key("data", "pool_synthetic", "manifest of synthetic speech interferers"),
    key("data", "pool_music", "manifest of music interferers"),
    key("data", "pool_noise", "manifest of noise interferers"),
    key("data", "backend", "feature backend: mock or file [mock]"),
    key("mix", "mix_speech", "mix speech interferers [true]"),
    key("mix", "mix_noise", "mix noise interferers [true]"),
    key("mix", "mix_music", "mix music interferers [true]"),
    key("mix", "snr_min_db", "lowest mixing SNR in dB [-5]"),
    key("mix", "snr_max_db", "highest mixing SNR in dB [10]"),
    key(
        "mix",
        "speech_proportions",
        "English,foreign,synthetic speech pool proportions [2,1,1]",
    ),
    key("augment", "p_freq_drop", "frequency-drop probability [0.2]"),
    key("augment", "p_frame_drop", "frame-drop probability [0.2]"),
    key("augment", "p_bit_reduction", "bit-resolution reduction probability [0.2]"),
    key("augment", "p_sign_flip", "sign-flip probability [0.2]"),
    key("augment", "p_speed", "speed perturbation probability [0.2]"),
    key("encoder", "clip_samples", "samples per clip after padding/truncation [480000]"),
    key("encoder", "hop", "mock encoder hop in samples [320]"),
    key("encoder", "n_fft", "mock encoder FFT size [512]"),
    key("encoder", "bands", "mock encoder band count [8]"),
    key("encoder", "encoder_seed", "mock encoder projection seed [0]"),
    key("model", "preset", "model preset: full, reduced or small [full]"),
    key("model", "encoder_layers", "encoder layers fused"),
    key("model", "frames", "frames per clip"),
    key("model", "enc_dim", "encoder feature width"),
    key("model", "model_dim", "transformer width"),
    key("model", "tf_layers", "transformer blocks"),
    key("model", "tf_heads", "attention heads"),
    key("model", "ff_dim", "feed-forward width"),
    key("model", "head_hidden", "attention-pooling head hidden width"),
    key("model", "dropout_p", "dropout probability"),
    key("model", "positional_encoding", "add sinusoidal positional encoding"),
    key("optim", "beta1", "Adam beta1 [0.9]"),
    key("optim", "beta2", "Adam beta2 [0.999]"),
    key("optim", "epsilon", "Adam epsilon [1e-8]"),
    key("optim", "weight_decay", "L2 penalty [0, off]"),
    key("optim", "max_grad_norm", "gradient-norm clip [off]"),
    key("eval", "checkpoint", "checkpoint directory to evaluate or filter with"),
    key("eval", "manifest", "manifest to evaluate or filter"),
    key(
        "eval",
        "split",
        "evaluate only entries of this split: train, val, test or all [test]",
    ),
    key("eval", "threshold_multispeaker", "decision threshold [0.5]"),
    key("eval", "threshold_music", "decision threshold [0.5]"),
    key("eval", "threshold_foreign", "decision threshold [0.5]"),
    key("eval", "threshold_noise", "decision threshold [0.5]"),
    key("eval", "threshold_synthetic", "decision threshold [0.5]"),
    key(
        "filter",
        "policy",
        "any (reject on any enabled class) or tiered (enhance noise/music, discard the rest) [any]",
    ),
    key("filter", "disable", "comma-separated classes to ignore when filtering"),
    key(
        "filter",
        "scores",
        "re-filter a previous decisions.jsonl instead of running the model",
    ),
    key("ingest", "export", "Label Studio JSON export"),
    key("ingest", "ratios", "train,val,test split ratios summing to 1 [0.857,0.063,0.080]"),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Resolved key/value settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) -> Result<()> {
        let k = find_key(name).ok_or_else(|| CliError::Config(format!("unknown key {name:?}")))?;
        self.values.insert(k.name, value.into());
        Ok(())
    }

    /// Builder-style [`Settings::set`] for known-good keys.
    pub fn with(mut self, name: &str, value: impl ToString) -> Self {
        self.set(name, value.to_string()).expect("known key");
        self
    }

    /// Drops a key so its default applies again.
    pub fn without(mut self, name: &str) -> Self {
        self.values.remove(name);
        self
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k, v.clone());
        }
    }

    /// Reads an INI config; every key must sit in its own section.
    pub fn from_ini_str(text: &str, origin: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        let mut s = Self::new();
        for (section, props) in ini.iter() {
            for (name, value) in props.iter() {
                let k = find_key(name).ok_or_else(|| CliError::Config(format!("{}: unknown key {name:?}", origin.display())))?;
                if section != Some(k.section) {
                    return Err(CliError::Config(format!(
                        "{}: key {name:?} belongs in section [{}], found in {}",
                        origin.display(),
                        k.section,
                        section.map_or("the top level".to_string(), |s| format!("[{s}]"))
                    )));
                }
                s.values.insert(k.name, value.to_string());
            }
        }
        Ok(s)
    }

    pub fn from_ini_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_ini_str(&text, path)
    }

    /// INI text that reproduces these settings.
    pub fn to_ini(&self) -> String {
        let mut ini = Ini::new();
        for k in KEYS {
            if let Some(v) = self.values.get(k.name) {
                ini.with_section(Some(k.section)).set(k.name, v.as_str());
            }
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("settings are UTF-8")
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn is_set(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(name)
            .map(|v| v.trim().parse().map_err(|e| CliError::Config(format!("{name} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, name: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(name)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(name)?
            .ok_or_else(|| CliError::Config(format!("missing required setting {name} (--{})", flag_name(name))))
    }

    pub fn flag(&self, name: &str, default: bool) -> Result<bool> {
        match self.raw(name).map(|v| v.trim().to_ascii_lowercase()) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(CliError::Config(format!("{name} = {v:?}: expected true or false"))),
            },
        }
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.raw(name).map(PathBuf::from)
    }

    pub fn require_path(&self, name: &str) -> Result<PathBuf> {
        self.path(name)
            .ok_or_else(|| CliError::Config(format!("missing required setting {name} (--{})", flag_name(name))))
    }

    pub fn floats<const N: usize>(&self, name: &str, default: [f64; N]) -> Result<[f64; N]> {
        let Some(v) = self.raw(name) else { return Ok(default) };
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{name} = {v:?}: {e}")))?;
        parts
            .try_into()
            .map_err(|_| CliError::Config(format!("{name} = {v:?}: expected {N} comma-separated numbers")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulated,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulated => "simulated",
            Stage::Finetune => "finetune",
        }
    }

    pub fn default_epochs(self) -> u32 {
        match self {
            Stage::Simulated => 10,
            Stage::Finetune => 100,
        }
    }

    pub fn default_eta(self) -> f64 {
        1e-5
    }

    pub fn default_gamma(self) -> f64 {
        match self {
            Stage::Simulated => 0.7,
            Stage::Finetune => 0.98,
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simulated" => Ok(Stage::Simulated),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(format!("unknown stage {s:?}; expected simulated or finetune")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    File,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "file" => Ok(BackendKind::File),
            _ => Err(format!("unknown backend {s:?}; expected mock or file")),
        }
    }
}

/// Feature backend settings; layer count and width come from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontendSettings {
    pub backend: BackendKind,
    pub clip_samples: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub bands: usize,
    pub seed: u64,
}

impl FrontendSettings {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let d = EncoderConfig::default();
        Ok(Self {
            backend: s.get_or("backend", BackendKind::Mock)?,
            clip_samples: s.get_or("clip_samples", CLIP_SAMPLES)?,
            hop: s.get_or("hop", d.hop)?,
            n_fft: s.get_or("n_fft", d.n_fft)?,
            bands: s.get_or("bands", d.bands)?,
            seed: s.get_or("encoder_seed", d.seed)?,
        })
    }

    /// The backend matching `model`'s expected input shape.
    pub fn build(&self, model: &ModelConfig) -> Result<Box<dyn FeatureBackend>> {
        let dims = [model.encoder_layers, model.frames, model.enc_dim];
        match self.backend {
            BackendKind::File => Ok(Box::new(FileBackend {
                expected: dims,
                clip_samples: self.clip_samples,
            })),
            BackendKind::Mock => {
                let cfg = EncoderConfig {
                    clip_samples: self.clip_samples,
                    hop: self.hop,
                    n_fft: self.n_fft,
                    bands: self.bands,
                    layers: model.encoder_layers,
                    dim: model.enc_dim,
                    seed: self.seed,
                };
                if cfg.frames() != model.frames {
                    return Err(CliError::Config(format!(
                        "clip_samples / hop = {} / {} gives {} frames but the model expects {}",
                        cfg.clip_samples,
                        cfg.hop,
                        cfg.frames(),
                        model.frames
                    )));
                }
                Ok(Box::new(MockEncoder::new(cfg)?))
            }
        }
    }
}

const MODEL_KEYS: [&str; 10] = [
    "encoder_layers",
    "frames",
    "enc_dim",
    "model_dim",
    "tf_layers",
    "tf_heads",
    "ff_dim",
    "head_hidden",
    "dropout_p",
    "positional_encoding",
];

/// True when any model key was given explicitly.
pub fn model_overridden(s: &Settings) -> bool {
    s.is_set("preset") || MODEL_KEYS.iter().any(|k| s.is_set(k))
}

pub fn model_config(s: &Settings) -> Result<ModelConfig> {
    let mut m = match s.raw("preset").unwrap_or("full") {
        "full" => ModelConfig::default(),
        "reduced" => ModelConfig::reduced(),
        "small" => ModelConfig::small(),
        other => {
            return Err(CliError::Config(format!(
                "unknown model preset {other:?}; expected full, reduced or small"
            )))
        }
    };
    m.encoder_layers = s.get_or("encoder_layers", m.encoder_layers)?;
    m.frames = s.get_or("frames", m.frames)?;
    m.enc_dim = s.get_or("enc_dim", m.enc_dim)?;
    m.model_dim = s.get_or("model_dim", m.model_dim)?;
    m.tf_layers = s.get_or("tf_layers", m.tf_layers)?;
    m.tf_heads = s.get_or("tf_heads", m.tf_heads)?;
    m.ff_dim = s.get_or("ff_dim", m.ff_dim)?;
    m.head_hidden = s.get_or("head_hidden", m.head_hidden)?;
    m.dropout_p = s.get_or("dropout_p", m.dropout_p)?;
    m.positional_encoding = s.flag("positional_encoding", m.positional_encoding)?;
    m.validate()?;
    Ok(m)
}

pub fn thresholds(s: &Settings) -> Result<[f64; NUM_CLASSES]> {
    let mut t = [0.5; NUM_CLASSES];
    for c in Class::ALL {
        let v: f64 = s.get_or(&format!("threshold_{}", c.name()), 0.5)?;
        if v.is_nan() {
            return Err(CliError::Config(format!("threshold_{} is NaN", c.name())));
        }
        t[c.index()] = v;
    }
    Ok(t)
}

/// `None` selects every split.
pub fn split_filter(s: &Settings) -> Result<Option<Split>> {
    match s.raw("split").unwrap_or("test") {
        "all" => Ok(None),
        other => other.parse().map(Some).map_err(CliError::Config),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolPaths {
    pub english: Option<PathBuf>,
    pub foreign: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub music: Option<PathBuf>,
    pub noise: Option<PathBuf>,
}

/// Everything the training stages need.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub stage: Stage,
    pub epochs: u32,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub gamma: f64,
    pub train_manifest: PathBuf,
    pub val_manifest: Option<PathBuf>,
    pub data_root: PathBuf,
    pub pools: PoolPaths,
    pub out_dir: PathBuf,
    pub base_checkpoint: Option<PathBuf>,
    pub resume: bool,
    pub cache_audio: bool,
    pub frontend: FrontendSettings,
    pub model: ModelConfig,
    /// Model keys were given explicitly (checked against a base checkpoint).
    pub model_overridden: bool,
    pub adam: AdamConfig,
    pub mix: MixConfig,
    pub augment: AugmentConfig,
    pub thresholds: [f64; NUM_CLASSES],
}

impl RunConfig {
    pub fn from_settings(s: &Settings, stage: Stage) -> Result<Self> {
        if let Some(given) = s.get::<Stage>("stage")? {
            if given != stage {
                return Err(CliError::Config(format!(
                    "stage = {} conflicts with the {} subcommand",
                    given.name(),
                    stage.name()
                )));
            }
        }
        let train_manifest = s.require_path("train_manifest")?;
        let data_root = s
            .path("data_root")
            .unwrap_or_else(|| train_manifest.parent().map(Path::to_path_buf).unwrap_or_default());
        let d = AdamConfig::default();
        let adam = AdamConfig {
            beta1: s.get_or("beta1", d.beta1)?,
            beta2: s.get_or("beta2", d.beta2)?,
            epsilon: s.get_or("epsilon", d.epsilon)?,
            weight_decay: s.get_or("weight_decay", d.weight_decay)?,
            max_grad_norm: s.get("max_grad_norm")?.or(d.max_grad_norm),
        };
        let md = MixConfig::default();
        let mix = MixConfig {
            snr_min_db: s.get_or("snr_min_db", md.snr_min_db)?,
            snr_max_db: s.get_or("snr_max_db", md.snr_max_db)?,
            speech_proportions: s.floats("speech_proportions", md.speech_proportions)?,
            speech: s.flag("mix_speech", md.speech)?,
            noise: s.flag("mix_noise", md.noise)?,
            music: s.flag("mix_music", md.music)?,
        };
        let ad = AugmentConfig::default();
        let augment = AugmentConfig {
            p_freq_drop: s.get_or("p_freq_drop", ad.p_freq_drop)?,
            p_frame_drop: s.get_or("p_frame_drop", ad.p_frame_drop)?,
            p_bit_reduction: s.get_or("p_bit_reduction", ad.p_bit_reduction)?,
            p_sign_flip: s.get_or("p_sign_flip", ad.p_sign_flip)?,
            p_speed: s.get_or("p_speed", ad.p_speed)?,
        };
        let cfg = Self {
            seed: s.get_or("seed", 0)?,
            stage,
            epochs: s.get_or("epochs", stage.default_epochs())?,
            samples_per_epoch: s.get_or("samples_per_epoch", 15_000)?,
            batch_size: s.get_or("batch_size", 64)?,
            eta: s.get_or("eta", stage.default_eta())?,
            gamma: s.get_or("gamma", stage.default_gamma())?,
            train_manifest,
            val_manifest: s.path("val_manifest"),
            data_root,
            pools: PoolPaths {
                english: s.path("pool_english"),
                foreign: s.path("pool_foreign"),
                synthetic: s.path("pool_synthetic"),
                music: s.path("pool_music"),
                noise: s.path("pool_noise"),
            },
            out_dir: s.require_path("out_dir")?,
            base_checkpoint: s.path("base_checkpoint"),
            resume: s.flag("resume", false)?,
            cache_audio: s.flag("cache_audio", false)?,
            frontend: FrontendSettings::from_settings(s)?,
            model: model_config(s)?,
            model_overridden: model_overridden(s),
            adam,
            mix,
            augment,
            thresholds: thresholds(s)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return bad("batch_size and samples_per_epoch must be positive".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) || !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!(
                "eta = {} and gamma = {} must be finite, eta >= 0, gamma > 0",
                self.eta, self.gamma
            ));
        }
        let probs = [
            self.augment.p_freq_drop,
            self.augment.p_frame_drop,
            self.augment.p_bit_reduction,
            self.augment.p_sign_flip,
            self.augment.p_speed,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("augmentation probabilities must lie in [0, 1], got {probs:?}"));
        }
        if self.stage == Stage::Simulated && self.frontend.backend == BackendKind::Mock && self.mixing_enabled() && self.batch_size < 4 {
            return bad(format!("dynamic mixing needs batch_size >= 4, got {}", self.batch_size));
        }
        Ok(())
    }

    pub fn mixing_enabled(&self) -> bool {
        self.mix.speech || self.mix.noise || self.mix.music
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.eta, self.gamma)
    }
}
