//! The two training stages: simulated-data training with dynamic mixing, and
//! fine-tuning with waveform augmentation.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use whilter::datapipe::{
    augment, batches, compute_class_weights, dynamic_mix, iterations_per_epoch, parse_manifest, sample_epoch, AudioSource, FileAudioSource,
    ManifestEntry, MixPools, Split,
};
use whilter::evalkit::evaluate;
use whilter::frontend::{pad_or_truncate_to, FeatureBackend, LayerStack, Waveform};
use whilter::model::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, Trainer, WhilterModel};
use whilter::{LabelVector, NUM_CLASSES};

use crate::config::{RunConfig, Stage};
use crate::error::{CliError, Result};

pub const LOSS_LOG: &str = "loss.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: u32,
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<[f64; NUM_CLASSES]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mean_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

/// What happens to waveforms between loading and feature extraction.
enum Corruption {
    Mix(MixPools),
    Augment,
    None,
}

/// Stage 1: weighted sampling, dynamic mixing, features, Adam.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    if cfg.stage != Stage::Simulated {
        return Err(CliError::Config("train runs the simulated stage; use finetune".into()));
    }
    let (model, trainer) = match resume_point(cfg)? {
        Some(c) => (c.model, c.trainer),
        None => {
            let model = WhilterModel::new(cfg.model, cfg.seed)?;
            let trainer = Trainer::new(&model, cfg.adam, dropout_seed(cfg.seed));
            (model, trainer)
        }
    };
    let corruption = if cfg.mixing_enabled() {
        Corruption::Mix(load_pools(cfg)?)
    } else {
        Corruption::None
    };
    run(cfg, model, trainer, corruption)
}

/// Stage 2: continue from a checkpoint with augmentation in place of mixing.
/// Mixing pools are never read.
pub fn cmd_finetune(cfg: &RunConfig) -> Result<TrainSummary> {
    if cfg.stage != Stage::Finetune {
        return Err(CliError::Config("finetune needs stage = finetune".into()));
    }
    let (model, trainer) = match resume_point(cfg)? {
        Some(c) => (c.model, c.trainer),
        None => {
            let base = cfg
                .base_checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("finetune needs base_checkpoint (--base-checkpoint)".into()))?;
            let ckpt = if cfg.model_overridden {
                load_checkpoint_expecting(base, &cfg.model)?
            } else {
                load_checkpoint(base)?
            };
            // Adam moments carry over; the epoch counter and dropout stream restart.
            let mut trainer = ckpt.trainer;
            trainer.epoch = 0;
            trainer.rng = ChaCha8Rng::seed_from_u64(dropout_seed(cfg.seed));
            (ckpt.model, trainer)
        }
    };
    run(cfg, model, trainer, Corruption::Augment)
}

fn dropout_seed(seed: u64) -> u64 {
    seed ^ 0x6472_6f70_6f75_7421
}

/// Sampling, mixing and augmentation draw from a stream per epoch, so a
/// resumed run sees the same data as an uninterrupted one.
fn data_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

fn resume_point(cfg: &RunConfig) -> Result<Option<Checkpoint>> {
    let last = cfg.out_dir.join(LAST_DIR);
    if !cfg.resume || !last.is_dir() {
        return Ok(None);
    }
    let ckpt = load_checkpoint(&last)?;
    if cfg.model_overridden && ckpt.model.config() != &cfg.model {
        return Err(CliError::Config(format!(
            "{} was trained with a different model config",
            last.display()
        )));
    }
    info!("resuming from {} at epoch {}", last.display(), ckpt.trainer.epoch);
    Ok(Some(ckpt))
}

fn load_pools(cfg: &RunConfig) -> Result<MixPools> {
    let need = |path: &Option<PathBuf>, key: &str, enabled: bool| -> Result<Vec<ManifestEntry>> {
        match (path, enabled) {
            (_, false) => Ok(Vec::new()),
            (Some(p), true) => Ok(parse_manifest(p)?),
            (None, true) => Err(CliError::Config(format!("{key} is required while that mixing family is enabled"))),
        }
    };
    let sp = cfg.mix.speech_proportions;
    let speech = |i: usize| cfg.mix.speech && sp[i] > 0.0;
    Ok(MixPools {
        english_speech: need(&cfg.pools.english, "pool_english", speech(0))?,
        foreign_speech: need(&cfg.pools.foreign, "pool_foreign", speech(1))?,
        synthetic_speech: need(&cfg.pools.synthetic, "pool_synthetic", speech(2))?,
        music: need(&cfg.pools.music, "pool_music", cfg.mix.music)?,
        noise: need(&cfg.pools.noise, "pool_noise", cfg.mix.noise)?,
    })
}

fn entries_of(path: &Path, split: Split) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = parse_manifest(path)?.into_iter().filter(|e| e.split == split).collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no entries with split={}",
            path.display(),
            split.name()
        )));
    }
    Ok(entries)
}

/// Audio reads, optionally memoised by path.
struct CachedSource {
    inner: FileAudioSource,
    cache: Option<Mutex<BTreeMap<String, Waveform>>>,
}

impl AudioSource for CachedSource {
    fn load(&self, entry: &ManifestEntry) -> whilter::datapipe::Result<Waveform> {
        let Some(cache) = &self.cache else { return self.inner.load(entry) };
        if let Some(w) = cache.lock().unwrap().get(&entry.audio_path) {
            return Ok(w.clone());
        }
        let w = self.inner.load(entry)?;
        cache.lock().unwrap().insert(entry.audio_path.clone(), w.clone());
        Ok(w)
    }
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("log records serialize");
    writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Writes to a sibling temp dir, then swaps it in.
fn save_atomically(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = dir.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    save_checkpoint(&tmp, ckpt)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| CliError::io(dir, e))
}

#[allow(clippy::too_many_arguments)]
fn build_batch(
    cfg: &RunConfig,
    entries: &[ManifestEntry],
    chunk: &[usize],
    backend: &dyn FeatureBackend,
    source: &CachedSource,
    corruption: &Corruption,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(LayerStack, LabelVector)>> {
    if !backend.reads_samples() {
        return chunk
            .iter()
            .map(|&i| {
                let e = &entries[i];
                Ok((backend.extract_path(&e.resolve(&cfg.data_root))?, e.labels))
            })
            .collect();
    }
    let clip = backend.clip_samples();
    let mut wavs = chunk
        .iter()
        .map(|&i| {
            let e = &entries[i];
            Ok((pad_or_truncate_to(&source.load(e)?, clip)?, e.labels))
        })
        .collect::<Result<Vec<_>>>()?;
    match corruption {
        Corruption::Mix(pools) => {
            dynamic_mix(&mut wavs, pools, source, &cfg.mix, rng)?;
        }
        Corruption::Augment => {
            for (w, _) in wavs.iter_mut() {
                let (out, _) = augment(w, rng, &cfg.augment);
                *w = pad_or_truncate_to(&out, clip)?;
            }
        }
        Corruption::None => {}
    }
    wavs.into_iter().map(|(w, y)| Ok((backend.extract(&w)?, y))).collect()
}

fn run(cfg: &RunConfig, mut model: WhilterModel<f32>, mut trainer: Trainer, mut corruption: Corruption) -> Result<TrainSummary> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let train = entries_of(&cfg.train_manifest, Split::Train)?;
    let val = cfg.val_manifest.as_deref().map(|p| entries_of(p, Split::Val)).transpose()?;
    let weights = compute_class_weights(&train)?;
    for w in &weights.warnings {
        warn!("sampler: {w}");
    }
    let backend = cfg.frontend.build(model.config())?;
    if !backend.reads_samples() && !matches!(corruption, Corruption::None) {
        warn!("file backend reads precomputed features; waveform mixing and augmentation are disabled");
        corruption = Corruption::None;
    }
    let source = CachedSource {
        inner: FileAudioSource::new(&cfg.data_root),
        cache: cfg.cache_audio.then(|| Mutex::new(BTreeMap::new())),
    };
    let iters = iterations_per_epoch(cfg.samples_per_epoch, cfg.batch_size);
    let schedule = cfg.schedule();
    let start = trainer.epoch;
    let resuming = start > 0;
    let loss_path = cfg.out_dir.join(LOSS_LOG);
    let epoch_path = cfg.out_dir.join(EPOCH_LOG);
    if resuming {
        // Drop records from an epoch that was interrupted before its checkpoint.
        prune_log::<LossRecord>(&loss_path, |r| r.epoch < start)?;
        prune_log::<EpochRecord>(&epoch_path, |r| r.epoch < start)?;
    }
    let mut loss_log = open_log(&loss_path, resuming)?;
    let mut epoch_log = open_log(&epoch_path, resuming)?;
    let last_dir = cfg.out_dir.join(LAST_DIR);
    let best_dir = cfg.out_dir.join(BEST_DIR);
    let mut best_f1 = if resuming { read_best_f1(&best_dir) } else { None };
    let mut epochs = Vec::new();

    for epoch in start..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = data_rng(cfg.seed, epoch);
        let idx = sample_epoch(&train, &weights, &mut rng, iters * cfg.batch_size)?;
        let mut total = 0.0;
        for (iter, chunk) in batches(&idx, cfg.batch_size).into_iter().enumerate() {
            let batch = build_batch(cfg, &train, chunk, backend.as_ref(), &source, &corruption, &mut rng)?;
            let loss = trainer.train_step(&mut model, &batch, lr)?;
            total += loss;
            write_line(&mut loss_log, &loss_path, &LossRecord { epoch, iter, loss, lr })?;
        }
        trainer.epoch = epoch + 1;

        let (val_f1, val_mean_f1) = match &val {
            Some(v) => {
                let ev = evaluate(&model, v, &cfg.data_root, backend.as_ref(), &cfg.thresholds)?;
                let f1: [f64; NUM_CLASSES] = std::array::from_fn(|c| ev.reports[c].f1);
                (Some(f1), Some(f1.iter().sum::<f64>() / NUM_CLASSES as f64))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: total / iters as f64,
            val_f1,
            val_mean_f1,
        };
        let mut meta = BTreeMap::new();
        meta.insert("stage".to_string(), cfg.stage.name().to_string());
        meta.insert("seed".to_string(), cfg.seed.to_string());
        if let Some(f) = val_mean_f1 {
            meta.insert("val_mean_f1".to_string(), f.to_string());
        }
        let ckpt = Checkpoint {
            model: model.clone(),
            trainer: trainer.clone(),
            meta,
        };
        save_atomically(&last_dir, &ckpt)?;
        if let Some(f) = val_mean_f1 {
            if best_f1.is_none_or(|b| f > b) {
                best_f1 = Some(f);
                save_atomically(&best_dir, &ckpt)?;
            }
        }
        info!(
            "epoch {epoch}: lr {lr:.3e}, mean loss {:.5}{}",
            record.mean_loss,
            val_mean_f1.map_or(String::new(), |f| format!(", val mean F1 {f:.4}"))
        );
        write_line(&mut epoch_log, &epoch_path, &record)?;
        epochs.push(record);
    }
    if !last_dir.is_dir() {
        save_atomically(
            &last_dir,
            &Checkpoint {
                model,
                trainer,
                meta: BTreeMap::new(),
            },
        )?;
    }
    Ok(TrainSummary {
        epochs,
        last_checkpoint: last_dir,
        best_checkpoint: best_dir.is_dir().then_some(best_dir),
    })
}

/// Keeps matching lines verbatim (re-serialising could perturb floats).
fn prune_log<T: for<'de> Deserialize<'de>>(path: &Path, keep: impl Fn(&T) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let rec: T = serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        if keep(&rec) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn read_best_f1(dir: &Path) -> Option<f64> {
    load_checkpoint(dir).ok()?.meta.get("val_mean_f1")?.parse().ok()
}

/// Reads a loss log back.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    read_jsonl(path)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1))))
        .collect()
}
