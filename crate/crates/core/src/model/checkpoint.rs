//! Checkpoint directories.
//!
//! ```text
//! <dir>/config   INI text: [checkpoint] version, [model] hyperparameters,
//!                [optim] Adam settings, [state] epoch/step, [meta] free-form
//! <dir>/params   "WHLP" v1: count, then per tensor name, shape and f32 data
//! <dir>/optim    "WHLO" v1: Adam step, then per tensor m and v
//! <dir>/rng      INI text: dropout RNG seed, stream and word position
//! ```
//!
//! All binary fields are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ini::Ini;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::{AdamConfig, AdamState};

use super::{ModelConfig, ModelError, Result, Trainer, WhilterModel};

pub const CHECKPOINT_VERSION: u32 = 1;
const PARAMS_MAGIC: &[u8; 4] = b"WHLP";
const OPTIM_MAGIC: &[u8; 4] = b"WHLO";

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: WhilterModel<f32>,
    pub trainer: Trainer,
    /// Free-form string pairs stored under `[meta]` (encoder settings, stage, ...).
    pub meta: BTreeMap<String, String>,
}

fn err(path: &Path, msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let model = &ckpt.model;
    let trainer = &ckpt.trainer;

    let mut conf = Ini::new();
    conf.with_section(Some("checkpoint")).set("version", CHECKPOINT_VERSION.to_string());
    for (k, v) in model.config().to_pairs() {
        conf.with_section(Some("model")).set(k, v);
    }
    let a = trainer.adam.config;
    conf.with_section(Some("optim"))
        .set("beta1", a.beta1.to_string())
        .set("beta2", a.beta2.to_string())
        .set("epsilon", a.epsilon.to_string())
        .set("weight_decay", a.weight_decay.to_string())
        .set(
            "max_grad_norm",
            a.max_grad_norm.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
    conf.with_section(Some("state"))
        .set("epoch", trainer.epoch.to_string())
        .set("step", trainer.step.to_string());
    for (k, v) in &ckpt.meta {
        conf.with_section(Some("meta")).set(k.as_str(), v.as_str());
    }
    let p = dir.join("config");
    conf.write_to_file(&p).map_err(io(&p))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, name, t) in model.params().iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(&dir.join("params"), &buf)?;

    let st = &trainer.adam.state;
    let mut buf = Vec::new();
    buf.extend_from_slice(OPTIM_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&st.step.to_le_bytes());
    buf.extend_from_slice(&(st.m.len() as u32).to_le_bytes());
    for (m, v) in st.m.iter().zip(&st.v) {
        buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for x in m.iter().chain(v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(&dir.join("optim"), &buf)?;

    let mut rng = Ini::new();
    let seed: String = trainer.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    rng.with_section(Some("rng"))
        .set("algorithm", "chacha8")
        .set("seed", seed)
        .set("stream", trainer.rng.get_stream().to_string())
        .set("word_pos", trainer.rng.get_word_pos().to_string());
    let p = dir.join("rng");
    rng.write_to_file(&p).map_err(io(&p))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(io(path))?;
    w.flush().map_err(io(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(io(path))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(io(path))?;
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(err(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| err(self.path, "length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(err(self.path, "bad magic"));
        }
        let v = self.u32()?;
        if v != CHECKPOINT_VERSION {
            return Err(err(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(err(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn get<'a>(conf: &'a Ini, path: &Path, section: &str, key: &str) -> Result<&'a str> {
    conf.get_from(Some(section), key)
        .ok_or_else(|| err(path, format!("missing [{section}] {key}")))
}

fn parse<V: std::str::FromStr>(conf: &Ini, path: &Path, section: &str, key: &str) -> Result<V> {
    let raw = get(conf, path, section, key)?;
    raw.trim()
        .parse()
        .map_err(|_| err(path, format!("bad value {raw:?} for [{section}] {key}")))
}

/// Loads a checkpoint, taking the model configuration from the directory.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let p = dir.join("config");
    let conf = Ini::load_from_file(&p).map_err(|e| err(&p, e.to_string()))?;
    let version: u32 = parse(&conf, &p, "checkpoint", "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(err(&p, format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig::from_lookup(|k| conf.get_from(Some("model"), k).map(str::to_string)).map_err(|e| err(&p, e.to_string()))?;
    let max_grad_norm = match get(&conf, &p, "optim", "max_grad_norm")?.trim() {
        "none" => None,
        _ => Some(parse(&conf, &p, "optim", "max_grad_norm")?),
    };
    let adam_config = AdamConfig {
        beta1: parse(&conf, &p, "optim", "beta1")?,
        beta2: parse(&conf, &p, "optim", "beta2")?,
        epsilon: parse(&conf, &p, "optim", "epsilon")?,
        weight_decay: parse(&conf, &p, "optim", "weight_decay")?,
        max_grad_norm,
    };
    let epoch: u32 = parse(&conf, &p, "state", "epoch")?;
    let step: u64 = parse(&conf, &p, "state", "step")?;
    let meta = conf
        .section(Some("meta"))
        .map(|s| s.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
        .unwrap_or_default();

    let mut model = WhilterModel::<f32>::new(config, 0)?;
    let p = dir.join("params");
    let bytes = read_file(&p)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &p,
    };
    c.header(PARAMS_MAGIC)?;
    let count = c.u32()? as usize;
    if count != model.params().len() {
        return Err(err(&p, format!("{count} tensors, model expects {}", model.params().len())));
    }
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| err(&p, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| err(&p, format!("unknown tensor {name}")))?;
        if model.params().get(id).shape() != shape.as_slice() {
            return Err(err(
                &p,
                format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    model.params().get(id).shape()
                ),
            ));
        }
        let data = c.f32s(shape.iter().product())?;
        model.params_mut().set_data(id, &data);
    }
    c.finish()?;

    let p = dir.join("optim");
    let bytes = read_file(&p)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &p,
    };
    c.header(OPTIM_MAGIC)?;
    let adam_step = c.u64()?;
    let count = c.u32()? as usize;
    if count != model.params().len() {
        return Err(err(&p, format!("{count} moment pairs, model has {} tensors", model.params().len())));
    }
    let mut state = AdamState {
        step: adam_step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for (_, name, t) in model.params().iter() {
        let n = c.u64()? as usize;
        if n != t.numel() {
            return Err(err(&p, format!("moments for {name} have {n} elements, expected {}", t.numel())));
        }
        state.m.push(c.f32s(n)?);
        state.v.push(c.f32s(n)?);
    }
    c.finish()?;

    let p = dir.join("rng");
    let rconf = Ini::load_from_file(&p).map_err(|e| err(&p, e.to_string()))?;
    let hex = get(&rconf, &p, "rng", "seed")?;
    if hex.len() != 64 {
        return Err(err(&p, "seed must be 64 hex digits"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| err(&p, "bad seed hex"))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(parse(&rconf, &p, "rng", "stream")?);
    rng.set_word_pos(parse(&rconf, &p, "rng", "word_pos")?);

    let mut trainer = Trainer::new(&model, adam_config, 0);
    trainer.adam.state = state;
    trainer.rng = rng;
    trainer.epoch = epoch;
    trainer.step = step;
    Ok(Checkpoint { model, trainer, meta })
}

/// Loads a checkpoint and rejects it unless its model configuration equals `expected`.
pub fn load_checkpoint_expecting(dir: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let ckpt = load_checkpoint(dir)?;
    if ckpt.model.config() != expected {
        let diffs: Vec<String> = ckpt
            .model
            .config()
            .to_pairs()
            .into_iter()
            .zip(expected.to_pairs())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("{}: checkpoint {} vs expected {}", a.0, a.1, b.1))
            .collect();
        return Err(ModelError::Config(format!(
            "checkpoint {} does not match: {}",
            dir.display(),
            diffs.join(", ")
        )));
    }
    Ok(ckpt)
}
