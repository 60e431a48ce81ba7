//! A small synthetic five-class dataset for smoke tests and demos.
//!
//! Every clip holds one "speaker": a harmonic voice below 2 kHz gated by a
//! syllable envelope with clear pauses. Each class adds its own marker,
//! chosen so the mock encoder's band energies can see it:
//!
//! - multispeaker: a second voice talking in the first one's pauses
//! - music: a steady tone in the 5–6 kHz band
//! - foreign: extra voice harmonics in the 3–4 kHz band (spectral tilt)
//! - noise: band-limited noise in the 7–8 kHz band
//! - synthetic: a 4–5 kHz buzz gated at 100 Hz while the voice is active
//!
//! Interferer pools for dynamic mixing are generated the same way.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whilter::datapipe::{write_manifest, ManifestEntry, Split};
use whilter::frontend::{write_wav, Waveform, SAMPLE_RATE};
use whilter::LabelVector;

use crate::config::{PoolPaths, Settings};
use crate::error::{CliError, Result};

/// Mock-encoder hop the envelopes are laid out against.
pub const TOY_HOP: usize = 320;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Clips per interferer pool.
    pub n_pool: usize,
    pub clip_samples: usize,
    /// Independent probability of each class marker.
    pub p_class: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 200,
            n_test: 400,
            n_pool: 40,
            clip_samples: 16 * TOY_HOP,
            p_class: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub pools: PoolPaths,
    /// Ready-to-run config for `whilter train --config`.
    pub config: PathBuf,
}

impl ToyDataset {
    /// Settings equivalent to the written config file.
    pub fn settings(&self, spec: &ToySpec) -> Settings {
        let p = |x: &Path| x.display().to_string();
        let pool = |x: &Option<PathBuf>| p(x.as_ref().expect("toy pools exist"));
        Settings::new()
            .with("seed", spec.seed)
            .with("epochs", 3)
            .with("eta", 1e-3)
            .with("gamma", 0.7)
            .with("cache_audio", true)
            .with("out_dir", p(&self.root.join("run")))
            .with("train_manifest", p(&self.train_manifest))
            .with("val_manifest", p(&self.val_manifest))
            .with("data_root", p(&self.root))
            .with("pool_english", pool(&self.pools.english))
            .with("pool_foreign", pool(&self.pools.foreign))
            .with("pool_synthetic", pool(&self.pools.synthetic))
            .with("pool_music", pool(&self.pools.music))
            .with("pool_noise", pool(&self.pools.noise))
            .with("backend", "mock")
            .with("clip_samples", spec.clip_samples)
            .with("hop", TOY_HOP)
            .with("preset", "small")
            .with("frames", spec.clip_samples / TOY_HOP)
            .with("manifest", p(&self.test_manifest))
            .with("split", "test")
    }
}

struct Synth<'a> {
    rng: &'a mut ChaCha8Rng,
    len: usize,
}

fn t(i: usize) -> f64 {
    i as f64 / SAMPLE_RATE as f64
}

impl Synth<'_> {
    /// Syllable envelope: talk for 3–5 hops, pause for 3–4 hops, with 5 ms
    /// raised-cosine ramps. Returns the envelope and the active mask.
    fn envelope(&mut self) -> (Vec<f64>, Vec<bool>) {
        let mut active = vec![false; self.len];
        let mut on = self.rng.gen_bool(0.5);
        let mut pos = -(self.rng.gen_range(0..3 * TOY_HOP) as isize);
        while (pos as usize) < self.len || pos < 0 {
            let hops = if on { self.rng.gen_range(3..=5) } else { self.rng.gen_range(3..=4) };
            let end = pos + (hops * TOY_HOP) as isize;
            if on {
                for i in pos.max(0) as usize..(end.max(0) as usize).min(self.len) {
                    active[i] = true;
                }
            }
            pos = end;
            on = !on;
        }
        (smooth(&active), active)
    }

    fn voice(&mut self, f0: f64, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
        let partials: Vec<(f64, f64, f64)> = (1..)
            .map(|k| k as f64 * f0)
            .take_while(|&f| f < hi_hz)
            .filter(|&f| f >= lo_hz)
            .map(|f| (f, f0 / f, self.rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let mut x: Vec<f64> = (0..self.len)
            .map(|i| partials.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * t(i) + ph).sin()).sum())
            .collect();
        normalize_peak(&mut x, 1.0);
        x
    }

    fn tone(&mut self, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
        let f = self.rng.gen_range(lo_hz..hi_hz);
        let ph = self.rng.gen_range(0.0..2.0 * PI);
        (0..self.len).map(|i| (2.0 * PI * f * t(i) + ph).sin()).collect()
    }

    fn band_noise(&mut self, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
        let comps: Vec<(f64, f64)> = (0..40)
            .map(|_| (self.rng.gen_range(lo_hz..hi_hz), self.rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let mut x: Vec<f64> = (0..self.len)
            .map(|i| comps.iter().map(|&(f, ph)| (2.0 * PI * f * t(i) + ph).sin()).sum())
            .collect();
        normalize_peak(&mut x, 1.0);
        x
    }

    /// The main speaker plus requested markers.
    fn clip(&mut self, labels: &LabelVector, speech: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        if speech {
            let (env, active) = self.envelope();
            let level = self.rng.gen_range(0.2..0.5);
            let f0 = self.rng.gen_range(100.0..180.0);
            let v = self.voice(f0, 0.0, 1900.0);
            add(&mut out, &v, &env, level);
            if labels.foreign {
                let v = self.voice(f0, 3000.0, 3900.0);
                add(&mut out, &v, &env, level * self.rng.gen_range(0.3..0.6));
            }
            if labels.synthetic {
                let buzz = self.tone(4300.0, 4700.0);
                let gate: Vec<f64> = (0..self.len).map(|i| env[i] * f64::from((i / 80) % 2 == 0)).collect();
                add(&mut out, &buzz, &gate, level * self.rng.gen_range(0.1..0.3));
            }
            if labels.multispeaker {
                // The second voice fills the first one's pauses.
                let pauses: Vec<bool> = active.iter().map(|a| !a).collect();
                let env2 = smooth(&pauses);
                let f0b = self.rng.gen_range(180.0..260.0);
                let v = self.voice(f0b, 0.0, 1900.0);
                add(&mut out, &v, &env2, level * self.rng.gen_range(0.5..1.0));
            }
        }
        if labels.music {
            let mut m = self.tone(5200.0, 5800.0);
            let depth = self.rng.gen_range(0.0..0.5);
            let rate = self.rng.gen_range(1.0..4.0);
            for (i, x) in m.iter_mut().enumerate() {
                *x *= 1.0 - depth * (0.5 + 0.5 * (2.0 * PI * rate * t(i)).sin());
            }
            add(&mut out, &m, &vec![1.0; self.len], self.rng.gen_range(0.05..0.25));
        }
        if labels.noise {
            let n = self.band_noise(7100.0, 7900.0);
            add(&mut out, &n, &vec![1.0; self.len], self.rng.gen_range(0.05..0.2));
        }
        normalize_peak(&mut out, 0.95);
        out
    }
}

fn smooth(mask: &[bool]) -> Vec<f64> {
    const RAMP: usize = 80;
    let n = mask.len();
    let mut env = vec![0.0; n];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        // Distance to the nearest inactive sample, capped at the ramp length.
        let left = (0..RAMP).take_while(|&d| i >= d && mask[i - d]).count();
        let right = (0..RAMP).take_while(|&d| i + d < n && mask[i + d]).count();
        let d = left.min(right) as f64 / RAMP as f64;
        env[i] = 0.5 - 0.5 * (PI * d).cos();
    }
    env
}

fn add(out: &mut [f64], x: &[f64], env: &[f64], level: f64) {
    for ((o, &v), &e) in out.iter_mut().zip(x).zip(env) {
        *o += level * e * v;
    }
}

fn normalize_peak(x: &mut [f64], limit: f64) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > limit {
        x.iter_mut().for_each(|v| *v *= limit / peak);
    }
}

fn random_labels(rng: &mut impl Rng, p: f64) -> LabelVector {
    let flags = std::array::from_fn(|_| rng.gen_bool(p));
    let l = LabelVector::from_flags(flags);
    l.with_speakers(if l.multispeaker { 2 } else { 1 })
}

fn write_clip(root: &Path, rel: &str, samples: &[f64]) -> Result<()> {
    let path = root.join(rel);
    let w = Waveform::new(samples.iter().map(|&x| x as f32).collect(), rel);
    Ok(write_wav(&path, &w)?)
}

/// Writes audio, manifests, interferer pools and a `toy.ini` config under `dir`.
pub fn generate_toy(dir: &Path, spec: &ToySpec) -> Result<ToyDataset> {
    if spec.clip_samples < 4 * TOY_HOP {
        return Err(CliError::Config(format!("toy clips need at least {} samples", 4 * TOY_HOP)));
    }
    fs::create_dir_all(dir.join("audio")).map_err(|e| CliError::io(dir, e))?;
    let root = dir.canonicalize().map_err(|e| CliError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let duration_s = spec.clip_samples as f64 / SAMPLE_RATE as f64;
    let entry = |rel: String, labels, split, source: &str| ManifestEntry {
        audio_path: rel,
        labels,
        split,
        source: source.to_string(),
        duration_s,
    };

    let manifest = |split: Split, n: usize, rng: &mut ChaCha8Rng| -> Result<PathBuf> {
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let labels = random_labels(rng, spec.p_class);
            let x = Synth {
                rng,
                len: spec.clip_samples,
            }
            .clip(&labels, true);
            let rel = format!("audio/{}_{i:05}.wav", split.name());
            write_clip(&root, &rel, &x)?;
            entries.push(entry(rel, labels, split, "toy"));
        }
        let path = root.join(format!("{}.jsonl", split.name()));
        write_manifest(&path, &entries)?;
        Ok(path)
    };
    let train_manifest = manifest(Split::Train, spec.n_train, &mut rng)?;
    let val_manifest = manifest(Split::Val, spec.n_val, &mut rng)?;
    let test_manifest = manifest(Split::Test, spec.n_test, &mut rng)?;

    let one = LabelVector::default().with_speakers(1);
    let pool_kinds: [(&str, LabelVector, bool); 5] = [
        ("english", one, true),
        ("foreign", LabelVector { foreign: true, ..one }, true),
        ("synthetic", LabelVector { synthetic: true, ..one }, true),
        (
            "music",
            LabelVector {
                music: true,
                ..Default::default()
            },
            false,
        ),
        (
            "noise",
            LabelVector {
                noise: true,
                ..Default::default()
            },
            false,
        ),
    ];
    let mut pool_paths = Vec::new();
    for (name, labels, speech) in pool_kinds {
        let mut entries = Vec::new();
        for i in 0..spec.n_pool {
            let x = Synth {
                rng: &mut rng,
                len: spec.clip_samples,
            }
            .clip(&labels, speech);
            let rel = format!("audio/pool_{name}_{i:03}.wav");
            write_clip(&root, &rel, &x)?;
            entries.push(entry(rel, labels, Split::Train, &format!("toy-{name}")));
        }
        let path = root.join(format!("pool_{name}.jsonl"));
        write_manifest(&path, &entries)?;
        pool_paths.push(Some(path));
    }
    let [english, foreign, synthetic, music, noise]: [Option<PathBuf>; 5] = pool_paths.try_into().expect("five pools");
    let ds = ToyDataset {
        config: root.join("toy.ini"),
        root,
        train_manifest,
        val_manifest,
        test_manifest,
        pools: PoolPaths {
            english,
            foreign,
            synthetic,
            music,
            noise,
        },
    };
    let text = ds.settings(spec).to_ini();
    fs::write(&ds.config, text).map_err(|e| CliError::io(&ds.config, e))?;
    Ok(ds)
}
