#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;
use whilter::evalkit::COLUMNS;
use whilter_cli::config::Settings;
use whilter_cli::toy::{generate_toy, ToyDataset, ToySpec};

pub struct Toy {
    pub dir: TempDir,
    pub ds: ToyDataset,
    pub spec: ToySpec,
}

impl Toy {
    pub fn new(spec: ToySpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_toy(dir.path(), &spec).unwrap();
        Self { dir, ds, spec }
    }

    /// A few dozen clips; enough to exercise every code path quickly.
    pub fn tiny(seed: u64) -> Self {
        Self::new(ToySpec {
            n_train: 48,
            n_val: 12,
            n_test: 24,
            n_pool: 4,
            p_class: 0.4,
            seed,
            ..ToySpec::default()
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// The toy recipe writing into `out`, with a short epoch.
    pub fn settings(&self, out: &str) -> Settings {
        self.ds
            .settings(&self.spec)
            .with("out_dir", self.path(out).display())
            .with("samples_per_epoch", 32)
            .with("batch_size", 8)
            .with("epochs", 2)
    }

    /// Eval/filter settings for `checkpoint` over the test manifest.
    pub fn eval_settings(&self, checkpoint: &Path, out: &str) -> Settings {
        self.ds
            .settings(&self.spec)
            .with("checkpoint", checkpoint.display())
            .with("out_dir", self.path(out).display())
    }
}

/// CSV text with the wall-clock `T_proc` column blanked out.
pub fn mask_timing(csv: &str) -> String {
    let col = COLUMNS.iter().position(|&c| c == "T_proc").unwrap();
    csv.lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                return line.to_string();
            }
            let mut cells: Vec<&str> = line.split(',').collect();
            cells[col] = "*";
            cells.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
