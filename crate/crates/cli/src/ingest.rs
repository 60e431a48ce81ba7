use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use whilter::datapipe::{ingest_labelstudio, write_manifest, ManifestEntry, Split};
use whilter::{Class, NUM_CLASSES};

use crate::config::Settings;
use crate::error::{CliError, Result};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub export: PathBuf,
    pub out_dir: PathBuf,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl IngestOptions {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        Ok(Self {
            export: s.require_path("export")?,
            out_dir: s.require_path("out_dir")?,
            ratios: s.floats("ratios", [0.857, 0.063, 0.080])?,
            seed: s.get_or("seed", 0)?,
        })
    }
}

/// Label occurrence counts for one split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n: usize,
    pub classless: usize,
    pub counts: BTreeMap<String, usize>,
}

impl SplitSummary {
    pub fn of(entries: &[ManifestEntry]) -> Self {
        let mut counts: BTreeMap<String, usize> = Class::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
        for e in entries {
            for c in Class::ALL.into_iter().filter(|&c| e.labels.get(c)) {
                *counts.get_mut(c.name()).unwrap() += 1;
            }
        }
        Self {
            n: entries.len(),
            classless: entries.iter().filter(|e| e.labels.is_classless()).count(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub total: SplitSummary,
    pub splits: BTreeMap<String, SplitSummary>,
    pub skipped: usize,
}

/// Split sizes by largest remainder, so they always add up to `n`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(CliError::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let short = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Seeded random assignment of entries to train/val/test.
pub fn assign_splits(entries: &[ManifestEntry], ratios: [f64; 3], seed: u64) -> Result<Vec<ManifestEntry>> {
    let sizes = split_sizes(entries.len(), ratios)?;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Train; entries.len()];
    let mut at = 0;
    for (s, n) in SPLITS.iter().zip(sizes) {
        for &i in &order[at..at + n] {
            split[i] = *s;
        }
        at += n;
    }
    Ok(entries
        .iter()
        .zip(split)
        .map(|(e, s)| ManifestEntry { split: s, ..e.clone() })
        .collect())
}

pub fn manifest_path(out_dir: &Path, split: Split) -> PathBuf {
    out_dir.join(format!("{}.jsonl", split.name()))
}

pub fn render_summary(s: &IngestSummary) -> String {
    let mut out = format!("{:<14}{:>8}", "label", "total");
    for sp in SPLITS {
        out.push_str(&format!("{:>8}", sp.name()));
    }
    out.push('\n');
    let row = |name: &str, get: &dyn Fn(&SplitSummary) -> usize| {
        let mut line = format!("{name:<14}{:>8}", get(&s.total));
        for sp in SPLITS {
            line.push_str(&format!("{:>8}", get(&s.splits[sp.name()])));
        }
        line.push('\n');
        line
    };
    for c in Class::ALL {
        out.push_str(&row(c.name(), &|x| x.counts[c.name()]));
    }
    out.push_str(&row("(classless)", &|x| x.classless));
    out.push_str(&row("(clips)", &|x| x.n));
    out
}

pub fn cmd_ingest(opts: &IngestOptions) -> Result<IngestSummary> {
    // Ratios are checked before touching the export.
    split_sizes(0, opts.ratios)?;
    let report = ingest_labelstudio(&opts.export)?;
    if report.entries.is_empty() {
        return Err(CliError::Data(format!("{}: no usable tasks", opts.export.display())));
    }
    let entries = assign_splits(&report.entries, opts.ratios, opts.seed)?;
    let mut splits = BTreeMap::new();
    for sp in SPLITS {
        let part: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == sp).cloned().collect();
        write_manifest(manifest_path(&opts.out_dir, sp), &part)?;
        splits.insert(sp.name().to_string(), SplitSummary::of(&part));
    }
    let summary = IngestSummary {
        total: SplitSummary::of(&entries),
        splits,
        skipped: report.skipped.len(),
    };
    let json = opts.out_dir.join(SUMMARY_JSON);
    fs::write(&json, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(|e| CliError::io(&json, e))?;
    let txt = opts.out_dir.join(SUMMARY_TXT);
    fs::write(&txt, render_summary(&summary)).map_err(|e| CliError::io(&txt, e))?;
    info!("{} entries ingested, {} tasks skipped", entries.len(), report.skipped.len());
    debug_assert_eq!(summary.total.counts.len(), NUM_CLASSES);
    Ok(summary)
}
