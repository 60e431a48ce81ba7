use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use whilter::datapipe::{parse_manifest, Split};
use whilter::evalkit::{evaluate, render_report, sig3, Evaluation, ReportFormat};
use whilter::model::load_checkpoint;
use whilter::NUM_CLASSES;

use crate::config::{split_filter, thresholds, FrontendSettings, Settings};
use crate::error::{CliError, Result};

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Option<Split>,
    pub out_dir: PathBuf,
    pub data_root: PathBuf,
    pub frontend: FrontendSettings,
    pub thresholds: [f64; NUM_CLASSES],
}

impl EvalOptions {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let manifest = s.require_path("manifest")?;
        Ok(Self {
            checkpoint: s.require_path("checkpoint")?,
            data_root: s
                .path("data_root")
                .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default()),
            manifest,
            split: split_filter(s)?,
            out_dir: s.require_path("out_dir")?,
            frontend: FrontendSettings::from_settings(s)?,
            thresholds: thresholds(s)?,
        })
    }
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    audio_path: &'a str,
    probs: &'a [f32],
}

/// Scores the selected split and writes text, CSV and JSONL reports plus
/// per-clip probabilities into `out_dir`.
pub fn cmd_eval(opts: &EvalOptions) -> Result<Evaluation> {
    let ckpt = load_checkpoint(&opts.checkpoint)?;
    let entries: Vec<_> = parse_manifest(&opts.manifest)?
        .into_iter()
        .filter(|e| opts.split.is_none_or(|s| e.split == s))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no entries for split {}",
            opts.manifest.display(),
            opts.split.map_or("all", |s| s.name())
        )));
    }
    let backend = opts.frontend.build(ckpt.model.config())?;
    let ev = evaluate(&ckpt.model, &entries, &opts.data_root, backend.as_ref(), &opts.thresholds)?;

    fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::io(&opts.out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = opts.out_dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    let mut text = render_report(&ev.reports, ReportFormat::Text)?;
    text.push_str(&format!(
        "{} clips; feature backend ({}) time {} s in total\n",
        entries.len(),
        backend.name(),
        sig3(ev.backend_time_s)
    ));
    write(REPORT_TXT, text)?;
    write(REPORT_CSV, render_report(&ev.reports, ReportFormat::Csv)?)?;
    write(REPORT_JSONL, render_report(&ev.reports, ReportFormat::Jsonl)?)?;
    let mut preds = String::new();
    for (e, p) in entries.iter().zip(&ev.predictions) {
        let line = PredictionLine {
            audio_path: &e.audio_path,
            probs: &p.probs,
        };
        preds.push_str(&serde_json::to_string(&line).expect("predictions serialize"));
        preds.push('\n');
    }
    write(PREDICTIONS, preds)?;
    Ok(ev)
}
