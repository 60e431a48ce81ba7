//! Threshold-based manifest filtering: score once, re-filter many times.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use whilter::datapipe::{parse_manifest, write_manifest, ManifestEntry};
use whilter::model::load_checkpoint;
use whilter::{Class, NUM_CLASSES};

use crate::config::{thresholds, FrontendSettings, Settings};
use crate::error::{CliError, Result};
use crate::train::read_jsonl;

pub const KEPT: &str = "kept.jsonl";
pub const REJECTED: &str = "rejected.jsonl";
pub const DECISIONS: &str = "decisions.jsonl";
pub const ENHANCE: &str = "enhance.jsonl";
pub const DISCARD: &str = "discard.jsonl";

/// Classes whose problems a downstream enhancement step can plausibly fix.
pub const ENHANCEABLE: [Class; 2] = [Class::Noise, Class::Music];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Reject when any enabled class reaches its threshold.
    Any,
    /// As `Any`, but rejected clips are split into an enhance list (only
    /// noise/music flagged) and a discard list (anything else flagged).
    Tiered,
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "any" => Ok(Policy::Any),
            "tiered" => Ok(Policy::Tiered),
            _ => Err(format!("unknown policy {s:?}; expected any or tiered")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep,
    Reject,
    Enhance,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterRule {
    pub thresholds: [f64; NUM_CLASSES],
    pub enabled: [bool; NUM_CLASSES],
    pub policy: Policy,
}

impl FilterRule {
    /// Enabled classes whose probability reaches the threshold, in class order.
    pub fn reasons(&self, probs: &[f32; NUM_CLASSES]) -> Vec<Class> {
        Class::ALL
            .into_iter()
            .filter(|c| self.enabled[c.index()] && probs[c.index()] as f64 >= self.thresholds[c.index()])
            .collect()
    }

    pub fn decide(&self, entry: ManifestEntry, probs: [f32; NUM_CLASSES]) -> FilterDecision {
        let reasons = self.reasons(&probs);
        let action = match (reasons.is_empty(), self.policy) {
            (true, _) => Action::Keep,
            (false, Policy::Any) => Action::Reject,
            (false, Policy::Tiered) if reasons.iter().all(|c| ENHANCEABLE.contains(c)) => Action::Enhance,
            (false, Policy::Tiered) => Action::Discard,
        };
        FilterDecision {
            entry,
            probs,
            kept: reasons.is_empty(),
            reasons,
            action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub entry: ManifestEntry,
    /// Class probabilities in head order.
    pub probs: [f32; NUM_CLASSES],
    pub kept: bool,
    pub reasons: Vec<Class>,
    pub action: Action,
}

/// Where scores come from.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    Model {
        checkpoint: PathBuf,
        manifest: PathBuf,
        data_root: PathBuf,
        frontend: FrontendSettings,
    },
    /// A previous `decisions.jsonl`; only its entries and probabilities are used.
    Replay(PathBuf),
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub source: ScoreSource,
    pub rule: FilterRule,
    pub out_dir: PathBuf,
}

impl FilterOptions {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let mut enabled = [true; NUM_CLASSES];
        if let Some(list) = s.raw("disable") {
            for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                let c: Class = name.parse().map_err(|e| CliError::Config(format!("disable: {e}")))?;
                enabled[c.index()] = false;
            }
        }
        let source = match s.path("scores") {
            Some(p) => ScoreSource::Replay(p),
            None => {
                let manifest = s.require_path("manifest")?;
                ScoreSource::Model {
                    checkpoint: s.require_path("checkpoint")?,
                    data_root: s
                        .path("data_root")
                        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default()),
                    manifest,
                    frontend: FrontendSettings::from_settings(s)?,
                }
            }
        };
        Ok(Self {
            source,
            rule: FilterRule {
                thresholds: thresholds(s)?,
                enabled,
                policy: s.get_or("policy", Policy::Any)?,
            },
            out_dir: s.require_path("out_dir")?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterSummary {
    pub total: usize,
    pub kept: usize,
    pub rejected: usize,
    pub enhance: usize,
    pub discard: usize,
}

fn scores(source: &ScoreSource) -> Result<Vec<(ManifestEntry, [f32; NUM_CLASSES])>> {
    match source {
        ScoreSource::Replay(path) => Ok(read_jsonl::<FilterDecision>(path)?
            .into_iter()
            .map(|d| (d.entry, d.probs))
            .collect()),
        ScoreSource::Model {
            checkpoint,
            manifest,
            data_root,
            frontend,
        } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let backend = frontend.build(ckpt.model.config())?;
            parse_manifest(manifest)?
                .into_iter()
                .map(|e| {
                    let stack = backend.extract_path(&e.resolve(data_root))?;
                    let p = ckpt.model.forward(&stack)?;
                    let probs: [f32; NUM_CLASSES] = p.probs.as_slice().try_into().expect("five class probabilities");
                    Ok((e, probs))
                })
                .collect()
        }
    }
}

/// Writes `kept.jsonl`, `rejected.jsonl` and `decisions.jsonl` (plus
/// `enhance.jsonl`/`discard.jsonl` under the tiered policy).
pub fn cmd_filter(opts: &FilterOptions) -> Result<FilterSummary> {
    let scored = scores(&opts.source)?;
    let decisions: Vec<FilterDecision> = scored.into_iter().map(|(e, p)| opts.rule.decide(e, p)).collect();
    write_decisions(&opts.out_dir, &decisions, opts.rule.policy)
}

pub fn write_decisions(out_dir: &Path, decisions: &[FilterDecision], policy: Policy) -> Result<FilterSummary> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    fn select(ds: &[FilterDecision], f: impl Fn(&FilterDecision) -> bool) -> impl Iterator<Item = &ManifestEntry> {
        ds.iter().filter(move |d| f(d)).map(|d| &d.entry)
    }
    write_manifest(out_dir.join(KEPT), select(decisions, |d| d.kept))?;
    write_manifest(out_dir.join(REJECTED), select(decisions, |d| !d.kept))?;
    if policy == Policy::Tiered {
        write_manifest(out_dir.join(ENHANCE), select(decisions, |d| d.action == Action::Enhance))?;
        write_manifest(out_dir.join(DISCARD), select(decisions, |d| d.action == Action::Discard))?;
    }
    let mut text = String::new();
    for d in decisions {
        text.push_str(&serde_json::to_string(d).expect("decisions serialize"));
        text.push('\n');
    }
    let p = out_dir.join(DECISIONS);
    fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    let count = |a: Action| decisions.iter().filter(|d| d.action == a).count();
    let kept = decisions.iter().filter(|d| d.kept).count();
    Ok(FilterSummary {
        total: decisions.len(),
        kept,
        rejected: decisions.len() - kept,
        enhance: count(Action::Enhance),
        discard: count(Action::Discard),
    })
}
