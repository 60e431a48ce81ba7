//! Label Studio JSON exports.
//!
//! Both the full export (tasks with `data` and `annotations[].result`) and
//! the flat "JSON-MIN" export are read. Fields are looked up by name:
//! an audio reference (`audio`, `audio_path`, `audio_url` or `file`), a
//! speaker count (`num_speakers`, `speakers` or `speaker_count`), and the
//! booleans `music`, `foreign`, `noise`, `synthetic`. Booleans may be JSON
//! booleans, 0/1, "yes"/"no"/"true"/"false", or single-choice arrays.

use std::fs;
use std::path::Path;

use log::warn;
use serde_json::{Map, Value};

use super::{DataError, ManifestEntry, Result, Split};
use crate::labels::{Class, LabelVector};

const AUDIO_KEYS: [&str; 4] = ["audio", "audio_path", "audio_url", "file"];
const SPEAKER_KEYS: [&str; 3] = ["num_speakers", "speakers", "speaker_count"];

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub entries: Vec<ManifestEntry>,
    /// One message per task that could not be mapped.
    pub skipped: Vec<String>,
}

fn flatten(task: &Map<String, Value>) -> Map<String, Value> {
    let mut flat = Map::new();
    for (k, v) in task {
        if k != "data" && k != "annotations" {
            flat.insert(k.clone(), v.clone());
        }
    }
    if let Some(Value::Object(data)) = task.get("data") {
        for (k, v) in data {
            flat.insert(k.clone(), v.clone());
        }
    }
    let results = task
        .get("annotations")
        .and_then(Value::as_array)
        .and_then(|a| {
            a.iter()
                .find(|ann| !ann.get("was_cancelled").and_then(Value::as_bool).unwrap_or(false))
        })
        .and_then(|ann| ann.get("result"))
        .and_then(Value::as_array);
    for r in results.into_iter().flatten() {
        let (Some(name), Some(Value::Object(value))) = (r.get("from_name").and_then(Value::as_str), r.get("value")) else {
            continue;
        };
        let v = ["number", "choices", "rating", "text"]
            .iter()
            .find_map(|k| value.get(*k))
            .cloned()
            .unwrap_or(Value::Null);
        flat.insert(name.to_string(), v);
    }
    flat
}

fn as_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_f64()? {
            x if x == 0.0 => Some(false),
            x if x == 1.0 => Some(true),
            _ => None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" | "1" | "y" => Some(true),
            "no" | "false" | "0" | "n" => Some(false),
            _ => None,
        },
        Value::Array(a) if a.len() == 1 => as_bool(&a[0]),
        Value::Array(a) if a.is_empty() => Some(false),
        _ => None,
    }
}

fn as_count(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().filter(|&n| n <= u32::MAX as u64).map(|n| n as u32),
        Value::String(s) => s.trim().parse().ok(),
        Value::Array(a) if a.len() == 1 => as_count(&a[0]),
        _ => None,
    }
}

fn map_task(flat: &Map<String, Value>) -> std::result::Result<ManifestEntry, String> {
    let audio = AUDIO_KEYS
        .iter()
        .find_map(|k| flat.get(*k).and_then(Value::as_str))
        .ok_or("no audio reference")?;
    let count = match SPEAKER_KEYS.iter().find_map(|k| flat.get(*k)) {
        None | Some(Value::Null) => return Err("missing speaker count".into()),
        Some(v) => as_count(v).ok_or_else(|| format!("bad speaker count {v}"))?,
    };
    let mut labels = LabelVector::default().with_speakers(count);
    for c in [Class::Music, Class::Foreign, Class::Noise, Class::Synthetic] {
        let v = flat.get(c.name()).ok_or_else(|| format!("missing field {c}"))?;
        labels.set(c, as_bool(v).ok_or_else(|| format!("bad boolean {v} for {c}"))?);
    }
    let source = flat.get("source").and_then(Value::as_str).unwrap_or("labelstudio").to_string();
    let duration_s = ["duration_s", "duration"]
        .iter()
        .find_map(|k| flat.get(*k).and_then(Value::as_f64))
        .unwrap_or(0.0);
    Ok(ManifestEntry {
        audio_path: audio.to_string(),
        labels,
        split: Split::Train,
        source,
        duration_s,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

/// Parses export text; `path` is only used in error messages.
pub fn ingest_labelstudio_str(text: &str, path: &Path) -> Result<IngestReport> {
    let root: Value = serde_json::from_str(text).map_err(|e| DataError::Json {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let tasks = match root {
        Value::Array(a) => a,
        Value::Object(_) => vec![root],
        _ => {
            return Err(DataError::Json {
                path: path.to_path_buf(),
                offset: 0,
                line: 1,
                column: 1,
                msg: "expected an array of tasks".into(),
            })
        }
    };
    let mut report = IngestReport::default();
    let mut seen = std::collections::HashSet::new();
    for (i, task) in tasks.iter().enumerate() {
        let id = task.get("id").map(|v| v.to_string()).unwrap_or_else(|| format!("#{i}"));
        let mapped = task
            .as_object()
            .ok_or_else(|| "task is not an object".to_string())
            .and_then(|t| map_task(&flatten(t)));
        match mapped {
            Ok(e) if !seen.insert(e.audio_path.clone()) => {
                let msg = format!("task {id}: duplicate audio {}; skipped", e.audio_path);
                warn!("{msg}");
                report.skipped.push(msg);
            }
            Ok(e) => report.entries.push(e),
            Err(why) => {
                let msg = format!("task {id}: {why}; skipped");
                warn!("{msg}");
                report.skipped.push(msg);
            }
        }
    }
    Ok(report)
}

pub fn ingest_labelstudio(export_path: impl AsRef<Path>) -> Result<IngestReport> {
    let path = export_path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_labelstudio_str(&text, path)
}
