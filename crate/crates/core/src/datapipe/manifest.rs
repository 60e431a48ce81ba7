//! JSON Lines manifests. One object per line:
//!
//! ```json
//! {"audio_path":"clips/a.wav","labels":{"multispeaker":false,"music":true,"foreign":false,"noise":false,"synthetic":false,"num_speakers":1},"split":"train","source":"podcast","duration_s":30.0}
//! ```
//!
//! `num_speakers` is optional; everything else is required.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DataError, Result};
use crate::labels::{Class, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("bad split {s:?}; expected train, val or test"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_path: String,
    pub labels: LabelVector,
    pub split: Split,
    pub source: String,
    pub duration_s: f64,
}

impl ManifestEntry {
    /// `audio_path`, resolved against `base` when relative.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

fn parse_line(value: &Value) -> std::result::Result<ManifestEntry, String> {
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let str_field = |k: &str| -> std::result::Result<String, String> {
        match obj.get(k) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("{k} must be a string")),
            None => Err(format!("missing field {k}")),
        }
    };
    let audio_path = str_field("audio_path")?;
    if audio_path.is_empty() {
        return Err("audio_path is empty".into());
    }
    let split: Split = str_field("split")?.parse()?;
    let source = str_field("source")?;
    let duration_s = obj
        .get("duration_s")
        .ok_or("missing field duration_s")?
        .as_f64()
        .filter(|d| d.is_finite() && *d >= 0.0)
        .ok_or("duration_s must be a non-negative number")?;
    let labels = obj
        .get("labels")
        .ok_or("missing field labels")?
        .as_object()
        .ok_or("labels must be an object")?;
    let mut lv = LabelVector::default();
    for c in Class::ALL {
        match labels.get(c.name()) {
            Some(Value::Bool(b)) => lv.set(c, *b),
            Some(_) => return Err(format!("label {c} must be true or false")),
            None => return Err(format!("missing label {c}")),
        }
    }
    match labels.get("num_speakers") {
        None | Some(Value::Null) => {}
        Some(v) => {
            let n = v
                .as_u64()
                .filter(|&n| n <= u32::MAX as u64)
                .ok_or("num_speakers must be a non-negative integer")?;
            lv.num_speakers = Some(n as u32);
        }
    }
    if !lv.is_consistent() {
        return Err(format!(
            "inconsistent labels: num_speakers={} but multispeaker={}",
            lv.num_speakers.unwrap(),
            lv.multispeaker
        ));
    }
    Ok(ManifestEntry {
        audio_path,
        labels: lv,
        split,
        source,
        duration_s,
    })
}

/// Parses manifest text; `path` is only used in error messages.
/// Blank lines are skipped but still counted.
pub fn read_manifest_str(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| DataError::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| err(format!("invalid JSON: {e}")))?;
        let entry = parse_line(&value).map_err(err)?;
        if !seen.insert(entry.audio_path.clone()) {
            return Err(err(format!("duplicate audio_path {}", entry.audio_path)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_manifest_str(&text, path)
}

pub fn write_manifest<'a>(path: impl AsRef<Path>, entries: impl IntoIterator<Item = &'a ManifestEntry>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
