//! Per-class reports and their text, CSV and JSONL renderings.
//!
//! Column order everywhere: `class, FPR%, FNR%, EER%, Prec%, Rec%, F1%,
//! T_proc`; CSV adds `threshold, eer_threshold, n_pos, n_neg` after those.

use serde::{Deserialize, Serialize};

use super::metrics::{confusion_counts, eer, precision_recall_f1, ScoredSet};
use super::{EvalError, Result};
use crate::labels::Class;

pub const EMPTY_CELL: &str = "—";
pub const COLUMNS: [&str; 8] = ["class", "FPR%", "FNR%", "EER%", "Prec%", "Rec%", "F1%", "T_proc"];
const EXTRA_COLUMNS: [&str; 4] = ["threshold", "eer_threshold", "n_pos", "n_neg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: Class,
    /// Decision threshold used for FPR/FNR/precision/recall/F1.
    pub threshold: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub mean_proc_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Builds a report from one class's scores. A set without positives or
/// negatives gets no EER and a note instead of an error.
pub fn class_report(class: Class, set: &ScoredSet, threshold: f64, mean_proc_time_s: f64) -> Result<ClassReport> {
    let counts = confusion_counts(set, threshold)?;
    let (precision, recall, f1) = precision_recall_f1(&counts);
    let (eer, eer_threshold, note) = match eer(set) {
        Ok((v, t)) => (Some(v), Some(t), None),
        Err(EvalError::Degenerate { n_pos, n_neg, .. }) => (None, None, Some(format!("EER omitted: {n_pos} positives, {n_neg} negatives"))),
        Err(e) => return Err(e),
    };
    Ok(ClassReport {
        class,
        threshold,
        fpr: counts.fpr(),
        fnr: counts.fnr(),
        eer,
        eer_threshold,
        precision,
        recall,
        f1,
        n_pos: set.n_pos(),
        n_neg: set.n_neg(),
        mean_proc_time_s,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), |x| format!("{:.1}", 100.0 * x))
}

/// `x` to three significant digits in plain decimal notation.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.2}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (2 - mag).max(0) as usize;
    let scale = 10f64.powi(2 - mag);
    let rounded = (x * scale).round() / scale;
    // Rounding can carry into a new digit (0.9996 -> 1.00).
    let mag2 = rounded.abs().log10().floor() as i32;
    let decimals = if mag2 > mag { decimals.saturating_sub(1) } else { decimals };
    format!("{rounded:.decimals$}")
}

fn cells(r: &ClassReport) -> [String; 8] {
    [
        r.class.name().to_string(),
        pct(r.fpr),
        pct(r.fnr),
        pct(r.eer),
        pct(Some(r.precision)),
        pct(Some(r.recall)),
        pct(Some(r.f1)),
        sig3(r.mean_proc_time_s),
    ]
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), |x| x.to_string())
}

pub fn render_report(reports: &[ClassReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(EvalError::Empty("no reports to render".into()));
    }
    Ok(match format {
        ReportFormat::Text => {
            let rows: Vec<[String; 8]> = reports.iter().map(cells).collect();
            let width = |i: usize| rows.iter().map(|r| r[i].chars().count()).chain([COLUMNS[i].len()]).max().unwrap();
            let widths: Vec<usize> = (0..8).map(width).collect();
            let line = |cols: &[String]| {
                cols.iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let pad = widths[i] - c.chars().count();
                        if i == 0 {
                            format!("{c}{}", " ".repeat(pad))
                        } else {
                            format!("{}{c}", " ".repeat(pad))
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let mut out = line(&COLUMNS.map(String::from));
            out.push('\n');
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * 7));
            out.push('\n');
            for r in &rows {
                out.push_str(&line(r));
                out.push('\n');
            }
            out.push_str("T_proc: mean forward time per clip in seconds\n");
            for r in reports {
                if let Some(n) = &r.note {
                    out.push_str(&format!("{}: {n}\n", r.class));
                }
            }
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let header: Vec<&str> = COLUMNS.iter().chain(EXTRA_COLUMNS.iter()).copied().collect();
            w.write_record(&header).map_err(csv_err)?;
            for r in reports {
                let mut row = cells(r).to_vec();
                row.extend([
                    r.threshold.to_string(),
                    opt(r.eer_threshold),
                    r.n_pos.to_string(),
                    r.n_neg.to_string(),
                ]);
                w.write_record(&row).map_err(csv_err)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| csv_err(e.into_error().into()))?).expect("csv output is UTF-8")
        }
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for r in reports {
                out.push_str(&serde_json::to_string(r).expect("reports serialize"));
                out.push('\n');
            }
            out
        }
    })
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Csv(e.to_string())
}

/// One parsed CSV row; `None` marks an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub class: Class,
    /// FPR, FNR, EER, precision, recall, F1 in percent.
    pub percents: [Option<f64>; 6],
    pub t_proc: f64,
    pub threshold: f64,
    pub eer_threshold: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Reads a CSV produced by [`render_report`].
pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected: Vec<&str> = COLUMNS.iter().chain(EXTRA_COLUMNS.iter()).copied().collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(EvalError::Csv(format!("unexpected header {header:?}")));
    }
    let bad = |what: &str, v: &str| EvalError::Csv(format!("bad {what} cell {v:?}"));
    let num = |v: &str, what: &str| -> Result<Option<f64>> {
        if v == EMPTY_CELL {
            Ok(None)
        } else {
            v.parse().map(Some).map_err(|_| bad(what, v))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let class: Class = rec[0].parse().map_err(|_| bad("class", &rec[0]))?;
        let mut percents = [None; 6];
        for (i, p) in percents.iter_mut().enumerate() {
            *p = num(&rec[i + 1], COLUMNS[i + 1])?;
        }
        rows.push(CsvRow {
            class,
            percents,
            t_proc: num(&rec[7], "T_proc")?.ok_or_else(|| bad("T_proc", &rec[7]))?,
            threshold: num(&rec[8], "threshold")?.ok_or_else(|| bad("threshold", &rec[8]))?,
            eer_threshold: num(&rec[9], "eer_threshold")?,
            n_pos: rec[10].parse().map_err(|_| bad("n_pos", &rec[10]))?,
            n_neg: rec[11].parse().map_err(|_| bad("n_neg", &rec[11]))?,
        });
    }
    Ok(rows)
}
