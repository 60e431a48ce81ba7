use super::{EvalError, Result};

/// Scores and ground truth for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub class_name: String,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(class_name: impl Into<String>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let s = Self {
            class_name: class_name.into(),
            scores,
            labels,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() {
            return Err(EvalError::LengthMismatch {
                scores: self.scores.len(),
                labels: self.labels.len(),
            });
        }
        if let Some(s) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore(*s));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `FP / (FP + TN)`, or `None` without negatives.
    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `FN / (FN + TP)`, or `None` without positives.
    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.fn_ + self.tp)
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// A score is predicted positive iff `score >= threshold`.
pub fn confusion_counts(s: &ScoredSet, threshold: f64) -> Result<Counts> {
    s.check()?;
    let mut c = Counts::default();
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Precision, recall and F1, each 0 when its denominator is 0.
pub fn precision_recall_f1(c: &Counts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp).unwrap_or(0.0);
    let r = ratio(c.tp, c.tp + c.fn_).unwrap_or(0.0);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Operating points at every distinct score (ascending), followed by a point
/// above the maximum score where nothing is predicted positive.
pub fn roc_points(s: &ScoredSet) -> Result<Vec<OperatingPoint>> {
    s.check()?;
    let (n_pos, n_neg) = (s.n_pos(), s.n_neg());
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::Degenerate {
            class: s.class_name.clone(),
            n_pos,
            n_neg,
        });
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    let mut points = Vec::new();
    // Below the current threshold: predicted negative.
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        points.push(OperatingPoint {
            threshold: t,
            fpr: (n_neg - tn) as f64 / n_neg as f64,
            fnr: fn_ as f64 / n_pos as f64,
        });
        while i < order.len() && s.scores[order[i]] == t {
            if s.labels[order[i]] {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
    }
    let max = s.scores[*order.last().unwrap()];
    points.push(OperatingPoint {
        threshold: if max < 1.0 { 1.0 } else { max + f64::EPSILON * max.abs().max(1.0) },
        fpr: 0.0,
        fnr: 1.0,
    });
    Ok(points)
}

/// Equal error rate and its threshold.
///
/// Walks the sweep to the first adjacent pair where `FPR - FNR` changes
/// sign and interpolates linearly between them.
pub fn eer(s: &ScoredSet) -> Result<(f64, f64)> {
    let pts = roc_points(s)?;
    Ok(eer_from_points(&pts))
}

pub(crate) fn eer_from_points(pts: &[OperatingPoint]) -> (f64, f64) {
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.fpr - a.fnr;
        let db = b.fpr - b.fnr;
        if da == 0.0 {
            return (a.fpr, a.threshold);
        }
        if da > 0.0 && db <= 0.0 {
            let alpha = da / (da - db);
            let value = a.fpr + alpha * (b.fpr - a.fpr);
            let threshold = a.threshold + alpha * (b.threshold - a.threshold);
            return (value, threshold);
        }
    }
    // The sweep ends at FPR = 0, FNR = 1, so a crossing always exists.
    let last = pts[pts.len() - 1];
    (last.fpr, last.threshold)
}
