use std::path::Path;
use std::time::Instant;

use super::metrics::ScoredSet;
use super::report::{class_report, ClassReport};
use super::{EvalError, Result};
use crate::datapipe::ManifestEntry;
use crate::frontend::{FeatureBackend, LayerStack};
use crate::labels::{Class, LabelVector, NUM_CLASSES};
use crate::model::{Prediction, WhilterModel};

/// Everything measured in one evaluation pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<ClassReport>,
    pub sets: Vec<ScoredSet>,
    pub predictions: Vec<Prediction>,
    /// Forward-pass wall-clock time per item, seconds.
    pub proc_times_s: Vec<f64>,
    /// Total time spent producing features (file reads or mock encoding).
    pub backend_time_s: f64,
}

impl Evaluation {
    pub fn mean_proc_time_s(&self) -> f64 {
        if self.proc_times_s.is_empty() {
            0.0
        } else {
            self.proc_times_s.iter().sum::<f64>() / self.proc_times_s.len() as f64
        }
    }
}

/// Per-class reports from accumulated scores, in class order.
pub fn reports_from_sets(sets: &[ScoredSet], thresholds: &[f64; NUM_CLASSES], mean_proc_time_s: f64) -> Result<Vec<ClassReport>> {
    Class::ALL
        .iter()
        .zip(sets)
        .map(|(&c, s)| class_report(c, s, thresholds[c.index()], mean_proc_time_s))
        .collect()
}

/// Runs the model on each `(stack, labels)` item. Only the forward pass is
/// timed; time spent inside the iterator is reported as backend time.
pub fn evaluate_items<I>(model: &WhilterModel<f32>, items: I, thresholds: &[f64; NUM_CLASSES]) -> Result<Evaluation>
where
    I: IntoIterator<Item = Result<(LayerStack, LabelVector)>>,
{
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); NUM_CLASSES];
    let mut labels: Vec<Vec<bool>> = vec![Vec::new(); NUM_CLASSES];
    let mut predictions = Vec::new();
    let mut proc_times_s = Vec::new();
    let mut backend_time_s = 0.0;
    let mut iter = items.into_iter();
    loop {
        let t0 = Instant::now();
        let Some(item) = iter.next() else { break };
        backend_time_s += t0.elapsed().as_secs_f64();
        let (stack, y) = item?;
        let t1 = Instant::now();
        let pred = model.forward(&stack)?;
        proc_times_s.push(t1.elapsed().as_secs_f64());
        for c in Class::ALL {
            scores[c.index()].push(pred.probs[c.index()] as f64);
            labels[c.index()].push(y.get(c));
        }
        predictions.push(pred);
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty("evaluation split is empty".into()));
    }
    let sets: Vec<ScoredSet> = Class::ALL
        .iter()
        .map(|c| {
            ScoredSet::new(
                c.name(),
                std::mem::take(&mut scores[c.index()]),
                std::mem::take(&mut labels[c.index()]),
            )
        })
        .collect::<Result<_>>()?;
    let mean = proc_times_s.iter().sum::<f64>() / proc_times_s.len() as f64;
    let reports = reports_from_sets(&sets, thresholds, mean)?;
    Ok(Evaluation {
        reports,
        sets,
        predictions,
        proc_times_s,
        backend_time_s,
    })
}

/// Evaluates manifest entries, producing features with `backend`. Relative
/// audio paths are resolved against `base`.
pub fn evaluate(
    model: &WhilterModel<f32>,
    entries: &[ManifestEntry],
    base: &Path,
    backend: &dyn FeatureBackend,
    thresholds: &[f64; NUM_CLASSES],
) -> Result<Evaluation> {
    let items = entries.iter().map(|e| {
        let stack = backend.extract_path(&e.resolve(base))?;
        Ok((stack, e.labels))
    });
    evaluate_items(model, items, thresholds)
}
