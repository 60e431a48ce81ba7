//! Classification metrics, equal error rate, per-class reports and timing.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{evaluate, evaluate_items, reports_from_sets, Evaluation};
pub use metrics::{confusion_counts, eer, precision_recall_f1, roc_points, Counts, OperatingPoint, ScoredSet};
pub use report::{class_report, parse_report_csv, render_report, sig3, ClassReport, CsvRow, ReportFormat, COLUMNS, EMPTY_CELL};

use thiserror::Error;

use crate::datapipe::DataError;
use crate::frontend::FrontendError;
use crate::model::ModelError;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("class {class}: EER needs positives and negatives (got {n_pos} / {n_neg})")]
    Degenerate { class: String, n_pos: usize, n_neg: usize },
    #[error("{0}")]
    Empty(String),
    #[error("report CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
