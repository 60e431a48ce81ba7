//! Multitask speech-data filtering.
//!
//! A frozen encoder's per-layer features are fused with learned weights, fed
//! through a small transformer, and pooled by one attention head per class to
//! flag multi-speaker audio, background music, non-target language, noise and
//! synthetic speech.

pub mod datapipe;
pub mod evalkit;
pub mod frontend;
pub mod labels;
pub mod model;

pub use labels::{Class, LabelVector, NUM_CLASSES};
