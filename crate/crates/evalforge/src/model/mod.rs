//! Domain types and the pure metric mathematics.

pub mod metrics;
pub mod types;

pub use metrics::{
    classify_capture, compute_accuracy, compute_completeness, compute_coverage, CaptureClass,
};
pub use types::*;
