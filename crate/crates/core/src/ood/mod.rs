//! Class-conditional Gaussian OOD detection over embeddings, the MSP
//! baseline, and AUROC evaluation.

mod metrics;
mod params;

pub use metrics::{auroc, msp_score};
pub use params::{
    fit, percentile_sorted, OodParams, DEFAULT_PERCENTILE, DEFAULT_RIDGE, MIN_CALIBRATION_SAMPLES,
    OOD_FORMAT_VERSION,
};
