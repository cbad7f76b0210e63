//! Metrics, the synth-10 testbed, p-sweeps and report files.

mod metrics;
mod sweep;
mod testbed;

pub use metrics::{benign_accuracy, clone_accuracy, expected_benign_accuracy, mean_std, ranks, spearman};
pub use sweep::{
    benign_floor_violations, cell_defense, emit_report, normalize_p_values, parse_report, render_report, run_cell,
    sweep_p, ReportFormat, SweepCell, SweepOutcome, SweepRow, CSV_HEADER, SWEEP_FORMAT_VERSION,
};
pub use testbed::{calibrate_detector, calibration_split, fit_detector, layer_dims, make_splits, train_extractor, train_victim, Testbed, TestbedConfig};

/// Default benign-accuracy floor as a share of victim accuracy.
pub const BENIGN_FLOOR_RATIO: f64 = 0.90;
