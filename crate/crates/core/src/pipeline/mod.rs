//! Pipeline stages over a manifest: evaluation of a trained model,
//! two-period change detection and the architecture × scenario sweep.

pub mod detect;
pub mod evaluate;
pub mod predictor;
pub mod sweep;

pub use detect::{detect_periods, DetectOptions, DetectOutcome, TileChange};
pub use evaluate::{evaluate_manifest, report_file_name, write_reports, EvalOptions};
pub use predictor::Predictor;
pub use sweep::{run_dir_name, run_sweep, SweepConfig, SweepOutcome};
