pub mod config;
pub mod data;
pub mod loss;
pub mod run;
pub mod trainer;

pub use config::{AdamBetas, TrainConfig};
pub use data::{ensure_split, fit_split_stats, load_samples, tile_sample};
pub use loss::weighted_bce;
pub use run::{train_run, RunOutcome};
pub use trainer::{
    batch_rng, evaluate_samples, make_batch, sample_metrics, EpochRecord, Sample, TrainHistory,
    Trainer,
};
