//! Training, evaluation and analysis driven by an [`ExperimentConfig`].

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod optim;
pub mod parallel;
pub mod train;

pub use analysis::{pca_2d, readings_after_marker, LabeledReading, Projection};
pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, TrainingConfig};
pub use eval::{evaluate_by_length, score_split, LengthRow, SplitScore};
pub use optim::Adam;
pub use parallel::{par_map, seq_map};
pub use train::{train_restart, train_with_restarts, EpochRecord, Experiment, RestartOutcome};

/// Output file names under `--out-dir`.
pub mod files {
    pub const METRICS: &str = "metrics.tsv";
    pub const TEST_BY_LENGTH: &str = "test_by_length.tsv";
    pub const READINGS_PCA: &str = "readings_pca.tsv";
    pub const HEATMAP: &str = "heatmap.tsv";
    pub const CHECKPOINT: &str = "checkpoint.bin";
}
