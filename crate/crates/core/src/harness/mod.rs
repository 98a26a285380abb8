//! Training loop, evaluation, long-tail reports, checkpoints and run
//! configuration.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod report;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Task, TrainConfig};
pub use eval::{evaluate_completion, evaluate_recommendation, MetricsReport, Scorer, TOP_K};
pub use report::{report_longtail, GroupError, LongTailReport};
pub use train::{train, EpochLog, TrainRun};
