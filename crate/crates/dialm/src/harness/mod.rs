//! Run orchestration: config files, checkpoints, the three training
//! regimes, the δ sweep, and the end-to-end gradient suite.

pub mod checkpoint;
pub mod config;
pub mod gradsuite;
pub mod sweep;
pub mod train;

pub use checkpoint::{check_architecture, Checkpoint, OptimSnapshot};
pub use config::{Regime, RunConfig, TaskKind};
pub use gradsuite::{format_suite, gradient_suite, SuiteCase, SUITE_LOSSES};
pub use sweep::{default_grid, format_table, sweep_delta, write_sweep_files, SweepResult, SweepRow};
pub use train::{
    evaluate_model, mean_backbone_cosine, run_finetune, run_mtf, run_posttrain, run_regime,
    score_example, uor_accuracy, DirObserver, EpochLog, LogRecord, NoopObserver, RunObserver,
    StepLog, TrainOutput, PAIR_STRIDE,
};
