//! Scoring of reconstructions and sweep orchestration.

pub mod experiment;
pub mod metrics;

pub use experiment::{
    run_experiment, write_timings, ExperimentOutcome, ExperimentSpec, ExternalMaps, ResultRow, SceneSource, TimingRow,
};
pub use metrics::{bar_contrast, depth_rmse, resolved_groups, rmse, DepthError, RESOLVED_CONTRAST};
