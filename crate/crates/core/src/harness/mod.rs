//! Configuration, data generation, the experiment loop and metrics output.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod synthetic;

pub use config::{load_config, parse_config, ExperimentConfig, SchedulerKind};
pub use experiment::{
    build_population, run_experiment, run_experiment_to, scheduler_config, ExperimentOutcome, Population,
};
pub use metrics::{emit_metrics, read_metrics, MetricsRecord, MetricsRow};
pub use synthetic::{gen_synthetic, SyntheticClusters};
