//! Experiment harness: configs, seeded training sessions, telemetry,
//! comparison tables and SVG plots.

mod config;
mod plot;
mod runner;
mod session;
mod telemetry;

pub use config::{
    layer_dims, parse_config, ExperimentConfig, ModelConfig, OptimConfig, OptimizerKind, RawConfig,
    TrainConfig,
};
pub use plot::{LinePlot, Series};
pub use runner::{
    compare, run, sweep, CompareRow, RunOptions, RunReport, SeedRecord, SweepAxis, SweepPoint,
    SweepReport,
};
pub use session::{build_model, Session, DIVERGENCE_LOSS, DIVERGENCE_STREAK};
pub use telemetry::{
    aggregate, read_summary, read_telemetry, summary_from_csv, summary_to_csv, telemetry_from_csv,
    telemetry_to_csv, Aggregate, SeedStatus, SeedSummary, TelemetryRow, SUMMARY_COLUMNS,
    TELEMETRY_COLUMNS, TELEMETRY_VERSION,
};
