//! Experiment harness behind the `latkd` command line.

mod benchmark;
mod config;
mod experiment;
mod prepare;
mod study;
mod sweep;

pub use benchmark::{benchmark, BenchmarkReport, BenchmarkRow};
pub use config::{
    frame_path, load_data, DataSource, ExperimentConfig, ExperimentData, LatkdParams, Strategy, VariantEntry,
    VariantSpec,
};
pub use experiment::{
    build_tables, chain_name, regenerate_tables, run_experiment, timing_rows, CellReport, ExperimentOptions,
    ExperimentOutcome, ExperimentTables, RegeneratedTables, TimingRow, TABLES_ARTIFACT, TABLE_TEXT_ARTIFACT,
};
pub use prepare::{
    generate_to_dir, preprocess, FrameCounts, GenerateReport, PreprocessOptions, PreprocessReport,
    IEEE_CIS_TIME_OFFSET,
};
pub use study::{recurrence_study, RecurrenceOutcome};
pub use sweep::{k_sweep, KSweepReport, KSweepRow};
