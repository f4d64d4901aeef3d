//! Experiment harness behind the `lgm` command: configuration, datasets,
//! benchmark runs and the validation suite.

pub mod bench;
pub mod config;
pub mod data;
pub mod validate;

pub use bench::{
    build_problem, run_benchmark, run_tuning, write_outputs, write_tuning, BenchmarkResult, Problem,
};
pub use config::{
    parse_config, parse_config_str, ExperimentConfig, KernelConfig, ModelKind, Protocol,
    SimulateSpec,
};
pub use data::{
    down_sample_cox, down_sample_dataset, down_sample_manifest, load_dataset, load_manifest,
    parse_simulation_str, read_counts_csv, resolve_dataset, simulate_dataset, write_counts_csv,
    write_dataset, Dataset, Manifest, Simulated,
};
pub use validate::{validation_suite, write_validation, ValidationRow};
