//! Experiment plumbing: configuration, file formats, the exhaustive
//! oracle, end-to-end runs and reports.

pub mod config;
pub mod io;
pub mod oracle;
pub mod report;
pub mod run;

pub use config::{DatasetSource, ExperimentConfig, Targets};
pub use io::{read_dataset_file, read_sidecar, sidecar_path, write_dataset_file, write_sidecar, Sidecar};
pub use oracle::{brute_force_oracle, OracleResult, MAX_ORACLE_TERMS};
pub use report::{read_report, summarize, summary_csv, timings_path, Report, Summary, Timings};
pub use run::{run_end_to_end, run_seeds, AtStage, Run, Seeds, Stage, StageError};
