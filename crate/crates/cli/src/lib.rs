//! Library side of the `countrate` command: CSV handling, the analysis
//! report and the subcommands, kept here so they can be tested without
//! spawning the binary.

pub mod commands;
pub mod error;
pub mod input;
pub mod report;

pub use commands::{run, Cli, Command};
pub use error::CliError;
pub use input::{read_strata_csv, read_subject_csv, write_subject_csv, CsvOptions, LoadedData};
pub use report::{build_report, render_table, AnalysisReport, AnalyzeOptions, MethodChoice};
