//! Command-line front end: configuration loading, run orchestration and
//! CSV/JSON output.

pub mod commands;
pub mod error;
pub mod output;

pub use commands::{cmd_export_data, cmd_oracle, cmd_run, cmd_selftest, cmd_sweep, cmd_validate_topology, load_config, Overrides};
pub use error::{CliError, CliResult};
pub use output::{read_rows, rows_from_series, write_rows, OutputRecordRow, COLUMNS};
