//! Experiment configs, width × learning-rate sweeps, CSV files and SVG plots.

#[cfg(feature = "cli")]
mod cli;
mod config;
mod io;
mod plot;
mod sweep;

#[cfg(feature = "cli")]
pub use cli::{cli_main, exit_code, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME, EXIT_USAGE};
pub use config::{ExperimentConfig, TaskSpec};
pub use io::{
    read_table, read_table_file, write_coord, write_file, write_probes, write_results, Schema, Table,
    COORD_SCHEMA, PROBE_SCHEMA, RESULTS_SCHEMA,
};
pub use plot::{emit_plot, render_svg, PlotKind};
pub use sweep::{argmin_lr, run_coord_check, run_lr_sweep, run_spectral_probe, seed_means, MeanRow, ResultRow};
