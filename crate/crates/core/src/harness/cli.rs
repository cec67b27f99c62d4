use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::par::thread_count;
use crate::scaling::rule_table;

use super::config::{ExperimentConfig, TaskSpec};
use super::io::{read_table_file, write_coord, write_file, write_probes, write_results};
use super::plot::{emit_plot, PlotKind};
use super::sweep::{argmin_lr, run_coord_check, run_lr_sweep, run_spectral_probe, seed_means};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "mup", about = "Width-scaling experiments for adaptive optimizers on MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer feature RMS over the first steps at each width.
    CoordCheck(ExperimentArgs),
    /// Train every (width, lr, seed) cell and record final losses.
    LrSweep(ExperimentArgs),
    /// Spectral norms of weights and of one update at each width.
    Probe(ExperimentArgs),
    /// Print the per-layer scaling rules.
    Rules(ExperimentArgs),
    /// Render a results or coordinate-check CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// loss-vs-lr or coord-check.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long = "lr-grid")]
    lr_grid: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set batch_size=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("optimizer", &self.optimizer),
            ("scheme", &self.scheme),
            ("widths", &self.widths),
            ("depth", &self.depth),
            ("lr_grid", &self.lr_grid),
            ("seeds", &self.seeds),
            ("steps", &self.steps),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the command line and returns the process exit status.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mup: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidHyperParam(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_RUNTIME,
    }
}

fn run(command: Command) -> Result<()> {
    let threads = thread_count();
    match command {
        Command::CoordCheck(args) => {
            let cfg = args.config()?;
            let records = run_coord_check(&cfg, threads)?;
            emit(args.out.as_deref(), |buf| write_coord(&records, buf))
        }
        Command::LrSweep(args) => {
            let cfg = args.config()?;
            let rows = run_lr_sweep(&cfg, threads)?;
            emit(args.out.as_deref(), |buf| write_results(&rows, buf))?;
            let mut err = std::io::stderr().lock();
            for m in seed_means(&rows) {
                let _ = writeln!(
                    err,
                    "width {:>5}  lr {:<10}  mean val {:.6}  diverged {}/{}",
                    m.width, m.lr, m.val_loss, m.diverged, m.seeds
                );
            }
            for (w, lr) in argmin_lr(&rows) {
                let _ = writeln!(err, "best lr at width {w}: {lr}");
            }
            Ok(())
        }
        Command::Probe(args) => {
            let cfg = args.config()?;
            let probes = run_spectral_probe(&cfg, threads)?;
            emit(args.out.as_deref(), |buf| write_probes(&probes, buf))
        }
        Command::Rules(args) => {
            let cfg = args.config()?;
            let (input_dim, output_dim) = match &cfg.task {
                TaskSpec::TeacherStudent { input_dim, output_dim, .. } => (*input_dim, *output_dim),
                TaskSpec::CharLm { .. } => {
                    let data = cfg.task.load()?;
                    (data.input_dim, data.output_dim)
                }
            };
            let table = rule_table(cfg.optimizer, cfg.scheme, &cfg.widths, cfg.depth, input_dim, output_dim)?;
            emit(args.out.as_deref(), |buf| {
                buf.extend_from_slice(table.as_bytes());
                Ok(())
            })
        }
        Command::Plot { input, kind, out } => {
            let kind: PlotKind = kind.parse()?;
            let table = read_table_file(&input)?;
            emit_plot(&table, kind, &out)
        }
    }
}

fn emit(out: Option<&Path>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => write_file(path, f),
        None => {
            let mut buf = Vec::new();
            f(&mut buf)?;
            std::io::stdout()
                .lock()
                .write_all(&buf)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}
