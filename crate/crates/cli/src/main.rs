// SPDX-License-Identifier: Apache-2.0

//! `p2p`: Hilbert sorting, locality, Sinkhorn and EMD distances, occupancy
//! pair preparation and block gradient checks from the command line.
//!
//! Exit codes: 0 success, 2 input or parse error, 3 I/O error, 4 numeric
//! failure, 5 precondition failure.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use p2p_core::metrics::EmdMode;
use p2p_core::occupancy::Methodology;
use p2p_core::{Metric, OrderScheme};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "p2p", version, about = "Point-cloud ordering, transport distances and occupancy data preparation")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON file overriding the built-in defaults; flags override it in turn.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reorder an XYZ file along a space-filling curve.
    Sort {
        input: PathBuf,
        output: PathBuf,
        /// One original point index per line.
        perm: PathBuf,
        #[arg(long)]
        order: Option<u32>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Mean consecutive distance of the Hilbert, Morton and lexicographic orders.
    Locality {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        order: Option<u32>,
    },
    /// Entropy-regularized transport distance between two XYZ files.
    Sinkhorn {
        a: PathBuf,
        b: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        ot: OtArgs,
    },
    /// Earth mover's distance (exact up to 64 points unless `--sinkhorn`).
    Emd {
        a: PathBuf,
        b: PathBuf,
        output: PathBuf,
        #[arg(long, conflicts_with = "sinkhorn")]
        exact: bool,
        #[arg(long)]
        sinkhorn: bool,
        #[command(flatten)]
        ot: OtArgs,
    },
    /// Symmetric Chamfer distance.
    Chamfer { a: PathBuf, b: PathBuf, output: PathBuf },
    /// Preprocess a sequence directory into training pairs and occupancy grids.
    OccupancyPrep {
        seq_dir: PathBuf,
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        methodology: Option<MethodologyArg>,
        /// Points per frame after subsampling.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        z_min: Option<f64>,
        #[arg(long)]
        range: Option<f64>,
        #[arg(long)]
        cell_size: Option<f64>,
        #[arg(long)]
        extent: Option<f64>,
    },
    /// Reverse-mode versus finite-difference gradients of a network block.
    Gradcheck {
        #[arg(value_enum)]
        block: BlockArg,
        output: PathBuf,
        #[arg(long)]
        step: Option<f64>,
    },
}

#[derive(Args, Debug, Default)]
struct OtArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iteration cap; 0 removes the cap.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Use multiplicative scaling instead of log-domain updates.
    #[arg(long)]
    multiplicative: bool,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Hilbert,
    Morton,
    Lex,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    SqEuclidean,
    Euclidean,
    L1,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "UPPER")]
enum MethodologyArg {
    P2p,
    P2d,
    D2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum BlockArg {
    Conv1d,
    Separable,
    ResUnit,
    ChannelAttention,
    Mfa,
    Bfa,
    Aggregated,
}

/// Iteration cap used for `--iters 0`.
const UNCAPPED_ITERS: usize = 10_000_000;

impl OtArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(i) = self.iters {
            cfg.iters = if i == 0 { UNCAPPED_ITERS } else { i };
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if self.multiplicative {
            cfg.log_domain = false;
        }
        if let Some(m) = self.metric {
            cfg.metric = match m {
                MetricArg::SqEuclidean => Metric::SqEuclidean,
                MetricArg::Euclidean => Metric::Euclidean,
                MetricArg::L1 => Metric::L1,
            };
        }
    }
}

fn merge(cli: &Cli, mut cfg: RunConfig) -> RunConfig {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Some(Command::Sort { order, scheme, .. }) => {
            if let Some(o) = order {
                cfg.order = *o;
            }
            if let Some(s) = scheme {
                cfg.scheme = match s {
                    SchemeArg::Hilbert => OrderScheme::Hilbert,
                    SchemeArg::Morton => OrderScheme::Morton,
                    SchemeArg::Lex => OrderScheme::Lex,
                };
            }
        }
        Some(Command::Locality { order: Some(o), .. }) => cfg.order = *o,
        Some(Command::Sinkhorn { ot, .. }) => ot.apply(&mut cfg),
        Some(Command::Emd { exact, sinkhorn, ot, .. }) => {
            ot.apply(&mut cfg);
            if *exact {
                cfg.emd_mode = Some(EmdMode::Exact);
            } else if *sinkhorn {
                cfg.emd_mode = Some(EmdMode::Sinkhorn);
            }
        }
        Some(Command::OccupancyPrep {
            methodology,
            n,
            z_min,
            range,
            cell_size,
            extent,
            ..
        }) => {
            if let Some(m) = methodology {
                cfg.methodology = match m {
                    MethodologyArg::P2p => Methodology::P2P,
                    MethodologyArg::P2d => Methodology::P2D,
                    MethodologyArg::D2d => Methodology::D2D,
                };
            }
            cfg.n = n.unwrap_or(cfg.n);
            cfg.z_min = z_min.unwrap_or(cfg.z_min);
            cfg.range = range.unwrap_or(cfg.range);
            cfg.cell_size = cell_size.unwrap_or(cfg.cell_size);
            cfg.extent = extent.unwrap_or(cfg.extent);
        }
        Some(Command::Gradcheck { step: Some(s), .. }) => cfg.step = *s,
        _ => {}
    }
    cfg
}

/// A failed run: exit code and message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_PRECONDITION: u8 = 5;

impl From<p2p_core::Error> for Failure {
    fn from(e: p2p_core::Error) -> Self {
        use p2p_core::Error as E;
        let code = match &e {
            E::Parse { .. } | E::Json(_) => EXIT_INPUT,
            E::Io(_) => EXIT_IO,
            E::Underflow { .. } | E::Numeric(_) | E::NotConverged { .. } => EXIT_NUMERIC,
            E::Domain(_) | E::Config(_) | E::EmptyInput(_) | E::Shape(_) => EXIT_PRECONDITION,
        };
        Failure::new(code, e.to_string())
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            ConfigError::Io(e) => Failure::new(EXIT_IO, format!("{}: {e}", path.display())),
            ConfigError::Parse(e) => Failure::new(EXIT_INPUT, format!("{}: {e}", path.display())),
        })?,
        None => RunConfig::default(),
    };
    let cfg = merge(cli, base);
    if cli.print_config {
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        // a closed stdout (e.g. `| head`) is not an error worth reporting
        let _ = writeln!(std::io::stdout(), "{text}");
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::new(EXIT_INPUT, "no subcommand given (see --help)"));
    };
    match command {
        Command::Sort { input, output, perm, .. } => {
            commands::require_inputs(&[input])?;
            commands::sort(input, output, perm, &cfg)
        }
        Command::Locality { input, output, .. } => {
            commands::require_inputs(&[input])?;
            commands::locality(input, output, &cfg)
        }
        Command::Sinkhorn { a, b, output, .. } => {
            commands::require_inputs(&[a, b])?;
            commands::sinkhorn(a, b, output, &cfg)
        }
        Command::Emd { a, b, output, .. } => {
            commands::require_inputs(&[a, b])?;
            commands::emd(a, b, output, &cfg)
        }
        Command::Chamfer { a, b, output } => {
            commands::require_inputs(&[a, b])?;
            commands::chamfer(a, b, output)
        }
        Command::OccupancyPrep { seq_dir, out_dir, .. } => {
            commands::require_inputs(&[seq_dir])?;
            commands::occupancy_prep(seq_dir, out_dir, &cfg)
        }
        Command::Gradcheck { block, output, .. } => commands::gradcheck(*block, output, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("p2p: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
