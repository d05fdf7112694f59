use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{parse_side, FileConfig, Overrides, RunConfig};

/// Separable compliance models: table precomputation, verification and studies.
#[derive(Parser, Debug)]
#[command(name = "sepmodel", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config file; flags take precedence over its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Refinement level of the unit-square mesh (2·4^n_ref elements)
    #[arg(long = "nref", global = true)]
    n_ref: Option<u32>,
    /// Directory holding Γ̂ tables
    #[arg(long, global = true)]
    table: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// homogeneous[:v], radial[:r1,r2,cx,cy] or custom:PATH
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Hölder exponent of the sector averages
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Volume price of the binary step
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Model kinds, e.g. smwdiag,smwapprox,mma(-5)
    #[arg(long = "model", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    models: Option<Vec<String>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate Γ̂ over all node tuples and write one file per element type and variant
    Precompute {
        /// Element types to tabulate
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        types: Vec<u32>,
        /// interior or SIDE-BC, e.g. top-neumann
        #[arg(long, value_delimiter = ',', default_value = "interior")]
        variants: Vec<String>,
        /// Solve the full exterior system per tuple instead of the condensed one
        #[arg(long)]
        full: bool,
    },
    /// Run the verification suites; exits non-zero on failure
    Verify,
    /// Print the equilibrated material nodes
    Nodes,
    /// Model curves and δ for one element
    Curves {
        /// Element index (default: the type-1 element at the probe point)
        #[arg(long)]
        element: Option<usize>,
    },
    /// δ for every interior element
    ErrorMap,
    /// One-step binary decisions and their disagreement with the exact model
    BinaryStep,
    /// Maximum δ of the table model over Hölder exponents
    AlphaSweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Option<Vec<f64>>,
    },
    /// Interior versus half-disk tables on one side of the square
    Boundary {
        #[arg(long, default_value = "top")]
        side: String,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let file = g.config.as_deref().map(FileConfig::load).transpose()?;
    let flags = Overrides {
        n_ref: g.n_ref,
        table_dir: g.table,
        out_dir: g.out,
        threads: g.threads,
        scenario: g.scenario,
        alpha: g.alpha,
        omega: g.omega,
        models: g.models,
    };
    let cfg = RunConfig::resolve(file, &flags)?;
    sepmodel::parallel::init_threads(cfg.threads);
    log::debug!("config {} {:?}", cfg.hash(), cfg);
    match cli.cmd {
        Command::Precompute { types, variants, full } => commands::precompute(&cfg, &types, &variants, full)?,
        Command::Verify => return commands::verify(&cfg),
        Command::Nodes => commands::nodes_cmd(&cfg)?,
        Command::Curves { element } => commands::curves(&cfg, element)?,
        Command::ErrorMap => commands::error_map_cmd(&cfg)?,
        Command::BinaryStep => commands::binary_step_cmd(&cfg)?,
        Command::AlphaSweep { alphas } => commands::alpha_sweep_cmd(&cfg, alphas)?,
        Command::Boundary { side } => commands::boundary_cmd(&cfg, parse_side(&side)?)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
