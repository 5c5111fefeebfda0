use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsbo_cli::commands::{self, load_json, Overrides};
use dsbo_cli::{CliError, CliResult};
use dsbo_core::problems::LogisticParams;
use dsbo_core::topology::{BuildMode, TopologyKind, TopologySpec};
use dsbo_core::ProblemSpec;

#[derive(Parser)]
#[command(name = "dsbo", version, about = "Decentralized stochastic bilevel optimization simulator")]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOverrides {
    /// Override runner.base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override envelope.record_every.
    #[arg(long)]
    record_every: Option<usize>,
}

impl From<&RunOverrides> for Overrides {
    fn from(o: &RunOverrides) -> Self {
        Overrides {
            seed: o.seed,
            record_every: o.record_every,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run; writes a CSV and a `.summary.json` next to it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Execute a parameter grid into a directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Check a mixing matrix and report its connectivity parameter.
    ValidateTopology {
        /// Topology section as a JSON file; replaces the flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_parser = parse_serde::<TopologyKind>)]
        kind: Option<TopologyKind>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, value_parser = parse_serde::<BuildMode>, default_value = "normalized")]
        mode: BuildMode,
        #[arg(long)]
        m_min: Option<usize>,
        #[arg(long)]
        m_max: Option<usize>,
        /// Rounds to check for dynamic graphs.
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Print the closed-form optimum of the toy instance.
    Oracle {
        /// Take the problem section from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        a_step: f64,
        #[arg(long, default_value_t = 0.05)]
        b_step: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Write the synthetic logistic data set to CSV.
    ExportData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_agents: usize,
        #[arg(long, default_value_t = 10)]
        features: usize,
        #[arg(long, default_value_t = 200)]
        train_per_agent: usize,
        #[arg(long, default_value_t = 100)]
        val_per_agent: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out, overrides } => commands::cmd_run(&config, &out, (&overrides).into(), cli.quiet).map(|_| ()),
        Command::Sweep {
            config,
            grid,
            out,
            overrides,
        } => commands::cmd_sweep(&config, &grid, &out, (&overrides).into(), cli.quiet),
        Command::ValidateTopology {
            spec,
            kind,
            n,
            a,
            mode,
            m_min,
            m_max,
            rounds,
            seed,
            json,
        } => {
            let spec = match (spec, kind) {
                (Some(path), _) => load_json::<TopologySpec>(&path)?,
                (None, Some(kind)) => TopologySpec {
                    a,
                    mode,
                    m_min,
                    m_max,
                    ..TopologySpec::of_kind(kind, n)
                },
                (None, None) => return Err(CliError::Config("either --spec or --kind is required".into())),
            };
            commands::cmd_validate_topology(&spec, n, rounds, seed, json)
        }
        Command::Oracle {
            config,
            n,
            dim,
            a_step,
            b_step,
            json,
        } => match config {
            Some(path) => match commands::load_config(&path, Overrides::default())?.problem {
                ProblemSpec::Toy {
                    n_agents,
                    dim,
                    a_step,
                    b_step,
                    ..
                } => commands::cmd_oracle(n_agents, dim, a_step, b_step, json),
                ProblemSpec::Logistic { .. } => Err(CliError::Config("only the toy instance has a closed-form optimum".into())),
            },
            None => commands::cmd_oracle(n, dim, a_step, b_step, json),
        },
        Command::Selftest => commands::cmd_selftest(cli.quiet),
        Command::ExportData {
            out,
            n_agents,
            features,
            train_per_agent,
            val_per_agent,
            noise_rate,
            seed,
        } => {
            let params = LogisticParams {
                n_agents,
                features,
                train_per_agent,
                val_per_agent,
                noise_rate,
            };
            commands::cmd_export_data(&params, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
