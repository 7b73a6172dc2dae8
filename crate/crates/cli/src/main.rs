use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coca_cli::{cmd_compare, cmd_run, cmd_sweep, load_scenario, parse_policies, SweepParam, SweepSpec};

/// Collaborative semantic caching simulator.
///
/// Every flag can also be set through an environment variable with the
/// `COCA_` prefix, e.g. `COCA_SEED=7`.
#[derive(Parser)]
#[command(name = "coca", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, flat `key = value` lines or nested JSON.
    #[arg(long, env = "COCA_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, env = "COCA_OUT", default_value = "out")]
    out: PathBuf,

    /// Master seed; overrides the scenario file.
    #[arg(long, env = "COCA_SEED")]
    seed: Option<u64>,

    /// Extra `key=value` settings applied after the scenario file.
    #[arg(long = "set", value_name = "KEY=VALUE", env = "COCA_SET", value_delimiter = ';')]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the cartesian product of up to three parameters.
    Sweep {
        #[command(flatten)]
        common: Common,

        /// `key=v1,v2,...`; repeat for more parameters.
        #[arg(long, required = true, env = "COCA_SWEEP", value_delimiter = ';')]
        sweep: Vec<String>,

        /// Seeds per cell.
        #[arg(long, env = "COCA_REPLICATES", default_value_t = 1)]
        replicates: u64,
    },
    /// Replay one workload under several allocation policies.
    Compare {
        #[command(flatten)]
        common: Common,

        /// Comma-separated: aca, lru, fifo, rand, fixed_all, edge_only.
        #[arg(long, env = "COCA_POLICIES", default_value = "aca,lru,fifo,rand")]
        policies: String,
    },
}

fn run(cli: Cli) -> coca_cli::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Run { common } => {
            let s = load_scenario(common.config.as_deref(), common.seed, &common.overrides)?;
            cmd_run(&s, &common.out)
        }
        Command::Sweep { common, sweep, replicates } => {
            let s = load_scenario(common.config.as_deref(), common.seed, &common.overrides)?;
            let params = sweep.iter().map(|p| SweepParam::parse(p)).collect::<coca_cli::Result<_>>()?;
            cmd_sweep(&s, &SweepSpec { params, replicates }, &common.out).map(|p| vec![p])
        }
        Command::Compare { common, policies } => {
            let s = load_scenario(common.config.as_deref(), common.seed, &common.overrides)?;
            cmd_compare(&s, &parse_policies(&policies)?, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
