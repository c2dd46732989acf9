use std::path::PathBuf;
use std::process::ExitCode;

use cfkalman::kf_bilinear::CovarianceForm;
use cfkalman_cli::scenario::FilterKind;
use cfkalman_cli::{cmd_filter, cmd_simulate, cmd_stationary, cmd_verify, load_scenario, Check, CliResult, Overrides, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cfkalman", version, about = "Simulate, filter and verify linear and bilinear SDE scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the truth path and its measurements.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Independent repetitions.
        #[arg(long, default_value_t = 1)]
        mc: usize,
    },
    /// Simulate, then run the filter on the simulated measurements.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Independent repetitions.
        #[arg(long, default_value_t = 1)]
        mc: usize,
    },
    /// Solve the stationary covariance equations.
    Stationary {
        #[command(flatten)]
        common: Common,
    },
    /// Check the characteristic-function identities along a filter run.
    Verify {
        #[command(flatten)]
        common: Common,
        /// all, mgf-evolution, cf-sde or third-moment.
        #[arg(long, default_value = "all")]
        verify: Check,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// cd, cc or bilinear.
    #[arg(long)]
    filter: Option<FilterKind>,
    /// as-printed or moment-exact.
    #[arg(long = "covariance-form")]
    covariance_form: Option<CovarianceForm>,
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, mc, check) = match &cli.command {
        Command::Simulate { common, mc } | Command::Filter { common, mc } => (common, *mc, Check::All),
        Command::Stationary { common } => (common, 1, Check::All),
        Command::Verify { common, verify } => (common, 1, *verify),
    };
    let overrides = Overrides { seed: common.seed, filter: common.filter, covariance_form: common.covariance_form };
    let setup = load_scenario(&common.scenario, &overrides)?;
    let opts = RunOptions { out: common.out.clone(), mc, check };
    match cli.command {
        Command::Simulate { .. } => cmd_simulate(&setup, &opts),
        Command::Filter { .. } => cmd_filter(&setup, &opts).map(drop),
        Command::Stationary { .. } => cmd_stationary(&setup, &opts).map(drop),
        Command::Verify { .. } => cmd_verify(&setup, &opts).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
