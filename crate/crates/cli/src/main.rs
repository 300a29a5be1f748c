use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wmlab_cli::commands::{cmd_design, cmd_freqresp, cmd_inspect, cmd_oog, cmd_simulate};
use wmlab_cli::{Channel, CliError, Context, Outcome, Scenario, Variant};

#[derive(Parser)]
#[command(name = "wmlab", version, about = "Multiplicative watermark design and covert-attack analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (defaults to the scenario's `output_dir`, then `wmlab-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Design report used for the optimized variant.
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Poles, zeros and structural checks of the scenario.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
    /// Alternating LMI watermark design.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Time-domain attack simulation and energies.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "initial")]
        variant: Variant,
    },
    /// Singular values of an attack channel over the frequency grid.
    Freqresp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "residual")]
        channel: Channel,
        #[arg(long, value_enum, default_value = "initial")]
        variant: Variant,
    },
    /// Output-to-output gain certificate.
    Oog {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "initial")]
        variant: Variant,
    },
}

fn context(common: Common) -> Result<Context, CliError> {
    let scenario = Scenario::load(&common.scenario)?;
    Context::new(scenario, common.out, common.design)
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Inspect { common } => cmd_inspect(&context(common)?),
        Command::Design { common } => cmd_design(&context(common)?),
        Command::Simulate { common, variant } => cmd_simulate(&context(common)?, variant),
        Command::Freqresp {
            common,
            channel,
            variant,
        } => cmd_freqresp(&context(common)?, channel, variant),
        Command::Oog { common, variant } => cmd_oog(&context(common)?, variant),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            for p in &outcome.written {
                println!("wrote {}", p.display());
            }
            if let Some(v) = &outcome.verdict {
                eprintln!("wmlab: {v}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("wmlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
