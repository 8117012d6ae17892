use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use piezo_inverse::cli::{self, Log, Registry};

#[derive(Debug, Parser)]
#[command(version, about = "Friction-inverse feedforward experiments for a piezo stage")]
struct Args {
    /// Subcommand name; `list` prints the available ones.
    command: String,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.command == "list" {
        for (name, summary) in Registry::default().list() {
            println!("{name:<10} {summary}");
        }
        return ExitCode::SUCCESS;
    }
    let log = Log { quiet: args.quiet };
    match cli::run(&args.command, args.config.as_deref(), &args.out, args.seed, log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", cli::error_json(&err));
            ExitCode::FAILURE
        }
    }
}
