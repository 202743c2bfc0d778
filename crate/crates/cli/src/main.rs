use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ttscale_cli::{cmd_compare, cmd_report, cmd_run, RunRequest};

#[derive(Parser)]
#[command(
    name = "ttscale",
    about = "Run step-based agent rollouts under test-time scaling strategies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and persist its artifacts.
    Run(RunArgs),
    /// Run several configs under a shared seed and print a side-by-side table.
    Compare(CompareArgs),
    /// Regenerate a report from a persisted artifact directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set strategy=bon --set sample_width=4.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Run seed; overrides the config's run_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these task levels (repeatable).
    #[arg(long)]
    level: Vec<u8>,
    /// Cap on concurrent remote calls and tasks in flight.
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Config files to compare (at least two).
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Overrides applied to every config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; each run lands in a numbered subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Shared run seed for all configs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    level: Vec<u8>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact directory written by `run`.
    #[arg(long)]
    dir: PathBuf,
    /// Restrict the regenerated report to these levels (repeatable).
    #[arg(long)]
    level: Vec<u8>,
    /// Also write the regenerated report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => {
            cmd_run(&RunRequest {
                config_path: args.config,
                overrides: args.set,
                output_dir: args.out,
                run_seed: args.seed,
                level_filter: args.level,
                max_in_flight: args.max_in_flight,
            })
            .await
        }
        Command::Compare(args) => {
            let requests: Vec<RunRequest> = args
                .config
                .iter()
                .map(|path| RunRequest {
                    config_path: path.clone(),
                    overrides: args.set.clone(),
                    output_dir: args.out.clone(),
                    run_seed: None,
                    level_filter: args.level.clone(),
                    max_in_flight: args.max_in_flight,
                })
                .collect();
            cmd_compare(&requests, args.seed).await
        }
        Command::Report(args) => cmd_report(&args.dir, &args.level, args.out.as_deref()).await,
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
