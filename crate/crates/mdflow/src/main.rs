use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mdflow",
    version,
    about = "Mirror-descent gradient-flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and audit its artifacts.
    Run { config: PathBuf },
    /// Check the convergence bounds on the certification instances.
    Certify { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => mdflow::run_file(config),
        Command::Certify { config } => mdflow::certify_file(config),
    };
    match result {
        Ok(summary) => {
            println!("{} -> {}", summary.experiment, summary.output_dir);
            println!("termination: {}", summary.termination);
            if let Some(e) = &summary.error {
                println!(
                    "error vs {}: L1 {:.3e}, Linf {:.3e}",
                    e.reference, e.l1, e.linf
                );
            }
            for (name, ok) in &summary.audits {
                let declared = if summary.declared_audits.contains(name) {
                    ""
                } else {
                    " (finding)"
                };
                println!("audit {name}: {ok}{declared}");
            }
            println!("wall clock: {:.3} s", summary.wall_clock_seconds);
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("mdflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
