use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gslab_cli::{config, execute, write_outputs, RunOptions};

#[derive(Parser)]
#[command(name = "gslab", version, about = "Ground-state and heat-kernel comparison checks on grid domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write report.json, timing.json and CSV tables.
    Run {
        /// JSON config; the shipped scenarios when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only this scenario.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the shipped scenario names.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for name in config::shipped().names() {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config: path, scenario, out, jobs, seed } => {
            let cfg = match path {
                Some(p) => config::load(&p),
                None => Ok(config::shipped()),
            };
            let cfg = match cfg {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions { scenario, seed, jobs };
            let result = execute(&cfg, &opts).and_then(|o| write_outputs(&o, &out).map(|_| o));
            match result {
                Ok(o) => {
                    for s in &o.report.scenarios {
                        let failed: Vec<&str> =
                            s.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                        if failed.is_empty() {
                            println!("PASS {} ({} checks)", s.name, s.checks.len());
                        } else {
                            println!(
                                "FAIL {} ({}/{} failed: {})",
                                s.name,
                                failed.len(),
                                s.checks.len(),
                                failed.join(", ")
                            );
                        }
                    }
                    println!("report written to {}", out.join("report.json").display());
                    if o.report.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
