use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contractive_sde::cli::{self, AlphaSetting, RunOptions};

#[derive(Parser)]
#[command(name = "csde", version, about = "Simulate contracting SDEs and check their error envelopes")]
struct Args {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report bundle.
    Run {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// A number in (0, 1) or `opt`.
        #[arg(long)]
        alpha: Option<AlphaSetting>,
        /// Echo the config and write only the certificate.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the contraction certificate of a scenario's system.
    Certify { config: PathBuf },
    /// Run every `*.toml` scenario in a directory.
    Batch {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.cmd {
        Command::Run {
            config,
            paths,
            seed,
            alpha,
            dry_run,
            out,
            threads,
        } => {
            let opts = RunOptions {
                paths,
                seed,
                alpha,
                dry_run,
                out,
                threads,
            };
            match cli::load_config(&config).and_then(|cfg| cli::run_scenario(&cfg, &opts)) {
                Ok(o) => {
                    if dry_run {
                        print!("{}", o.config_echo);
                    }
                    match &o.verdict {
                        Some(v) => println!(
                            "{}: {} (worst margin {:.4} at t={}) -> {}",
                            v.scenario_kind.name(),
                            if v.holds { "HOLDS" } else { "FAILS" },
                            v.pointwise.worst_margin,
                            v.pointwise.worst_t,
                            o.out_dir.display()
                        ),
                        None => println!("dry run: certificate written to {}", o.out_dir.display()),
                    }
                    o.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Command::Certify { config } => match cli::load_config(&config).and_then(|c| cli::certify(&c)) {
            Ok(r) => {
                println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
        Command::Batch { dir, out, threads } => {
            let opts = RunOptions {
                out,
                threads,
                ..Default::default()
            };
            match cli::run_batch(&dir, &opts) {
                Ok(entries) => {
                    for e in &entries {
                        match &e.outcome {
                            Ok(o) => println!(
                                "{}: {}",
                                e.config.display(),
                                match o.exit_code() {
                                    0 => "HOLDS",
                                    _ => "FAILS",
                                }
                            ),
                            Err(err) => println!("{}: ERROR {err}", e.config.display()),
                        }
                    }
                    cli::batch_exit_code(&entries)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
