use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use guided_loop_closure::config::ExperimentConfig;
use guided_loop_closure::runner;

#[derive(Parser)]
#[command(name = "glc", version, about = "Guided loop-closure verification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the consistency matrix as a triplet CSV.
        #[arg(long)]
        dump_consistency: bool,
    },
    /// Run the same world under several strategy mixes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated `US:NS:TS` ratios, each optionally followed by
        /// `@US:DF:BF`.
        #[arg(long)]
        mixes: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            dump_consistency,
        } => {
            let config = load(&config, seed)?;
            let s = runner::run(&config, &out, dump_consistency)?;
            println!(
                "{}: {} verifications, pr_area {:.4}, final rmse {:.3} m",
                s.mix, s.n_verifications, s.pr_area, s.final_rmse
            );
        }
        Command::Sweep {
            config,
            mixes,
            out,
            threads,
            seed,
        } => {
            anyhow::ensure!(threads > 0, "--threads must be positive");
            let base = load(&config, seed)?;
            let configs = runner::parse_mix_list(&mixes, &base)?;
            for s in runner::sweep(&configs, &out, threads)? {
                println!("{}: pr_area {:.4}, success {:.4}", s.mix, s.pr_area, s.success_ratio);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
