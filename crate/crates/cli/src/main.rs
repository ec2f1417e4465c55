//! `pmc`: batch front end for the prescribed mean curvature solver.

mod config;
mod expr;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "pmc", version, about = "Prescribed mean curvature Killing graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the problem described by a JSON configuration file.
    Run {
        config: PathBuf,
        /// Write the graph of the solution as an OBJ mesh.
        #[arg(long)]
        mesh_out: Option<PathBuf>,
        /// Seed for randomized sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        verbose: bool,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("PMC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("PMC_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        config,
        mesh_out,
        seed,
        verbose,
    } = cli.command;
    let level = if verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(4);
    }
    let opts = run::Options {
        config,
        mesh_out,
        seed,
    };
    let result = run::load_config(&opts.config).and_then(|cfg| {
        info!("mode {}", cfg.mode.as_str());
        run::run(&cfg, &opts)
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
