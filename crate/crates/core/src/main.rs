use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fbm_grushin::config::RunConfig;
use fbm_grushin::run::{exit_code, run, RunOptions};

/// Runs a JSON-configured check, simulation, verification or bound scan.
///
/// Exit status: 0 pass, 1 failed check, 2 bad configuration or I/O, 3 failed assumption.
/// The kernel table cache directory is read from `FBM_GRUSHIN_KERNEL_CACHE`.
#[derive(Parser, Debug)]
#[command(name = "fbm-grushin", version)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory; overrides `output` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions {
        seed: args.seed,
        workers: args.workers,
        out: args.out,
        cache_dir: std::env::var_os("FBM_GRUSHIN_KERNEL_CACHE").map(PathBuf::from),
    };
    let result = RunConfig::load(&args.config).and_then(|cfg| run(&cfg, &opts));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
