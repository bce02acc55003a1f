use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};

use cellfree::experiment::{self, ConfigError, ExperimentKind, Overrides};
use cellfree::Error;

/// Environment variable consulted when `--threads` is absent.
const THREADS_ENV: &str = "CELLFREE_THREADS";

/// Run a cell-free uplink combining experiment and write CSV results.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (decimal or 0x-prefixed hex); overrides the config.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// kappa_sweep, density_sweep or cdf; overrides the config.
    #[arg(long)]
    experiment: Option<String>,
    /// Worker threads (default: CELLFREE_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_seed(s: &str) -> Result<u64, String> {
    experiment::parse_seed(s).ok_or_else(|| format!("{s:?} is not a 64-bit integer"))
}

fn thread_count(arg: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = arg {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| format!("{THREADS_ENV}={v:?} is not a thread count")),
        Err(_) => Ok(None),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Budget { .. } => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let experiment = match args.experiment.as_deref().map(str::parse::<ExperimentKind>).transpose() {
        Ok(e) => e,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    let threads = match thread_count(args.threads) {
        Ok(Some(0)) => {
            error!("thread count must be at least 1");
            return ExitCode::from(2);
        }
        Ok(t) => t,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides { experiment, seed: args.seed, out_dir: args.out };
    let cfg = match experiment::parse_config_with(&args.config, &overrides) {
        Ok(c) => c,
        Err(e @ ConfigError::Read { .. }) | Err(e @ ConfigError::Parse { .. }) | Err(e @ ConfigError::Validation(_)) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            error!("cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    info!("running {} with {} threads, seed {:#x}", cfg.experiment, pool.current_num_threads(), cfg.seed);

    let result = pool.install(|| experiment::run(&cfg).and_then(|out| experiment::write_outputs(&out)));
    match result {
        Ok(paths) => {
            for p in paths {
                info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
