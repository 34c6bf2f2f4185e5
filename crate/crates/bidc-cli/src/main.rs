use std::path::PathBuf;
use std::process::ExitCode;

use bidc_cli::{parse_config, run_task};
use clap::Parser;

/// Runs one simulation task described by a TOML config.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps and parallel solves; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .filter_level(args.log_level)
        .init();
    if args.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global()
        {
            log::warn!("worker pool: {e}");
        }
    }
    let cfg = match parse_config(&args.config, std::env::vars()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    log::info!("task {} into {}", cfg.task.as_str(), args.out.display());
    match run_task(&cfg, &args.out) {
        Ok(m) => {
            for (k, v) in &m.metrics {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
