use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use scma_msd::sim::{parse_snr_grid, run_sweep, write_csv, write_results, Detector, RunConfig};

/// Monte Carlo BER/FER and complexity sweeps for SCMA detectors.
#[derive(Debug, Parser)]
#[command(name = "scma-sim", version)]
struct Cli {
    /// Run configuration (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// ml, msd, mpa or list-msd.
    #[arg(long)]
    detector: Option<Detector>,
    /// SNR grid in dB: a:b:step, a comma list, or one value.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// MPA iterations.
    #[arg(long)]
    ni: Option<usize>,
    /// List size for list-msd.
    #[arg(long)]
    ncand: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time per SNR point.
    #[arg(long)]
    timing: bool,
}

fn run(cli: Cli) -> scma_msd::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = cli.detector {
        cfg.detector = d;
    }
    if let Some(s) = &cli.snr {
        cfg.snr_db = parse_snr_grid(s)?;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(n) = cli.ni {
        cfg.ni = n;
    }
    if let Some(n) = cli.ncand {
        cfg.ncand = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    cfg.timing |= cli.timing;

    let records = run_sweep(&cfg)?;
    for r in records.iter().filter(|r| r.low_confidence()) {
        eprintln!(
            "warning: {} dB has only {} bit errors; BER is low-confidence",
            r.snr_db, r.bit_errors
        );
    }
    match &cfg.out {
        Some(path) => write_results(&records, path),
        None => write_csv(&records, std::io::stdout().lock()).map_err(|e| scma_msd::Error::Output {
            path: "<stdout>".into(),
            reason: e.to_string(),
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scma-sim: {e}");
            ExitCode::FAILURE
        }
    }
}
