use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use halfspace_core::harness::{
    emit_norm_tracking_report, emit_sweep_report, run_inviscid_limit_experiment, run_kernels, run_norm_tracking_experiment,
    run_norms_of_dump, run_solve, ExperimentConfig,
};
use halfspace_core::Error;
use log::{error, info, warn};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// One Navier-Stokes run with field dumps.
    Solve,
    /// Norm tracking run, or the norms of one dump with `--in`.
    Norms,
    /// Viscosity sweep against the Euler reference.
    Sweep,
    /// Kernel tabulation and residual-bound fits.
    Kernels,
}

#[derive(Debug, Parser)]
#[command(name = "halfspace-vortex", version, about = "Vorticity solver for Navier-Stokes on the periodic half space")]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Field dump (CSV) for `norms`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Time at which the dump's norms are evaluated.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_OTHER: u8 = 1;

fn exit_for(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(e, Error::Config(_) | Error::UnknownPreset(_) | Error::InvalidArgument(_) | Error::InvalidGrid(_) | Error::TimeOutOfRange { .. }) {
        EXIT_CONFIG
    } else {
        EXIT_OTHER
    }
}

fn run(cli: &Cli, cfg: &ExperimentConfig, text: &str, out: &Path) -> Result<(), Error> {
    match cli.command {
        Command::Solve => {
            let o = run_solve(cfg, text, out)?;
            info!("wrote {} snapshots to {}", o.dumps.len(), out.display());
        }
        Command::Norms => match &cli.input {
            Some(dump) => {
                let r = run_norms_of_dump(cfg, text, dump, cli.t, out)?;
                info!("triple norm {:e}", r.triple);
            }
            None => {
                let nt = run_norm_tracking_experiment(cfg)?;
                emit_norm_tracking_report(cfg, text, &nt, out)?;
                if nt.flagged {
                    warn!("norm ratio {:.4} exceeds ratio_bound {}", nt.ratio, cfg.ratio_bound);
                }
            }
        },
        Command::Sweep => {
            let r = run_inviscid_limit_experiment(cfg)?;
            emit_sweep_report(cfg, text, &r, out)?;
            if let Some(f) = r.failure {
                error!("sweep aborted: {f}");
                return Err(Error::NonFinite("sweep run"));
            }
        }
        Command::Kernels => run_kernels(cfg, text, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("thread pool: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            error!("cannot read {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cli, &cfg, &text, &cli.out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
