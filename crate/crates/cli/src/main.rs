use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use qpat_core::experiment::{
    parse_config_file, run, run_specfun_check, Command, RunManifest, SpecfunArgs, UcpCheck, MANIFEST_FILE,
};
use qpat_core::Error;

#[derive(Parser)]
#[command(
    name = "qpat",
    version,
    about = "Point-source diffusion, internal-data reconstruction and unique-continuation checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Output directory; overrides `out` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for all randomness; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for both sources and write u1, u2 and the internal data v1, v2.
    Forward(ConfigArg),
    /// Recover (a, b) and sigma from internal data.
    Reconstruct(ConfigArg),
    /// Perturbation ladder and fitted Holder exponent.
    Stability(ConfigArg),
    /// Unique-continuation diagnostics.
    Ucp {
        #[command(subcommand)]
        check: UcpCmd,
    },
    /// Special-function checks.
    Specfun {
        #[command(subcommand)]
        check: SpecfunCmd,
    },
}

#[derive(Subcommand)]
enum UcpCmd {
    /// Frequency function, its identities and almost-monotonicity.
    Freq(ConfigArg),
    /// Three-ball inequality on the configured balls.
    Threeball(ConfigArg),
    /// Chain of balls and the propagated lower bound.
    Chain(ConfigArg),
    /// Behaviour of the quotient near its pole.
    Nearsource(ConfigArg),
}

#[derive(Subcommand)]
enum SpecfunCmd {
    /// Certify the two-sided exponential bound on an annulus.
    Check {
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value_t = 3)]
        dim: u32,
        #[arg(long, default_value_t = 0.1)]
        rmin: f64,
        #[arg(long, default_value_t = 10.0)]
        rmax: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Bound constant; defaults to the frozen value.
        #[arg(long)]
        constant: Option<f64>,
    },
}

fn set_threads(threads: Option<usize>) {
    let Some(k) = threads else { return };
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
        warn!("could not size the thread pool: {e}");
    }
    #[cfg(not(feature = "parallel"))]
    warn!("built without the parallel feature; ignoring --threads {k}");
}

fn configured(cli: &Cli, path: &Path, command: Command) -> Result<RunManifest, Error> {
    let mut config = parse_config_file(path)?;
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    run(&config, &command)
}

fn dispatch(cli: &Cli) -> Result<RunManifest, Error> {
    match &cli.command {
        Cmd::Forward(c) => configured(cli, &c.config, Command::Forward),
        Cmd::Reconstruct(c) => configured(cli, &c.config, Command::Reconstruct),
        Cmd::Stability(c) => configured(cli, &c.config, Command::Stability),
        Cmd::Ucp { check } => {
            let (c, which) = match check {
                UcpCmd::Freq(c) => (c, UcpCheck::Freq),
                UcpCmd::Threeball(c) => (c, UcpCheck::ThreeBall),
                UcpCmd::Chain(c) => (c, UcpCheck::Chain),
                UcpCmd::Nearsource(c) => (c, UcpCheck::NearSource),
            };
            configured(cli, &c.config, Command::Ucp(which))
        }
        Cmd::Specfun {
            check:
                SpecfunCmd::Check {
                    mu,
                    nu,
                    dim,
                    rmin,
                    rmax,
                    samples,
                    constant,
                },
        } => {
            let args = SpecfunArgs {
                mu: *mu,
                nu: *nu,
                dim: *dim,
                rmin: *rmin,
                rmax: *rmax,
                samples: *samples,
                constant: constant.unwrap_or(SpecfunArgs::default().constant),
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("qpat-out"));
            let manifest = run_specfun_check(&args, &out)?;
            let path = out.join("specfun.json");
            let cert = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
            print!("{cert}");
            Ok(manifest)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QPAT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    set_threads(cli.threads);
    match dispatch(&cli) {
        Ok(manifest) => {
            info!(
                "{} artifacts in {}",
                manifest.artifacts.len(),
                manifest.out_dir.display()
            );
            for d in &manifest.diagnostics {
                eprintln!("diagnostic: {d}");
            }
            eprintln!("manifest: {}", manifest.out_dir.join(MANIFEST_FILE).display());
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_degeneracy() { 2 } else { 1 })
        }
    }
}
