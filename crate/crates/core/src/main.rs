use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vamp_noise::engine::{run_gnp_vamp, run_standard_vamp, EngineConfig};
use vamp_noise::harness::{self, Algorithm, SweepConfig};
use vamp_noise::{Error, NoisePrior, PrecisionBounds, SignalPrior};

#[derive(Parser)]
#[command(name = "vamp-noise", version, about = "VAMP sparse recovery under non-Gaussian noise priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Gaussian,
    Laplace,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo NRMSE-vs-SNR sweep.
    Sweep {
        #[arg(long, value_enum, default_value = "laplace")]
        noise: NoiseKind,
        /// Comma-separated SNR grid in dB.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20", allow_hyphen_values = true)]
        snr: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 250)]
        m: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Probability of a zero signal entry.
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        #[arg(long, value_delimiter = ',', default_value = "gnp,standard")]
        algorithms: Vec<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "max-iter", default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a matplotlib script for the NRMSE curves.
        #[arg(long = "emit-plot")]
        emit_plot: bool,
        /// Run the configuration stored in a manifest or config JSON file
        /// instead of the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Recover x from a single instance file.
    Solve {
        /// Instance file: `M N`, then the M rows of A, then y.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "gaussian")]
        noise: NoiseKind,
        /// Noise scale: variance (gaussian), b (laplace) or s (binary).
        #[arg(long = "noise-param", default_value_t = 1.0)]
        noise_param: f64,
        #[arg(long = "laplace-mu", default_value_t = 0.0, allow_hyphen_values = true)]
        laplace_mu: f64,
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        #[arg(long = "signal-var", default_value_t = 1.0)]
        signal_var: f64,
        #[arg(long, default_value = "gnp")]
        algorithm: String,
        #[arg(long = "max-iter", default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        /// Write x̂ here (one value per line) instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn nominal_noise(kind: NoiseKind) -> NoisePrior {
    match kind {
        NoiseKind::Gaussian => NoisePrior::Gaussian { variance: 1.0 },
        NoiseKind::Laplace => NoisePrior::Laplace { mu: 0.0, b: 1.0 },
        NoiseKind::Binary => NoisePrior::Binary { s: 1.0 },
    }
}

fn engine_config(max_iter: usize, tol: f64, damping: f64) -> EngineConfig {
    EngineConfig {
        max_iters: max_iter,
        tol,
        damping,
        bounds: PrecisionBounds::default(),
        ..EngineConfig::default()
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sweep {
            noise,
            snr,
            trials,
            m,
            n,
            rho,
            algorithms,
            seed,
            max_iter,
            tol,
            damping,
            out,
            emit_plot,
            config,
        } => {
            let config = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    harness::parse_manifest(&text).map_err(|e| Error::Parse {
                        path,
                        message: e.to_string(),
                    })?
                }
                None => SweepConfig {
                    m,
                    n,
                    rho,
                    snr_grid_db: snr,
                    trials,
                    noise_model: nominal_noise(noise),
                    algorithms: algorithms
                        .iter()
                        .map(|a| a.parse::<Algorithm>())
                        .collect::<Result<_, _>>()?,
                    base_seed: seed,
                    engine: engine_config(max_iter, tol, damping),
                },
            };
            let result = harness::run_sweep(&config)?;
            let paths = harness::emit_outputs(&result.records, &result.aggregates, &config, &out, emit_plot)?;
            let failed = result.records.iter().filter(|r| r.failed).count();
            if failed > 0 {
                eprintln!("warning: {failed} run(s) failed; see rows with nrmse=NaN");
            }
            for row in &result.aggregates {
                println!(
                    "snr={:>6} dB  {:<8}  nrmse={:.6} ± {:.6}  (n={})",
                    row.snr_db,
                    row.algorithm.name(),
                    row.mean_nrmse,
                    row.stderr_nrmse,
                    row.n_trials
                );
            }
            println!("wrote {}", paths.trials.display());
            println!("wrote {}", paths.aggregate.display());
            println!("wrote {}", paths.manifest.display());
            if let Some(p) = paths.plot {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Solve {
            input,
            noise,
            noise_param,
            laplace_mu,
            rho,
            signal_var,
            algorithm,
            max_iter,
            tol,
            damping,
            output,
        } => {
            let instance = harness::read_instance_file(&input)?;
            let signal = SignalPrior::new(rho, signal_var)?;
            let noise = match noise {
                NoiseKind::Gaussian => NoisePrior::Gaussian { variance: noise_param },
                NoiseKind::Laplace => NoisePrior::Laplace {
                    mu: laplace_mu,
                    b: noise_param,
                },
                NoiseKind::Binary => NoisePrior::Binary { s: noise_param },
            };
            let config = engine_config(max_iter, tol, damping);
            let result = match algorithm.parse::<Algorithm>()? {
                Algorithm::Gnp => run_gnp_vamp(&instance, &signal, &noise, &config)?,
                Algorithm::Standard => run_standard_vamp(&instance, &signal, noise.matched_variance(), &config)?,
            };
            let mut body = String::new();
            for v in result.x_hat.iter() {
                body.push_str(&format!("{v}\n"));
            }
            match output {
                Some(path) => std::fs::write(&path, body).map_err(|e| Error::Io { path, source: e })?,
                None => {
                    let _ = std::io::stdout().write_all(body.as_bytes());
                }
            }
            eprintln!(
                "{} iterations, converged: {}",
                result.iterations_used, result.converged
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
