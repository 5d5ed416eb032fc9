//! Monte-Carlo benchmark harness: instance generation, scoring, the SNR
//! sweep, and its outputs.

mod generate;
mod io;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoisers::{NoisePrior, Prior, SignalPrior};
use crate::engine::{run_gnp_vamp_cached, run_standard_vamp_cached, EngineConfig, RunResult};
use crate::error::{Error, Result};
use crate::lmmse::{OperatorCache, ProblemInstance};

pub use generate::{gen_instance, realized_snr_db, trial_seed, GeneratedInstance};
pub use io::{
    aggregate_csv, emit_outputs, manifest_json, parse_manifest, plot_script, read_instance, read_instance_file,
    trials_csv, Manifest, OutputPaths,
};

/// Environment variable capping sweep parallelism (0 or unset = automatic).
pub const THREADS_ENV: &str = "VAMP_GNP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// VAMP with the noise prior denoised alongside the signal.
    Gnp,
    /// Standard VAMP under the matched-variance Gaussian noise assumption.
    Standard,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gnp => "gnp",
            Algorithm::Standard => "standard",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gnp" => Ok(Algorithm::Gnp),
            "standard" => Ok(Algorithm::Standard),
            other => Err(Error::invalid(format!("unknown algorithm '{other}' (expected gnp or standard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub m: usize,
    pub n: usize,
    /// Zero-atom probability of the signal prior.
    pub rho: f64,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    /// Noise model with nominal parameters; its scale is reset per instance
    /// to meet the SNR.
    pub noise_model: NoisePrior,
    pub algorithms: Vec<Algorithm>,
    pub base_seed: u64,
    pub engine: EngineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m: 250,
            n: 500,
            rho: 0.95,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 100,
            noise_model: NoisePrior::Laplace { mu: 0.0, b: 1.0 },
            algorithms: vec![Algorithm::Gnp, Algorithm::Standard],
            base_seed: 42,
            engine: EngineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::invalid(format!("need 0 < M < N, got M={} N={}", self.m, self.n)));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("SNR grid must be nonempty and finite"));
        }
        for (i, a) in self.snr_grid_db.iter().enumerate() {
            if self.snr_grid_db[..i].contains(a) {
                return Err(Error::invalid(format!("SNR grid contains {a} twice")));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("at least one algorithm is required"));
        }
        self.signal_prior()?;
        self.noise_model.validate()?;
        self.engine.validate()
    }

    pub fn signal_prior(&self) -> Result<SignalPrior> {
        SignalPrior::new(self.rho, 1.0)
    }
}

/// One `(snr, algorithm, trial)` result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub snr_db: f64,
    pub algorithm: Algorithm,
    pub noise_model: &'static str,
    pub trial: usize,
    pub seed: u64,
    /// NaN when the run failed.
    pub nrmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// All-zero signal draws rejected while generating the instance.
    pub resamples: usize,
    /// Set when the engine reported divergence or another error.
    pub failed: bool,
}

/// Mean and standard error of NRMSE per `(snr, algorithm)`, over
/// non-failed trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub snr_db: f64,
    pub algorithm: Algorithm,
    pub mean_nrmse: f64,
    pub stderr_nrmse: f64,
    pub n_trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// `‖A(x − x̂)‖ / ‖A x‖` against the instance's ground truth.
pub fn nrmse(x_hat: &DVector<f64>, instance: &ProblemInstance) -> Result<f64> {
    let truth = instance
        .true_x
        .as_ref()
        .ok_or_else(|| Error::invalid("nrmse requires ground truth"))?;
    if x_hat.len() != truth.len() {
        return Err(Error::invalid("estimate and ground truth differ in length"));
    }
    Ok(nrmse_against(&instance.a, truth, x_hat))
}

pub(crate) fn nrmse_against(a: &DMatrix<f64>, truth: &DVector<f64>, x_hat: &DVector<f64>) -> f64 {
    (a * (truth - x_hat)).norm() / (a * truth).norm()
}

/// Worker count from [`THREADS_ENV`]; 0 means automatic.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV} must be a nonnegative integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

/// Runs the sweep with the parallelism given by [`THREADS_ENV`].
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    run_sweep_with_threads(config, threads_from_env()?)
}

/// Runs every requested algorithm on the same instance for each
/// `(snr, trial)` cell. Output is independent of `threads`.
pub fn run_sweep_with_threads(config: &SweepConfig, threads: usize) -> Result<SweepOutput> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (0..config.snr_grid_db.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let per_cell: Vec<Vec<SweepRecord>> =
        pool.install(|| cells.par_iter().map(|&(s, t)| run_cell(config, s, t)).collect::<Result<_>>())?;

    let mut keyed: Vec<(usize, SweepRecord)> = cells
        .iter()
        .zip(per_cell)
        .flat_map(|(&(s, _), recs)| recs.into_iter().map(move |r| (s, r)))
        .collect();
    keyed.sort_by(|(sa, a), (sb, b)| sa.cmp(sb).then(a.algorithm.cmp(&b.algorithm)).then(a.trial.cmp(&b.trial)));
    let records: Vec<SweepRecord> = keyed.into_iter().map(|(_, r)| r).collect();
    let aggregates = aggregate(config, &records);
    Ok(SweepOutput { records, aggregates })
}

fn run_cell(config: &SweepConfig, snr_idx: usize, trial: usize) -> Result<Vec<SweepRecord>> {
    let snr_db = config.snr_grid_db[snr_idx];
    let seed = trial_seed(config.base_seed, snr_idx, trial);
    let generated = gen_instance(seed, config, snr_db)?;
    let signal = config.signal_prior()?;
    // A rank-deficient draw fails every algorithm's row rather than the sweep.
    let cache = OperatorCache::build(&generated.instance.a).ok();

    let mut algorithms = config.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let records = algorithms
        .into_iter()
        .map(|algorithm| {
            let outcome = match cache.as_ref() {
                Some(cache) => run_algorithm(algorithm, &generated, cache, &signal, &config.engine),
                None => Err(Error::invalid("measurement matrix could not be factorized")),
            };
            let base = SweepRecord {
                snr_db,
                algorithm,
                noise_model: config.noise_model.name(),
                trial,
                seed,
                nrmse: f64::NAN,
                iterations: 0,
                converged: false,
                resamples: generated.resamples,
                failed: true,
            };
            match outcome {
                Ok(run) => {
                    let score = nrmse(&run.x_hat, &generated.instance).unwrap_or(f64::NAN);
                    SweepRecord {
                        nrmse: score,
                        iterations: run.iterations_used,
                        converged: run.converged,
                        failed: !score.is_finite(),
                        ..base
                    }
                }
                Err(Error::Divergence { iteration, .. }) => SweepRecord {
                    iterations: iteration,
                    ..base
                },
                Err(_) => base,
            }
        })
        .collect();
    Ok(records)
}

/// Runs one algorithm on a generated instance, handing it the realized
/// noise prior (or its matched variance for the baseline).
pub fn run_algorithm(
    algorithm: Algorithm,
    generated: &GeneratedInstance,
    cache: &OperatorCache,
    signal: &SignalPrior,
    engine: &EngineConfig,
) -> Result<RunResult> {
    match algorithm {
        Algorithm::Gnp => run_gnp_vamp_cached(&generated.instance, cache, signal, &generated.noise_prior, engine),
        Algorithm::Standard => run_standard_vamp_cached(
            &generated.instance,
            cache,
            signal,
            generated.noise_prior.matched_variance(),
            engine,
        ),
    }
}

/// Mean and standard error of the finite NRMSE values in `values`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    (mean, sd / (n as f64).sqrt())
}

/// Aggregates records in `(snr, algorithm)` order.
pub fn aggregate(config: &SweepConfig, records: &[SweepRecord]) -> Vec<AggregateRow> {
    let mut algorithms = config.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let mut rows = Vec::new();
    for &snr_db in &config.snr_grid_db {
        for &algorithm in &algorithms {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.snr_db == snr_db && r.algorithm == algorithm && !r.failed)
                .map(|r| r.nrmse)
                .collect();
            let (mean_nrmse, stderr_nrmse) = mean_stderr(&values);
            rows.push(AggregateRow {
                snr_db,
                algorithm,
                mean_nrmse,
                stderr_nrmse,
                n_trials: values.len(),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: NoisePrior) -> SweepConfig {
        SweepConfig {
            m: 30,
            n: 60,
            rho: 0.9,
            snr_grid_db: vec![5.0, 15.0],
            trials: 3,
            noise_model: noise,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn nrmse_examples() {
        let a = DMatrix::identity(2, 2);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let inst = ProblemInstance {
            a: a.clone(),
            y: x.clone(),
            true_x: Some(x.clone()),
            true_w: None,
        };
        assert_eq!(nrmse(&x, &inst).unwrap(), 0.0);
        assert_eq!(nrmse(&DVector::zeros(2), &inst).unwrap(), 1.0);
        let v = nrmse(&DVector::from_vec(vec![0.0, 1.0]), &inst).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);

        let bare = ProblemInstance::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![1.0])).unwrap();
        assert!(nrmse(&DVector::zeros(2), &bare).is_err());
    }

    #[test]
    fn mean_stderr_examples() {
        let (m, s) = mean_stderr(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-15);
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.5]), (0.5, 0.0));
        assert!(mean_stderr(&[]).0.is_nan());
    }

    #[test]
    fn single_record_sweep() {
        let cfg = SweepConfig {
            trials: 1,
            snr_grid_db: vec![10.0],
            algorithms: vec![Algorithm::Gnp],
            ..small(NoisePrior::Binary { s: 1.0 })
        };
        let out = run_sweep_with_threads(&cfg, 1).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.aggregates.len(), 1);
        assert!(!out.records[0].failed);
    }

    #[test]
    fn records_sorted_and_paired() {
        let cfg = small(NoisePrior::Laplace { mu: 0.0, b: 1.0 });
        let out = run_sweep_with_threads(&cfg, 2).unwrap();
        assert_eq!(out.records.len(), 2 * 2 * 3);
        let keys: Vec<_> = out.records.iter().map(|r| (r.snr_db as i64, r.algorithm, r.trial)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        // both algorithms at a cell share the seed, hence the instance
        for r in &out.records {
            assert_eq!(r.seed, trial_seed(cfg.base_seed, if r.snr_db == 5.0 { 0 } else { 1 }, r.trial));
        }
    }

    #[test]
    fn aggregates_recomputable_from_rows() {
        let cfg = small(NoisePrior::Gaussian { variance: 1.0 });
        let out = run_sweep_with_threads(&cfg, 1).unwrap();
        for row in &out.aggregates {
            let vals: Vec<f64> = out
                .records
                .iter()
                .filter(|r| r.snr_db == row.snr_db && r.algorithm == row.algorithm)
                .map(|r| r.nrmse)
                .collect();
            let (m, s) = mean_stderr(&vals);
            assert!((m - row.mean_nrmse).abs() < 1e-12);
            assert!((s - row.stderr_nrmse).abs() < 1e-12);
            assert_eq!(row.n_trials, vals.len());
        }
    }

    #[test]
    fn invalid_sweep_configs() {
        let base = small(NoisePrior::Binary { s: 1.0 });
        for cfg in [
            SweepConfig { m: 60, ..base.clone() },
            SweepConfig { trials: 0, ..base.clone() },
            SweepConfig {
                snr_grid_db: vec![],
                ..base.clone()
            },
            SweepConfig {
                algorithms: vec![],
                ..base.clone()
            },
            SweepConfig { rho: 1.2, ..base.clone() },
        ] {
            assert!(run_sweep_with_threads(&cfg, 1).is_err());
        }
    }

    #[test]
    fn algorithm_parsing() {
        assert_eq!("gnp".parse::<Algorithm>().unwrap(), Algorithm::Gnp);
        assert_eq!(" standard".parse::<Algorithm>().unwrap(), Algorithm::Standard);
        assert!("amp".parse::<Algorithm>().is_err());
    }
}
