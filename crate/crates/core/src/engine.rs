//! The iteration loop.
//!
//! Each iteration runs, in order: signal denoising, signal extrinsic,
//! noise denoising, noise extrinsic, joint LMMSE, and the two extrinsics
//! that feed the next iteration's denoisers. The standard-VAMP baseline runs
//! the same loop with the noise stage replaced by a fixed zero-mean message
//! of the assumed Gaussian noise precision.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::denoisers::{denoise_vector, NoisePrior, Prior, SignalPrior};
use crate::error::{Error, Result};
use crate::harness::nrmse_against;
use crate::lmmse::{lmmse_joint, residual_error, OperatorCache, ProblemInstance};
use crate::messages::{clamp_precision, ext_combine, GaussianMessage, PrecisionBounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the returned estimate drops below
    /// this. Zero runs exactly `max_iters` iterations.
    pub tol: f64,
    /// Weight of the new extrinsic message, in `(0, 1]`; 1 disables damping.
    pub damping: f64,
    /// Defaults to zeros.
    pub init_mean_x: Option<Vec<f64>>,
    pub init_precision_x: f64,
    pub init_mean_w: Option<Vec<f64>>,
    pub init_precision_w: f64,
    pub bounds: PrecisionBounds,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            damping: 1.0,
            init_mean_x: None,
            init_precision_x: 1e-6,
            init_mean_w: None,
            init_precision_w: 1e-6,
            bounds: PrecisionBounds::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        for g in [self.init_precision_x, self.init_precision_w] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("initial precisions must be positive, got {g}")));
            }
        }
        self.bounds.validate()
    }

    fn init_message(&self, mean: &Option<Vec<f64>>, precision: f64, len: usize) -> Result<GaussianMessage> {
        let mean = match mean {
            Some(v) if v.len() == len => DVector::from_column_slice(v),
            Some(v) => {
                return Err(Error::invalid(format!(
                    "initial mean has length {} but {} was expected",
                    v.len(),
                    len
                )))
            }
            None => DVector::zeros(len),
        };
        Ok(GaussianMessage::new(mean, clamp_precision(precision, &self.bounds)))
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Precision entering the signal denoiser.
    pub gamma_x_ext_minus: f64,
    /// Precision entering the LMMSE stage from the signal side.
    pub gamma_x_ext_plus: f64,
    pub gamma_w_ext_minus: f64,
    pub gamma_w_ext_plus: f64,
    /// `‖y − A x̄ − w̄‖/‖y‖` of this iteration's LMMSE output.
    pub lmmse_residual: f64,
    /// Present when the instance carries ground truth.
    pub nrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Signal-denoiser posterior mean of the last iteration.
    pub x_hat: DVector<f64>,
    /// Noise estimate of the last iteration: the noise-denoiser posterior
    /// mean, or the LMMSE noise mean for the baseline.
    pub w_hat: DVector<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

enum NoiseStage<'a> {
    Denoised(&'a NoisePrior),
    Fixed { precision: f64 },
}

/// VAMP with an arbitrary i.i.d. noise prior.
pub fn run_gnp_vamp(
    instance: &ProblemInstance,
    signal_prior: &SignalPrior,
    noise_prior: &NoisePrior,
    config: &EngineConfig,
) -> Result<RunResult> {
    let cache = OperatorCache::build(&instance.a)?;
    run_gnp_vamp_cached(instance, &cache, signal_prior, noise_prior, config)
}

/// [`run_gnp_vamp`] reusing a factorization of `instance.a`.
pub fn run_gnp_vamp_cached(
    instance: &ProblemInstance,
    cache: &OperatorCache,
    signal_prior: &SignalPrior,
    noise_prior: &NoisePrior,
    config: &EngineConfig,
) -> Result<RunResult> {
    noise_prior.validate()?;
    run(instance, cache, signal_prior, NoiseStage::Denoised(noise_prior), config)
}

/// Standard VAMP assuming AWGN of the given variance.
pub fn run_standard_vamp(
    instance: &ProblemInstance,
    signal_prior: &SignalPrior,
    noise_variance: f64,
    config: &EngineConfig,
) -> Result<RunResult> {
    let cache = OperatorCache::build(&instance.a)?;
    run_standard_vamp_cached(instance, &cache, signal_prior, noise_variance, config)
}

/// [`run_standard_vamp`] reusing a factorization of `instance.a`.
pub fn run_standard_vamp_cached(
    instance: &ProblemInstance,
    cache: &OperatorCache,
    signal_prior: &SignalPrior,
    noise_variance: f64,
    config: &EngineConfig,
) -> Result<RunResult> {
    if !(noise_variance > 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be positive, got {noise_variance}")));
    }
    let precision = clamp_precision(noise_variance.recip(), &config.bounds);
    run(instance, cache, signal_prior, NoiseStage::Fixed { precision }, config)
}

fn damp(new: GaussianMessage, old: &GaussianMessage, damping: f64) -> GaussianMessage {
    if damping >= 1.0 {
        return new;
    }
    let precision = new.precision.powf(damping) * old.precision.powf(1.0 - damping);
    let mean = new.mean * damping + &old.mean * (1.0 - damping);
    GaussianMessage::new(mean, precision)
}

fn run(
    instance: &ProblemInstance,
    cache: &OperatorCache,
    signal_prior: &SignalPrior,
    noise: NoiseStage<'_>,
    config: &EngineConfig,
) -> Result<RunResult> {
    config.validate()?;
    signal_prior.validate()?;
    let (m, n) = (instance.m(), instance.n());
    if cache.m() != m || cache.n() != n {
        return Err(Error::invalid("operator cache does not match the instance"));
    }
    let bounds = &config.bounds;

    let mut x_in = config.init_message(&config.init_mean_x, config.init_precision_x, n)?;
    let mut w_in = config.init_message(&config.init_mean_w, config.init_precision_w, m)?;
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut prev_x: Option<DVector<f64>> = None;
    let mut converged = false;
    let mut x_hat = DVector::zeros(n);
    let mut w_hat = DVector::zeros(m);

    for t in 0..config.max_iters {
        let diverged = |trace: Vec<IterationRecord>| Error::Divergence { iteration: t, trace };

        // signal denoising and extrinsic
        let dx = denoise_vector(signal_prior, &x_in.mean, x_in.precision)?;
        let x_post = GaussianMessage::new(dx.posterior_mean, dx.posterior_precision);
        let x_out = ext_combine(&x_post, &x_in, bounds)?;

        // noise denoising and extrinsic
        let (w_out, w_post_mean) = match noise {
            NoiseStage::Denoised(prior) => {
                let dw = denoise_vector(prior, &w_in.mean, w_in.precision)?;
                let w_post = GaussianMessage::new(dw.posterior_mean, dw.posterior_precision);
                (ext_combine(&w_post, &w_in, bounds)?, Some(w_post.mean))
            }
            NoiseStage::Fixed { precision } => (GaussianMessage::zeros(m, precision), None),
        };

        // joint LMMSE and the extrinsics for the next iteration
        let lm = lmmse_joint(cache, &instance.y, &x_out, &w_out)?;
        let x_lmmse = GaussianMessage::new(lm.x_mean, lm.x_precision);
        let w_lmmse = GaussianMessage::new(lm.w_mean, lm.w_precision);
        let residual = residual_error(&instance.a, &instance.y, &x_lmmse.mean, &w_lmmse.mean);
        let x_next = ext_combine(&x_lmmse, &x_out, bounds)?;
        let w_next = match noise {
            NoiseStage::Denoised(_) => ext_combine(&w_lmmse, &w_out, bounds)?,
            NoiseStage::Fixed { .. } => w_in.clone(),
        };

        let finite = x_post.is_finite()
            && x_out.is_finite()
            && w_out.is_finite()
            && x_lmmse.is_finite()
            && w_lmmse.is_finite()
            && x_next.is_finite()
            && w_next.is_finite()
            && w_post_mean.as_ref().is_none_or(|w| w.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(diverged(trace));
        }

        let record = IterationRecord {
            iteration: t,
            gamma_x_ext_minus: x_in.precision,
            gamma_x_ext_plus: x_out.precision,
            gamma_w_ext_minus: w_in.precision,
            gamma_w_ext_plus: w_out.precision,
            lmmse_residual: residual,
            nrmse: instance
                .true_x
                .as_ref()
                .map(|truth| nrmse_against(&instance.a, truth, &x_post.mean)),
        };
        trace.push(record);

        x_hat = x_post.mean;
        w_hat = w_post_mean.unwrap_or(w_lmmse.mean);
        x_in = damp(x_next, &x_in, config.damping);
        w_in = damp(w_next, &w_in, config.damping);

        if let Some(prev) = prev_x.as_ref() {
            let change = (&x_hat - prev).norm() / prev.norm().max(1e-12);
            if change < config.tol {
                converged = true;
                break;
            }
        }
        prev_x = Some(x_hat.clone());
    }

    Ok(RunResult {
        x_hat,
        w_hat,
        iterations_used: trace.len(),
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::denoise_gaussian;
    use crate::harness::nrmse;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn bg_instance(seed: u64, m: usize, n: usize, rho: f64, noise_std: f64) -> ProblemInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DVector::from_fn(n, |_, _| {
            if rng.random::<f64>() < rho {
                0.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let w = DVector::from_fn(m, |_, _| noise_std * rng.sample::<f64, _>(StandardNormal));
        ProblemInstance::from_truth(a, x, w).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = EngineConfig::default();
        assert!(c.validate().is_ok());
        c.max_iters = 0;
        assert!(c.validate().is_err());
        let c = EngineConfig {
            damping: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = EngineConfig {
            damping: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = EngineConfig {
            tol: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn noise_free_recovery() {
        let inst = bg_instance(1, 250, 500, 0.95, 0.0);
        let sp = SignalPrior::new(0.95, 1.0).unwrap();
        // noise precision 1e12 sits above the default cap, which stalls the
        // iteration around 1e-5; widen the cap so the prior is representable
        let cfg = EngineConfig {
            init_precision_x: 1e6,
            init_precision_w: 1e6,
            bounds: PrecisionBounds::new(1e-11, 1e16).unwrap(),
            ..Default::default()
        };
        let r = run_gnp_vamp(&inst, &sp, &NoisePrior::Gaussian { variance: 1e-12 }, &cfg).unwrap();
        assert!(r.converged);
        let e = nrmse(&r.x_hat, &inst).unwrap();
        assert!(e < 1e-6, "gnp nrmse {e}");
        let r = run_standard_vamp(&inst, &sp, 1e-12, &cfg).unwrap();
        let e = nrmse(&r.x_hat, &inst).unwrap();
        assert!(e < 1e-6, "standard nrmse {e}");
    }

    #[test]
    fn one_iteration_matches_hand_composition() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, -0.5, 0.3, 2.0, 0.2, 1.1, -0.7, 0.4]);
        let y = DVector::from_vec(vec![0.8, -1.3]);
        let inst = ProblemInstance::new(a.clone(), y.clone()).unwrap();
        let sp = SignalPrior::new(0.0, 1.5).unwrap();
        let np = NoisePrior::Gaussian { variance: 0.3 };
        let cfg = EngineConfig {
            max_iters: 1,
            init_mean_x: Some(vec![0.1, -0.2, 0.3, 0.05]),
            init_precision_x: 0.7,
            init_mean_w: Some(vec![0.4, -0.1]),
            init_precision_w: 2.0,
            ..Default::default()
        };
        let got = run_gnp_vamp(&inst, &sp, &np, &cfg).unwrap();

        let b = PrecisionBounds::default();
        let g = |r: &DVector<f64>, gamma: f64, var: f64| {
            let d = denoise_gaussian(0.0, gamma, var).1;
            (r.map(|v| denoise_gaussian(v, gamma, var).0), gamma / d)
        };
        let x_in = GaussianMessage::new(DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]), 0.7);
        let w_in = GaussianMessage::new(DVector::from_vec(vec![0.4, -0.1]), 2.0);
        let (xm, xg) = g(&x_in.mean, 0.7, 1.5);
        let x_out = ext_combine(&GaussianMessage::new(xm.clone(), xg), &x_in, &b).unwrap();
        let (wm, wg) = g(&w_in.mean, 2.0, 0.3);
        let w_out = ext_combine(&GaussianMessage::new(wm, wg), &w_in, &b).unwrap();
        let cache = OperatorCache::build(&a).unwrap();
        let lm = lmmse_joint(&cache, &y, &x_out, &w_out).unwrap();

        assert_eq!(got.iterations_used, 1);
        assert!((&got.x_hat - &xm).amax() < 1e-14);
        let rec = &got.trace[0];
        assert!((rec.gamma_x_ext_plus - x_out.precision).abs() < 1e-12);
        assert!((rec.gamma_w_ext_plus - w_out.precision).abs() < 1e-12);
        assert!(residual_error(&a, &y, &lm.x_mean, &lm.w_mean) < 1e-12);

        // second iteration consumes the LMMSE extrinsic
        let x_next = ext_combine(
            &GaussianMessage::new(lm.x_mean.clone(), lm.x_precision),
            &x_out,
            &b,
        )
        .unwrap();
        let cfg2 = EngineConfig {
            max_iters: 2,
            tol: 0.0,
            ..cfg
        };
        let got2 = run_gnp_vamp(&inst, &sp, &np, &cfg2).unwrap();
        assert!((got2.trace[1].gamma_x_ext_minus - x_next.precision).abs() < 1e-12 * x_next.precision);
        let (xm2, _) = g(&x_next.mean, x_next.precision, 1.5);
        assert!((&got2.x_hat - xm2).amax() < 1e-12);
    }

    #[test]
    fn gaussian_prior_noise_message_is_pinned() {
        // With a Gaussian noise prior the noise extrinsic is N(0, 1/variance)
        // whatever the incoming message.
        let inst = bg_instance(4, 20, 40, 0.8, 0.1);
        let sp = SignalPrior::new(0.8, 1.0).unwrap();
        let r = run_gnp_vamp(&inst, &sp, &NoisePrior::Gaussian { variance: 0.01 }, &EngineConfig::default()).unwrap();
        for rec in &r.trace {
            assert!((rec.gamma_w_ext_plus - 100.0).abs() < 1e-6, "{}", rec.gamma_w_ext_plus);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let inst = bg_instance(9, 60, 120, 0.9, 0.05);
        let sp = SignalPrior::new(0.9, 1.0).unwrap();
        let np = NoisePrior::Laplace { mu: 0.0, b: 0.05 };
        let cfg = EngineConfig::default();
        let a = run_gnp_vamp(&inst, &sp, &np, &cfg).unwrap();
        let b = run_gnp_vamp(&inst, &sp, &np, &cfg).unwrap();
        assert_eq!(a, b);
        for rec in &a.trace {
            for g in [rec.gamma_x_ext_minus, rec.gamma_x_ext_plus, rec.gamma_w_ext_minus, rec.gamma_w_ext_plus] {
                assert!(cfg.bounds.contains(g));
            }
            assert!(rec.lmmse_residual < 1e-8);
            assert!(rec.nrmse.unwrap().is_finite());
        }
        assert!(a.iterations_used <= cfg.max_iters);
        assert_eq!(a.trace.len(), a.iterations_used);
    }

    #[test]
    fn fixed_point_consistency() {
        let sp = SignalPrior::new(0.9, 1.0).unwrap();
        let cfg = EngineConfig {
            tol: 1e-6,
            ..Default::default()
        };
        let mut checked = 0;
        for (seed, np) in [
            (21, NoisePrior::Binary { s: 0.05 }),
            (22, NoisePrior::Laplace { mu: 0.0, b: 0.05 }),
            (23, NoisePrior::Gaussian { variance: 0.0025 }),
        ] {
            let inst = bg_instance(seed, 100, 200, 0.9, 0.05);
            let r = run_gnp_vamp(&inst, &sp, &np, &cfg).unwrap();
            if !r.converged {
                continue;
            }
            let more = EngineConfig {
                max_iters: r.iterations_used + 1,
                tol: 0.0,
                ..cfg.clone()
            };
            let r2 = run_gnp_vamp(&inst, &sp, &np, &more).unwrap();
            let change = (&r2.x_hat - &r.x_hat).norm() / r.x_hat.norm();
            assert!(change < 10.0 * cfg.tol, "{}: change {change}", np.name());
            checked += 1;
        }
        assert!(checked >= 2, "only {checked} runs converged");
    }

    #[test]
    fn damping_still_converges() {
        let inst = bg_instance(2, 100, 200, 0.9, 0.05);
        let sp = SignalPrior::new(0.9, 1.0).unwrap();
        let cfg = EngineConfig {
            damping: 0.7,
            max_iters: 200,
            ..Default::default()
        };
        let r = run_gnp_vamp(&inst, &sp, &NoisePrior::Gaussian { variance: 0.0025 }, &cfg).unwrap();
        assert!(nrmse(&r.x_hat, &inst).unwrap() < 0.2);
    }

    #[test]
    fn fixed_iteration_count_with_zero_tol() {
        let inst = bg_instance(3, 30, 60, 0.9, 0.1);
        let sp = SignalPrior::new(0.9, 1.0).unwrap();
        let cfg = EngineConfig {
            max_iters: 17,
            tol: 0.0,
            ..Default::default()
        };
        let r = run_standard_vamp(&inst, &sp, 0.01, &cfg).unwrap();
        assert_eq!(r.iterations_used, 17);
        assert!(!r.converged);
    }

    #[test]
    fn bad_inputs_rejected() {
        let inst = bg_instance(3, 10, 20, 0.9, 0.1);
        let sp = SignalPrior::new(0.9, 1.0).unwrap();
        assert!(run_standard_vamp(&inst, &sp, 0.0, &EngineConfig::default()).is_err());
        let cfg = EngineConfig {
            init_mean_x: Some(vec![0.0; 3]),
            ..Default::default()
        };
        assert!(run_gnp_vamp(&inst, &sp, &NoisePrior::Binary { s: 1.0 }, &cfg).is_err());
        assert!(run_gnp_vamp(&inst, &sp, &NoisePrior::Binary { s: 0.0 }, &EngineConfig::default()).is_err());
    }
}
