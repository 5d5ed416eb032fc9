//! Random problem instances at an exact SNR.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SweepConfig;
use crate::denoisers::NoisePrior;
use crate::error::{Error, Result};
use crate::lmmse::ProblemInstance;

const MAX_SIGNAL_DRAWS: usize = 64;

/// A generated instance with the noise prior that actually produced it.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: ProblemInstance,
    /// Nominal noise prior rescaled to the requested SNR.
    pub noise_prior: NoisePrior,
    /// Number of all-zero signal draws that were rejected.
    pub resamples: usize,
}

/// Draws `A` with i.i.d. `N(0, 1)` entries, `x` from the Bernoulli-Gaussian
/// prior, and `w` from the nominal noise model rescaled so that
/// `‖A x‖ / ‖w‖ = 10^{snr_db/20}`.
pub fn gen_instance(seed: u64, config: &SweepConfig, snr_db: f64) -> Result<GeneratedInstance> {
    config.validate()?;
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let (m, n) = (config.m, config.n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let entries: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    let a = DMatrix::from_row_slice(m, n, &entries);

    let mut resamples = 0;
    let x = loop {
        let x = DVector::from_fn(n, |_, _| {
            if rng.random::<f64>() < config.rho {
                0.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        if x.iter().any(|&v| v != 0.0) {
            break x;
        }
        resamples += 1;
        if resamples >= MAX_SIGNAL_DRAWS {
            return Err(Error::DegenerateConfig(format!(
                "{MAX_SIGNAL_DRAWS} consecutive all-zero signal draws (rho = {}); SNR is undefined",
                config.rho
            )));
        }
    };

    let nominal = config.noise_model;
    let w_nominal = DVector::from_fn(m, |_, _| draw_noise(&mut rng, &nominal));
    let signal_norm = (&a * &x).norm();
    let noise_norm = w_nominal.norm();
    if !(noise_norm > 0.0) {
        return Err(Error::DegenerateConfig("nominal noise draw is identically zero".into()));
    }
    let k = signal_norm / (noise_norm * 10f64.powf(snr_db / 20.0));
    let w = w_nominal * k;
    let instance = ProblemInstance::from_truth(a, x, w)?;
    Ok(GeneratedInstance {
        instance,
        noise_prior: nominal.scaled(k),
        resamples,
    })
}

fn draw_noise(rng: &mut ChaCha8Rng, prior: &NoisePrior) -> f64 {
    match *prior {
        NoisePrior::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
        NoisePrior::Laplace { mu, b } => {
            // inverse CDF on u ∈ (−½, ½)
            let u: f64 = rng.random::<f64>() - 0.5;
            mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
        NoisePrior::Binary { s } => {
            if rng.random::<bool>() {
                s
            } else {
                -s
            }
        }
    }
}

/// `10·log₁₀(‖A x‖² / ‖w‖²)` of an instance with ground truth.
pub fn realized_snr_db(instance: &ProblemInstance) -> Option<f64> {
    let x = instance.true_x.as_ref()?;
    let w = instance.true_w.as_ref()?;
    Some(10.0 * ((&instance.a * x).norm_squared() / w.norm_squared()).log10())
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one `(snr point, trial)` cell of a sweep.
pub fn trial_seed(base_seed: u64, snr_index: usize, trial: usize) -> u64 {
    let a = splitmix64(base_seed);
    let b = splitmix64(a ^ (snr_index as u64));
    splitmix64(b ^ (trial as u64).rotate_left(32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(noise: NoisePrior) -> SweepConfig {
        SweepConfig {
            m: 20,
            n: 40,
            noise_model: noise,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn snr_is_exact() {
        for noise in [
            NoisePrior::Gaussian { variance: 1.0 },
            NoisePrior::Laplace { mu: 0.0, b: 1.0 },
            NoisePrior::Binary { s: 1.0 },
        ] {
            let cfg = config(noise);
            for (i, snr) in [-3.0, 0.0, 10.0, 27.5].into_iter().enumerate() {
                let g = gen_instance(trial_seed(1, i, 0), &cfg, snr).unwrap();
                assert!((realized_snr_db(&g.instance).unwrap() - snr).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn realized_binary_amplitude_matches_noise() {
        let cfg = config(NoisePrior::Binary { s: 1.0 });
        let g = gen_instance(5, &cfg, 10.0).unwrap();
        let NoisePrior::Binary { s } = g.noise_prior else {
            panic!("wrong prior kind");
        };
        for w in g.instance.true_w.as_ref().unwrap().iter() {
            assert!((w.abs() - s).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = config(NoisePrior::Laplace { mu: 0.0, b: 1.0 });
        let a = gen_instance(99, &cfg, 5.0).unwrap();
        let b = gen_instance(99, &cfg, 5.0).unwrap();
        assert_eq!(a.instance, b.instance);
        assert_eq!(a.noise_prior, b.noise_prior);
        let c = gen_instance(100, &cfg, 5.0).unwrap();
        assert_ne!(a.instance, c.instance);
    }

    #[test]
    fn all_zero_signal_is_rejected() {
        let cfg = SweepConfig {
            rho: 1.0,
            ..config(NoisePrior::Gaussian { variance: 1.0 })
        };
        let err = gen_instance(1, &cfg, 10.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateConfig(_)));
    }

    #[test]
    fn sparse_draws_resample() {
        // ρ close to 1 with small N: most draws are all-zero.
        let cfg = SweepConfig {
            m: 2,
            n: 4,
            rho: 0.7,
            ..config(NoisePrior::Gaussian { variance: 1.0 })
        };
        let total: usize = (0..50)
            .map(|s| gen_instance(s, &cfg, 0.0).unwrap().resamples)
            .sum();
        assert!(total > 0);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..5 {
            for t in 0..100 {
                assert!(seen.insert(trial_seed(42, s, t)));
            }
        }
    }

    #[test]
    fn laplace_draws_have_expected_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = NoisePrior::Laplace { mu: 0.0, b: 2.0 };
        let k = 200_000;
        let mean_abs: f64 = (0..k).map(|_| draw_noise(&mut rng, &prior).abs()).sum::<f64>() / k as f64;
        // E|w| = b
        assert!((mean_abs - 2.0).abs() < 0.02, "{mean_abs}");
    }
}
