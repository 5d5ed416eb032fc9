//! Scalar MMSE denoisers.
//!
//! Each denoiser receives a pseudo-observation `r = v + n`, `n ~ N(0, 1/γ)`,
//! and returns the posterior mean `E[v | r]` together with its derivative in
//! `r`. For a Gaussian pseudo-likelihood the derivative equals
//! `γ·Var[v | r]`, which is how every closed form below computes it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_norm_cdf, truncated_moments};

const ALPHA_FLOOR: f64 = 1e-11;

/// A componentwise prior with a closed-form posterior-mean denoiser.
pub trait Prior {
    fn validate(&self) -> Result<()>;

    /// Posterior mean and its derivative with respect to `r`.
    fn denoise(&self, r: f64, gamma: f64) -> Result<(f64, f64)>;
}

/// Bernoulli-Gaussian signal prior `ρ δ(x) + (1 − ρ) N(x; 0, active_variance)`.
///
/// `rho` is the probability mass of the zero atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPrior {
    pub rho: f64,
    pub active_variance: f64,
}

impl SignalPrior {
    pub fn new(rho: f64, active_variance: f64) -> Result<Self> {
        let prior = Self {
            rho,
            active_variance,
        };
        prior.validate()?;
        Ok(prior)
    }
}

/// Measurement-noise prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoisePrior {
    Gaussian { variance: f64 },
    Laplace { mu: f64, b: f64 },
    /// Equiprobable atoms at `±s`.
    Binary { s: f64 },
}

impl NoisePrior {
    pub fn name(&self) -> &'static str {
        match self {
            NoisePrior::Gaussian { .. } => "gaussian",
            NoisePrior::Laplace { .. } => "laplace",
            NoisePrior::Binary { .. } => "binary",
        }
    }

    /// Second moment about zero, handed to the Gaussian-noise baseline.
    pub fn matched_variance(&self) -> f64 {
        match *self {
            NoisePrior::Gaussian { variance } => variance,
            NoisePrior::Laplace { b, .. } => 2.0 * b * b,
            NoisePrior::Binary { s } => s * s,
        }
    }

    /// The same prior with `w` scaled by `k > 0`.
    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            NoisePrior::Gaussian { variance } => NoisePrior::Gaussian {
                variance: variance * k * k,
            },
            NoisePrior::Laplace { mu, b } => NoisePrior::Laplace {
                mu: mu * k,
                b: b * k,
            },
            NoisePrior::Binary { s } => NoisePrior::Binary { s: s * k },
        }
    }
}

/// Output of [`denoise_vector`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub posterior_mean: DVector<f64>,
    /// Average derivative over all components.
    pub alpha: f64,
    pub posterior_precision: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("precision must be positive and finite, got {gamma}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

impl Prior for SignalPrior {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        check_positive("active_variance", self.active_variance)
    }

    fn denoise(&self, r: f64, gamma: f64) -> Result<(f64, f64)> {
        check_gamma(gamma)?;
        self.validate()?;
        Ok(denoise_bg(r, gamma, self))
    }
}

impl Prior for NoisePrior {
    fn validate(&self) -> Result<()> {
        match *self {
            NoisePrior::Gaussian { variance } => check_positive("variance", variance),
            NoisePrior::Laplace { mu, b } => {
                if !mu.is_finite() {
                    return Err(Error::invalid(format!("mu must be finite, got {mu}")));
                }
                check_positive("b", b)
            }
            NoisePrior::Binary { s } => check_positive("s", s),
        }
    }

    fn denoise(&self, r: f64, gamma: f64) -> Result<(f64, f64)> {
        check_gamma(gamma)?;
        self.validate()?;
        Ok(match *self {
            NoisePrior::Gaussian { variance } => denoise_gaussian(r, gamma, variance),
            NoisePrior::Laplace { mu, b } => denoise_laplace(r, gamma, mu, b),
            NoisePrior::Binary { s } => denoise_binary(r, gamma, s),
        })
    }
}

/// Bernoulli-Gaussian posterior mean: responsibility-weighted Gaussian
/// shrinkage, with the responsibilities formed in the log domain.
pub fn denoise_bg(r: f64, gamma: f64, prior: &SignalPrior) -> (f64, f64) {
    let v = prior.active_variance;
    let rho = prior.rho;
    if rho >= 1.0 {
        return (0.0, 0.0);
    }
    // Active-component posterior N(shrink·r, shrink/γ).
    let shrink = gamma * v / (1.0 + gamma * v);
    let m = shrink * r;
    let c = shrink / gamma;
    let pi_active = if rho <= 0.0 {
        1.0
    } else {
        // log evidence ratio ln[(1-ρ) N(r; 0, v + 1/γ)] − ln[ρ N(r; 0, 1/γ)]
        let llr = (1.0 - rho).ln() - rho.ln() - 0.5 * (1.0 + gamma * v).ln()
            + 0.5 * gamma * r * r * shrink;
        logistic(llr)
    };
    let mean = pi_active * m;
    let var = pi_active * c + pi_active * (1.0 - pi_active) * m * m;
    (mean, gamma * var)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Laplace posterior mean. The posterior is a two-piece mixture of
/// truncated Gaussians on either side of `mu`.
pub fn denoise_laplace(r: f64, gamma: f64, mu: f64, b: f64) -> (f64, f64) {
    let sigma = gamma.sqrt().recip();
    let z = r - mu;
    let lam = 1.0 / b;
    let shift = lam / gamma;
    // Upper piece: N(z − λσ², σ²) restricted to v > 0.
    let t_hi = (z - shift) / sigma;
    // Lower piece: N(z + λσ², σ²) restricted to v < 0, reflected.
    let t_lo = -(z + shift) / sigma;
    let log_w_hi = -lam * z + ln_norm_cdf(t_hi);
    let log_w_lo = lam * z + ln_norm_cdf(t_lo);
    // Both weights via the logistic so that r ↦ −r swaps them exactly.
    let pi_hi = logistic(log_w_hi - log_w_lo);
    let pi_lo = logistic(log_w_lo - log_w_hi);

    let (mills_hi, nv_hi) = truncated_moments(t_hi);
    let (mills_lo, nv_lo) = truncated_moments(t_lo);
    let m_hi = (z - shift) + sigma * mills_hi;
    let m_lo = (z + shift) - sigma * mills_lo;
    let mean = pi_hi * m_hi + pi_lo * m_lo;
    let var = sigma * sigma * (pi_hi * nv_hi + pi_lo * nv_lo) + pi_hi * pi_lo * (m_hi - m_lo).powi(2);
    (mu + mean, gamma * var)
}

/// Two-atom posterior mean `s·tanh(γ s r)`.
pub fn denoise_binary(r: f64, gamma: f64, s: f64) -> (f64, f64) {
    let th = (gamma * s * r).tanh();
    (s * th, gamma * s * s * (1.0 - th * th))
}

/// Linear-Gaussian posterior mean for a zero-mean Gaussian prior.
pub fn denoise_gaussian(r: f64, gamma: f64, variance: f64) -> (f64, f64) {
    let d = gamma / (gamma + variance.recip());
    (r * d, d)
}

/// Applies `prior`'s denoiser componentwise and forms the averaged
/// derivative `alpha` and the posterior precision `gamma / alpha`.
pub fn denoise_vector<P: Prior + ?Sized>(prior: &P, r: &DVector<f64>, gamma: f64) -> Result<DenoiseResult> {
    check_gamma(gamma)?;
    prior.validate()?;
    if r.is_empty() {
        return Err(Error::invalid("denoise_vector: empty input"));
    }
    let mut mean = DVector::zeros(r.len());
    let mut derivs = Vec::with_capacity(r.len());
    for (k, &rk) in r.iter().enumerate() {
        let (m, d) = prior.denoise(rk, gamma)?;
        mean[k] = m;
        derivs.push(d);
    }
    let alpha = pairwise_sum(&derivs) / r.len() as f64;
    let alpha_c = alpha.clamp(ALPHA_FLOOR, 1.0);
    Ok(DenoiseResult {
        posterior_mean: mean,
        alpha,
        posterior_precision: gamma / alpha_c,
    })
}

/// Sum with a fixed binary reduction tree, so the result does not depend on
/// how a caller might chunk the input.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}
