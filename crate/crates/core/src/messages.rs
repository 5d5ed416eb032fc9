//! Gaussian messages with a single scalar precision, and the extrinsic
//! combination rule used at every edge of the message schedule.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic Gaussian belief `N(mean, precision⁻¹ I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessage {
    pub mean: DVector<f64>,
    pub precision: f64,
}

impl GaussianMessage {
    pub fn new(mean: DVector<f64>, precision: f64) -> Self {
        Self { mean, precision }
    }

    pub fn zeros(len: usize, precision: f64) -> Self {
        Self::new(DVector::zeros(len), precision)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.precision.is_finite() && self.mean.iter().all(|v| v.is_finite())
    }
}

/// Clamping interval applied to every precision the algorithm produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionBounds {
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl PrecisionBounds {
    pub fn new(gamma_min: f64, gamma_max: f64) -> Result<Self> {
        let bounds = Self {
            gamma_min,
            gamma_max,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min > 0.0 && self.gamma_min < self.gamma_max && self.gamma_max.is_finite()) {
            return Err(Error::invalid(format!(
                "precision bounds must satisfy 0 < gamma_min < gamma_max < inf, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, gamma: f64) -> bool {
        gamma >= self.gamma_min && gamma <= self.gamma_max
    }
}

impl Default for PrecisionBounds {
    fn default() -> Self {
        Self {
            gamma_min: 1e-11,
            gamma_max: 1e11,
        }
    }
}

/// `min(max(gamma, gamma_min), gamma_max)`. NaN maps to `gamma_min`.
pub fn clamp_precision(gamma: f64, bounds: &PrecisionBounds) -> f64 {
    if gamma.is_nan() {
        return bounds.gamma_min;
    }
    gamma.max(bounds.gamma_min).min(bounds.gamma_max)
}

/// Divides the `incoming` message out of `posterior`.
///
/// The output precision is `clamp(γ_post − γ_in)` and the mean is
/// `(γ_post·m_post − γ_in·m_in) / γ_out`, using the clamped `γ_out` so the
/// returned pair is self-consistent. When the difference is above
/// `gamma_max` the mean uses the unclamped difference instead; dividing by
/// the cap would scale the mean by `(γ_post − γ_in)/gamma_max`.
pub fn ext_combine(
    posterior: &GaussianMessage,
    incoming: &GaussianMessage,
    bounds: &PrecisionBounds,
) -> Result<GaussianMessage> {
    if posterior.len() != incoming.len() {
        return Err(Error::invalid(format!(
            "ext_combine: posterior has length {} but incoming has length {}",
            posterior.len(),
            incoming.len()
        )));
    }
    let diff = posterior.precision - incoming.precision;
    let gamma = clamp_precision(diff, bounds);
    let denom = if diff > gamma { diff } else { gamma };
    let gp = posterior.precision / denom;
    let gi = incoming.precision / denom;
    let mean = posterior.mean.zip_map(&incoming.mean, |p, i| gp * p - gi * i);
    Ok(GaussianMessage::new(mean, gamma))
}
