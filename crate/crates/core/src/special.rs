//! Normal-tail helpers that stay accurate deep in the tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const CF_SWITCH: f64 = 3.5;
const CF_DEPTH: usize = 120;

/// Tail values `(T₁, T₂)` of the continued fraction
/// `erfc(u) = e^{-u²}/√π · 1/(u + T₁)`, `T_k = (k/2)/(u + T_{k+1})`.
fn erfc_cf_tails(u: f64) -> (f64, f64) {
    let mut t = 0.0;
    let mut t2 = 0.0;
    for k in (1..=CF_DEPTH).rev() {
        if k == 1 {
            t2 = t;
        }
        t = (k as f64 * 0.5) / (u + t);
    }
    (t, t2)
}

/// Scaled complementary error function `e^{u²} erfc(u)`.
pub(crate) fn erfcx(u: f64) -> f64 {
    if u > CF_SWITCH {
        let (t1, _) = erfc_cf_tails(u);
        1.0 / (PI.sqrt() * (u + t1))
    } else {
        // Overflows to +inf for u < -26.6, which callers treat as Φ → 1.
        (u * u).exp() * libm::erfc(u)
    }
}

/// `ln Φ(t)` for the standard normal CDF.
pub(crate) fn ln_norm_cdf(t: f64) -> f64 {
    let u = -t * FRAC_1_SQRT_2;
    if u > 0.0 {
        erfcx(u).ln() - u * u - std::f64::consts::LN_2
    } else {
        (0.5 * libm::erfc(u)).ln()
    }
}

/// Moments of a standard normal truncated to `(-∞, t]` reflected onto
/// `[-t, ∞)`, i.e. of `Z | Z > -t`: returns the Mills ratio
/// `λ = φ(t)/Φ(t)` and the normalized variance `1 − λ(t + λ)`.
pub(crate) fn truncated_moments(t: f64) -> (f64, f64) {
    let u = -t * FRAC_1_SQRT_2;
    if u > CF_SWITCH {
        // λ = √2 (u + T₁) and 1 − λ(t + λ) = (T₂ − T₁)/(u + T₂), free of
        // the cancellation the direct form suffers for t ≪ 0.
        let (t1, t2) = erfc_cf_tails(u);
        let lambda = std::f64::consts::SQRT_2 * (u + t1);
        (lambda, (t2 - t1) / (u + t2))
    } else {
        let lambda = (2.0 / PI).sqrt() / erfcx(u);
        let var = 1.0 - lambda * (t + lambda);
        (lambda, var.max(0.0))
    }
}
