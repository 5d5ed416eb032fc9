//! Joint LMMSE estimation of signal and noise.
//!
//! Given extrinsic beliefs `x ~ N(x̂, I/γx)` and `w ~ N(ŵ, I/γw)` and the
//! hard constraint `y = A x + w`, the posterior means are
//!
//! ```text
//! x̄ = (γx I + γw AᵀA)⁻¹ (γx x̂ + γw Aᵀ(y − ŵ))
//! w̄ = (γw I + γx Q)⁻¹ (γw ŵ + γx Q (y − A x̂)),   Q = (AAᵀ)⁻¹
//! ```
//!
//! With the thin SVD `A = U S Vᵀ` both inverses are diagonal in the singular
//! bases, and the `N − M` null directions of `AᵀA` contribute `1/γx` exactly.
//! One factorization per matrix makes every later solve `O(MN)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::messages::GaussianMessage;

const RANK_TOL: f64 = 1e-10;

/// A measurement `y = A x + w`, optionally with the ground truth used to
/// generate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub true_x: Option<DVector<f64>>,
    pub true_w: Option<DVector<f64>>,
}

impl ProblemInstance {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m >= n {
            return Err(Error::invalid(format!("measurement matrix must be wide (0 < M < N), got {m}x{n}")));
        }
        if y.len() != m {
            return Err(Error::invalid(format!("y has length {} but A has {m} rows", y.len())));
        }
        if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A and y must have finite entries"));
        }
        Ok(Self {
            a,
            y,
            true_x: None,
            true_w: None,
        })
    }

    /// Builds `y = A x + w` from ground truth.
    pub fn from_truth(a: DMatrix<f64>, x: DVector<f64>, w: DVector<f64>) -> Result<Self> {
        if x.len() != a.ncols() || w.len() != a.nrows() {
            return Err(Error::invalid("ground-truth dimensions do not match A"));
        }
        let y = &a * &x + &w;
        let mut inst = Self::new(a, y)?;
        inst.true_x = Some(x);
        inst.true_w = Some(w);
        Ok(inst)
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }
}

/// Thin SVD of a full-row-rank `A`.
#[derive(Debug, Clone)]
pub struct OperatorCache {
    /// `M × M` left singular vectors.
    u: DMatrix<f64>,
    /// `N × M` right singular vectors.
    v: DMatrix<f64>,
    s: DVector<f64>,
}

impl OperatorCache {
    /// Factorizes `a`. Requires `M ≤ N` and full row rank.
    pub fn build(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m > n {
            return Err(Error::invalid(format!("expected 0 < M <= N, got {m}x{n}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("A has non-finite entries"));
        }
        let svd = a.clone().svd(true, true);
        let s = svd.singular_values;
        let smax = s.max();
        let smin = s.min();
        if !(smax > 0.0) || smin < RANK_TOL * smax {
            return Err(Error::RankDeficient {
                ratio: if smax > 0.0 { smin / smax } else { 0.0 },
            });
        }
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested Vᵀ").transpose();
        Ok(Self { u, v, s })
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    /// `U diag(s) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        us * self.v.transpose()
    }

    fn check(&self, y: &DVector<f64>, x_ext: &GaussianMessage, w_ext: &GaussianMessage) -> Result<()> {
        if y.len() != self.m() || w_ext.len() != self.m() || x_ext.len() != self.n() {
            return Err(Error::invalid(format!(
                "dimension mismatch: cache is {}x{}, y={}, x={}, w={}",
                self.m(),
                self.n(),
                y.len(),
                x_ext.len(),
                w_ext.len()
            )));
        }
        for g in [x_ext.precision, w_ext.precision] {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("precisions must be positive and finite, got {g}")));
            }
        }
        Ok(())
    }
}

/// Posterior means and divergences of the joint LMMSE stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseOutput {
    pub x_mean: DVector<f64>,
    pub w_mean: DVector<f64>,
    pub alpha_x: f64,
    pub alpha_w: f64,
    pub x_precision: f64,
    pub w_precision: f64,
}

/// Coordinates shared by both solves: `Vᵀx̂`, `Uᵀy` and `Uᵀŵ`.
struct Rotated {
    vx: DVector<f64>,
    uy: DVector<f64>,
    uw: DVector<f64>,
}

fn rotate(cache: &OperatorCache, y: &DVector<f64>, x_ext: &GaussianMessage, w_ext: &GaussianMessage) -> Rotated {
    Rotated {
        vx: cache.v.tr_mul(&x_ext.mean),
        uy: cache.u.tr_mul(y),
        uw: cache.u.tr_mul(&w_ext.mean),
    }
}

fn solve_x(cache: &OperatorCache, rot: &Rotated, x_ext: &GaussianMessage, gx: f64, gw: f64) -> DVector<f64> {
    // x̄ = x̂ + V [γw sᵢ (dᵢ − sᵢ cᵢ) / (γx + γw sᵢ²)],  c = Vᵀx̂, d = Uᵀ(y − ŵ)
    let coef = DVector::from_fn(cache.s.len(), |i, _| {
        let s = cache.s[i];
        let d = rot.uy[i] - rot.uw[i];
        gw * s * (d - s * rot.vx[i]) / (gx + gw * s * s)
    });
    &x_ext.mean + &cache.v * coef
}

fn solve_w(cache: &OperatorCache, rot: &Rotated, gx: f64, gw: f64) -> DVector<f64> {
    // w̄ = U [(γw sᵢ² eᵢ + γx fᵢ) / (γw sᵢ² + γx)],  e = Uᵀŵ, f = Uᵀy − S Vᵀx̂
    let coef = DVector::from_fn(cache.s.len(), |i, _| {
        let s2 = cache.s[i] * cache.s[i];
        let f = rot.uy[i] - cache.s[i] * rot.vx[i];
        (gw * s2 * rot.uw[i] + gx * f) / (gw * s2 + gx)
    });
    &cache.u * coef
}

/// Signal-side LMMSE mean.
pub fn lmmse_x(
    cache: &OperatorCache,
    y: &DVector<f64>,
    x_ext: &GaussianMessage,
    w_ext: &GaussianMessage,
) -> Result<DVector<f64>> {
    cache.check(y, x_ext, w_ext)?;
    let rot = rotate(cache, y, x_ext, w_ext);
    Ok(solve_x(cache, &rot, x_ext, x_ext.precision, w_ext.precision))
}

/// Noise-side LMMSE mean.
pub fn lmmse_w(
    cache: &OperatorCache,
    y: &DVector<f64>,
    x_ext: &GaussianMessage,
    w_ext: &GaussianMessage,
) -> Result<DVector<f64>> {
    cache.check(y, x_ext, w_ext)?;
    let rot = rotate(cache, y, x_ext, w_ext);
    Ok(solve_w(cache, &rot, x_ext.precision, w_ext.precision))
}

/// Normalized trace of `γx (γx I + γw AᵀA)⁻¹`.
pub fn alpha_x(cache: &OperatorCache, gamma_x: f64, gamma_w: f64) -> f64 {
    let n = cache.n() as f64;
    let m = cache.m() as f64;
    let range: f64 = cache.s.iter().map(|s| gamma_x / (gamma_x + gamma_w * s * s)).sum();
    (range + (n - m)) / n
}

/// Normalized trace of `γw (γw I + γx Q)⁻¹`.
pub fn alpha_w(cache: &OperatorCache, gamma_x: f64, gamma_w: f64) -> f64 {
    let m = cache.m() as f64;
    let total: f64 = cache
        .s
        .iter()
        .map(|s| {
            let s2 = s * s;
            gamma_w * s2 / (gamma_w * s2 + gamma_x)
        })
        .sum();
    total / m
}

/// Both LMMSE means, their divergences, and the posterior precisions
/// `γx/αx` and `γw/αw`.
pub fn lmmse_joint(
    cache: &OperatorCache,
    y: &DVector<f64>,
    x_ext: &GaussianMessage,
    w_ext: &GaussianMessage,
) -> Result<LmmseOutput> {
    cache.check(y, x_ext, w_ext)?;
    let (gx, gw) = (x_ext.precision, w_ext.precision);
    let rot = rotate(cache, y, x_ext, w_ext);
    let x_mean = solve_x(cache, &rot, x_ext, gx, gw);
    let w_mean = solve_w(cache, &rot, gx, gw);
    let ax = alpha_x(cache, gx, gw);
    let aw = alpha_w(cache, gx, gw);
    Ok(LmmseOutput {
        x_mean,
        w_mean,
        alpha_x: ax,
        alpha_w: aw,
        x_precision: gx / ax,
        w_precision: gw / aw,
    })
}

/// `‖y − A x − w‖ / ‖y‖` (absolute when `y = 0`).
pub fn residual_error(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let r = (y - a * x - w).norm();
    let scale = y.norm();
    if scale > 0.0 {
        r / scale
    } else {
        r
    }
}
