//! Slow, independent reference computations for the test suites.
//!
//! Nothing here shares code with the closed-form denoisers or the
//! SVD-based LMMSE path: the denoiser reference integrates the posterior
//! numerically, and the LMMSE reference conditions the dense joint Gaussian
//! of `(x, w)` on `y = A x + w`.

use nalgebra::{DMatrix, DVector};

use crate::denoisers::{NoisePrior, SignalPrior};
use crate::error::{Error, Result};

/// Priors understood by [`quadrature_posterior_mean`].
#[derive(Debug, Clone, Copy)]
pub enum OraclePrior {
    Signal(SignalPrior),
    Noise(NoisePrior),
}

/// Point masses `(location, weight)`, the log-density of the absolutely
/// continuous part, a kink location to split the integral at, and the
/// curvature the continuous log-density adds to the likelihood's.
struct Decomposed {
    atoms: Vec<(f64, f64)>,
    continuous: Option<Box<dyn Fn(f64) -> f64>>,
    kink: Option<f64>,
    curvature: f64,
}

fn decompose(prior: &OraclePrior) -> Decomposed {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    match *prior {
        OraclePrior::Signal(p) => {
            let v = p.active_variance;
            let atoms = if p.rho > 0.0 { vec![(0.0, p.rho)] } else { Vec::new() };
            let continuous = (p.rho < 1.0).then(|| {
                let log_w = (1.0 - p.rho).ln() - 0.5 * (ln_2pi + v.ln());
                Box::new(move |x: f64| log_w - 0.5 * x * x / v) as Box<dyn Fn(f64) -> f64>
            });
            Decomposed {
                atoms,
                continuous,
                kink: None,
                curvature: 1.0 / v,
            }
        }
        OraclePrior::Noise(NoisePrior::Gaussian { variance }) => Decomposed {
            atoms: Vec::new(),
            continuous: Some(Box::new(move |x| -0.5 * x * x / variance - 0.5 * (ln_2pi + variance.ln()))),
            kink: None,
            curvature: 1.0 / variance,
        },
        OraclePrior::Noise(NoisePrior::Laplace { mu, b }) => Decomposed {
            atoms: Vec::new(),
            continuous: Some(Box::new(move |x| -(x - mu).abs() / b - (2.0 * b).ln())),
            kink: Some(mu),
            curvature: 0.0,
        },
        OraclePrior::Noise(NoisePrior::Binary { s }) => Decomposed {
            atoms: vec![(s, 0.5), (-s, 0.5)],
            continuous: None,
            kink: None,
            curvature: 0.0,
        },
    }
}

/// Posterior mean of `v` given `r = v + N(0, 1/γ)` under `prior`, by adaptive
/// Gauss–Kronrod integration of the continuous part and exact summation over
/// point masses.
pub fn quadrature_posterior_mean(prior: &OraclePrior, r: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::OracleFailure(format!("bad precision {gamma}")));
    }
    let d = decompose(prior);
    let loglik = move |x: f64| -0.5 * gamma * (x - r) * (x - r);

    // Log of the unnormalized posterior on the continuous part; concave for
    // every supported prior, so golden-section search finds its mode.
    let mut log_ref = f64::NEG_INFINITY;
    let mut window = None;
    if let Some(logp) = d.continuous.as_ref() {
        let ell = |x: f64| logp(x) + loglik(x);
        let span = 50.0 * gamma.sqrt().recip() + (r.abs() + d.kink.unwrap_or(0.0).abs()) * 2.0 + 1.0;
        let mode = golden_max(&ell, r - span, r + span);
        let half = 40.0 / (gamma + d.curvature).sqrt();
        log_ref = ell(mode);
        window = Some((mode - half, mode + half));
    }
    for &(a, w) in &d.atoms {
        log_ref = log_ref.max(w.ln() + loglik(a));
    }

    let mut num = 0.0;
    let mut den = 0.0;
    for &(a, w) in &d.atoms {
        let weight = (w.ln() + loglik(a) - log_ref).exp();
        num += a * weight;
        den += weight;
    }
    if let (Some(logp), Some((lo, hi))) = (d.continuous.as_ref(), window) {
        let dens = |x: f64| (logp(x) + loglik(x) - log_ref).exp();
        let mut cuts = vec![lo, hi];
        if let Some(k) = d.kink {
            if k > lo && k < hi {
                cuts.push(k);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in cuts.windows(2) {
            den += adaptive_gk(&dens, pair[0], pair[1], 1e-14, 0)?;
            num += adaptive_gk(&|x| x * dens(x), pair[0], pair[1], 1e-14 * (1.0 + r.abs()), 0)?;
        }
    }
    if !(den > 0.0) || !num.is_finite() {
        return Err(Error::OracleFailure(format!("degenerate posterior at r={r}, gamma={gamma}")));
    }
    Ok(num / den)
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for k in 0..7 {
        let dx = h * GK_NODES[k];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WEIGHTS[k] * s;
        if k % 2 == 1 {
            gauss += G_WEIGHTS[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (val, err) = gk15(f, a, b);
    if err <= tol.max(1e-13 * val.abs()) {
        return Ok(val);
    }
    if depth >= 60 {
        return Err(Error::OracleFailure(format!(
            "quadrature did not converge on [{a}, {b}] (error estimate {err:e})"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive_gk(f, a, m, tol, depth + 1)? + adaptive_gk(f, m, b, tol, depth + 1)?)
}

/// Conditional moments of `(x, w)` given `y = A x + w`.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    pub x_mean: DVector<f64>,
    pub w_mean: DVector<f64>,
    pub x_var_avg: f64,
    pub w_var_avg: f64,
}

/// Conditions the joint Gaussian `x ~ N(x_prior, I/γx)`, `w ~ N(w_prior, I/γw)`
/// on the exact linear observation `y = A x + w` using dense formulas.
pub fn joint_gaussian_posterior(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    x_prior: &DVector<f64>,
    gamma_x: f64,
    w_prior: &DVector<f64>,
    gamma_w: f64,
) -> Result<JointPosterior> {
    let (m, n) = a.shape();
    if m * n > 10_000 {
        return Err(Error::OracleFailure(format!("instance {m}x{n} too large for the dense oracle")));
    }
    // z = [x; w], y = B z with B = [A I].
    let mut bmat = DMatrix::zeros(m, n + m);
    bmat.view_mut((0, 0), (m, n)).copy_from(a);
    bmat.view_mut((0, n), (m, m)).fill_with_identity();
    let mut sigma_diag = DVector::zeros(n + m);
    sigma_diag.rows_mut(0, n).fill(1.0 / gamma_x);
    sigma_diag.rows_mut(n, m).fill(1.0 / gamma_w);
    let mut mu = DVector::zeros(n + m);
    mu.rows_mut(0, n).copy_from(x_prior);
    mu.rows_mut(n, m).copy_from(w_prior);

    // Σ Bᵀ
    let mut sbt = bmat.transpose();
    for (i, mut row) in sbt.row_iter_mut().enumerate() {
        row *= sigma_diag[i];
    }
    let s = &bmat * &sbt;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::OracleFailure("innovation covariance is not positive definite".into()))?;
    let innovation = y - &bmat * &mu;
    let mean = &mu + &sbt * chol.solve(&innovation);
    // diag(Σ − ΣBᵀ S⁻¹ BΣ)
    let solved = chol.solve(&sbt.transpose());
    let mut var = DVector::zeros(n + m);
    for i in 0..n + m {
        let reduction: f64 = sbt.row(i).iter().zip(solved.column(i).iter()).map(|(p, q)| p * q).sum();
        var[i] = sigma_diag[i] - reduction;
    }
    Ok(JointPosterior {
        x_mean: mean.rows(0, n).into_owned(),
        w_mean: mean.rows(n, m).into_owned(),
        x_var_avg: var.rows(0, n).sum() / n as f64,
        w_var_avg: var.rows(n, m).sum() / m as f64,
    })
}

/// Direct dense evaluation of the two LMMSE formulas with explicit
/// inverses, including `Q = (A Aᵀ)⁻¹`.
pub fn dense_lmmse(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    x_ext: &DVector<f64>,
    gamma_x: f64,
    w_ext: &DVector<f64>,
    gamma_w: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (m, n) = a.shape();
    let fail = || Error::OracleFailure("singular matrix in dense LMMSE".into());
    let ata = a.transpose() * a;
    let lhs_x = DMatrix::identity(n, n) * gamma_x + ata * gamma_w;
    let rhs_x = x_ext * gamma_x + a.transpose() * (y - w_ext) * gamma_w;
    let x = lhs_x.lu().solve(&rhs_x).ok_or_else(fail)?;
    let q = (a * a.transpose()).try_inverse().ok_or_else(fail)?;
    let lhs_w = DMatrix::identity(m, m) * gamma_w + &q * gamma_x;
    let rhs_w = w_ext * gamma_w + &q * (y - a * x_ext) * gamma_x;
    let w = lhs_w.lu().solve(&rhs_w).ok_or_else(fail)?;
    Ok((x, w))
}
