//! Measurable calibration quantities: spikiness, λ choices, `b` and `κ_R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{Family, EXPONENTIAL_EDGE};
use crate::linalg::{self, Mat};
use crate::regularizers::Regularizer;
use crate::sampling::{self, derive_seed, ObservationSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub alpha_sp: f64,
    pub lambda_theorem: f64,
    pub lambda_corollary: f64,
    pub kappa_r_estimate: f64,
    pub kappa_r_stderr: f64,
    pub b_estimate: f64,
    /// False when the family is not sub-Gaussian and `b` is only a variance proxy.
    pub b_sub_gaussian: bool,
}

/// `α_sp(M) = √(mn)‖M‖_max / ‖M‖_F`.
pub fn spikiness(m: &Mat) -> Result<f64> {
    linalg::ensure_finite(m)?;
    let fro = m.norm();
    if fro == 0.0 {
        return Err(Error::InvalidInput("spikiness of the zero matrix is undefined".into()));
    }
    let cells = (m.nrows() * m.ncols()) as f64;
    Ok(cells.sqrt() * linalg::max_abs(m) / fro)
}

/// `2 (mn/|Ω|) R*(P_Ω(X − g(Θ*)))`.
pub fn lambda_from_oracle(
    omega: &ObservationSet,
    theta_star: &Mat,
    family: &Family,
    reg: &Regularizer,
) -> Result<f64> {
    let residual = sampling::residual_p_omega(omega, theta_star, family)?;
    let (m, n) = omega.shape();
    let scale = (m * n) as f64 / omega.len() as f64;
    Ok(2.0 * scale * reg.dual(&residual)?)
}

/// `2 c_β √(mn) b √(n ln n / |Ω|)`.
pub fn lambda_corollary(n: usize, m: usize, omega_size: usize, b: f64, c_beta: f64) -> Result<f64> {
    if n == 0 || m == 0 || omega_size == 0 {
        return Err(Error::InvalidInput("dimensions and |Ω| must be positive".into()));
    }
    if !(b >= 0.0) || !(c_beta > 0.0) {
        return Err(Error::InvalidInput(format!("need b ≥ 0 and c_β > 0, got b = {b}, c_β = {c_beta}")));
    }
    let nf = n as f64;
    Ok(2.0 * c_beta * ((m * n) as f64).sqrt() * b * (nf * nf.ln() / omega_size as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub mean: f64,
    pub stderr: f64,
}

pub const MIN_KAPPA_TRIALS: usize = 30;

/// One draw of `(√(mn)/|Ω|) R*(Σ_Ω ε_ij e_i e_jᵀ)` with fresh Ω and Rademacher signs.
pub fn kappa_statistic(reg: &Regularizer, m: usize, n: usize, omega_size: usize, seed: u64) -> Result<f64> {
    let omega = sampling::sample_omega(m, n, omega_size, derive_seed(seed, &[0]))?;
    let mut signs = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut sum = Mat::zeros(m, n);
    for &(i, j) in omega.indices() {
        sum[(i, j)] += if signs.gen::<bool>() { 1.0 } else { -1.0 };
    }
    Ok(((m * n) as f64).sqrt() / omega_size as f64 * reg.dual(&sum)?)
}

/// Monte-Carlo estimate of `κ_R(n, |Ω|)` with its standard error.
pub fn estimate_kappa_r(
    reg: &Regularizer,
    m: usize,
    n: usize,
    omega_size: usize,
    trials: usize,
    seed: u64,
) -> Result<KappaEstimate> {
    if trials < MIN_KAPPA_TRIALS {
        return Err(Error::InvalidInput(format!(
            "κ_R needs at least {MIN_KAPPA_TRIALS} trials, got {trials}"
        )));
    }
    let draws = (0..trials)
        .map(|t| kappa_statistic(reg, m, n, omega_size, derive_seed(seed, &[t as u64])))
        .collect::<Result<Vec<_>>>()?;
    let (mean, var) = mean_and_variance(&draws);
    Ok(KappaEstimate {
        mean,
        stderr: (var / trials as f64).sqrt(),
    })
}

pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Linear-interpolation quantile of an ascending slice (`p` in `[0, 1]`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Ascending copy with NaNs removed.
pub fn sorted_finite(xs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BEstimate {
    pub b: f64,
    pub sub_gaussian: bool,
}

/// `√(max_{|θ| ≤ box} G''(θ))`, restricted to the domain for the Exponential family.
pub fn estimate_b(family: &Family, theta_box: f64) -> Result<BEstimate> {
    family.validate()?;
    if !(theta_box >= 0.0 && theta_box.is_finite()) {
        return Err(Error::InvalidInput(format!("box radius must be finite and ≥ 0, got {theta_box}")));
    }
    let (lo, hi) = match family {
        Family::Exponential => (-theta_box.max(EXPONENTIAL_EDGE), -EXPONENTIAL_EDGE),
        _ => (-theta_box, theta_box),
    };
    Ok(BEstimate {
        b: family.max_curvature_on(lo, hi)?.sqrt(),
        sub_gaussian: family.is_sub_gaussian(),
    })
}

/// Full report for one simulated instance; the box radius is `‖Θ*‖_max`.
pub fn calibrate(
    omega: &ObservationSet,
    theta_star: &Mat,
    family: &Family,
    reg: &Regularizer,
    c_beta: f64,
    kappa_trials: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let (m, n) = omega.shape();
    let b = estimate_b(family, linalg::max_abs(theta_star))?;
    let kappa = estimate_kappa_r(reg, m, n, omega.len(), kappa_trials, seed)?;
    Ok(CalibrationReport {
        alpha_sp: spikiness(theta_star)?,
        lambda_theorem: lambda_from_oracle(omega, theta_star, family, reg)?,
        lambda_corollary: lambda_corollary(n, m, omega.len(), b.b, c_beta)?,
        kappa_r_estimate: kappa.mean,
        kappa_r_stderr: kappa.stderr,
        b_estimate: b.b,
        b_sub_gaussian: b.sub_gaussian,
    })
}
