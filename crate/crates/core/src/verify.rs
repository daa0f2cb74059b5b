//! Empirical checks of the deterministic inequalities behind the error bound:
//! cone membership, the Bregman upper bound, restricted strong convexity and
//! the concentration of the sampled quadratic form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, quantile, sorted_finite};
use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::linalg::{self, Mat};
use crate::regularizers::{subspace_compat, LowRankModel, Regularizer};
use crate::sampling::{self, derive_seed, ObservationSet};
use crate::solver::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    pub c0: f64,
    pub beta: f64,
    pub trials: usize,
    pub tolerance: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            c0: 4.0,
            beta: 1.0,
            trials: 100,
            tolerance: 1e-6,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 10 {
            return Err(Error::InvalidInput(format!("need at least 10 trials, got {}", self.trials)));
        }
        if !(self.tolerance > 0.0) || !(self.c0 > 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidInput("c0, beta and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// How Ω is obtained per trial.
#[derive(Debug, Clone)]
pub enum OmegaSpec {
    /// Fresh uniform sample of the given size in every trial.
    Uniform(usize),
    Fixed(ObservationSet),
}

impl OmegaSpec {
    pub fn size(&self) -> usize {
        match self {
            OmegaSpec::Uniform(k) => *k,
            OmegaSpec::Fixed(o) => o.len(),
        }
    }

    fn draw(&self, m: usize, n: usize, seed: u64) -> Result<ObservationSet> {
        match self {
            OmegaSpec::Uniform(k) => sampling::sample_omega(m, n, *k, seed),
            OmegaSpec::Fixed(o) => {
                if o.shape() != (m, n) {
                    return Err(Error::DimensionMismatch {
                        expected: (m, n),
                        got: o.shape(),
                    });
                }
                Ok(o.clone())
            }
        }
    }
}

const ZERO_PART: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeCheck {
    pub ratio: f64,
    pub pass: bool,
}

/// `R(Δ_M̄⊥) / R(Δ_M̄)` against the bound 3.
pub fn check_cone(
    delta_hat: &Mat,
    model: &LowRankModel,
    reg: &Regularizer,
    tolerance: f64,
) -> Result<ConeCheck> {
    let inside = reg.evaluate(&model.project_model_space(delta_hat)?)?;
    let outside = reg.evaluate(&model.project_complement(delta_hat)?)?;
    // Model-space parts at rounding level count as zero.
    let ratio = if outside == 0.0 && inside == 0.0 {
        0.0
    } else if inside <= ZERO_PART * (inside + outside) {
        f64::INFINITY
    } else {
        outside / inside
    };
    Ok(ConeCheck {
        ratio,
        pass: ratio <= 3.0 + tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BregmanCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `(mn/|Ω|) Σ_Ω B_G(Θ̂_ij, Θ*_ij)` against `(3λΨ/2)‖Θ̂ − Θ*‖_F`.
pub fn check_bregman_bound(
    problem: &Problem,
    theta_hat: &Mat,
    theta_star: &Mat,
    model: &LowRankModel,
    tolerance: f64,
) -> Result<BregmanCheck> {
    linalg::ensure_shape(theta_hat, problem.shape())?;
    linalg::ensure_shape(theta_star, problem.shape())?;
    let lhs = sampled_bregman(&problem.family, problem.omega(), theta_hat, theta_star)?;
    let psi = subspace_compat(model, &problem.reg)?.psi_max;
    let rhs = 1.5 * problem.lambda * psi * (theta_hat - theta_star).norm();
    Ok(BregmanCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + tolerance),
    })
}

/// `(mn/|Ω|) Σ_Ω B_G(A_ij, B_ij)`, duplicates counted per instance.
pub fn sampled_bregman(family: &Family, omega: &ObservationSet, a: &Mat, b: &Mat) -> Result<f64> {
    let (m, n) = omega.shape();
    let mut total = 0.0;
    for &(i, j) in omega.indices() {
        total += family.bregman_g(a[(i, j)], b[(i, j)])?;
    }
    Ok((m * n) as f64 / omega.len() as f64 * total)
}

/// Spikiness cap `(1/(c₀Ψ)) √(|Ω| / (n ln n))` of the test set.
pub fn spikiness_cap(psi: f64, c0: f64, omega_size: usize, n: usize) -> f64 {
    let nf = n as f64;
    (omega_size as f64 / (nf * nf.ln())).sqrt() / (c0 * psi)
}

const TEST_SET_ATTEMPTS: usize = 200;
const CLIP_ROUNDS: usize = 200;
const CONE_MARGIN: f64 = 0.1;

/// Draws a unit-Frobenius `Δ` in the cone `R(Δ_M̄⊥) ≤ 3R(Δ_M̄)` with `α_sp(Δ) ≤ cap`.
pub fn sample_test_set<R: Rng + ?Sized>(
    model: &LowRankModel,
    reg: &Regularizer,
    cap: f64,
    rng: &mut R,
) -> Result<Mat> {
    if !(cap >= 1.0) {
        return Err(Error::Infeasible(format!(
            "spikiness cap {cap} is below 1, so the test set is empty"
        )));
    }
    let (m, n) = model.shape();
    let limit = cap / ((m * n) as f64).sqrt();
    for _ in 0..TEST_SET_ATTEMPTS {
        let inside = model.project_model_space(&linalg::gaussian_matrix(m, n, rng))?;
        let outside = model.project_complement(&linalg::gaussian_matrix(m, n, rng))?;
        let r_in = reg.evaluate(&inside)?;
        let r_out = reg.evaluate(&outside)?;
        let target = rng.gen::<f64>() * (3.0 - CONE_MARGIN);
        let mut d = if r_out > 0.0 {
            inside + outside * (target * r_in / r_out)
        } else {
            inside
        };
        for _ in 0..CLIP_ROUNDS {
            d /= d.norm();
            if linalg::max_abs(&d) <= limit {
                break;
            }
            d = d.map(|v| v.clamp(-limit, limit));
        }
        d /= d.norm();
        if calibration::spikiness(&d)? <= cap * (1.0 + 1e-9)
            && check_cone(&d, model, reg, 0.0)?.pass
        {
            return Ok(d);
        }
    }
    Err(Error::Infeasible(format!(
        "no cone member with spikiness ≤ {cap} after {TEST_SET_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RscReport {
    pub mu_empirical: f64,
    pub ratios: Vec<f64>,
    pub violations: usize,
    pub floor: f64,
    pub kappa: f64,
    pub spikiness_cap: f64,
}

/// Monte-Carlo curvature of the sampled Bregman loss over the test set.
///
/// The floor is `½ · c · e^{−2η α*/√(mn)} · (1 − (64/c₀)√(|Ω|κ²/(n ln n)))`, where
/// `c e^{−η|u|}` is the family's curvature lower bound.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rsc(
    model: &LowRankModel,
    family: &Family,
    reg: &Regularizer,
    theta_star: &Mat,
    alpha_star: f64,
    omega: &OmegaSpec,
    vconfig: &VerificationConfig,
    seed: u64,
) -> Result<RscReport> {
    vconfig.validate()?;
    let (m, n) = model.shape();
    linalg::ensure_shape(theta_star, (m, n))?;
    let psi = subspace_compat(model, reg)?.psi_max;
    let size = omega.size();
    let cap = spikiness_cap(psi, vconfig.c0, size, n);
    let kappa = calibration::estimate_kappa_r(
        reg,
        m,
        n,
        size,
        vconfig.trials.max(calibration::MIN_KAPPA_TRIALS),
        derive_seed(seed, &[u64::MAX]),
    )?
    .mean;
    let bound = family.curvature_bound();
    let nf = n as f64;
    let radius = alpha_star / ((m * n) as f64).sqrt();
    let floor = 0.5
        * bound.floor
        * (-2.0 * bound.eta * radius).exp()
        * (1.0 - 64.0 / vconfig.c0 * (size as f64 * kappa * kappa / (nf * nf.ln())).sqrt())
        * (1.0 - vconfig.tolerance);

    let mut ratios = Vec::with_capacity(vconfig.trials);
    for t in 0..vconfig.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64, 0]));
        let delta = sample_test_set(model, reg, cap, &mut rng)?;
        let obs = omega.draw(m, n, derive_seed(seed, &[t as u64, 1]))?;
        let shifted = theta_star + &delta;
        ratios.push(sampled_bregman(family, &obs, &shifted, theta_star)? / delta.norm_squared());
    }
    Ok(RscReport {
        mu_empirical: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        violations: ratios.iter().filter(|r| **r < floor).count(),
        ratios,
        floor,
        kappa,
        spikiness_cap: cap,
    })
}

/// `|(mn/|Ω|) Σ_Ω Δ_ij² − 1|` for a unit-Frobenius `Δ`.
pub fn lemma4_deviation(delta: &Mat, omega: &ObservationSet) -> Result<f64> {
    linalg::ensure_shape(delta, omega.shape())?;
    let fro = delta.norm();
    if (fro - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("Δ must have unit Frobenius norm, got {fro}")));
    }
    let (m, n) = omega.shape();
    let sum: f64 = omega.indices().iter().map(|&(i, j)| delta[(i, j)].powi(2)).sum();
    Ok(((m * n) as f64 / omega.len() as f64 * sum - 1.0).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma4Report {
    pub deviations: Vec<f64>,
    /// First bound term `(16R(Δ)/(c₀Ψ)) √(|Ω|κ²/(n ln n))` per trial.
    pub leading_terms: Vec<f64>,
    /// Smallest `k_β ≥ 0` making `s ≤ leading + k_β R(Δ)/(c₀²Ψ)` hold in every trial.
    pub k_beta: f64,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
    pub kappa: f64,
    pub spikiness_cap: f64,
}

/// Distribution of the sampled quadratic-form deviation over the test set.
pub fn lemma4_statistic(
    model: &LowRankModel,
    reg: &Regularizer,
    vconfig: &VerificationConfig,
    omega: &OmegaSpec,
    seed: u64,
) -> Result<Lemma4Report> {
    vconfig.validate()?;
    let (m, n) = model.shape();
    let psi = subspace_compat(model, reg)?.psi_max;
    let size = omega.size();
    let cap = spikiness_cap(psi, vconfig.c0, size, n);
    let kappa = calibration::estimate_kappa_r(
        reg,
        m,
        n,
        size,
        vconfig.trials.max(calibration::MIN_KAPPA_TRIALS),
        derive_seed(seed, &[u64::MAX]),
    )?
    .mean;
    let nf = n as f64;
    let root = (size as f64 * kappa * kappa / (nf * nf.ln())).sqrt();
    let mut deviations = Vec::with_capacity(vconfig.trials);
    let mut leading_terms = Vec::with_capacity(vconfig.trials);
    let mut k_beta = 0.0_f64;
    for t in 0..vconfig.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64, 0]));
        let delta = sample_test_set(model, reg, cap, &mut rng)?;
        let obs = omega.draw(m, n, derive_seed(seed, &[t as u64, 1]))?;
        let s = lemma4_deviation(&delta, &obs)?;
        let r = reg.evaluate(&delta)?;
        let lead = 16.0 * r / (vconfig.c0 * psi) * root;
        let unit = r / (vconfig.c0 * vconfig.c0 * psi);
        if unit > 0.0 {
            k_beta = k_beta.max((s - lead) / unit);
        }
        deviations.push(s);
        leading_terms.push(lead);
    }
    let sorted = sorted_finite(&deviations);
    Ok(Lemma4Report {
        median: quantile(&sorted, 0.5),
        q90: quantile(&sorted, 0.9),
        q99: quantile(&sorted, 0.99),
        deviations,
        leading_terms,
        k_beta,
        kappa,
        spikiness_cap: cap,
    })
}

/// `(√(mn)/|Ω|) ‖P_Ω(X − g(Θ*))‖₂`.
pub fn spectral_statistic(omega: &ObservationSet, theta_star: &Mat, family: &Family) -> Result<f64> {
    let residual = sampling::residual_p_omega(omega, theta_star, family)?;
    let (m, n) = omega.shape();
    if residual.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    Ok(((m * n) as f64).sqrt() / omega.len() as f64 * linalg::spectral_norm(&residual)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub statistics: Vec<f64>,
    pub q99: f64,
    pub b: f64,
    /// `b √(n ln n / |Ω|)`.
    pub reference: f64,
    /// `q99 / reference`, the smallest constant covering the 99th percentile.
    pub fitted_c: f64,
}

/// Empirical tail of the scaled noise spectral norm for a sub-Gaussian family.
pub fn spectral_concentration_smoke(
    family: &Family,
    theta_star: &Mat,
    omega_size: usize,
    trials: usize,
    seed: u64,
) -> Result<SpectralReport> {
    if !family.is_sub_gaussian() {
        return Err(Error::Unsupported(format!(
            "{} is not sub-Gaussian",
            family.name()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let (m, n) = theta_star.shape();
    let mut statistics = Vec::with_capacity(trials);
    for t in 0..trials {
        let omega = sampling::sample_omega(m, n, omega_size, derive_seed(seed, &[t as u64, 0]))?;
        let obs = sampling::observe(
            &omega,
            theta_star,
            family,
            derive_seed(seed, &[t as u64, 1]),
            sampling::DuplicateMode::Independent,
        )?;
        statistics.push(spectral_statistic(&obs, theta_star, family)?);
    }
    let b = calibration::estimate_b(family, linalg::max_abs(theta_star))?.b;
    let nf = n as f64;
    let reference = b * (nf * nf.ln() / omega_size as f64).sqrt();
    let q99 = quantile(&sorted_finite(&statistics), 0.99);
    Ok(SpectralReport {
        fitted_c: q99 / reference,
        statistics,
        q99,
        b,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverOptions;

    fn model(n: usize, r: usize, seed: u64) -> LowRankModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LowRankModel::from_bases(
            &linalg::gaussian_matrix(n, r, &mut rng),
            &linalg::gaussian_matrix(n, r, &mut rng),
        )
        .unwrap()
    }

    #[test]
    fn config_invariants() {
        assert!(VerificationConfig::default().validate().is_ok());
        let few = VerificationConfig {
            trials: 9,
            ..Default::default()
        };
        assert!(few.validate().is_err());
        let json: VerificationConfig = serde_json::from_str(r#"{"c0": 0.5}"#).unwrap();
        assert_eq!(json.c0, 0.5);
        assert_eq!(json.trials, 100);
    }

    #[test]
    fn cone_examples() {
        let md = model(8, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = linalg::gaussian_matrix(8, 8, &mut rng);
        let inside = md.project_model_space(&g).unwrap();
        let c = check_cone(&inside, &md, &Regularizer::Nuclear, 1e-3).unwrap();
        assert!(c.ratio < 1e-12 && c.pass);
        let outside = md.project_complement(&g).unwrap();
        let c = check_cone(&outside, &md, &Regularizer::Nuclear, 1e-3).unwrap();
        assert!(c.ratio.is_infinite() && !c.pass);
        assert!(check_cone(&Mat::zeros(8, 8), &md, &Regularizer::Nuclear, 1e-3).unwrap().pass);
    }

    #[test]
    fn bregman_bound_trivial_cases() {
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = linalg::gaussian_matrix(n, 1, &mut rng) * linalg::gaussian_matrix(1, n, &mut rng) * 0.1;
        let md = LowRankModel::from_matrix(&theta, 1).unwrap();
        let omega = sampling::sample_omega(n, n, 20, 1).unwrap();
        let obs = sampling::observe(&omega, &theta, &Family::Bernoulli, 2, sampling::DuplicateMode::Independent)
            .unwrap();
        let p = Problem::new(Family::Bernoulli, Regularizer::Nuclear, obs, 0.3, 6.0, SolverOptions::default())
            .unwrap();
        let c = check_bregman_bound(&p, &theta, &theta, &md, 1e-6).unwrap();
        assert_eq!((c.lhs, c.rhs, c.pass), (0.0, 0.0, true));

        // Noiseless Gaussian, full Ω: the oracle λ is 0 and the solver returns Θ*.
        let full = ObservationSet::full(n, n).unwrap();
        let trip: Vec<_> = full.indices().iter().map(|&(i, j)| (i, j, theta[(i, j)])).collect();
        let obs = ObservationSet::from_triplets(n, n, &trip).unwrap();
        let g = Family::gaussian(1.0);
        let lambda = calibration::lambda_from_oracle(&obs, &theta, &g, &Regularizer::Nuclear).unwrap();
        assert_eq!(lambda, 0.0);
        let p = Problem::new(g, Regularizer::Nuclear, obs, lambda, 6.0, SolverOptions::default()).unwrap();
        let res = crate::solver::solve(&p).unwrap();
        let c = check_bregman_bound(&p, &res.theta_hat, &theta, &md, 1e-6).unwrap();
        assert!(c.lhs < 1e-20 && c.rhs == 0.0);
    }

    #[test]
    fn test_set_members_satisfy_constraints() {
        let md = model(20, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cap in [1.5, 2.5, 4.0] {
            for _ in 0..20 {
                let d = sample_test_set(&md, &Regularizer::Nuclear, cap, &mut rng).unwrap();
                assert!((d.norm() - 1.0).abs() < 1e-12);
                assert!(calibration::spikiness(&d).unwrap() <= cap * (1.0 + 1e-9));
                assert!(check_cone(&d, &md, &Regularizer::Nuclear, 0.0).unwrap().pass);
            }
        }
        assert!(matches!(
            sample_test_set(&md, &Regularizer::Nuclear, 0.9, &mut rng),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn rsc_gaussian_full_omega_is_one_half() {
        let n = 12;
        let md = model(n, 2, 6);
        let vc = VerificationConfig {
            c0: 0.1,
            trials: 10,
            ..Default::default()
        };
        let full = OmegaSpec::Fixed(ObservationSet::full(n, n).unwrap());
        let rep = estimate_rsc(&md, &Family::gaussian(1.0), &Regularizer::Nuclear, &Mat::zeros(n, n), 1.0, &full, &vc, 1)
            .unwrap();
        for r in &rep.ratios {
            assert!((r - 0.5).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn rsc_is_positive_under_moderate_sampling() {
        let n = 50;
        let nf = n as f64;
        let md = model(n, 2, 7);
        let vc = VerificationConfig {
            c0: 0.05,
            trials: 30,
            ..Default::default()
        };
        let size = (4.0 * nf * nf.ln()).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = linalg::gaussian_matrix(n, 2, &mut rng) * linalg::gaussian_matrix(2, n, &mut rng) * 0.05;
        let rep = estimate_rsc(&md, &Family::Bernoulli, &Regularizer::Nuclear, &theta, nf, &OmegaSpec::Uniform(size), &vc, 2)
            .unwrap();
        assert!(rep.mu_empirical > 0.02, "{}", rep.mu_empirical);
    }

    #[test]
    fn off_support_delta_has_zero_curvature() {
        let n = 4;
        let omega = ObservationSet::from_indices(n, n, vec![(0, 0), (1, 1)]).unwrap();
        let mut delta = Mat::zeros(n, n);
        delta[(2, 3)] = 1.0;
        let b = sampled_bregman(&Family::gaussian(1.0), &omega, &delta, &Mat::zeros(n, n)).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn lemma4_examples() {
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = linalg::gaussian_matrix(n, n, &mut rng);
        d /= d.norm();
        let full = ObservationSet::full(n, n).unwrap();
        assert!(lemma4_deviation(&d, &full).unwrap() < 1e-14);
        assert!(lemma4_deviation(&(&d * 2.0), &full).is_err());

        let md = model(n, 1, 10);
        let vc = VerificationConfig {
            c0: 0.1,
            trials: 10,
            ..Default::default()
        };
        let rep = lemma4_statistic(&md, &Regularizer::Nuclear, &vc, &OmegaSpec::Fixed(full), 3).unwrap();
        assert!(rep.deviations.iter().all(|s| *s < 1e-12));
        assert_eq!(rep.k_beta, 0.0);
    }

    #[test]
    fn lemma4_median_shrinks_with_more_samples() {
        let n = 30;
        let md = model(n, 2, 11);
        let vc = VerificationConfig {
            c0: 0.05,
            trials: 40,
            ..Default::default()
        };
        let nf = n as f64;
        let mut last = f64::INFINITY;
        for mult in [2.0, 4.0, 8.0] {
            let size = (mult * nf * nf.ln()).round() as usize;
            let rep = lemma4_statistic(&md, &Regularizer::Nuclear, &vc, &OmegaSpec::Uniform(size), 4).unwrap();
            assert!(rep.median < last, "{} vs {last}", rep.median);
            last = rep.median;
        }
    }

    #[test]
    fn spectral_smoke_examples() {
        let n = 20;
        let theta = Mat::zeros(n, n);
        let omega = sampling::sample_omega(n, n, 100, 1).unwrap();
        let trip: Vec<_> = omega.indices().iter().map(|&(i, j)| (i, j, 0.0)).collect();
        let obs = ObservationSet::from_triplets(n, n, &trip).unwrap();
        assert_eq!(spectral_statistic(&obs, &theta, &Family::gaussian(1.0)).unwrap(), 0.0);

        let a = spectral_concentration_smoke(&Family::gaussian(1.0), &theta, 300, 50, 5).unwrap();
        let b = spectral_concentration_smoke(&Family::gaussian(2.0), &theta, 300, 50, 5).unwrap();
        assert!((b.q99 / a.q99 - 2.0).abs() < 0.05 * 2.0);
        assert!(spectral_concentration_smoke(&Family::Poisson, &theta, 300, 50, 5).is_err());
    }

    #[test]
    fn spectral_constant_is_stable_across_sizes() {
        let fit = |n: usize| {
            let nf = n as f64;
            let size = (3.0 * nf * nf.ln()).round() as usize;
            spectral_concentration_smoke(&Family::gaussian(1.0), &Mat::zeros(n, n), size, 40, 6)
                .unwrap()
                .fitted_c
        };
        let (a, b) = (fit(50), fit(100));
        assert!((b / a - 1.0).abs() <= 0.5, "{a} vs {b}");
    }
}
