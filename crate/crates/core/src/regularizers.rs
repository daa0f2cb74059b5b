//! Decomposable norm regularizers, their duals and proximal operators.
//!
//! Three norms are supported:
//!
//! * the nuclear norm `‖Θ‖_* = Σ σ_k`,
//! * the row-wise `ℓ1/ℓq` norm `Σ_i ‖Θ^(i)‖_q`,
//! * the infimum convolution `inf { λ₁‖S‖₁,₁ + λ₂‖L‖_* : Θ = S + L }`.
//!
//! [`LowRankModel`] carries the column/row spaces of a rank-`r` target and
//! the projections onto the model superset `M̄` and its complement `M̄⊥`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Nuclear,
    #[serde(rename = "row_l1lq")]
    RowL1Lq { q: f64 },
    #[serde(rename = "sparse_plus_lowrank")]
    SparsePlusLowRank { lambda1: f64, lambda2: f64 },
}

/// Stopping tolerance of the alternating prox for the infimum convolution.
const SPL_PROX_TOL: f64 = 1e-9;
const SPL_PROX_MAX_ITERS: usize = 20_000;
/// Relative duality gap accepted when evaluating the infimum convolution.
const SPL_EVAL_GAP: f64 = 1e-7;
const SPL_EVAL_MAX_ITERS: usize = 5_000;
const SPL_SMOOTHING_STAGES: usize = 14;
const DUAL_POLISH_ROUNDS: usize = 5;

fn lq_norm(row: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        row.fold(0.0, |acc, v| acc.max(v.abs()))
    } else if q == 2.0 {
        row.map(|v| v * v).sum::<f64>().sqrt()
    } else if q == 1.0 {
        row.map(f64::abs).sum()
    } else {
        row.map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn conjugate_exponent(q: f64) -> f64 {
    if q.is_infinite() {
        1.0
    } else if q == 1.0 {
        f64::INFINITY
    } else {
        q / (q - 1.0)
    }
}

pub fn soft_threshold(m: &Mat, tau: f64) -> Mat {
    m.map(|v| v.signum() * (v.abs() - tau).max(0.0))
}

/// Singular-value soft thresholding; also returns `‖Z‖_*` of the result.
pub fn svt(m: &Mat, tau: f64) -> Result<(Mat, f64)> {
    let s = linalg::svd(m)?;
    let shrunk: Vec<f64> = s
        .singular_values
        .iter()
        .map(|sv| sv - tau)
        .take_while(|v| *v > 0.0)
        .collect();
    let nuclear = shrunk.iter().sum();
    Ok((linalg::reconstruct(&s, &shrunk), nuclear))
}

/// Euclidean projection onto the ℓ1 ball of radius `radius`.
fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (k + 1) as f64;
        if *m > candidate {
            shift = candidate;
        } else {
            break;
        }
    }
    v.iter()
        .map(|x| x.signum() * (x.abs() - shift).max(0.0))
        .collect()
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Nuclear => Ok(()),
            Regularizer::RowL1Lq { q } if q > 1.0 => Ok(()),
            Regularizer::RowL1Lq { q } => Err(Error::InvalidInput(format!(
                "row l1/lq norm needs q > 1, got {q}"
            ))),
            Regularizer::SparsePlusLowRank { lambda1, lambda2 }
                if lambda1 > 0.0 && lambda2 > 0.0 =>
            {
                Ok(())
            }
            Regularizer::SparsePlusLowRank { .. } => Err(Error::InvalidInput(
                "sparse-plus-low-rank weights must be positive".into(),
            )),
        }
    }

    /// Norm value `R(M)`.
    pub fn evaluate(&self, m: &Mat) -> Result<f64> {
        linalg::ensure_finite(m)?;
        match *self {
            Regularizer::Nuclear => Ok(linalg::singular_values(m)?.sum()),
            Regularizer::RowL1Lq { q } => Ok(m
                .row_iter()
                .map(|row| lq_norm(row.iter().copied(), q))
                .sum()),
            Regularizer::SparsePlusLowRank { lambda1, lambda2 } => {
                Ok(infimal_convolution(m, lambda1, lambda2)?.value)
            }
        }
    }

    /// Dual norm `R*(M) = sup_{R(Y) ≤ 1} ⟨M, Y⟩`.
    pub fn dual(&self, m: &Mat) -> Result<f64> {
        linalg::ensure_finite(m)?;
        match *self {
            Regularizer::Nuclear => linalg::spectral_norm(m),
            Regularizer::RowL1Lq { q } => {
                let qd = conjugate_exponent(q);
                Ok(m.row_iter()
                    .map(|row| lq_norm(row.iter().copied(), qd))
                    .fold(0.0, f64::max))
            }
            Regularizer::SparsePlusLowRank { lambda1, lambda2 } => {
                Ok((linalg::max_abs(m) / lambda1).max(linalg::spectral_norm(m)? / lambda2))
            }
        }
    }

    /// `argmin_Z ½‖Z − M‖_F² + τ R(Z)`.
    pub fn prox(&self, m: &Mat, tau: f64) -> Result<Mat> {
        Ok(self.prox_with_value(m, tau)?.0)
    }

    /// Proximal point together with `R` evaluated at it.
    pub fn prox_with_value(&self, m: &Mat, tau: f64) -> Result<(Mat, f64)> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("prox step must be positive, got {tau}")));
        }
        linalg::ensure_finite(m)?;
        match *self {
            Regularizer::Nuclear => svt(m, tau),
            Regularizer::RowL1Lq { q } => {
                let (rows, cols) = m.shape();
                let mut out = Mat::zeros(rows, cols);
                for (i, row) in m.row_iter().enumerate() {
                    let v: Vec<f64> = row.iter().copied().collect();
                    let shrunk: Vec<f64> = if q == 2.0 {
                        let norm = lq_norm(v.iter().copied(), 2.0);
                        if norm <= tau {
                            vec![0.0; cols]
                        } else {
                            let scale = 1.0 - tau / norm;
                            v.iter().map(|x| x * scale).collect()
                        }
                    } else if q.is_infinite() {
                        // Moreau: prox of τ‖·‖_∞ is the residual of projecting onto the τ ℓ1-ball.
                        let p = project_l1_ball(&v, tau);
                        v.iter().zip(p).map(|(x, p)| x - p).collect()
                    } else {
                        return Err(Error::Unsupported(format!(
                            "prox of the row l1/lq norm is only available for q = 2 and q = inf, got q = {q}"
                        )));
                    };
                    for (j, val) in shrunk.into_iter().enumerate() {
                        out[(i, j)] = val;
                    }
                }
                let value = self.evaluate(&out)?;
                Ok((out, value))
            }
            Regularizer::SparsePlusLowRank { lambda1, lambda2 } => {
                let split = split_prox(m, tau * lambda1, tau * lambda2)?;
                let value = lambda1 * split.sparse.abs().sum() + lambda2 * split.nuclear;
                Ok((split.sparse + split.low_rank, value))
            }
        }
    }
}

struct Split {
    sparse: Mat,
    low_rank: Mat,
    nuclear: f64,
}

/// Minimises `½‖S + L − M‖² + t₁‖S‖₁ + t₂‖L‖_*`.
///
/// Eliminating `S` leaves a 1-smooth problem in `L`; alternating minimisation is
/// proximal gradient on it, accelerated here with a gradient-based restart.
fn split_prox(m: &Mat, t1: f64, t2: f64) -> Result<Split> {
    let (rows, cols) = m.shape();
    let mut low_rank = Mat::zeros(rows, cols);
    let mut y = low_rank.clone();
    let mut t = 1.0_f64;
    let scale = m.norm().max(1.0);
    for _ in 0..SPL_PROX_MAX_ITERS {
        let (l_new, _) = svt(&(m - soft_threshold(&(m - &y), t1)), t2)?;
        let step = &l_new - &low_rank;
        let change = step.norm();
        if (&y - &l_new).dot(&step) > 0.0 {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &l_new + step * ((t - 1.0) / t_next);
        t = t_next;
        low_rank = l_new;
        if change <= SPL_PROX_TOL * scale {
            let sparse = soft_threshold(&(m - &low_rank), t1);
            let (low_rank, nuclear) = svt(&(m - &sparse), t2)?;
            let sparse = soft_threshold(&(m - &low_rank), t1);
            return Ok(Split {
                sparse,
                low_rank,
                nuclear,
            });
        }
    }
    Err(Error::Convergence {
        what: "sparse-plus-low-rank prox",
        detail: format!("{SPL_PROX_MAX_ITERS} proximal gradient rounds"),
    })
}

/// Value of the infimum convolution with a primal split and a dual certificate.
#[derive(Debug, Clone)]
pub struct InfConvValue {
    pub value: f64,
    pub lower_bound: f64,
    pub sparse: Mat,
    pub low_rank: Mat,
}

/// `inf { λ₁‖S‖₁ + λ₂‖Θ − S‖_* }` by Douglas–Rachford splitting over `S`.
///
/// The dual problem is `sup { ⟨Θ, Y⟩ : ‖Y‖_max ≤ λ₁, ‖Y‖₂ ≤ λ₂ }`; feasible
/// dual points built from the splitting iterates give the lower bound.
pub fn infimal_convolution(theta: &Mat, lambda1: f64, lambda2: f64) -> Result<InfConvValue> {
    let (rows, cols) = theta.shape();
    let l1 = theta.abs().sum();
    if l1 == 0.0 {
        return Ok(InfConvValue {
            value: 0.0,
            lower_bound: 0.0,
            sparse: Mat::zeros(rows, cols),
            low_rank: Mat::zeros(rows, cols),
        });
    }
    let nuc = linalg::singular_values(theta)?.sum();
    let primal = |s: &Mat| -> Result<f64> {
        Ok(lambda1 * s.abs().sum() + lambda2 * linalg::singular_values(&(theta - s))?.sum())
    };
    // ⟨Θ, Y⟩ after shrinking Y into {‖Y‖_∞ ≤ λ₁, ‖Y‖₂ ≤ λ₂}.
    let scaled_dual = |y: &Mat| -> Result<f64> {
        let spec = linalg::singular_values(y)?[0];
        let maxabs = linalg::max_abs(y);
        let mut scale = 1.0_f64;
        if spec > lambda2 {
            scale = scale.min(lambda2 / spec);
        }
        if maxabs > lambda1 {
            scale = scale.min(lambda1 / maxabs);
        }
        Ok(scale * theta.dot(y))
    };
    let dual_value = |y: &Mat| -> Result<f64> {
        let mut best = scaled_dual(y)?;
        let mut cand = y.clone();
        for _ in 0..DUAL_POLISH_ROUNDS {
            let dec = linalg::svd(&cand)?;
            let capped: Vec<f64> = dec.singular_values.iter().map(|s| s.min(lambda2)).collect();
            cand = linalg::reconstruct(&dec, &capped).map(|v| v.clamp(-lambda1, lambda1));
        }
        best = best.max(scaled_dual(&cand)?);
        Ok(best)
    };

    let (mut best_s, mut upper) = if lambda1 * l1 <= lambda2 * nuc {
        (theta.clone(), lambda1 * l1)
    } else {
        (Mat::zeros(rows, cols), lambda2 * nuc)
    };
    let mut lower = dual_value(&theta.map(|v| lambda1 * v.signum()))?.max(0.0);

    let gamma = theta.norm() / (lambda1 * ((rows * cols) as f64).sqrt() + lambda2).max(1e-300);
    let mut z = best_s.clone();
    let check_every = 10;
    for it in 0..SPL_EVAL_MAX_ITERS {
        let x = soft_threshold(&z, gamma * lambda1);
        let w = &x * 2.0 - &z;
        let (lr, _) = svt(&(theta - &w), gamma * lambda2)?;
        let y = theta - &lr;
        let y1 = (&z - &x) / gamma;
        z += &y - &x;
        if it % check_every == 0 {
            let px = primal(&x)?;
            if px < upper {
                upper = px;
                best_s = x.clone();
            }
            lower = lower.max(dual_value(&y1)?);
            // Subgradient from the nuclear side: (W − y)/γ ∈ ∂ of λ₂‖Θ − ·‖_* at y, negated.
            let y2 = (&y - &w) / gamma;
            lower = lower.max(dual_value(&y2)?);
            if upper - lower <= SPL_EVAL_GAP * upper.max(1.0) {
                let low_rank = theta - &best_s;
                return Ok(InfConvValue {
                    value: upper,
                    lower_bound: lower,
                    sparse: best_s,
                    low_rank,
                });
            }
        }
    }
    // Douglas–Rachford can stall on degenerate inputs; fall back to the Moreau
    // envelope with shrinking smoothing, whose residual is an exact dual point.
    let mut mu = gamma;
    for _ in 0..SPL_SMOOTHING_STAGES {
        let split = split_prox(theta, mu * lambda1, mu * lambda2)?;
        let residual = theta - &split.sparse - &split.low_rank;
        for cand in [split.sparse.clone(), theta - &split.low_rank] {
            let pc = primal(&cand)?;
            if pc < upper {
                upper = pc;
                best_s = cand;
            }
        }
        lower = lower.max(dual_value(&(residual / mu))?);
        if upper - lower <= SPL_EVAL_GAP * upper.max(1.0) {
            let low_rank = theta - &best_s;
            return Ok(InfConvValue {
                value: upper,
                lower_bound: lower,
                sparse: best_s,
                low_rank,
            });
        }
        mu *= 0.1;
    }
    Err(Error::Convergence {
        what: "infimum-convolution evaluation",
        detail: format!("duality gap {} after splitting and smoothing", upper - lower),
    })
}

/// Column and row spaces of a rank-`r` target.
#[derive(Debug, Clone)]
pub struct LowRankModel {
    u: Mat,
    v: Mat,
}

impl LowRankModel {
    /// Orthonormalizes the given bases (`m × r` and `n × r`).
    pub fn from_bases(u: &Mat, v: &Mat) -> Result<Self> {
        if u.ncols() != v.ncols() || u.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "basis ranks differ or are zero: {} vs {}",
                u.ncols(),
                v.ncols()
            )));
        }
        if u.ncols() > u.nrows() || v.ncols() > v.nrows() {
            return Err(Error::InvalidInput("rank exceeds matrix dimension".into()));
        }
        Ok(Self {
            u: linalg::orthonormalize(u),
            v: linalg::orthonormalize(v),
        })
    }

    /// Leading `rank` singular subspaces of `theta`.
    pub fn from_matrix(theta: &Mat, rank: usize) -> Result<Self> {
        let (m, n) = theta.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::InvalidInput(format!(
                "rank {rank} not in 1..={}",
                m.min(n)
            )));
        }
        let s = linalg::svd(theta)?;
        Ok(Self {
            u: s.u.columns(0, rank).into_owned(),
            v: s.v_t.rows(0, rank).transpose(),
        })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn u(&self) -> &Mat {
        &self.u
    }

    pub fn v(&self) -> &Mat {
        &self.v
    }

    pub fn projector_u(&self) -> Mat {
        &self.u * self.u.transpose()
    }

    pub fn projector_v(&self) -> Mat {
        &self.v * self.v.transpose()
    }

    /// `X_M̄ = P_U X + X P_V − P_U X P_V`.
    pub fn project_model_space(&self, x: &Mat) -> Result<Mat> {
        linalg::ensure_shape(x, self.shape())?;
        let utx = self.u.tr_mul(x);
        let xv = x * &self.v;
        let utxv = &utx * &self.v;
        Ok(&self.u * utx + xv * self.v.transpose() - &self.u * utxv * self.v.transpose())
    }

    /// `X_M̄⊥ = (I − P_U) X (I − P_V)`.
    pub fn project_complement(&self, x: &Mat) -> Result<Mat> {
        Ok(x - self.project_model_space(x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Compatibility {
    pub psi_max: f64,
    pub psi_min: f64,
    /// True when `psi_max` comes from random search and only bounds the supremum from below.
    pub psi_max_is_lower_bound: bool,
}

pub const COMPAT_SEARCH_TRIALS: usize = 1000;

/// Maximum and minimum subspace compatibility of `reg` with the model superset.
pub fn subspace_compat(model: &LowRankModel, reg: &Regularizer) -> Result<Compatibility> {
    let n = model.shape().1;
    match *reg {
        Regularizer::Nuclear => Ok(Compatibility {
            psi_max: (2.0 * model.rank() as f64).sqrt(),
            psi_min: 1.0,
            psi_max_is_lower_bound: false,
        }),
        _ => {
            let psi_max = search_compat(model, reg, COMPAT_SEARCH_TRIALS, 0xc0ffee)?;
            let psi_min = match *reg {
                // A constant row attains ‖·‖_q / ‖·‖_2 = n^(1/q − 1/2) once q > 2.
                Regularizer::RowL1Lq { q } if q > 2.0 => (n as f64).powf(1.0 / q - 0.5),
                Regularizer::RowL1Lq { .. } => 1.0,
                Regularizer::SparsePlusLowRank { lambda1, lambda2 } => lambda1.min(lambda2),
                Regularizer::Nuclear => unreachable!(),
            };
            Ok(Compatibility {
                psi_max,
                psi_min,
                psi_max_is_lower_bound: true,
            })
        }
    }
}

/// Largest `R(Φ)/‖Φ‖_F` over random members `Φ` of the model superset.
pub fn search_compat(
    model: &LowRankModel,
    reg: &Regularizer,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let (m, n) = model.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    for _ in 0..trials {
        let phi = model.project_model_space(&linalg::gaussian_matrix(m, n, &mut rng))?;
        let fro = phi.norm();
        if fro > 0.0 {
            best = best.max(reg.evaluate(&phi)? / fro);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn all_regs() -> Vec<Regularizer> {
        vec![
            Regularizer::Nuclear,
            Regularizer::RowL1Lq { q: 2.0 },
            Regularizer::RowL1Lq { q: f64::INFINITY },
            Regularizer::RowL1Lq { q: 3.0 },
            Regularizer::SparsePlusLowRank {
                lambda1: 0.3,
                lambda2: 1.0,
            },
        ]
    }

    #[test]
    fn evaluate_examples() {
        let d = dmatrix![3.0, 0.0; 0.0, 1.0];
        assert!((Regularizer::Nuclear.evaluate(&d).unwrap() - 4.0).abs() < 1e-12);
        let r = dmatrix![3.0, 4.0; 0.0, 0.0];
        assert_eq!(Regularizer::RowL1Lq { q: 2.0 }.evaluate(&r).unwrap(), 5.0);
        let u = dmatrix![0.6; 0.8];
        let v = dmatrix![0.0, 1.0, 0.0];
        let uv = &u * &v;
        assert!((Regularizer::Nuclear.evaluate(&uv).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_non_finite() {
        let bad = dmatrix![1.0, f64::NAN];
        for reg in all_regs() {
            assert!(matches!(reg.evaluate(&bad), Err(Error::NonFinite)));
        }
    }

    #[test]
    fn dual_examples() {
        let i2 = Mat::identity(2, 2);
        assert!((Regularizer::Nuclear.dual(&i2).unwrap() - 1.0).abs() < 1e-9);
        let m = dmatrix![3.0, 4.0; 6.0, 8.0];
        assert!((Regularizer::RowL1Lq { q: 2.0 }.dual(&m).unwrap() - 10.0).abs() < 1e-12);
        let d = dmatrix![3.0, 0.0; 0.0, 1.0];
        assert!((Regularizer::Nuclear.dual(&d).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn prox_examples() {
        let d = dmatrix![3.0, 0.0; 0.0, 1.0];
        let z = Regularizer::Nuclear.prox(&d, 2.0).unwrap();
        assert!((z - dmatrix![1.0, 0.0; 0.0, 0.0]).norm() < 1e-12);
        let row = dmatrix![3.0, 4.0];
        let z = Regularizer::RowL1Lq { q: 2.0 }.prox(&row, 5.0).unwrap();
        assert_eq!(z, dmatrix![0.0, 0.0]);
    }

    #[test]
    fn prox_of_general_q_is_unsupported() {
        let m = dmatrix![1.0, 2.0];
        assert!(matches!(
            Regularizer::RowL1Lq { q: 3.0 }.prox(&m, 0.1),
            Err(Error::Unsupported(_))
        ));
        assert!(Regularizer::Nuclear.prox(&m, 0.0).is_err());
    }

    /// Projected-subgradient minimiser of ½‖Z − M‖² + τ‖Z‖_* (strongly convex, step 1/k).
    fn subgradient_nuclear_prox(m: &Mat, tau: f64, iters: usize) -> (Mat, f64) {
        let obj = |z: &Mat| {
            0.5 * (z - m).norm_squared() + tau * linalg::singular_values(z).unwrap().sum()
        };
        let mut z = m.clone();
        let mut best = (z.clone(), obj(&z));
        for k in 1..=iters {
            let s = linalg::svd(&z).unwrap();
            let rank = s
                .singular_values
                .iter()
                .filter(|v| **v > 1e-12)
                .count();
            let sub = linalg::reconstruct(&s, &vec![1.0; rank]);
            let grad = (&z - m) + sub * tau;
            z -= grad / k as f64;
            if k % 50 == 0 || k == iters {
                let f = obj(&z);
                if f < best.1 {
                    best = (z.clone(), f);
                }
            }
        }
        best
    }

    #[test]
    fn nuclear_prox_matches_subgradient_oracle() {
        let mut r = rng(21);
        let m = linalg::gaussian_matrix(5, 5, &mut r);
        let tau = 0.3;
        let z = Regularizer::Nuclear.prox(&m, tau).unwrap();
        let (oracle, _) = subgradient_nuclear_prox(&m, tau, 100_000);
        assert!((z - oracle).norm() < 1e-4);
    }

    #[test]
    fn svt_shrinks_each_singular_value_by_tau() {
        let mut r = rng(22);
        let m = linalg::gaussian_matrix(7, 5, &mut r);
        let tau = 0.8;
        let before = linalg::singular_values(&m).unwrap();
        let after = linalg::singular_values(&Regularizer::Nuclear.prox(&m, tau).unwrap()).unwrap();
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(((b - tau).max(0.0) - a).abs() < 1e-9);
        }
    }

    #[test]
    fn prox_beats_random_perturbations() {
        let mut r = rng(23);
        let regs = [
            Regularizer::Nuclear,
            Regularizer::RowL1Lq { q: 2.0 },
            Regularizer::RowL1Lq { q: f64::INFINITY },
            Regularizer::SparsePlusLowRank {
                lambda1: 0.3,
                lambda2: 1.0,
            },
        ];
        for reg in regs {
            let m = linalg::gaussian_matrix(4, 5, &mut r);
            let tau = 0.4;
            let z = reg.prox(&m, tau).unwrap();
            let obj = |w: &Mat| 0.5 * (w - &m).norm_squared() + tau * reg.evaluate(w).unwrap();
            let fz = obj(&z);
            for k in 0..100 {
                let scale = if k < 50 { 1e-3 } else { 1e-1 };
                let w = &z + linalg::gaussian_matrix(4, 5, &mut r) * scale;
                assert!(fz <= obj(&w) + 1e-9, "{reg:?}");
            }
        }
    }

    #[test]
    fn prox_value_matches_evaluate() {
        let mut r = rng(24);
        for reg in [
            Regularizer::Nuclear,
            Regularizer::RowL1Lq { q: 2.0 },
            Regularizer::SparsePlusLowRank {
                lambda1: 0.2,
                lambda2: 1.0,
            },
        ] {
            let m = linalg::gaussian_matrix(5, 4, &mut r) * 2.0;
            let (z, value) = reg.prox_with_value(&m, 0.5).unwrap();
            assert!((value - reg.evaluate(&z).unwrap()).abs() < 1e-6 * value.max(1.0));
        }
    }

    #[test]
    fn infimal_convolution_is_certified_and_bounded() {
        let mut r = rng(25);
        let theta = linalg::gaussian_matrix(5, 5, &mut r);
        let (l1, l2) = (0.25, 1.0);
        let v = infimal_convolution(&theta, l1, l2).unwrap();
        assert!(v.value - v.lower_bound <= SPL_EVAL_GAP * v.value.max(1.0));
        assert!(v.value <= l1 * theta.abs().sum() + 1e-12);
        assert!(v.value <= l2 * linalg::singular_values(&theta).unwrap().sum() + 1e-12);
        assert!(((&v.sparse + &v.low_rank) - &theta).norm() < 1e-12);
    }

    #[test]
    fn norm_axioms_on_random_triples() {
        let mut r = rng(26);
        for reg in all_regs() {
            for _ in 0..5 {
                let x = linalg::gaussian_matrix(4, 4, &mut r);
                let y = linalg::gaussian_matrix(4, 4, &mut r);
                let rx = reg.evaluate(&x).unwrap();
                let ry = reg.evaluate(&y).unwrap();
                let rxy = reg.evaluate(&(&x + &y)).unwrap();
                assert!(rxy <= rx + ry + 1e-6 * (rx + ry), "{reg:?}");
                let scaled = reg.evaluate(&(&x * -2.5)).unwrap();
                assert!((scaled - 2.5 * rx).abs() <= 1e-6 * rx, "{reg:?}");
            }
        }
    }

    #[test]
    fn holder_inequality_on_random_pairs() {
        let mut r = rng(27);
        for reg in all_regs() {
            for _ in 0..10 {
                let x = linalg::gaussian_matrix(4, 5, &mut r);
                let y = linalg::gaussian_matrix(4, 5, &mut r);
                let bound = reg.evaluate(&x).unwrap() * reg.dual(&y).unwrap();
                assert!(x.dot(&y) <= bound + 1e-9 + 1e-7 * bound, "{reg:?}");
                // Normalised form: ⟨X, Y⟩ ≤ R*(X) whenever R(Y) ≤ 1.
                let yn = &y / reg.evaluate(&y).unwrap();
                assert!(x.dot(&yn) <= reg.dual(&x).unwrap() + 1e-7, "{reg:?}");
            }
        }
    }

    #[test]
    fn models_projectors_are_idempotent_and_symmetric() {
        let mut r = rng(28);
        let u = linalg::gaussian_matrix(6, 2, &mut r);
        let v = linalg::gaussian_matrix(7, 2, &mut r);
        let model = LowRankModel::from_bases(&u, &v).unwrap();
        for p in [model.projector_u(), model.projector_v()] {
            assert!((&p * &p - &p).norm() <= 1e-10);
            assert!((&p - p.transpose()).norm() <= 1e-12);
        }
    }

    #[test]
    fn model_space_projection_examples() {
        let mut r = rng(29);
        let u = linalg::gaussian_matrix(6, 2, &mut r);
        let v = linalg::gaussian_matrix(6, 2, &mut r);
        let model = LowRankModel::from_bases(&u, &v).unwrap();
        let a = linalg::gaussian_matrix(2, 6, &mut r);
        let inside = model.u() * a;
        assert!((model.project_model_space(&inside).unwrap() - &inside).norm() < 1e-12);
        let outside = model
            .project_complement(&linalg::gaussian_matrix(6, 6, &mut r))
            .unwrap();
        assert!(model.project_model_space(&outside).unwrap().norm() < 1e-12);
        let x = linalg::gaussian_matrix(6, 6, &mut r);
        let xm = model.project_model_space(&x).unwrap();
        let xp = model.project_complement(&x).unwrap();
        assert!((&xm + &xp - &x).norm() < 1e-12);
        assert!(xm.dot(&xp).abs() <= 1e-10);
        let again = model.project_model_space(&xm).unwrap();
        assert!((again - &xm).norm() < 1e-12);
        assert!(model.project_complement(&xp).unwrap().relative_eq(&xp, 1e-12, 1e-12));
    }

    #[test]
    fn projection_rejects_wrong_shape() {
        let model = LowRankModel::from_bases(&Mat::identity(3, 1), &Mat::identity(4, 1)).unwrap();
        assert!(matches!(
            model.project_model_space(&Mat::zeros(4, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn model_superset_members_have_rank_at_most_2r() {
        let mut r = rng(30);
        let model = LowRankModel::from_bases(
            &linalg::gaussian_matrix(8, 2, &mut r),
            &linalg::gaussian_matrix(9, 2, &mut r),
        )
        .unwrap();
        for _ in 0..20 {
            let phi = model
                .project_model_space(&linalg::gaussian_matrix(8, 9, &mut r))
                .unwrap();
            let sv = linalg::singular_values(&phi).unwrap();
            let rank = sv.iter().filter(|s| **s > 1e-10 * sv[0]).count();
            assert!(rank <= 4);
        }
    }

    #[test]
    fn nuclear_is_decomposable_over_model_pair() {
        let mut r = rng(31);
        let model = LowRankModel::from_bases(
            &linalg::gaussian_matrix(7, 2, &mut r),
            &linalg::gaussian_matrix(6, 2, &mut r),
        )
        .unwrap();
        for _ in 0..20 {
            // X with row/col spaces inside (U, V); Y inside the complements.
            let x = model.u() * linalg::gaussian_matrix(2, 2, &mut r) * model.v().transpose();
            let y = model
                .project_complement(&linalg::gaussian_matrix(7, 6, &mut r))
                .unwrap();
            let lhs = Regularizer::Nuclear.evaluate(&(&x + &y)).unwrap();
            let rhs = Regularizer::Nuclear.evaluate(&x).unwrap()
                + Regularizer::Nuclear.evaluate(&y).unwrap();
            assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1.0));
        }
    }

    #[test]
    fn subspace_compat_examples() {
        let mut r = rng(32);
        let mk = |rank: usize, r: &mut ChaCha8Rng| {
            LowRankModel::from_bases(
                &linalg::gaussian_matrix(10, rank, r),
                &linalg::gaussian_matrix(10, rank, r),
            )
            .unwrap()
        };
        let c = subspace_compat(&mk(2, &mut r), &Regularizer::Nuclear).unwrap();
        assert_eq!((c.psi_max, c.psi_min), (2.0, 1.0));
        assert!(!c.psi_max_is_lower_bound);

        let m1 = mk(1, &mut r);
        let phi = m1.u() * m1.v().transpose();
        let ratio = Regularizer::Nuclear.evaluate(&phi).unwrap() / phi.norm();
        assert!((ratio - 1.0).abs() < 1e-12 && ratio <= 2f64.sqrt());

        let m3 = mk(3, &mut r);
        let best = search_compat(&m3, &Regularizer::Nuclear, 1000, 7).unwrap();
        assert!(best <= 6f64.sqrt() + 1e-9);
        assert!(best > 1.0);
    }

    #[test]
    fn subspace_compat_search_for_other_norms() {
        let mut r = rng(33);
        let model = LowRankModel::from_bases(
            &linalg::gaussian_matrix(6, 1, &mut r),
            &linalg::gaussian_matrix(6, 1, &mut r),
        )
        .unwrap();
        let c = subspace_compat(&model, &Regularizer::RowL1Lq { q: 2.0 }).unwrap();
        assert!(c.psi_max_is_lower_bound);
        assert_eq!(c.psi_min, 1.0);
        // Σ‖row‖₂ ≤ √m ‖Φ‖_F.
        assert!(c.psi_max >= 1.0 && c.psi_max <= 6f64.sqrt() + 1e-12);
    }

    #[test]
    fn serde_shapes() {
        let r: Regularizer = serde_json::from_str(r#"{"kind":"nuclear"}"#).unwrap();
        assert_eq!(r, Regularizer::Nuclear);
        let r: Regularizer = serde_json::from_str(r#"{"kind":"row_l1lq","q":2}"#).unwrap();
        assert_eq!(r, Regularizer::RowL1Lq { q: 2.0 });
        let r: Regularizer =
            serde_json::from_str(r#"{"kind":"sparse_plus_lowrank","lambda1":0.5,"lambda2":1.5}"#)
                .unwrap();
        assert_eq!(
            r,
            Regularizer::SparsePlusLowRank {
                lambda1: 0.5,
                lambda2: 1.5
            }
        );
    }
}
