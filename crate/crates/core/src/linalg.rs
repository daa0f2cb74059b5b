//! Dense matrix helpers shared by the regularizers and the solver.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITERS: usize = 20_000;

/// Thin SVD with singular values sorted in decreasing order.
pub struct Svd {
    pub u: Mat,
    pub singular_values: DVector<f64>,
    pub v_t: Mat,
}

pub fn svd(m: &Mat) -> Result<Svd> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            u: Mat::zeros(r, 0),
            singular_values: DVector::zeros(0),
            v_t: Mat::zeros(0, c),
        });
    }
    let mut s = nalgebra::SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::Svd(r, c))?;
    s.sort_by_singular_values();
    Ok(Svd {
        u: s.u.ok_or(Error::Svd(r, c))?,
        singular_values: s.singular_values,
        v_t: s.v_t.ok_or(Error::Svd(r, c))?,
    })
}

pub fn singular_values(m: &Mat) -> Result<DVector<f64>> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut s = nalgebra::SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::Svd(r, c))?
        .singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Rebuilds `U diag(w) Vᵀ` keeping only the leading `k` components.
pub fn reconstruct(svd: &Svd, weights: &[f64]) -> Mat {
    let k = weights.len();
    let mut left = svd.u.columns(0, k).into_owned();
    for (j, w) in weights.iter().enumerate() {
        left.column_mut(j).scale_mut(*w);
    }
    left * svd.v_t.rows(0, k)
}

pub fn ensure_finite(m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn ensure_shape(m: &Mat, shape: (usize, usize)) -> Result<()> {
    if m.shape() == shape {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: shape,
            got: m.shape(),
        })
    }
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 10_000;

/// Largest singular value by power iteration on `AᵀA`.
///
/// The start vector is a fixed pseudo-random direction so results are
/// reproducible for a given matrix.
pub fn spectral_norm(a: &Mat) -> Result<f64> {
    spectral_norm_with(a, POWER_TOL, POWER_MAX_ITERS)
}

pub fn spectral_norm_with(a: &Mat, tol: f64, max_iters: usize) -> Result<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 || a.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    ensure_finite(a)?;
    // Iterate on the smaller Gram side.
    let work = if n <= m { a.clone() } else { a.transpose() };
    let dim = work.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut v = DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..max_iters {
        let u = &work * &v;
        let sigma_new = u.norm();
        let mut w = work.tr_mul(&u);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(sigma_new);
        }
        w /= wn;
        v = w;
        if (sigma_new - sigma).abs() <= tol * sigma_new {
            // One more Rayleigh step with the updated vector.
            return Ok((&work * &v).norm().max(sigma_new));
        }
        sigma = sigma_new;
    }
    Err(Error::PowerIteration {
        iterations: max_iters,
    })
}

/// Uniformly distributed orthonormal `rows x cols` frame (QR of a Gaussian matrix).
pub fn random_orthonormal<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let g = gaussian_matrix(rows, cols, rng);
    orthonormalize(&g)
}

pub fn gaussian_matrix<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Orthonormal basis for the column span of `a` (assumed full column rank).
pub fn orthonormalize(a: &Mat) -> Mat {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix signs so the frame is a deterministic function of `a`.
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.columns(0, a.ncols().min(a.nrows())).into_owned()
}
