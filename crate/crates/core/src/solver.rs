//! Regularized maximum-likelihood estimation under a max-norm box.
//!
//! The estimator minimises
//!
//! ```text
//! (mn/|Ω|) Σ_{(i,j)∈Ω} [G(Θ_ij) − X_ij Θ_ij] + λ R(Θ)   s.t.  ‖Θ‖_max ≤ α*/√(mn)
//! ```
//!
//! by accelerated proximal gradient with backtracking and a monotone
//! restart. The prox of `λR` plus the box indicator is computed with the
//! Dykstra-like proximal splitting between `prox(λR)` and clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{Family, EXPONENTIAL_EDGE};
use crate::linalg::{self, Mat};
use crate::regularizers::Regularizer;
use crate::sampling::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol_obj: f64,
    pub max_iters: usize,
    pub dykstra_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_obj: 1e-9,
            max_iters: 50_000,
            dykstra_iters: 500,
        }
    }
}

const DYKSTRA_TOL: f64 = 1e-10;
const BACKTRACK_GROWTH: f64 = 2.0;
/// Per-iteration relaxation of the curvature estimate so the step can grow back.
const STEP_RELAX: f64 = 0.8;
const MAX_BACKTRACKS: usize = 60;
/// Upper bound on the relative prox-gradient step accepted as stationary.
const STEP_TOL: f64 = 1e-7;

/// Aggregated data of one sampled cell: multiplicity and sum of observed values.
#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    count: f64,
    sum_x: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub family: Family,
    pub reg: Regularizer,
    pub lambda: f64,
    pub alpha_star: f64,
    pub options: SolverOptions,
    omega: ObservationSet,
    cells: Vec<Cell>,
}

impl Problem {
    pub fn new(
        family: Family,
        reg: Regularizer,
        omega: ObservationSet,
        lambda: f64,
        alpha_star: f64,
        options: SolverOptions,
    ) -> Result<Self> {
        family.validate()?;
        reg.validate()?;
        if omega.is_empty() {
            return Err(Error::InvalidInput("|Ω| must be at least 1".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("λ must be non-negative, got {lambda}")));
        }
        if !(alpha_star > 0.0) {
            return Err(Error::InvalidInput(format!("α* must be positive, got {alpha_star}")));
        }
        let (rows, cols) = omega.shape();
        let mut sums = vec![0.0; rows * cols];
        for (i, j, x) in omega.triplets()? {
            sums[i * cols + j] += x;
        }
        let mut cells = Vec::with_capacity(omega.distinct_cells());
        for i in 0..rows {
            for j in 0..cols {
                let c = omega.multiplicity(i, j);
                if c > 0 {
                    cells.push(Cell {
                        i,
                        j,
                        count: c as f64,
                        sum_x: sums[i * cols + j],
                    });
                }
            }
        }
        let problem = Self {
            family,
            reg,
            lambda,
            alpha_star,
            options,
            omega,
            cells,
        };
        let (lo, hi) = problem.box_bounds();
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!(
                "box radius {} leaves no room inside the {} domain",
                problem.radius(),
                family.name()
            )));
        }
        Ok(problem)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.omega.shape()
    }

    pub fn omega(&self) -> &ObservationSet {
        &self.omega
    }

    /// Max-norm radius `α*/√(mn)`.
    pub fn radius(&self) -> f64 {
        let (m, n) = self.shape();
        self.alpha_star / ((m * n) as f64).sqrt()
    }

    /// Entrywise feasible interval; the Exponential box is cut at `−ε` to stay in the domain.
    pub fn box_bounds(&self) -> (f64, f64) {
        let r = self.radius();
        match self.family {
            Family::Exponential => (-r, -EXPONENTIAL_EDGE),
            _ => (-r, r),
        }
    }

    /// `mn / |Ω|`.
    pub fn scale(&self) -> f64 {
        let (m, n) = self.shape();
        (m * n) as f64 / self.omega.len() as f64
    }

    pub fn clip(&self, m: &Mat) -> Mat {
        let (lo, hi) = self.box_bounds();
        m.map(|v| v.clamp(lo, hi))
    }

    fn check_theta(&self, theta: &Mat) -> Result<()> {
        linalg::ensure_shape(theta, self.shape())?;
        linalg::ensure_finite(theta)
    }

    /// `(mn/|Ω|) Σ_Ω [G(Θ_ij) − x_ij Θ_ij]`, each instance counted separately.
    pub fn loss(&self, theta: &Mat) -> Result<f64> {
        self.check_theta(theta)?;
        let mut total = 0.0;
        for c in &self.cells {
            let t = theta[(c.i, c.j)];
            total += c.count * self.family.log_partition(t)? - c.sum_x * t;
        }
        Ok(self.scale() * total)
    }

    /// `(mn/|Ω|) Σ_Ω (g(Θ_ij) − x_ij) e_i e_jᵀ`; zero on unsampled cells.
    pub fn loss_gradient(&self, theta: &Mat) -> Result<Mat> {
        self.check_theta(theta)?;
        let (m, n) = self.shape();
        let scale = self.scale();
        let mut grad = Mat::zeros(m, n);
        for c in &self.cells {
            let t = theta[(c.i, c.j)];
            grad[(c.i, c.j)] = scale * (c.count * self.family.mean_map(t)? - c.sum_x);
        }
        Ok(grad)
    }

    fn loss_and_gradient(&self, theta: &Mat) -> Result<(f64, Mat)> {
        Ok((self.loss(theta)?, self.loss_gradient(theta)?))
    }

    pub fn objective(&self, theta: &Mat) -> Result<f64> {
        let penalty = if self.lambda == 0.0 {
            0.0
        } else {
            self.lambda * self.reg.evaluate(theta)?
        };
        Ok(self.loss(theta)? + penalty)
    }

    /// Global curvature bound `(mn/|Ω|) · max c_ij · max_{box} G''`.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        let (lo, hi) = self.box_bounds();
        Ok(self.scale()
            * self.omega.max_multiplicity() as f64
            * self.family.max_curvature_on(lo, hi)?)
    }

    /// Prox of `τλR + indicator(box)`, evaluated with Dykstra's splitting.
    pub fn composite_prox(&self, m: &Mat, tau: f64) -> Result<Mat> {
        Ok(self.composite_prox_inner(m, tau)?.point)
    }

    fn composite_prox_inner(&self, m: &Mat, tau: f64) -> Result<ProxPoint> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("prox step must be positive, got {tau}")));
        }
        if self.lambda == 0.0 {
            return Ok(ProxPoint {
                point: self.clip(m),
                penalty: Some(0.0),
            });
        }
        let weight = tau * self.lambda;
        let mut x = m.clone();
        let mut p = Mat::zeros(m.nrows(), m.ncols());
        let mut q = Mat::zeros(m.nrows(), m.ncols());
        let mut penalty = None;
        for round in 0..self.options.dykstra_iters.max(1) {
            let (y, reg_y) = self.reg.prox_with_value(&(&x + &p), weight)?;
            p = &x + &p - &y;
            let x_new = self.clip(&(&y + &q));
            q = &y + &q - &x_new;
            let untouched = x_new == y;
            penalty = untouched.then_some(self.lambda * reg_y);
            let change = (&x_new - &x).norm();
            x = x_new;
            // With q = 0 an inactive clip means prox(τλR)(M) already lies in the box.
            if round == 0 && untouched {
                break;
            }
            if round > 0 && change <= DYKSTRA_TOL * x.norm().max(1.0) {
                break;
            }
        }
        Ok(ProxPoint { point: x, penalty })
    }

    fn initial_point(&self) -> Mat {
        let (m, n) = self.shape();
        let (lo, hi) = self.box_bounds();
        let start = match self.family {
            Family::Exponential => 0.5 * (lo + hi),
            _ => 0.0_f64.clamp(lo, hi),
        };
        Mat::from_element(m, n, start)
    }
}

struct ProxPoint {
    point: Mat,
    /// `λR(point)` when it came for free from the prox step.
    penalty: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub theta_hat: Mat,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_map_norm: f64,
    /// Curvature estimate in use when the solver stopped; the step was `1/lipschitz`.
    pub lipschitz: f64,
    pub restarts: usize,
}

impl SolveResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Accelerated proximal gradient for [`Problem`].
pub fn solve(problem: &Problem) -> Result<SolveResult> {
    solve_from(problem, &problem.initial_point())
}

/// Same as [`solve`] from a caller-chosen start (clipped into the box).
pub fn solve_from(problem: &Problem, start: &Mat) -> Result<SolveResult> {
    let opts = problem.options;
    let mut x = problem.clip(start);
    let mut fx_total = problem.objective(&x)?;
    let mut trace = vec![fx_total];
    let lipschitz_cap = problem.lipschitz_bound()?;
    let mut lipschitz = {
        let lo = x.min();
        let hi = x.max();
        let local = problem.scale()
            * problem.omega.max_multiplicity() as f64
            * problem.family.max_curvature_on(lo, hi.max(lo))?;
        local.clamp(f64::MIN_POSITIVE, lipschitz_cap)
    };
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut restarts = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let (fy, grad_y) = match problem.loss_and_gradient(&y) {
            Ok(v) => v,
            Err(Error::Domain { .. }) => {
                // Extrapolated point left the domain: fall back to the last iterate.
                y = x.clone();
                t = 1.0;
                restarts += 1;
                continue;
            }
            Err(e) => return Err(e),
        };

        lipschitz = (lipschitz * STEP_RELAX).max(f64::MIN_POSITIVE);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let step = 1.0 / lipschitz;
            let prox = problem.composite_prox_inner(&(&y - &grad_y * step), step)?;
            let diff = &prox.point - &y;
            let fz = problem.loss(&prox.point)?;
            let model = fy + grad_y.dot(&diff) + 0.5 * lipschitz * diff.norm_squared();
            if fz <= model + 1e-12 * fz.abs().max(1.0) || lipschitz >= lipschitz_cap {
                accepted = Some((prox, fz));
                break;
            }
            lipschitz = (lipschitz * BACKTRACK_GROWTH).min(lipschitz_cap);
        }
        let Some((prox, fz)) = accepted else {
            return Err(Error::Convergence {
                what: "backtracking line search",
                detail: format!("no sufficient decrease after {MAX_BACKTRACKS} halvings"),
            });
        };
        let z = prox.point;
        let step_len = (&z - &y).norm();
        let fz_total = fz
            + match prox.penalty {
                Some(p) => p,
                None => problem.lambda * problem.reg.evaluate(&z)?,
            };

        if fz_total > fx_total {
            // Monotone restart: discard the step and restart momentum from x.
            if y == x {
                // A plain proximal step failed to decrease: rounding floor reached.
                converged = true;
                break;
            }
            y = x.clone();
            t = 1.0;
            restarts += 1;
            continue;
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &z + (&z - &x) * ((t - 1.0) / t_next);
        t = t_next;
        let change = (fx_total - fz_total).abs();
        x = z;
        fx_total = fz_total;
        trace.push(fx_total);
        if change <= opts.tol_obj * fx_total.abs().max(1.0)
            && step_len <= STEP_TOL * x.norm().max(1.0)
        {
            converged = true;
            break;
        }
    }

    let final_grad_map_norm = {
        let grad = problem.loss_gradient(&x)?;
        let step = 1.0 / lipschitz;
        let z = problem.composite_prox(&(&x - grad * step), step)?;
        (&x - z).norm() * lipschitz
    };
    Ok(SolveResult {
        theta_hat: x,
        objective_trace: trace,
        iterations,
        converged,
        final_grad_map_norm,
        lipschitz,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{observe, sample_omega, DuplicateMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn families() -> Vec<Family> {
        vec![
            Family::gaussian(1.0),
            Family::Bernoulli,
            Family::binomial(10),
            Family::Poisson,
            Family::Exponential,
        ]
    }

    fn truth_for(family: &Family, m: usize, n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let base = linalg::gaussian_matrix(m, 2, rng) * linalg::gaussian_matrix(2, n, rng) * 0.3;
        match family {
            Family::Exponential => base.map(|v| -1.0 - v.abs()),
            _ => base,
        }
    }

    fn random_problem(family: Family, reg: Regularizer, lambda: f64, seed: u64) -> (Problem, Mat) {
        let (m, n) = (6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = truth_for(&family, m, n, &mut rng);
        let omega = sample_omega(m, n, 40, seed).unwrap();
        let obs = observe(&omega, &truth, &family, seed + 1, DuplicateMode::Independent).unwrap();
        let alpha = 4.0 * linalg::max_abs(&truth) * ((m * n) as f64).sqrt();
        let p = Problem::new(family, reg, obs, lambda, alpha, SolverOptions::default()).unwrap();
        (p, truth)
    }

    #[test]
    fn loss_examples() {
        let single = |x: f64, family: Family| {
            let obs = ObservationSet::from_triplets(1, 1, &[(0, 0, x)]).unwrap();
            Problem::new(family, Regularizer::Nuclear, obs, 0.0, 10.0, SolverOptions::default())
                .unwrap()
        };
        assert_eq!(single(0.0, Family::gaussian(1.0)).loss(&Mat::zeros(1, 1)).unwrap(), 0.0);
        // G(0) − 1·0 = log 2.
        let l = single(1.0, Family::Bernoulli).loss(&Mat::zeros(1, 1)).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicates_count_per_instance() {
        let obs = ObservationSet::from_triplets(1, 2, &[(0, 0, 1.0), (0, 0, 3.0), (0, 1, 2.0)])
            .unwrap();
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.0,
            10.0,
            SolverOptions::default(),
        )
        .unwrap();
        let theta = Mat::from_row_slice(1, 2, &[0.5, -1.0]);
        let g = Family::gaussian(1.0);
        let direct = (2.0 / 3.0)
            * ((g.log_partition(0.5).unwrap() - 0.5)
                + (g.log_partition(0.5).unwrap() - 1.5)
                + (g.log_partition(-1.0).unwrap() + 2.0));
        assert!((p.loss(&theta).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn full_omega_gaussian_loss_is_quadratic_expansion() {
        let (m, n) = (4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = linalg::gaussian_matrix(m, n, &mut rng);
        let full = ObservationSet::full(m, n).unwrap();
        let obs = observe(&full, &truth, &Family::gaussian(1.0), 6, DuplicateMode::Independent)
            .unwrap();
        let x = Mat::from_fn(m, n, |i, j| {
            obs.triplets().unwrap().find(|t| t.0 == i && t.1 == j).unwrap().2
        });
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.0,
            100.0,
            SolverOptions::default(),
        )
        .unwrap();
        let theta = linalg::gaussian_matrix(m, n, &mut rng);
        let d = &theta - &truth;
        let oracle = 0.5 * d.norm_squared() - (&x - &truth).dot(&d);
        let got = p.loss(&theta).unwrap() - p.loss(&truth).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = linalg::gaussian_matrix(3, 3, &mut rng);
        let trip: Vec<_> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, x[(i, j)]))
            .collect();
        let obs = ObservationSet::from_triplets(3, 3, &trip).unwrap();
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.0,
            100.0,
            SolverOptions::default(),
        )
        .unwrap();
        assert!(p.loss_gradient(&x).unwrap().norm() < 1e-15);

        let obs = ObservationSet::from_triplets(2, 3, &[(0, 0, 1.0)]).unwrap();
        let p = Problem::new(
            Family::Bernoulli,
            Regularizer::Nuclear,
            obs,
            0.0,
            1.0,
            SolverOptions::default(),
        )
        .unwrap();
        let g = p.loss_gradient(&Mat::zeros(2, 3)).unwrap();
        assert!((g[(0, 0)] - (-6.0 * 0.5)).abs() < 1e-15);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (k, family) in families().into_iter().enumerate() {
            let (p, truth) = random_problem(family, Regularizer::Nuclear, 0.0, 50 + k as u64);
            let theta = p.clip(&(&truth * 0.8));
            let g = p.loss_gradient(&theta).unwrap();
            for &(i, j) in p.omega().indices().iter().take(10) {
                let h = 1e-6 * theta[(i, j)].abs().max(1e-2);
                let mut a = theta.clone();
                a[(i, j)] += h;
                let mut b = theta.clone();
                b[(i, j)] -= h;
                let fd = (p.loss(&a).unwrap() - p.loss(&b).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[(i, j)]).abs() <= 1e-6 * g[(i, j)].abs().max(1.0),
                    "{family:?}: {fd} vs {}",
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn loss_is_convex_on_random_feasible_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (k, family) in families().into_iter().enumerate() {
            let (p, _) = random_problem(family, Regularizer::Nuclear, 0.0, 70 + k as u64);
            let (lo, hi) = p.box_bounds();
            for _ in 0..20 {
                let mut pick =
                    || p.clip(&linalg::gaussian_matrix(6, 5, &mut rng).map(|v| lo + (hi - lo) * (0.5 + 0.3 * v.tanh())));
                let a = pick();
                let b = pick();
                let mid = (&a + &b) * 0.5;
                let lhs = p.loss(&mid).unwrap();
                let rhs = 0.5 * p.loss(&a).unwrap() + 0.5 * p.loss(&b).unwrap();
                assert!(lhs <= rhs + 1e-10 * rhs.abs().max(1.0), "{family:?}");
            }
        }
    }

    #[test]
    fn composite_prox_examples() {
        let obs = ObservationSet::from_triplets(1, 1, &[(0, 0, 0.0)]).unwrap();
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.0,
            1.0,
            SolverOptions::default(),
        )
        .unwrap();
        let z = p.composite_prox(&Mat::from_element(1, 1, 5.0), 1.0).unwrap();
        assert_eq!(z[(0, 0)], 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = linalg::gaussian_matrix(4, 4, &mut rng);
        let obs = sample_omega(4, 4, 10, 1).unwrap();
        let obs = observe(&obs, &Mat::zeros(4, 4), &Family::gaussian(1.0), 2, DuplicateMode::Independent)
            .unwrap();
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.7,
            1e9,
            SolverOptions::default(),
        )
        .unwrap();
        let z = p.composite_prox(&m, 0.5).unwrap();
        let exact = Regularizer::Nuclear.prox(&m, 0.35).unwrap();
        assert_eq!(z, exact);
    }

    #[test]
    fn composite_prox_output_is_box_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let obs = sample_omega(5, 5, 10, 1).unwrap();
        let obs = observe(&obs, &Mat::zeros(5, 5), &Family::gaussian(1.0), 2, DuplicateMode::Independent)
            .unwrap();
        let p = Problem::new(
            Family::gaussian(1.0),
            Regularizer::Nuclear,
            obs,
            0.3,
            2.5,
            SolverOptions::default(),
        )
        .unwrap();
        for _ in 0..10 {
            let z = p
                .composite_prox(&(linalg::gaussian_matrix(5, 5, &mut rng) * 3.0), 1.0)
                .unwrap();
            assert!(linalg::max_abs(&z) <= p.radius() + 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_problems() {
        let obs = ObservationSet::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let opts = SolverOptions::default();
        let g = Family::gaussian(1.0);
        assert!(Problem::new(g, Regularizer::Nuclear, obs.clone(), -1.0, 1.0, opts).is_err());
        assert!(Problem::new(g, Regularizer::Nuclear, obs.clone(), 1.0, 0.0, opts).is_err());
        assert!(Problem::new(Family::Exponential, Regularizer::Nuclear, obs.clone(), 1.0, 1e-9, opts)
            .is_err());
        let idx_only = ObservationSet::from_indices(1, 1, vec![(0, 0)]).unwrap();
        assert!(Problem::new(g, Regularizer::Nuclear, idx_only, 1.0, 1.0, opts).is_err());
    }

    #[test]
    fn unconstrained_gaussian_mle_is_the_data() {
        let (m, n) = (5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = linalg::gaussian_matrix(m, n, &mut rng);
        let obs = observe(&ObservationSet::full(m, n).unwrap(), &truth, &Family::gaussian(1.0), 3, DuplicateMode::Independent)
            .unwrap();
        let x = crate::sampling::scatter_values(&obs).unwrap();
        let p = Problem::new(Family::gaussian(1.0), Regularizer::Nuclear, obs, 0.0, 1e6, SolverOptions::default())
            .unwrap();
        let res = solve(&p).unwrap();
        assert!(res.converged);
        assert!((res.theta_hat - x).norm() < 1e-6);
    }

    #[test]
    fn bernoulli_scalar_clamps_at_box() {
        let obs = ObservationSet::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let p = Problem::new(Family::Bernoulli, Regularizer::Nuclear, obs, 0.0, 1.0, SolverOptions::default())
            .unwrap();
        let res = solve(&p).unwrap();
        assert!((res.theta_hat[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solutions_are_feasible_monotone_and_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let regs = [
            Regularizer::Nuclear,
            Regularizer::RowL1Lq { q: 2.0 },
            Regularizer::SparsePlusLowRank {
                lambda1: 0.2,
                lambda2: 1.0,
            },
        ];
        for (k, family) in families().into_iter().enumerate() {
            for (r, reg) in regs.iter().enumerate() {
                let (p, _) = random_problem(family, *reg, 0.5, 200 + (10 * k + r) as u64);
                let res = solve(&p).unwrap();
                assert!(res.converged, "{family:?} {reg:?}");
                let (lo, hi) = p.box_bounds();
                assert!(res
                    .theta_hat
                    .iter()
                    .all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
                assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
                let f = p.objective(&res.theta_hat).unwrap();
                if *reg == Regularizer::Nuclear {
                    for _ in 0..100 {
                        let w = p.clip(&(&res.theta_hat + linalg::gaussian_matrix(6, 5, &mut rng) * 1e-2));
                        let fw = p.objective(&w).unwrap();
                        assert!(f <= fw + 1e-6, "{family:?} {f} {fw} iters {} L {} gmap {}", res.iterations, res.lipschitz, res.final_grad_map_norm);
                    }
                }
                let step = 1.0 / res.lipschitz;
                let fixed = p
                    .composite_prox(&(&res.theta_hat - p.loss_gradient(&res.theta_hat).unwrap() * step), step)
                    .unwrap();
                let gap = (fixed - &res.theta_hat).norm();
                assert!(gap <= 1e-5, "{family:?} {reg:?} gap {gap} iters {} L {} restarts {}", res.iterations, res.lipschitz, res.restarts);
            }
        }
    }

    #[test]
    fn non_convergence_is_reported_not_fatal() {
        let (mut p, _) = random_problem(Family::Poisson, Regularizer::Nuclear, 0.2, 300);
        p.options.max_iters = 2;
        p.options.tol_obj = 0.0;
        let res = solve(&p).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
        assert!(!res.objective_trace.is_empty());
    }
}
