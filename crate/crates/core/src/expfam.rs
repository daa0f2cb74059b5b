//! Natural exponential-family noise channels.
//!
//! Each family is described by its log-partition function `G`, with
//! `P(x | θ) = h(x) exp(xθ − G(θ))`. The mean map is `g = G'` and the
//! variance is `G''`. The Fenchel conjugate `F` of `G` lives on the
//! mean-parameter side and pairs with `G` through Bregman divergences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINOMIAL_TRIALS: u32 = 10;

/// Distance kept from the boundary θ = 0 of the Exponential domain.
pub const EXPONENTIAL_EDGE: f64 = 1e-6;

fn default_sigma() -> f64 {
    1.0
}

fn default_trials() -> u32 {
    DEFAULT_BINOMIAL_TRIALS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Gaussian {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Bernoulli,
    Binomial {
        #[serde(rename = "N", default = "default_trials")]
        trials: u32,
    },
    Poisson,
    Exponential,
}

/// Certified lower bound `G''(u) ≥ floor · e^{−eta |u|}` on the whole domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBound {
    pub floor: f64,
    pub eta: f64,
}

impl CurvatureBound {
    pub fn at(&self, u: f64) -> f64 {
        self.floor * (-self.eta * u.abs()).exp()
    }
}

/// Open interval of admissible natural parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lower: f64,
    pub upper: f64,
}

impl Domain {
    pub fn contains(&self, theta: f64) -> bool {
        theta > self.lower && theta < self.upper
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{−x})`, stable for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

impl Family {
    pub fn gaussian(sigma: f64) -> Self {
        Family::Gaussian { sigma }
    }

    pub fn binomial(trials: u32) -> Self {
        Family::Binomial { trials }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Binomial { .. } => "binomial",
            Family::Poisson => "poisson",
            Family::Exponential => "exponential",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidInput(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            Family::Binomial { trials: 0 } => {
                Err(Error::InvalidInput("binomial N must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Family::Exponential => Domain {
                lower: f64::NEG_INFINITY,
                upper: 0.0,
            },
            _ => Domain {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            },
        }
    }

    pub fn curvature_bound(&self) -> CurvatureBound {
        match *self {
            Family::Gaussian { sigma } => CurvatureBound {
                floor: sigma * sigma,
                eta: 0.0,
            },
            Family::Bernoulli => CurvatureBound {
                floor: 0.25,
                eta: 2.0,
            },
            Family::Binomial { trials } => CurvatureBound {
                floor: 0.25 * trials as f64,
                eta: 2.0,
            },
            Family::Poisson => CurvatureBound {
                floor: 1.0,
                eta: 1.0,
            },
            // 1/u² ≥ e^{−η|u|} for all u < 0 iff η ≥ max_x 2 ln(x)/x = 2/e.
            Family::Exponential => CurvatureBound {
                floor: 1.0,
                eta: 2.0 / std::f64::consts::E,
            },
        }
    }

    pub fn eta(&self) -> f64 {
        self.curvature_bound().eta
    }

    /// Whether `X − g(θ)` is sub-Gaussian for every admissible θ.
    pub fn is_sub_gaussian(&self) -> bool {
        !matches!(self, Family::Poisson | Family::Exponential)
    }

    fn check(&self, theta: f64) -> Result<()> {
        if theta.is_finite() && self.domain().contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain {
                family: self.name(),
                theta,
            })
        }
    }

    /// Log-partition function `G(θ)`.
    pub fn log_partition(&self, theta: f64) -> Result<f64> {
        self.check(theta)?;
        Ok(self.log_partition_unchecked(theta))
    }

    pub(crate) fn log_partition_unchecked(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } => 0.5 * sigma * sigma * theta * theta,
            Family::Bernoulli => softplus(theta),
            Family::Binomial { trials } => trials as f64 * softplus(theta),
            Family::Poisson => theta.exp(),
            Family::Exponential => -(-theta).ln(),
        }
    }

    /// Mean map `g(θ) = G'(θ)`.
    pub fn mean_map(&self, theta: f64) -> Result<f64> {
        self.check(theta)?;
        Ok(self.mean_map_unchecked(theta))
    }

    pub(crate) fn mean_map_unchecked(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } => sigma * sigma * theta,
            Family::Bernoulli => logistic(theta),
            Family::Binomial { trials } => trials as f64 * logistic(theta),
            Family::Poisson => theta.exp(),
            Family::Exponential => -1.0 / theta,
        }
    }

    /// Curvature `G''(θ)`, the variance of the channel at θ.
    pub fn curvature(&self, theta: f64) -> Result<f64> {
        self.check(theta)?;
        Ok(self.curvature_unchecked(theta))
    }

    pub(crate) fn curvature_unchecked(&self, theta: f64) -> f64 {
        match *self {
            Family::Gaussian { sigma } => sigma * sigma,
            Family::Bernoulli => {
                let p = logistic(theta);
                p * (1.0 - p)
            }
            Family::Binomial { trials } => {
                let p = logistic(theta);
                trials as f64 * p * (1.0 - p)
            }
            Family::Poisson => theta.exp(),
            Family::Exponential => 1.0 / (theta * theta),
        }
    }

    /// Largest curvature over the closed interval `[lo, hi]` (inside the domain).
    ///
    /// Every family's curvature is either constant, monotone, or unimodal
    /// with its peak at 0, so the maximum sits at an endpoint or at 0.
    pub fn max_curvature_on(&self, lo: f64, hi: f64) -> Result<f64> {
        self.check(lo)?;
        self.check(hi)?;
        let mut best = self
            .curvature_unchecked(lo)
            .max(self.curvature_unchecked(hi));
        if lo < 0.0 && hi > 0.0 && self.domain().contains(0.0) {
            best = best.max(self.curvature_unchecked(0.0));
        }
        Ok(best)
    }

    /// One draw from `P(· | θ)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<f64> {
        self.check(theta)?;
        let mean = self.mean_map_unchecked(theta);
        let x = match *self {
            Family::Gaussian { sigma } => Normal::new(mean, sigma)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(rng),
            Family::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Binomial { trials } => Binomial::new(trials as u64, logistic(theta))
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(rng) as f64,
            Family::Poisson => {
                if mean <= 0.0 {
                    0.0
                } else {
                    Poisson::new(mean)
                        .map_err(|e| Error::InvalidInput(e.to_string()))?
                        .sample(rng)
                }
            }
            Family::Exponential => Exp::new(-theta)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(rng),
        };
        Ok(x)
    }

    /// Seeded convenience wrapper around [`Family::sample`].
    pub fn sample_seeded(&self, theta: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(theta, &mut rng)
    }

    /// Bregman divergence of `G`: `G(a) − G(b) − g(b)(a − b)`.
    pub fn bregman_g(&self, a: f64, b: f64) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.bregman_g_unchecked(a, b))
    }

    pub(crate) fn bregman_g_unchecked(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let d = a - b;
        let value = match *self {
            Family::Gaussian { sigma } => 0.5 * sigma * sigma * d * d,
            Family::Bernoulli => softplus(a) - softplus(b) - logistic(b) * d,
            Family::Binomial { trials } => {
                trials as f64 * (softplus(a) - softplus(b) - logistic(b) * d)
            }
            Family::Poisson => b.exp() * (d.exp_m1() - d),
            Family::Exponential => {
                let t = a / b - 1.0;
                t - t.ln_1p()
            }
        };
        value.max(0.0)
    }

    fn check_support(&self, x: f64) -> Result<()> {
        let ok = x.is_finite()
            && match *self {
                Family::Gaussian { .. } => true,
                Family::Bernoulli => (0.0..=1.0).contains(&x),
                Family::Binomial { trials } => (0.0..=trials as f64).contains(&x),
                Family::Poisson => x >= 0.0,
                Family::Exponential => x > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Support {
                family: self.name(),
                x,
            })
        }
    }

    /// Fenchel conjugate `F(x) = sup_θ xθ − G(θ)` on the closure of the mean space.
    pub fn conjugate(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(match *self {
            Family::Gaussian { sigma } => x * x / (2.0 * sigma * sigma),
            Family::Bernoulli => xlogx(x) + xlogx(1.0 - x),
            Family::Binomial { trials } => {
                let n = trials as f64;
                xlogx(x) + xlogx(n - x) - xlogx(n)
            }
            Family::Poisson => xlogx(x) - x,
            Family::Exponential => -1.0 - x.ln(),
        })
    }

    /// Inverse of the mean map; `F'(y) = g⁻¹(y)`. Requires `y` in the open mean space.
    pub fn inverse_mean(&self, y: f64) -> Result<f64> {
        let interior = match *self {
            Family::Gaussian { .. } => y.is_finite(),
            Family::Bernoulli => y > 0.0 && y < 1.0,
            Family::Binomial { trials } => y > 0.0 && y < trials as f64,
            Family::Poisson | Family::Exponential => y > 0.0 && y.is_finite(),
        };
        if !interior {
            return Err(Error::Support {
                family: self.name(),
                x: y,
            });
        }
        Ok(match *self {
            Family::Gaussian { sigma } => y / (sigma * sigma),
            Family::Bernoulli => (y / (1.0 - y)).ln(),
            Family::Binomial { trials } => (y / (trials as f64 - y)).ln(),
            Family::Poisson => y.ln(),
            Family::Exponential => -1.0 / y,
        })
    }

    /// Bregman divergence of the conjugate, `F(x) − F(y) − F'(y)(x − y)`.
    pub fn bregman_f(&self, x: f64, y: f64) -> Result<f64> {
        let fx = self.conjugate(x)?;
        let fy = self.conjugate(y)?;
        let slope = self.inverse_mean(y)?;
        Ok(fx - fy - slope * (x - y))
    }

    /// `log h(x)`, the base measure.
    pub fn log_base_measure(&self, x: f64) -> Result<f64> {
        self.check_support(x)?;
        Ok(match *self {
            Family::Gaussian { sigma } => {
                -x * x / (2.0 * sigma * sigma)
                    - 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
            }
            Family::Bernoulli | Family::Exponential => 0.0,
            Family::Binomial { trials } => {
                if x.fract() != 0.0 {
                    return Err(Error::Support {
                        family: self.name(),
                        x,
                    });
                }
                let k = x as u64;
                ln_factorial(trials as u64) - ln_factorial(k) - ln_factorial(trials as u64 - k)
            }
            Family::Poisson => {
                if x.fract() != 0.0 {
                    return Err(Error::Support {
                        family: self.name(),
                        x,
                    });
                }
                -ln_factorial(x as u64)
            }
        })
    }

    /// `−log P(x | θ)`.
    pub fn neg_log_likelihood(&self, x: f64, theta: f64) -> Result<f64> {
        let g = self.log_partition(theta)?;
        Ok(-self.log_base_measure(x)? - x * theta + g)
    }

    /// Largest pairwise spread of `−log P(x|θ) − B_F(x, g(θ))` over `thetas`.
    ///
    /// The difference is a θ-independent function of `x`, so the spread
    /// should vanish up to rounding.
    pub fn neg_log_likelihood_offset_check(&self, x: f64, thetas: &[f64]) -> Result<f64> {
        if thetas.is_empty() {
            return Err(Error::InvalidInput("no natural parameters given".into()));
        }
        let offsets = thetas
            .iter()
            .map(|&t| {
                let nll = self.neg_log_likelihood(x, t)?;
                let bf = self.bregman_f(x, self.mean_map(t)?)?;
                Ok(nll - bf)
            })
            .collect::<Result<Vec<f64>>>()?;
        let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(hi - lo)
    }
}
