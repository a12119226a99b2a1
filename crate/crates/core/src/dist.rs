//! Seeded random-variate kernels used by the Gibbs sweep.
//!
//! Every draw goes through an [`RngStream`]: a ChaCha8 generator keyed by a
//! `(seed, stream_id)` pair. Subjects, states and the group-level update each
//! own a stream, so the draw sequence does not depend on how work is
//! scheduled across threads.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Reproducible random stream identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.std_normal()
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }

    /// Categorical draw from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (k, &w) in weights.iter().enumerate() {
            if u < w {
                return k;
            }
            u -= w;
        }
        // u landed on the rounding slack; return the last positive weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Gamma draw with shape and *rate*.
pub fn sample_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::numerical(
            "gamma draw",
            format!("invalid parameters shape={shape}, rate={rate}"),
        ));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical("gamma draw", e.to_string()))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-scale/x)`.
pub fn sample_inverse_gamma(rng: &mut RngStream, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return Err(Error::numerical(
            "inverse-gamma draw",
            format!("invalid parameters shape={shape}, scale={scale}"),
        ));
    }
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::numerical("inverse-gamma draw", e.to_string()))?;
    let x = scale / g.sample(rng);
    // keep strictly positive and finite even at the extremes of f64
    Ok(x.clamp(f64::MIN_POSITIVE, f64::MAX))
}

/// Multivariate normal draw from a mean and a covariance matrix.
pub fn sample_mvn(
    rng: &mut RngStream,
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = mean.len();
    if covariance.nrows() != k || covariance.ncols() != k {
        return Err(Error::numerical(
            "mvn draw",
            format!("covariance is {}x{}, mean has length {k}", covariance.nrows(), covariance.ncols()),
        ));
    }
    let chol = covariance.clone().cholesky().ok_or_else(|| {
        Error::numerical("mvn draw", "covariance matrix is not positive definite")
    })?;
    let z = DVector::from_fn(k, |_, _| rng.std_normal());
    Ok(mean + chol.l() * z)
}

/// Draw from `N(P^{-1} h, P^{-1})` given the precision `P` and the linear term `h`.
///
/// Works off the Cholesky factor of `P`; the covariance is never formed.
pub fn sample_mvn_canonical(
    rng: &mut RngStream,
    linear: &DVector<f64>,
    precision: DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = linear.len();
    let chol = precision.cholesky().ok_or_else(|| {
        Error::numerical("mvn draw", "precision matrix is not positive definite")
    })?;
    let mean = chol.solve(linear);
    let z = DVector::from_fn(k, |_, _| rng.std_normal());
    // L^T x = z  gives  x ~ N(0, P^{-1})
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("mvn draw", "singular Cholesky factor"))?;
    Ok(mean + noise)
}

const PG_TRUNC: f64 = 0.64;

/// Draw from the Polya-Gamma distribution PG(1, c).
///
/// Exact alternating-series sampler (Devroye construction, as refined by
/// Polson, Scott and Windle): proposals come from a mixture of a truncated
/// inverse Gaussian on `(0, 0.64]` and a shifted exponential on the right.
pub fn sample_pg(rng: &mut RngStream, c: f64) -> f64 {
    debug_assert!(c.is_finite());
    let z = 0.5 * c.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let left_mass = pg_exponential_mass(z);
    loop {
        let x = if rng.uniform() < left_mass {
            PG_TRUNC + rng.exp1() / k
        } else {
            truncated_inverse_gaussian(rng, z)
        };
        let mut s = pg_series_term(0, x);
        let y = rng.uniform() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= pg_series_term(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += pg_series_term(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Mean of PG(1, c): `tanh(c/2) / (2c)`, with limit 1/4 at zero.
pub fn pg_mean(c: f64) -> f64 {
    if c.abs() < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

fn pg_series_term(n: u32, x: f64) -> f64 {
    let m = n as f64 + 0.5;
    let kk = m * PI;
    if x > PG_TRUNC {
        kk * (-0.5 * kk * kk * x).exp()
    } else if x > 0.0 {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + kk.ln() - 2.0 * m * m / x).exp()
    } else {
        0.0
    }
}

fn log_normal_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability that the proposal is taken from the exponential (right) piece.
fn pg_exponential_mass(z: f64) -> f64 {
    let t = PG_TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_normal_cdf(b);
    let xa = x0 + z + log_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian with mean `1/z`, unit shape, truncated to `(0, 0.64)`.
fn truncated_inverse_gaussian(rng: &mut RngStream, z: f64) -> f64 {
    let t = PG_TRUNC;
    if z < 1.0 / t {
        // mean beyond the truncation point: inverse-chi-square proposal with
        // exponential tilting accept step
        loop {
            let (mut e1, mut e2) = (rng.exp1(), rng.exp1());
            while e1 * e1 > 2.0 * e2 / t {
                e1 = rng.exp1();
                e2 = rng.exp1();
            }
            let d = 1.0 + e1 * t;
            let x = t / (d * d);
            if rng.uniform() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let y = rng.std_normal();
            let y = y * y;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.uniform() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}
