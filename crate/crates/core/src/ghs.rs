//! Graphical-horseshoe Gibbs update of a state precision matrix.
//!
//! Off-diagonal entries carry `N(0, lambda2[j,k] * tau2)` priors with
//! half-Cauchy local and global scales, each written as an inverse-gamma
//! mixture with auxiliaries `nu` (local) and `xi_tau` (global). The global
//! scale has a half-Cauchy prior with scale `tau0`:
//!
//! ```text
//! tau2 | xi_tau ~ IG(1/2, 1/xi_tau)      xi_tau ~ IG(1/2, 1/tau0^2)
//! ```
//!
//! The precision itself is updated one column at a time. For column `j`,
//! with `Omega11` the matrix without row/column `j` and `S` the scatter:
//!
//! ```text
//! omega12 ~ N(-C s12, C),   C = (s22 * Omega11^-1 + D^-1)^-1,   D = diag(lambda2 * tau2)
//! gamma   ~ Gamma(n/2 + 1, rate = s22/2)
//! omega22 = gamma + omega12' Omega11^-1 omega12
//! ```
//!
//! which keeps `Omega` positive definite by construction. A positive
//! `diag_prior_rate` adds an exponential prior with rate `diag_prior_rate/2`
//! to every diagonal entry (it enters as `s22 + rate`); zero gives the flat
//! diagonal prior.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::dist::{sample_gamma, sample_inverse_gamma, sample_mvn_canonical, RngStream};
use crate::error::{Error, Result};

/// Precision matrix of one state together with its shrinkage variables.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionState {
    pub omega: DMatrix<f64>,
    /// Squared local scales (off-diagonal entries used; diagonal held at 1).
    pub lambda2: DMatrix<f64>,
    /// Local auxiliaries (off-diagonal entries used; diagonal held at 1).
    pub nu: DMatrix<f64>,
    pub tau2: f64,
    pub xi_tau: f64,
    pub tau0: f64,
    pub diag_prior_rate: f64,
}

impl PrecisionState {
    /// Start at `omega` with unit local scales and `tau2 = tau0^2`.
    pub fn new(omega: DMatrix<f64>, tau0: f64, diag_prior_rate: f64) -> Self {
        let r = omega.nrows();
        PrecisionState {
            omega,
            lambda2: DMatrix::from_element(r, r, 1.0),
            nu: DMatrix::from_element(r, r, 1.0),
            tau2: tau0 * tau0,
            xi_tau: 1.0,
            tau0,
            diag_prior_rate,
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// `sum_{j<k} omega_jk^2 / (2 lambda2_jk)`.
    fn shrinkage_quadratic(&self) -> f64 {
        let r = self.dim();
        let mut q = 0.0;
        for k in 1..r {
            for j in 0..k {
                q += self.omega[(j, k)].powi(2) / (2.0 * self.lambda2[(j, k)]);
            }
        }
        q
    }
}

/// Sufficient statistics of the observations assigned to one state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateScatter {
    /// `sum y y^T` over assigned observations.
    pub scatter: DMatrix<f64>,
    pub n: usize,
}

impl StateScatter {
    pub fn empty(r: usize) -> Self {
        StateScatter {
            scatter: DMatrix::zeros(r, r),
            n: 0,
        }
    }

    /// Scatter of the rows of `series` listed in `rows`.
    pub fn from_rows(series: &DMatrix<f64>, rows: &[usize]) -> Self {
        let r = series.ncols();
        if rows.is_empty() {
            return StateScatter::empty(r);
        }
        let y = DMatrix::from_fn(rows.len(), r, |i, j| series[(rows[i], j)]);
        StateScatter {
            scatter: y.tr_mul(&y),
            n: rows.len(),
        }
    }

    pub fn add(&mut self, other: &StateScatter) {
        self.scatter += &other.scatter;
        self.n += other.n;
    }
}

/// Scatter of every `(subject, time)` observation currently assigned to `state`.
pub fn accumulate_scatter(dataset: &Dataset, sequences: &[Vec<usize>], state: usize) -> StateScatter {
    let mut acc = StateScatter::empty(dataset.n_regions());
    for (subj, seq) in dataset.subjects().iter().zip(sequences) {
        let rows: Vec<usize> = (0..seq.len()).filter(|&t| seq[t] == state).collect();
        acc.add(&StateScatter::from_rows(&subj.series, &rows));
    }
    acc
}

fn inverse_spd(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| {
        Error::numerical(context, "precision matrix lost positive definiteness")
    })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let r = m.nrows();
    for k in 1..r {
        for j in 0..k {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
}

/// One column sweep over the precision and local scales.
///
/// The global scale is left alone; [`ghs_update`] follows the sweep with
/// [`update_global_shrinkage`].
pub fn ghs_column_sweep(prec: &mut PrecisionState, sc: &StateScatter, rng: &mut RngStream) -> Result<()> {
    let r = prec.dim();
    if r == 1 {
        let rate = 0.5 * (sc.scatter[(0, 0)] + prec.diag_prior_rate);
        if !(rate > 0.0) {
            return Err(Error::numerical("precision column 1", "improper diagonal conditional (no data and flat prior)"));
        }
        prec.omega[(0, 0)] = sample_gamma(rng, 0.5 * sc.n as f64 + 1.0, rate)?;
        return Ok(());
    }
    let mut sigma = inverse_spd(&prec.omega, "precision sweep start")?;
    let m = r - 1;
    let mut idx = Vec::with_capacity(m);
    for j in 0..r {
        let context = format!("precision column {}", j + 1);
        idx.clear();
        idx.extend((0..r).filter(|&k| k != j));

        let s22 = sc.scatter[(j, j)] + prec.diag_prior_rate;
        if !(s22 > 0.0) {
            return Err(Error::numerical(context, "improper diagonal conditional (no data and flat prior)"));
        }
        let sig22 = sigma[(j, j)];
        let omega11_inv = DMatrix::from_fn(m, m, |a, b| {
            let (ia, ib) = (idx[a], idx[b]);
            sigma[(ia, ib)] - sigma[(ia, j)] * sigma[(ib, j)] / sig22
        });

        let mut precision = &omega11_inv * s22;
        for (a, &k) in idx.iter().enumerate() {
            precision[(a, a)] += 1.0 / (prec.lambda2[(k, j)] * prec.tau2);
        }
        let linear = DVector::from_fn(m, |a, _| -sc.scatter[(idx[a], j)]);
        let beta = sample_mvn_canonical(rng, &linear, precision)
            .map_err(|e| e.within(&context))?;
        let gamma = sample_gamma(rng, 0.5 * sc.n as f64 + 1.0, 0.5 * s22)
            .map_err(|e| e.within(&context))?;

        let c = &omega11_inv * &beta;
        let quad = beta.dot(&c);
        for (a, &k) in idx.iter().enumerate() {
            prec.omega[(k, j)] = beta[a];
            prec.omega[(j, k)] = beta[a];
        }
        prec.omega[(j, j)] = gamma + quad;

        // refresh the covariance from the block-inverse identity
        for (a, &ka) in idx.iter().enumerate() {
            for (b, &kb) in idx.iter().enumerate() {
                sigma[(ka, kb)] = omega11_inv[(a, b)] + c[a] * c[b] / gamma;
            }
            sigma[(ka, j)] = -c[a] / gamma;
            sigma[(j, ka)] = -c[a] / gamma;
        }
        sigma[(j, j)] = 1.0 / gamma;

        for &k in &idx {
            let w = prec.omega[(k, j)];
            let l2 = sample_inverse_gamma(rng, 1.0, 1.0 / prec.nu[(k, j)] + w * w / (2.0 * prec.tau2))
                .map_err(|e| e.within(&context))?;
            let nu = sample_inverse_gamma(rng, 1.0, 1.0 + 1.0 / l2).map_err(|e| e.within(&context))?;
            prec.lambda2[(k, j)] = l2;
            prec.lambda2[(j, k)] = l2;
            prec.nu[(k, j)] = nu;
            prec.nu[(j, k)] = nu;
        }
    }
    if prec.omega.clone().cholesky().is_none() {
        return Err(Error::numerical("precision sweep end", "precision matrix lost positive definiteness"));
    }
    Ok(())
}

/// Full update of one state: column sweep, then global scale.
pub fn ghs_update(prec: &mut PrecisionState, sc: &StateScatter, rng: &mut RngStream) -> Result<()> {
    ghs_column_sweep(prec, sc, rng)?;
    update_global_shrinkage(prec, rng)
}

/// `tau2 ~ IG((M+1)/2, 1/xi_tau + sum omega^2/(2 lambda2))`, then
/// `xi_tau ~ IG(1, 1/tau0^2 + 1/tau2)`, with `M = R(R-1)/2`.
pub fn update_global_shrinkage(prec: &mut PrecisionState, rng: &mut RngStream) -> Result<()> {
    let r = prec.dim();
    let m = (r * (r - 1) / 2) as f64;
    prec.tau2 = sample_inverse_gamma(rng, 0.5 * (m + 1.0), 1.0 / prec.xi_tau + prec.shrinkage_quadratic())?;
    prec.xi_tau = sample_inverse_gamma(rng, 1.0, global_auxiliary_rate(prec.tau0, prec.tau2))?;
    Ok(())
}

/// Scale of the `xi_tau` conditional: `1/tau0^2 + 1/tau2`.
pub fn global_auxiliary_rate(tau0: f64, tau2: f64) -> f64 {
    1.0 / (tau0 * tau0) + 1.0 / tau2
}

/// Shape of the global-scale conditional for an `r x r` precision.
pub fn global_shape(r: usize) -> f64 {
    0.5 * ((r * (r - 1) / 2) as f64 + 1.0)
}

/// Global-scale update when one `tau2` is shared by several state precisions.
pub fn update_shared_global_shrinkage(precs: &mut [PrecisionState], rng: &mut RngStream) -> Result<()> {
    let Some(first) = precs.first() else {
        return Ok(());
    };
    let r = first.dim();
    let (xi_tau, tau0) = (first.xi_tau, first.tau0);
    let m = (precs.len() * r * (r - 1) / 2) as f64;
    let quad: f64 = precs.iter().map(|p| p.shrinkage_quadratic()).sum();
    let tau2 = sample_inverse_gamma(rng, 0.5 * (m + 1.0), 1.0 / xi_tau + quad)?;
    let xi = sample_inverse_gamma(rng, 1.0, global_auxiliary_rate(tau0, tau2))?;
    for p in precs.iter_mut() {
        p.tau2 = tau2;
        p.xi_tau = xi;
    }
    Ok(())
}

/// Exact draw from the joint prior of a precision and its shrinkage
/// variables, including the positive-definiteness truncation, by rejection.
///
/// Needs a proper diagonal prior (`diag_prior_rate > 0`).
pub fn sample_prior(
    r: usize,
    tau0: f64,
    diag_prior_rate: f64,
    rng: &mut RngStream,
    max_tries: usize,
) -> Result<PrecisionState> {
    if !(diag_prior_rate > 0.0) {
        return Err(Error::config("prior simulation needs a proper diagonal prior"));
    }
    for _ in 0..max_tries {
        let xi_tau = sample_inverse_gamma(rng, 0.5, 1.0 / (tau0 * tau0))?;
        let tau2 = sample_inverse_gamma(rng, 0.5, 1.0 / xi_tau)?;
        let mut p = PrecisionState::new(DMatrix::zeros(r, r), tau0, diag_prior_rate);
        p.tau2 = tau2;
        p.xi_tau = xi_tau;
        for k in 1..r {
            for j in 0..k {
                let nu = sample_inverse_gamma(rng, 0.5, 1.0)?;
                let l2 = sample_inverse_gamma(rng, 0.5, 1.0 / nu)?;
                let w = rng.normal(0.0, l2 * tau2);
                p.nu[(j, k)] = nu;
                p.nu[(k, j)] = nu;
                p.lambda2[(j, k)] = l2;
                p.lambda2[(k, j)] = l2;
                p.omega[(j, k)] = w;
                p.omega[(k, j)] = w;
            }
        }
        for j in 0..r {
            p.omega[(j, j)] = sample_gamma(rng, 1.0, 0.5 * diag_prior_rate)?;
        }
        if p.omega.clone().cholesky().is_some() {
            return Ok(p);
        }
    }
    Err(Error::numerical("prior simulation", format!("no positive definite draw in {max_tries} tries")))
}

/// Edge density of one graph simulated from the shrinkage hierarchy: draw
/// `tau ~ C+(0, tau0)` and `lambda_jk ~ C+(0, 1)`, and select the edge when
/// `1 / (1 + lambda_jk * tau) < 0.5`.
pub fn prior_edge_density(r: usize, tau0: f64, rng: &mut RngStream) -> f64 {
    let half_cauchy = |rng: &mut RngStream| (rng.std_normal() / rng.std_normal()).abs();
    let tau = tau0 * half_cauchy(rng);
    let m = r * (r - 1) / 2;
    let selected = (0..m)
        .filter(|_| {
            let lambda = half_cauchy(rng);
            1.0 / (1.0 + lambda * tau) < 0.5
        })
        .count();
    selected as f64 / m as f64
}
