//! Emission likelihoods, forward-filtering backward-sampling of state paths,
//! and posterior summaries of sampled paths.
//!
//! States are 0-based internally; files and reports use 1-based labels.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist::RngStream;
use crate::error::{Error, Result};

/// Cached Cholesky factor of one state's precision.
#[derive(Clone, Debug)]
pub struct StateEmission {
    /// Lower factor `L` with `Omega = L L^T`.
    factor: DMatrix<f64>,
    log_norm: f64,
}

impl StateEmission {
    pub fn new(omega: &DMatrix<f64>) -> Result<Self> {
        let r = omega.nrows();
        let chol = omega.clone().cholesky().ok_or_else(|| {
            Error::numerical("emission", "precision matrix is not positive definite")
        })?;
        let factor = chol.unpack();
        let log_det: f64 = 2.0 * factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(StateEmission {
            factor,
            log_norm: -0.5 * r as f64 * (2.0 * PI).ln() + 0.5 * log_det,
        })
    }

    pub fn loglik(&self, y: &DVector<f64>) -> f64 {
        let v = self.factor.tr_mul(y);
        self.log_norm - 0.5 * v.norm_squared()
    }

    /// Log-density of every row of a `T x R` series.
    pub fn loglik_rows(&self, series: &DMatrix<f64>) -> DVector<f64> {
        let proj = series * &self.factor;
        DVector::from_fn(series.nrows(), |t, _| {
            self.log_norm - 0.5 * proj.row(t).norm_squared()
        })
    }
}

/// Zero-mean Gaussian log-density parameterized by its precision.
pub fn emission_loglik(y: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    Ok(StateEmission::new(omega)?.loglik(y))
}

/// `T x S` matrix of per-state emission log-likelihoods.
pub fn loglik_matrix(series: &DMatrix<f64>, emissions: &[StateEmission]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(series.nrows(), emissions.len());
    for (s, e) in emissions.iter().enumerate() {
        out.set_column(s, &e.loglik_rows(series));
    }
    out
}

/// Exact joint draw of a state path given emissions and the transition sequence.
///
/// `q_seq[t]` governs the move `t -> t+1`. The forward pass is normalized at
/// every step; the backward pass samples the last state and then each
/// predecessor given its successor.
pub fn forward_backward_sample(
    loglik: &DMatrix<f64>,
    q_seq: &[DMatrix<f64>],
    pi0: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let (t_len, s) = loglik.shape();
    if s == 1 {
        return Ok(vec![0; t_len]);
    }
    if q_seq.len() + 1 != t_len {
        return Err(Error::numerical(
            "forward-backward",
            format!("{} transition matrices for {t_len} time points", q_seq.len()),
        ));
    }
    let mut alpha = DMatrix::zeros(t_len, s);
    let mut emit = vec![0.0; s];
    for t in 0..t_len {
        let max = loglik.row(t).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::numerical(
                "forward-backward",
                format!("impossible emission at time {}", t + 1),
            ));
        }
        for k in 0..s {
            emit[k] = (loglik[(t, k)] - max).exp();
        }
        let mut total = 0.0;
        for k in 0..s {
            let prior = if t == 0 {
                pi0[k]
            } else {
                let q = &q_seq[t - 1];
                (0..s).map(|j| alpha[(t - 1, j)] * q[(j, k)]).sum()
            };
            let a = prior * emit[k];
            alpha[(t, k)] = a;
            total += a;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::numerical(
                "forward-backward",
                format!("impossible emission at time {}: no state reachable", t + 1),
            ));
        }
        for k in 0..s {
            alpha[(t, k)] /= total;
        }
    }
    let mut path = vec![0; t_len];
    let mut w = vec![0.0; s];
    for k in 0..s {
        w[k] = alpha[(t_len - 1, k)];
    }
    path[t_len - 1] = rng.categorical(&w);
    for t in (0..t_len - 1).rev() {
        let next = path[t + 1];
        for k in 0..s {
            w[k] = alpha[(t, k)] * q_seq[t][(k, next)];
        }
        path[t] = rng.categorical(&w);
    }
    Ok(path)
}

/// Posterior summary of one subject's sampled paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateSummary {
    /// Pointwise posterior mode (0-based; ties go to the lowest index).
    pub map_states: Vec<usize>,
    /// Fraction of (draw, time) pairs spent in each state.
    pub occupancy: Vec<f64>,
    /// `change_point_prob[t]` = P(state at t+1 differs from state at t).
    pub change_point_prob: Vec<f64>,
    /// Indices `t + 1` whose change probability exceeds the threshold.
    pub flagged_change_points: Vec<usize>,
    /// Per-time posterior state probabilities, `T x S`.
    pub state_prob: Vec<Vec<f64>>,
}

/// Summarize one subject's stored paths.
pub fn summarize_states<T: Copy + Into<usize>>(
    draws: &[&[T]],
    n_states: usize,
    threshold: f64,
) -> Result<StateSummary> {
    let first = draws
        .first()
        .ok_or_else(|| Error::data("no samples stored"))?;
    let t_len = first.len();
    let n = draws.len() as f64;
    let mut counts = vec![vec![0usize; n_states]; t_len];
    let mut changes = vec![0usize; t_len.saturating_sub(1)];
    for d in draws {
        if d.len() != t_len {
            return Err(Error::data("stored paths have different lengths"));
        }
        for (t, &s) in d.iter().enumerate() {
            let s: usize = s.into();
            counts[t][s] += 1;
            if t + 1 < t_len && d[t + 1].into() != s {
                changes[t] += 1;
            }
        }
    }
    let map_states = counts
        .iter()
        .map(|c| {
            let mut best = 0;
            for k in 1..n_states {
                if c[k] > c[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut occupancy = vec![0.0; n_states];
    for c in &counts {
        for k in 0..n_states {
            occupancy[k] += c[k] as f64;
        }
    }
    let total: f64 = occupancy.iter().sum();
    occupancy.iter_mut().for_each(|o| *o /= total);
    let change_point_prob: Vec<f64> = changes.iter().map(|&c| c as f64 / n).collect();
    let flagged_change_points = change_point_prob
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > threshold)
        .map(|(t, _)| t + 1)
        .collect();
    let state_prob = counts
        .iter()
        .map(|c| c.iter().map(|&k| k as f64 / n).collect())
        .collect();
    Ok(StateSummary {
        map_states,
        occupancy,
        change_point_prob,
        flagged_change_points,
        state_prob,
    })
}
