//! Post-MCMC edge selection from shrinkage factors.
//!
//! For every off-diagonal entry the shrinkage factor
//! `kappa = 1 / (1 + lambda2 * tau2)` lies in (0, 1); values near 1 are
//! evidence that the entry is zero. Entries are selected when their posterior
//! estimate `kappa_hat` falls below a threshold `eta`, and `eta` is chosen as
//! the largest value whose Bayesian false discovery rate
//!
//! ```text
//! BFDR(eta) = sum kappa_hat * I(kappa_hat <= eta) / sum I(kappa_hat <= eta)
//! ```
//!
//! stays below `q_star`.
//!
//! Taken literally, `lambda2 * tau2` is compared with 1, so `kappa` depends on
//! the units of the data: rescaling the series by `c` rescales `omega` by
//! `1/c^2` and moves every `kappa`. The default [`KappaScale::Likelihood`]
//! form measures `lambda2 * tau2` against the sampling variance of the
//! maximum-likelihood estimate of `omega_jk` from the `n` observations
//! assigned to the state,
//!
//! ```text
//! kappa_jk = 1 / (1 + l_jk * lambda2_jk * tau2),   l_jk = n / (omega_jj * omega_kk + omega_jk^2)
//! ```
//!
//! which is the normal-means shrinkage weight on the least-squares estimate
//! and does not depend on the units of the data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Threshold `kappa_hat` at the BFDR-controlling level.
    Bfdr,
    /// Select when the posterior mean of `|omega_jk|` reaches a fixed threshold.
    FixedThreshold,
    /// Select when the central 50% credible interval of `omega_jk` excludes zero.
    Ci50,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bfdr" => Ok(SelectionMode::Bfdr),
            "fixed_threshold" | "fixed-threshold" | "fixed" => Ok(SelectionMode::FixedThreshold),
            "ci50" => Ok(SelectionMode::Ci50),
            other => Err(Error::config(format!("unknown threshold mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaEstimator {
    Median,
    Mean,
}

/// Which shrinkage factor is thresholded; see the module docs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaScale {
    /// `1 / (1 + lambda2 * tau2)`.
    Prior,
    /// `1 / (1 + l * lambda2 * tau2)` with the likelihood precision `l`.
    Likelihood,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelectionConfig {
    pub q_star: f64,
    pub mode: SelectionMode,
    /// `c2 / (1 + c1)` of the absolute-value loss; used in `FixedThreshold` mode.
    pub fixed_threshold: Option<f64>,
    pub kappa_estimator: KappaEstimator,
    pub kappa_scale: KappaScale,
    /// Control the BFDR jointly over all states instead of per state.
    pub pool_states: bool,
}

/// Selected graph of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub kappa_hat: DMatrix<f64>,
    /// `None` when nothing was selected (or the mode has no `eta`).
    pub eta_star: Option<f64>,
    pub adjacency: DMatrix<bool>,
    pub partial_corr: DMatrix<f64>,
    pub selected_partial_corr: DMatrix<f64>,
    /// BFDR of the selected set under `kappa_hat`; 0 for an empty selection.
    pub achieved_bfdr: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Shrinkage factor of one draw.
pub fn kappa(lambda2: f64, tau2: f64) -> f64 {
    1.0 / (1.0 + lambda2 * tau2)
}

/// Inverse asymptotic variance `n / (omega_jj omega_kk + omega_jk^2)` of the
/// maximum-likelihood estimate of every off-diagonal entry from `n` observations.
pub fn likelihood_information(omega: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let r = omega.nrows();
    if (0..r).any(|j| !(omega[(j, j)] > 0.0)) {
        return Err(Error::numerical("likelihood information", "non-positive precision diagonal"));
    }
    let n = n as f64;
    Ok(DMatrix::from_fn(r, r, |j, k| {
        if j == k {
            0.0
        } else {
            n / (omega[(j, j)] * omega[(k, k)] + omega[(j, k)].powi(2))
        }
    }))
}

/// Posterior estimate of every off-diagonal shrinkage factor (diagonal set to 1).
///
/// `information`, when given, holds per-draw multipliers of `lambda2 * tau2`
/// (see [`likelihood_information`]).
pub fn compute_kappa(
    lambda2_draws: &[DMatrix<f64>],
    tau2_draws: &[f64],
    information: Option<&[DMatrix<f64>]>,
    estimator: KappaEstimator,
) -> Result<DMatrix<f64>> {
    let first = lambda2_draws
        .first()
        .ok_or_else(|| Error::data("no samples stored"))?;
    if lambda2_draws.len() != tau2_draws.len() || information.is_some_and(|i| i.len() != tau2_draws.len()) {
        return Err(Error::data("draw counts differ"));
    }
    let r = first.nrows();
    let mut out = DMatrix::from_element(r, r, 1.0);
    let mut buf = Vec::with_capacity(tau2_draws.len());
    for k in 1..r {
        for j in 0..k {
            buf.clear();
            match information {
                None => buf.extend(lambda2_draws.iter().zip(tau2_draws).map(|(l, &t)| kappa(l[(j, k)], t))),
                Some(info) => buf.extend(
                    lambda2_draws
                        .iter()
                        .zip(tau2_draws)
                        .zip(info)
                        .map(|((l, &t), i)| kappa(i[(j, k)] * l[(j, k)], t)),
                ),
            }
            let v = match estimator {
                KappaEstimator::Median => median(&buf),
                KappaEstimator::Mean => buf.iter().sum::<f64>() / buf.len() as f64,
            };
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    Ok(out)
}

/// Outcome of BFDR thresholding over a flat list of shrinkage estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BfdrOutcome {
    pub eta_star: Option<f64>,
    pub selected: Vec<bool>,
    pub achieved_bfdr: f64,
}

/// Largest threshold among the distinct `kappa_hat` values with `BFDR < q_star`.
pub fn bfdr_select(kappa_hat: &[f64], q_star: f64) -> BfdrOutcome {
    let mut sorted = kappa_hat.to_vec();
    sorted.sort_by(f64::total_cmp);
    // the running mean of an ascending sequence never decreases, so scan
    // group by group and stop at the first violation
    let mut best: Option<(f64, f64)> = None;
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let eta = sorted[i];
        while i < sorted.len() && sorted[i] == eta {
            sum += sorted[i];
            i += 1;
        }
        let bfdr = sum / i as f64;
        if bfdr < q_star {
            best = Some((eta, bfdr));
        } else {
            break;
        }
    }
    match best {
        Some((eta, bfdr)) => BfdrOutcome {
            eta_star: Some(eta),
            selected: kappa_hat.iter().map(|&k| k <= eta).collect(),
            achieved_bfdr: bfdr,
        },
        None => BfdrOutcome {
            eta_star: None,
            selected: vec![false; kappa_hat.len()],
            achieved_bfdr: 0.0,
        },
    }
}

/// `-omega_jk / sqrt(omega_jj omega_kk)` with a unit diagonal.
pub fn partial_correlations(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = omega.nrows();
    if let Some(j) = (0..r).find(|&j| !(omega[(j, j)] > 0.0)) {
        return Err(Error::numerical(
            "partial correlations",
            format!("non-positive diagonal at {}", j + 1),
        ));
    }
    Ok(DMatrix::from_fn(r, r, |j, k| {
        if j == k {
            1.0
        } else {
            -omega[(j, k)] / (omega[(j, j)] * omega[(k, k)]).sqrt()
        }
    }))
}

/// Select entries whose 25th-75th percentile interval excludes zero.
pub fn ci50_select(omega_draws: &[DMatrix<f64>]) -> Result<DMatrix<bool>> {
    if omega_draws.len() < 4 {
        return Err(Error::data("credible-interval selection needs at least 4 stored draws"));
    }
    let r = omega_draws[0].nrows();
    let mut adj = DMatrix::from_element(r, r, false);
    let mut buf = Vec::with_capacity(omega_draws.len());
    for k in 1..r {
        for j in 0..k {
            buf.clear();
            buf.extend(omega_draws.iter().map(|m| m[(j, k)]));
            buf.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&buf, 0.25);
            let hi = quantile_sorted(&buf, 0.75);
            let sel = lo > 0.0 || hi < 0.0;
            adj[(j, k)] = sel;
            adj[(k, j)] = sel;
        }
    }
    Ok(adj)
}

/// Posterior draws needed to select one state's graph.
pub struct StateDraws<'a> {
    pub omega: &'a [DMatrix<f64>],
    /// Per-draw number of observations assigned to the state; needed for
    /// [`KappaScale::Likelihood`].
    pub n_obs: &'a [usize],
    pub lambda2: &'a [DMatrix<f64>],
    pub tau2: &'a [f64],
}

fn upper_pairs(r: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..r).flat_map(|k| (0..k).map(move |j| (j, k)))
}

fn mean_matrix(draws: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(draws[0].nrows(), draws[0].ncols());
    for d in draws {
        m += d;
    }
    m / draws.len() as f64
}

fn bfdr_of(kappa: &DMatrix<f64>, adj: &DMatrix<bool>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (j, k) in upper_pairs(kappa.nrows()) {
        if adj[(j, k)] {
            sum += kappa[(j, k)];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Select the graph of every state.
pub fn select_graphs(states: &[StateDraws<'_>], cfg: &SelectionConfig) -> Result<Vec<SelectionResult>> {
    let mut kappas = Vec::with_capacity(states.len());
    let mut means = Vec::with_capacity(states.len());
    for st in states {
        if st.omega.is_empty() {
            return Err(Error::data("no samples stored"));
        }
        let kappa_hat = match cfg.kappa_scale {
            KappaScale::Prior => compute_kappa(st.lambda2, st.tau2, None, cfg.kappa_estimator)?,
            KappaScale::Likelihood => {
                if st.n_obs.len() != st.omega.len() {
                    return Err(Error::data("state counts missing for likelihood-scaled shrinkage"));
                }
                let info = st
                    .omega
                    .iter()
                    .zip(st.n_obs)
                    .map(|(o, &n)| likelihood_information(o, n))
                    .collect::<Result<Vec<_>>>()?;
                compute_kappa(st.lambda2, st.tau2, Some(&info), cfg.kappa_estimator)?
            }
        };
        kappas.push(kappa_hat);
        means.push(mean_matrix(st.omega));
    }
    let r = means.first().map_or(0, |m| m.nrows());

    let mut adjacencies: Vec<DMatrix<bool>> = Vec::with_capacity(states.len());
    let mut etas: Vec<Option<f64>> = vec![None; states.len()];
    match cfg.mode {
        SelectionMode::Bfdr => {
            let groups: Vec<Vec<usize>> = if cfg.pool_states {
                vec![(0..states.len()).collect()]
            } else {
                (0..states.len()).map(|s| vec![s]).collect()
            };
            adjacencies = vec![DMatrix::from_element(r, r, false); states.len()];
            for g in groups {
                let flat: Vec<f64> = g
                    .iter()
                    .flat_map(|&s| upper_pairs(r).map(move |(j, k)| (s, j, k)))
                    .map(|(s, j, k)| kappas[s][(j, k)])
                    .collect();
                let out = bfdr_select(&flat, cfg.q_star);
                let mut it = out.selected.iter();
                for &s in &g {
                    for (j, k) in upper_pairs(r) {
                        let sel = *it.next().unwrap();
                        adjacencies[s][(j, k)] = sel;
                        adjacencies[s][(k, j)] = sel;
                    }
                    etas[s] = out.eta_star;
                }
            }
        }
        SelectionMode::FixedThreshold => {
            let t = cfg
                .fixed_threshold
                .ok_or_else(|| Error::config("fixed_threshold mode needs a threshold"))?;
            for st in states {
                let abs_mean = mean_matrix(&st.omega.iter().map(|m| m.abs()).collect::<Vec<_>>());
                let mut adj = DMatrix::from_element(r, r, false);
                for (j, k) in upper_pairs(r) {
                    let sel = abs_mean[(j, k)] >= t;
                    adj[(j, k)] = sel;
                    adj[(k, j)] = sel;
                }
                adjacencies.push(adj);
            }
        }
        SelectionMode::Ci50 => {
            for st in states {
                adjacencies.push(ci50_select(st.omega)?);
            }
        }
    }

    kappas
        .into_iter()
        .zip(means)
        .zip(adjacencies)
        .zip(etas)
        .map(|(((kappa_hat, mean), adjacency), eta_star)| {
            let partial_corr = partial_correlations(&mean)?;
            let selected_partial_corr = DMatrix::from_fn(r, r, |j, k| {
                if j != k && adjacency[(j, k)] {
                    partial_corr[(j, k)]
                } else {
                    0.0
                }
            });
            let achieved_bfdr = bfdr_of(&kappa_hat, &adjacency);
            Ok(SelectionResult {
                kappa_hat,
                eta_star,
                adjacency,
                partial_corr,
                selected_partial_corr,
                achieved_bfdr,
            })
        })
        .collect()
}
