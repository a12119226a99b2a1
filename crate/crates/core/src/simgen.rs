//! Synthetic data in the design of the first simulation study: covariate
//! switched transition regimes, sparse state precisions with prescribed zero
//! patterns, and Gaussian emissions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{save_dataset, write_table, Dataset, DatasetManifest, SubjectData};
use crate::dist::RngStream;
use crate::error::{Error, Result};

/// Average absolute partial correlation of the simulated edges. Six levels
/// spanning the range used in the simulation study; the exact values are
/// approximations.
pub const SIGNAL_PRESETS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

const STREAM_PRECISION: u64 = 7;
const STREAM_SUBJECT: u64 = 1 << 32;
const MAX_PRECISION_TRIES: usize = 20_000;

/// Transition matrix used while the covariate equals `covariate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRegime {
    pub covariate: f64,
    pub q: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t: usize,
    pub r: usize,
    pub n: usize,
    pub s: usize,
    /// `adjacencies[s][j][k]` is 1 for an edge.
    pub adjacencies: Vec<Vec<Vec<u8>>>,
    /// Regime `k` is active from `switch_times[k-1]` (0-based time) on.
    pub q_regimes: Vec<QRegime>,
    pub switch_times: Vec<usize>,
    pub target_mean_abs_pcorr: f64,
    pub seed: u64,
    /// 0-based state at the first time point.
    #[serde(default)]
    pub initial_state: usize,
}

fn path_pattern(r: usize, paths: &[&[usize]]) -> Vec<Vec<u8>> {
    let mut a = vec![vec![0u8; r]; r];
    for p in paths {
        for w in p.windows(2) {
            a[w[0]][w[1]] = 1;
            a[w[1]][w[0]] = 1;
        }
    }
    a
}

/// The three 16-node connectivity patterns used by [`SimSpec::sim1`].
pub fn sim1_adjacencies() -> Vec<Vec<Vec<u8>>> {
    vec![
        path_pattern(16, &[&[0, 1, 2, 3], &[4, 5, 6, 7], &[8, 9, 10, 11], &[12, 13, 14, 15]]),
        path_pattern(16, &[&[0, 4, 8, 12], &[1, 5, 9, 13], &[2, 6, 10, 14], &[3, 7, 11, 15]]),
        path_pattern(
            16,
            &[&[0, 5, 10, 15], &[3, 6, 9, 12], &[1, 2], &[4, 7], &[8, 11], &[13, 14]],
        ),
    ]
}

impl SimSpec {
    /// Three states, 16 regions, one binary covariate switching at `t / 2`.
    pub fn sim1(n: usize, t: usize, target: f64, seed: u64) -> Self {
        SimSpec {
            t,
            r: 16,
            n,
            s: 3,
            adjacencies: sim1_adjacencies(),
            q_regimes: vec![
                QRegime {
                    covariate: 0.0,
                    q: vec![vec![0.98, 0.02, 0.0], vec![0.1, 0.9, 0.0], vec![0.0, 0.5, 0.5]],
                },
                QRegime {
                    covariate: 1.0,
                    q: vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.7, 0.3], vec![0.0, 0.02, 0.98]],
                },
            ],
            switch_times: vec![t / 2],
            target_mean_abs_pcorr: target,
            seed,
            initial_state: 0,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SimSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.t < 2 || self.r == 0 || self.n == 0 || self.s == 0 {
            return bad("t >= 2 and positive r, n, s required".into());
        }
        if self.adjacencies.len() != self.s {
            return bad(format!("{} adjacencies for {} states", self.adjacencies.len(), self.s));
        }
        for (k, a) in self.adjacencies.iter().enumerate() {
            if a.len() != self.r || a.iter().any(|row| row.len() != self.r) {
                return bad(format!("adjacency {} is not {}x{}", k + 1, self.r, self.r));
            }
            for j in 0..self.r {
                if a[j][j] != 0 {
                    return bad(format!("adjacency {} has a non-zero diagonal", k + 1));
                }
                for i in 0..self.r {
                    if a[i][j] != a[j][i] || a[i][j] > 1 {
                        return bad(format!("adjacency {} is not a symmetric 0/1 matrix", k + 1));
                    }
                }
            }
        }
        if self.q_regimes.len() != self.switch_times.len() + 1 {
            return bad("need exactly one more regime than switch times".into());
        }
        if self.switch_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("switch times must increase".into());
        }
        for (k, reg) in self.q_regimes.iter().enumerate() {
            if reg.q.len() != self.s || reg.q.iter().any(|row| row.len() != self.s) {
                return bad(format!("regime {} matrix is not {}x{}", k + 1, self.s, self.s));
            }
            for row in &reg.q {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("regime {} rows must be probability vectors", k + 1));
                }
            }
            if !reg.covariate.is_finite() {
                return bad("regime covariate must be finite".into());
            }
        }
        if !(self.target_mean_abs_pcorr > 0.0 && self.target_mean_abs_pcorr < 1.0) {
            return bad("target_mean_abs_pcorr must lie in (0,1)".into());
        }
        if self.initial_state >= self.s {
            return bad("initial_state out of range".into());
        }
        Ok(())
    }

    /// Regime index active at 0-based time `t`.
    pub fn regime_at(&self, t: usize) -> usize {
        self.switch_times.iter().take_while(|&&sw| sw <= t).count()
    }

    /// The `T x 1` covariate step function.
    pub fn covariate_series(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.t, 1, |t, _| self.q_regimes[self.regime_at(t)].covariate)
    }

    pub fn adjacency_matrix(&self, s: usize) -> DMatrix<bool> {
        let a = &self.adjacencies[s];
        DMatrix::from_fn(self.r, self.r, |j, k| a[j][k] == 1)
    }
}

/// Generating truth for a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTruth {
    pub precisions: Vec<DMatrix<f64>>,
    pub adjacencies: Vec<DMatrix<bool>>,
    pub sequences: Vec<Vec<usize>>,
    pub covariates: Vec<DMatrix<f64>>,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Sparse SPD matrix in unit-diagonal partial-correlation form: zero exactly
/// off the adjacency, mean absolute partial correlation equal to `target`.
///
/// Edge weights have random signs and magnitudes uniform on (0.5, 1) before
/// scaling to the target. Draws that are not positive definite are retried.
pub fn random_precision(
    adjacency: &DMatrix<bool>,
    target: f64,
    rng: &mut RngStream,
    max_tries: usize,
) -> Result<DMatrix<f64>> {
    let r = adjacency.nrows();
    let edges: Vec<(usize, usize)> = (1..r)
        .flat_map(|k| (0..k).map(move |j| (j, k)))
        .filter(|&(j, k)| adjacency[(j, k)])
        .collect();
    if edges.is_empty() {
        return Ok(DMatrix::identity(r, r));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::config(format!("target partial correlation {target} outside (0,1)")));
    }
    for _ in 0..max_tries {
        let w: Vec<f64> = edges
            .iter()
            .map(|_| {
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                sign * (0.5 + 0.5 * rng.uniform())
            })
            .collect();
        let scale = target / (w.iter().map(|x| x.abs()).sum::<f64>() / w.len() as f64);
        let mut omega = DMatrix::identity(r, r);
        for (&(j, k), &x) in edges.iter().zip(&w) {
            // partial correlation is -omega_jk on a unit diagonal
            omega[(j, k)] = -scale * x;
            omega[(k, j)] = -scale * x;
        }
        if min_eigenvalue(&omega) > 1e-3 {
            return Ok(omega);
        }
    }
    Err(Error::numerical(
        "precision simulation",
        format!("infeasible target {target}: no positive definite draw in {max_tries} tries"),
    ))
}

/// Markov path with the transition matrix chosen by the regime at each step.
pub fn simulate_path(spec: &SimSpec, rng: &mut RngStream) -> Vec<usize> {
    let mut path = Vec::with_capacity(spec.t);
    let mut cur = spec.initial_state;
    path.push(cur);
    for t in 0..spec.t - 1 {
        cur = rng.categorical(&spec.q_regimes[spec.regime_at(t)].q[cur]);
        path.push(cur);
    }
    path
}

/// One path per subject, each from its own stream.
pub fn simulate_states(spec: &SimSpec) -> Vec<Vec<usize>> {
    (0..spec.n)
        .map(|i| simulate_path(spec, &mut subject_rng(spec, i)))
        .collect()
}

fn subject_rng(spec: &SimSpec, i: usize) -> RngStream {
    RngStream::new(spec.seed, STREAM_SUBJECT + i as u64)
}

/// Rows `y_t ~ N(0, Omega_{s_t}^-1)`.
pub fn simulate_emissions(
    path: &[usize],
    precisions: &[DMatrix<f64>],
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    let r = precisions[0].nrows();
    let factors = precisions
        .iter()
        .map(|p| {
            p.clone()
                .cholesky()
                .map(|c| c.l().transpose())
                .ok_or_else(|| Error::numerical("emission simulation", "precision not positive definite"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = DMatrix::zeros(path.len(), r);
    for (t, &s) in path.iter().enumerate() {
        let z = DVector::from_fn(r, |_, _| rng.std_normal());
        // Omega = L L', so y = L'^-1 z has covariance Omega^-1
        let row = factors[s]
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("emission simulation", "singular factor"))?;
        y.row_mut(t).copy_from(&row.transpose());
    }
    Ok(y)
}

pub fn simulate_dataset(spec: &SimSpec) -> Result<(Dataset, SimTruth)> {
    spec.validate()?;
    let mut prng = RngStream::new(spec.seed, STREAM_PRECISION);
    let adjacencies: Vec<DMatrix<bool>> = (0..spec.s).map(|s| spec.adjacency_matrix(s)).collect();
    let precisions = adjacencies
        .iter()
        .map(|a| random_precision(a, spec.target_mean_abs_pcorr, &mut prng, MAX_PRECISION_TRIES))
        .collect::<Result<Vec<_>>>()?;
    let cov = spec.covariate_series();
    let mut subjects = Vec::with_capacity(spec.n);
    let mut sequences = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = subject_rng(spec, i);
        let path = simulate_path(spec, &mut rng);
        let y = simulate_emissions(&path, &precisions, &mut rng)?;
        subjects.push(SubjectData::new(format!("{}", i + 1), y, cov.clone())?);
        sequences.push(path);
    }
    let truth = SimTruth {
        precisions,
        adjacencies,
        sequences,
        covariates: vec![cov; spec.n],
    };
    Ok((Dataset::new(subjects)?, truth))
}

fn bool_table(a: &DMatrix<bool>) -> DMatrix<f64> {
    a.map(|b| if b { 1.0 } else { 0.0 })
}

/// Write a path as one 1-based label per line.
pub fn write_sequence(path: &Path, seq: &[usize]) -> Result<()> {
    let text: String = seq.iter().map(|s| format!("{}\n", s + 1)).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a path written by [`write_sequence`] (back to 0-based labels).
pub fn read_sequence(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim().parse::<usize>() {
            Ok(s) if s >= 1 => Ok(s - 1),
            _ => Err(Error::data(format!("{}: invalid state label {l:?}", path.display()))),
        })
        .collect()
}

/// Write the dataset to `dir` and the truth to `dir/truth`.
pub fn save_simulation(dataset: &Dataset, truth: &SimTruth, spec: &SimSpec, dir: &Path) -> Result<DatasetManifest> {
    let manifest = save_dataset(dataset, dir)?;
    let tdir = dir.join("truth");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    for (s, (a, p)) in truth.adjacencies.iter().zip(&truth.precisions).enumerate() {
        write_table(&tdir.join(format!("adjacency_state{}.csv", s + 1)), &bool_table(a))?;
        write_table(&tdir.join(format!("precision_state{}.csv", s + 1)), p)?;
    }
    for (i, seq) in truth.sequences.iter().enumerate() {
        write_sequence(&tdir.join(format!("states_subject{}.csv", i + 1)), seq)?;
    }
    let spec_path = dir.join("sim_spec.json");
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}
