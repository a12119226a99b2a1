//! Gibbs sweep, storage and posterior summaries.
//!
//! One sweep runs three phases with barriers between them:
//!
//! 1. subjects in parallel: `xi`, `rho`, then a forward-backward draw of the path;
//! 2. states in parallel: the graphical-horseshoe update of each precision;
//! 3. the group means `Z` and `eta`.
//!
//! Each subject and each state owns a random stream, so results are identical
//! for any number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::Dataset;
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::ghs::{accumulate_scatter, ghs_column_sweep, ghs_update, update_shared_global_shrinkage, PrecisionState};
use crate::selection::{quantile_sorted, select_graphs, SelectionResult, StateDraws};
use crate::states::{forward_backward_sample, loglik_matrix, summarize_states, StateEmission, StateSummary};
use crate::transition::{
    gibbs_update_group, gibbs_update_rho, gibbs_update_xi, transition_sequence, TransitionParams, TransitionPrior,
};

const STREAM_INIT: u64 = 0;
const STREAM_GROUP: u64 = 1;
const STREAM_STATE: u64 = 1 << 16;
const STREAM_SUBJECT: u64 = 1 << 32;

/// Half-width of the covariance window used for initialization.
const INIT_WINDOW: usize = 20;

/// One full configuration of the sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub sequences: Vec<Vec<usize>>,
    pub trans: TransitionParams,
    pub precisions: Vec<PrecisionState>,
    pub iteration: usize,
}

/// Thinned draws kept after burn-in.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PosteriorDraws {
    pub n_states: usize,
    /// Sweep number (1-based, counting burn-in) of every stored draw.
    pub iterations: Vec<usize>,
    /// `omega[s][d]`
    pub omega: Vec<Vec<DMatrix<f64>>>,
    /// `lambda2[s][d]`
    pub lambda2: Vec<Vec<DMatrix<f64>>>,
    /// `tau2[s][d]`
    pub tau2: Vec<Vec<f64>>,
    /// `xi[i][d]`
    pub xi: Vec<Vec<DMatrix<f64>>>,
    /// `rho[i][d]`
    pub rho: Vec<Vec<DMatrix<f64>>>,
    pub z: Vec<DMatrix<f64>>,
    pub eta: Vec<DMatrix<f64>>,
    /// `sequences[i][d][t]`
    pub sequences: Vec<Vec<Vec<u8>>>,
}

impl PosteriorDraws {
    fn new(n_states: usize, n_subjects: usize) -> Self {
        PosteriorDraws {
            n_states,
            omega: vec![Vec::new(); n_states],
            lambda2: vec![Vec::new(); n_states],
            tau2: vec![Vec::new(); n_states],
            xi: vec![Vec::new(); n_subjects],
            rho: vec![Vec::new(); n_subjects],
            sequences: vec![Vec::new(); n_subjects],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn push(&mut self, chain: &ChainState) {
        self.iterations.push(chain.iteration);
        for (s, p) in chain.precisions.iter().enumerate() {
            self.omega[s].push(p.omega.clone());
            self.lambda2[s].push(p.lambda2.clone());
            self.tau2[s].push(p.tau2);
        }
        for (i, seq) in chain.sequences.iter().enumerate() {
            self.xi[i].push(chain.trans.xi[i].clone());
            self.rho[i].push(chain.trans.rho[i].clone());
            self.sequences[i].push(seq.iter().map(|&s| s as u8).collect());
        }
        self.z.push(chain.trans.z.clone());
        self.eta.push(chain.trans.eta.clone());
    }
}

fn pooled_variances(dataset: &Dataset) -> Result<Vec<f64>> {
    let r = dataset.n_regions();
    let n = dataset.total_time_points() as f64;
    let mut sum = vec![0.0; r];
    for subj in dataset.subjects() {
        for j in 0..r {
            sum[j] += subj.series.column(j).sum();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut var = vec![0.0; r];
    for subj in dataset.subjects() {
        for j in 0..r {
            var[j] += subj.series.column(j).iter().map(|y| (y - mean[j]).powi(2)).sum::<f64>();
        }
    }
    for (j, v) in var.iter_mut().enumerate() {
        *v /= n - 1.0;
        if !(*v > 0.0) {
            return Err(Error::data(format!("region {} has zero variance", j + 1)));
        }
    }
    Ok(var)
}

/// Windowed covariance features: upper triangle of the covariance of the rows
/// within `INIT_WINDOW / 2` of each time point.
fn window_features(series: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (t_len, r) = series.shape();
    let half = INIT_WINDOW / 2;
    (0..t_len)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(t_len);
            let w = series.rows(lo, hi - lo);
            let n = (hi - lo) as f64;
            let mean: Vec<f64> = (0..r).map(|j| w.column(j).sum() / n).collect();
            let mut f = Vec::with_capacity(r * (r + 1) / 2);
            for k in 0..r {
                for j in 0..=k {
                    let c: f64 = (0..w.nrows()).map(|i| (w[(i, j)] - mean[j]) * (w[(i, k)] - mean[k])).sum();
                    f.push(c / n);
                }
            }
            f
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns cluster labels.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut RngStream, max_iter: usize) -> Vec<usize> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[(rng.uniform() * n as f64) as usize % n].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let idx = if d2.iter().sum::<f64>() > 0.0 {
            rng.categorical(&d2)
        } else {
            (rng.uniform() * n as f64) as usize % n
        };
        centers.push(points[idx].clone());
        let c = centers.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    let mut labels = vec![0; n];
    for iter in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    labels
}

/// Relabel so that label 0 is the most frequent, 1 the next, and so on.
fn relabel_by_occupancy(labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)))
    ;
    let mut map = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    for l in labels.iter_mut() {
        *l = map[*l];
    }
}

/// Gibbs sampler over a dataset.
pub struct Sampler {
    dataset: Dataset,
    config: ModelConfig,
    z0: DMatrix<f64>,
    pi0: DVector<f64>,
    prior: TransitionPrior,
    chain: ChainState,
    subject_rngs: Vec<RngStream>,
    state_rngs: Vec<RngStream>,
    group_rng: RngStream,
    pool: rayon::ThreadPool,
}

impl Sampler {
    /// Validate inputs and build the initial chain state.
    pub fn new(dataset: Dataset, config: ModelConfig, workers: usize) -> Result<Self> {
        config.validate()?;
        let s = config.n_states;
        if s > dataset.total_time_points() {
            return Err(Error::data(format!(
                "{s} states exceed the {} available time points",
                dataset.total_time_points()
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        let seed = config.seed;
        let subject_rngs = (0..dataset.n_subjects())
            .map(|i| RngStream::new(seed, STREAM_SUBJECT + i as u64))
            .collect();
        let state_rngs = (0..s).map(|k| RngStream::new(seed, STREAM_STATE + k as u64)).collect();
        let mut sampler = Sampler {
            z0: config.z0_matrix(),
            pi0: config.initial_distribution(),
            prior: TransitionPrior {
                sigma_xi: config.sigma_xi,
                sigma_rho: config.sigma_rho,
                sigma_z: config.sigma_z,
                sigma_eta: config.sigma_eta,
            },
            chain: ChainState {
                sequences: Vec::new(),
                trans: TransitionParams::at_prior_mean(0, &DMatrix::zeros(s, s), 0),
                precisions: Vec::new(),
                iteration: 0,
            },
            subject_rngs,
            state_rngs,
            group_rng: RngStream::new(seed, STREAM_GROUP),
            pool,
            dataset,
            config,
        };
        sampler.chain = sampler.initialize()?;
        Ok(sampler)
    }

    fn initialize(&mut self) -> Result<ChainState> {
        let ds = &self.dataset;
        let s = self.config.n_states;
        let mut rng = RngStream::new(self.config.seed, STREAM_INIT);
        let sequences: Vec<Vec<usize>> = if s == 1 {
            ds.subjects().iter().map(|x| vec![0; x.len()]).collect()
        } else {
            let features: Vec<Vec<f64>> = self.pool.install(|| {
                ds.subjects()
                    .par_iter()
                    .map(|x| window_features(&x.series))
                    .collect::<Vec<_>>()
                    .concat()
            });
            let mut labels = kmeans(&features, s, &mut rng, 100);
            relabel_by_occupancy(&mut labels, s);
            let mut out = Vec::with_capacity(ds.n_subjects());
            let mut at = 0;
            for x in ds.subjects() {
                out.push(labels[at..at + x.len()].to_vec());
                at += x.len();
            }
            out
        };
        let var = pooled_variances(ds)?;
        let mean_var = var.iter().sum::<f64>() / var.len() as f64;
        let rate = self.config.diag_prior_pseudo_obs * mean_var;
        let omega0 = DMatrix::from_diagonal(&DVector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v)));
        let mut precisions: Vec<PrecisionState> =
            (0..s).map(|_| PrecisionState::new(omega0.clone(), self.config.tau0, rate)).collect();
        // one precision update given the clustering, so the first path draw
        // sees state-specific emissions
        for (k, p) in precisions.iter_mut().enumerate() {
            let sc = accumulate_scatter(ds, &sequences, k);
            if sc.n == 0 && rate == 0.0 {
                continue;
            }
            ghs_update(p, &sc, &mut self.state_rngs[k]).map_err(|e| e.within(format!("initialization, state {}", k + 1)))?;
        }
        Ok(ChainState {
            sequences,
            trans: TransitionParams::at_prior_mean(ds.n_subjects(), &self.z0, ds.n_covariates()),
            precisions,
            iteration: 0,
        })
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    /// Replace the chain state (used by joint-distribution tests).
    pub fn set_chain(&mut self, chain: ChainState) {
        self.chain = chain;
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn dataset_mut(&mut self) -> &mut Dataset {
        &mut self.dataset
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Random stream reserved for callers that simulate alongside the chain.
    pub fn group_rng(&mut self) -> &mut RngStream {
        &mut self.group_rng
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self) -> Result<()> {
        let it = self.chain.iteration + 1;
        let ctx = |step: &str| format!("iteration {it}, step {step}");
        let emissions = self
            .chain
            .precisions
            .iter()
            .map(|p| StateEmission::new(&p.omega))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.within(ctx("emission")))?;

        let cfg = &self.config;
        let (z, eta) = (&self.chain.trans.z, &self.chain.trans.eta);
        let pi0 = &self.pi0;
        let subjects = self.dataset.subjects();
        let xi = &mut self.chain.trans.xi;
        let rho = &mut self.chain.trans.rho;
        let seqs = &mut self.chain.sequences;
        let rngs = &mut self.subject_rngs;
        self.pool.install(|| {
            subjects
                .par_iter()
                .zip(xi.par_iter_mut())
                .zip(rho.par_iter_mut())
                .zip(seqs.par_iter_mut())
                .zip(rngs.par_iter_mut())
                .enumerate()
                .map(|(i, ((((subj, xi), rho), seq), rng))| {
                    gibbs_update_xi(xi, rho, z, seq, &subj.covariates, cfg.sigma_xi, rng);
                    gibbs_update_rho(rho, xi, eta, seq, &subj.covariates, cfg.sigma_rho, rng);
                    let q = transition_sequence(xi, rho, &subj.covariates);
                    let ll = loglik_matrix(&subj.series, &emissions);
                    *seq = forward_backward_sample(&ll, &q, pi0, rng)
                        .map_err(|e| e.within(format!("{}, subject {}", ctx("state path"), i + 1)))?;
                    Ok(())
                })
                .collect::<Result<Vec<()>>>()
        })?;

        let ds = &self.dataset;
        let seqs = &self.chain.sequences;
        let shared = cfg.shared_global_shrinkage;
        self.pool.install(|| {
            self.chain
                .precisions
                .par_iter_mut()
                .zip(self.state_rngs.par_iter_mut())
                .enumerate()
                .map(|(k, (p, rng))| {
                    let sc = accumulate_scatter(ds, seqs, k);
                    let r = if shared { ghs_column_sweep(p, &sc, rng) } else { ghs_update(p, &sc, rng) };
                    r.map_err(|e| e.within(format!("{}, state {}", ctx("precision"), k + 1)))
                })
                .collect::<Result<Vec<()>>>()
        })?;
        if shared {
            update_shared_global_shrinkage(&mut self.chain.precisions, &mut self.group_rng)
                .map_err(|e| e.within(ctx("global shrinkage")))?;
        }

        gibbs_update_group(&mut self.chain.trans, &self.z0, &self.prior, &mut self.group_rng);
        self.chain.iteration = it;
        Ok(())
    }

    /// Run burn-in and sampling; store every `thin`-th post-burn-in sweep.
    pub fn run(&mut self) -> Result<PosteriorDraws> {
        self.run_with(|_, _| {})
    }

    /// Like [`Sampler::run`], calling `progress(done, total)` after each sweep.
    pub fn run_with(&mut self, mut progress: impl FnMut(usize, usize)) -> Result<PosteriorDraws> {
        let cfg = self.config.clone();
        let total = cfg.n_burn + cfg.n_samples;
        let mut draws = PosteriorDraws::new(cfg.n_states, self.dataset.n_subjects());
        for k in 0..total {
            self.sweep()?;
            if k >= cfg.n_burn && (k - cfg.n_burn + 1) % cfg.thin == 0 {
                draws.push(&self.chain);
            }
            progress(k + 1, total);
        }
        Ok(draws)
    }
}

/// Initialize and run a chain on `workers` threads.
pub fn run_chain(dataset: &Dataset, config: &ModelConfig, workers: usize) -> Result<PosteriorDraws> {
    Sampler::new(dataset.clone(), config.clone(), workers)?.run()
}

/// Posterior mean and central 95% interval of a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub mean: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quantiles {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q025: quantile_sorted(&v, 0.025),
            median: quantile_sorted(&v, 0.5),
            q975: quantile_sorted(&v, 0.975),
        }
    }
}

/// Entry-wise quantiles of `f` applied to a sequence of matrix draws.
pub fn matrix_quantiles(draws: &[DMatrix<f64>], f: impl Fn(f64) -> f64) -> Vec<Vec<Quantiles>> {
    let (nr, nc) = draws[0].shape();
    (0..nr)
        .map(|r| {
            (0..nc)
                .map(|c| Quantiles::of(&draws.iter().map(|m| f(m[(r, c)])).collect::<Vec<_>>()))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEffects {
    /// Multiplicative covariate effects `exp(eta[s][b])` on the odds of moving into `s`.
    pub exp_eta: Vec<Vec<Quantiles>>,
    pub z: Vec<Vec<Quantiles>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEffects {
    pub subject_id: String,
    pub exp_rho: Vec<Vec<Quantiles>>,
    pub xi: Vec<Vec<Quantiles>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateReport {
    pub omega_mean: DMatrix<f64>,
    pub selection: SelectionResult,
}

/// Everything written after a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub states: Vec<StateReport>,
    pub subjects: Vec<StateSummary>,
    pub subject_effects: Vec<SubjectEffects>,
    pub group: GroupEffects,
}

pub fn summarize(draws: &PosteriorDraws, dataset: &Dataset, config: &ModelConfig) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::data("no samples stored"));
    }
    let n_obs: Vec<Vec<usize>> = (0..draws.n_states)
        .map(|s| {
            (0..draws.len())
                .map(|d| {
                    draws.sequences.iter().map(|subj| subj[d].iter().filter(|&&x| x as usize == s).count()).sum()
                })
                .collect()
        })
        .collect();
    let state_draws: Vec<StateDraws<'_>> = (0..draws.n_states)
        .map(|s| StateDraws {
            omega: &draws.omega[s],
            n_obs: &n_obs[s],
            lambda2: &draws.lambda2[s],
            tau2: &draws.tau2[s],
        })
        .collect();
    let selections = select_graphs(&state_draws, &config.selection())?;
    let states = selections
        .into_iter()
        .enumerate()
        .map(|(s, selection)| {
            let mut m = DMatrix::zeros(selection.partial_corr.nrows(), selection.partial_corr.ncols());
            for d in &draws.omega[s] {
                m += d;
            }
            StateReport {
                omega_mean: m / draws.len() as f64,
                selection,
            }
        })
        .collect();
    let subjects = draws
        .sequences
        .iter()
        .map(|seqs| {
            let refs: Vec<&[u8]> = seqs.iter().map(|v| v.as_slice()).collect();
            summarize_states(&refs, draws.n_states, config.change_point_threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let subject_effects = dataset
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, subj)| SubjectEffects {
            subject_id: subj.subject_id.clone(),
            exp_rho: effect_quantiles(&draws.rho[i], f64::exp),
            xi: effect_quantiles(&draws.xi[i], |x| x),
        })
        .collect();
    Ok(Summary {
        states,
        subjects,
        subject_effects,
        group: GroupEffects {
            exp_eta: effect_quantiles(&draws.eta, f64::exp),
            z: effect_quantiles(&draws.z, |x| x),
        },
    })
}

fn effect_quantiles(draws: &[DMatrix<f64>], f: impl Fn(f64) -> f64) -> Vec<Vec<Quantiles>> {
    if draws[0].ncols() == 0 {
        return vec![Vec::new(); draws[0].nrows()];
    }
    matrix_quantiles(draws, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectData;

    fn toy_dataset(n: usize, t: usize, r: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 99);
        let subjects = (0..n)
            .map(|i| {
                let series = DMatrix::from_fn(t, r, |_, _| rng.std_normal());
                let cov = DMatrix::from_fn(t, 1, |tt, _| if tt < t / 2 { 0.0 } else { 1.0 });
                SubjectData::new(format!("s{i}"), series, cov).unwrap()
            })
            .collect();
        Dataset::new(subjects).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            n_states: 2,
            n_burn: 5,
            n_samples: 100,
            thin: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn stores_floor_of_samples_over_thin() {
        let d = run_chain(&toy_dataset(2, 30, 3, 1), &small_config(), 1).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.omega[0].len(), 10);
        assert_eq!(d.sequences[1].len(), 10);
        assert_eq!(d.iterations.last(), Some(&105));
        let cfg = ModelConfig { n_samples: 95, ..small_config() };
        assert_eq!(run_chain(&toy_dataset(2, 30, 3, 1), &cfg, 1).unwrap().len(), 9);
    }

    #[test]
    fn single_state_has_constant_paths() {
        let cfg = ModelConfig { n_states: 1, ..small_config() };
        let d = run_chain(&toy_dataset(2, 30, 3, 2), &cfg, 1).unwrap();
        assert!(d.sequences.iter().flatten().flatten().all(|&s| s == 0));
    }

    #[test]
    fn too_many_states_rejected() {
        let cfg = ModelConfig { n_states: 7, ..small_config() };
        let ds = Dataset::new(vec![SubjectData::new(
            "a",
            DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.37 + (j as f64).sin()),
            DMatrix::zeros(3, 0),
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(Sampler::new(ds, cfg, 1), Err(Error::Data(_))));
    }

    #[test]
    fn initialization_is_deterministic() {
        let ds = toy_dataset(2, 40, 3, 3);
        let a = Sampler::new(ds.clone(), small_config(), 1).unwrap();
        let b = Sampler::new(ds, small_config(), 2).unwrap();
        assert_eq!(a.chain(), b.chain());
        assert!(a.chain().trans.reference_constraints_hold());
    }

    #[test]
    fn worker_count_does_not_change_draws() {
        let ds = toy_dataset(3, 30, 3, 4);
        let a = run_chain(&ds, &small_config(), 1).unwrap();
        let b = run_chain(&ds, &small_config(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stored_precisions_are_spd() {
        let d = run_chain(&toy_dataset(2, 30, 3, 5), &small_config(), 1).unwrap();
        for m in d.omega.iter().flatten() {
            assert!(m.clone().cholesky().is_some());
        }
    }

    #[test]
    fn summary_of_one_draw_is_that_draw() {
        let ds = toy_dataset(2, 30, 3, 6);
        let cfg = ModelConfig { n_samples: 1, thin: 1, ..small_config() };
        let d = run_chain(&ds, &cfg, 1).unwrap();
        let s = summarize(&d, &ds, &cfg).unwrap();
        assert_eq!(s.states[1].omega_mean, d.omega[1][0]);
        let q = s.group.exp_eta[1][0];
        assert_eq!(q.mean, d.eta[0][(1, 0)].exp());
        assert_eq!(q.q025, q.q975);
        // reference-state effects are identically exp(0) = 1
        assert!(s.subject_effects[0].exp_rho[0].iter().all(|q| q.mean == 1.0 && q.q975 == 1.0));
    }

    #[test]
    fn exponentiated_effect_arithmetic() {
        let q = Quantiles::of(&[0.687f64.exp()]);
        assert!((q.median - 1.988).abs() < 1e-3);
        let q = Quantiles::of(&[0.0f64.exp(); 5]);
        assert_eq!((q.mean, q.q025, q.q975), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_draws_rejected() {
        let ds = toy_dataset(1, 10, 2, 7);
        let d = PosteriorDraws::new(2, 1);
        assert!(matches!(summarize(&d, &ds, &small_config()), Err(Error::Data(_))));
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut rng = RngStream::new(8, 0);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![if i < 30 { 0.0 } else { 10.0 } + 0.1 * rng.std_normal(), 0.1 * rng.std_normal()])
            .collect();
        let mut l = kmeans(&pts, 2, &mut rng, 50);
        relabel_by_occupancy(&mut l, 2);
        assert!(l[..30].iter().all(|&x| x == l[0]));
        assert!(l[30..].iter().all(|&x| x == l[30]));
        assert_ne!(l[0], l[30]);
    }
}
