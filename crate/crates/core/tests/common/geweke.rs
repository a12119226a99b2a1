//! Successive-conditional (Geweke) simulators for the tiny instance.

use nalgebra::DMatrix;
use pibdfc::config::ModelConfig;
use pibdfc::data::{Dataset, SubjectData};
use pibdfc::dist::RngStream;
use pibdfc::ghs::{ghs_update, sample_prior, PrecisionState, StateScatter};
use pibdfc::mcmc::{ChainState, Sampler};
use pibdfc::simgen::simulate_emissions;
use pibdfc::transition::{compute_q, TransitionParams};

use super::{geweke_z, mean};

const N: usize = 2;
const T: usize = 20;
const R: usize = 2;
const S: usize = 2;
const DIAG_RATE: f64 = 2.0;

pub fn config() -> ModelConfig {
    ModelConfig {
        n_states: S,
        sigma_xi: 1.0,
        sigma_rho: 1.0,
        sigma_z: 0.5,
        sigma_eta: 0.5,
        tau0: 1.0,
        n_burn: 0,
        n_samples: 1,
        seed: 41,
        ..Default::default()
    }
}

fn covariates() -> DMatrix<f64> {
    DMatrix::from_fn(T, 1, |t, _| (0.7 * t as f64).sin() + 0.3)
}

struct Joint {
    chain: ChainState,
    series: Vec<DMatrix<f64>>,
}

fn draw_transitions(cfg: &ModelConfig, rng: &mut RngStream) -> TransitionParams {
    let z0 = cfg.z0_matrix();
    let mut z = DMatrix::zeros(S, S);
    let mut eta = DMatrix::zeros(S, 1);
    for r in 0..S {
        for c in 1..S {
            z[(r, c)] = rng.normal(z0[(r, c)], cfg.sigma_z);
        }
    }
    for c in 1..S {
        eta[(c, 0)] = rng.normal(0.0, cfg.sigma_eta);
    }
    let xi = (0..N)
        .map(|_| DMatrix::from_fn(S, S, |r, c| if c == 0 { 0.0 } else { rng.normal(z[(r, c)], cfg.sigma_xi) }))
        .collect();
    let rho = (0..N)
        .map(|_| DMatrix::from_fn(S, 1, |c, b| if c == 0 { 0.0 } else { rng.normal(eta[(c, b)], cfg.sigma_rho) }))
        .collect();
    TransitionParams { xi, rho, z, eta }
}

fn draw_path(xi: &DMatrix<f64>, rho: &DMatrix<f64>, x: &DMatrix<f64>, rng: &mut RngStream) -> Vec<usize> {
    let mut path = vec![rng.categorical(&[1.0; S])];
    for t in 0..T - 1 {
        let q = compute_q(xi, rho, &[x[(t, 0)]]).unwrap();
        let prev = path[t];
        let row: Vec<f64> = q.row(prev).iter().copied().collect();
        path.push(rng.categorical(&row));
    }
    path
}

fn draw_series(chain: &ChainState, rng: &mut RngStream) -> Vec<DMatrix<f64>> {
    let omegas: Vec<DMatrix<f64>> = chain.precisions.iter().map(|p| p.omega.clone()).collect();
    chain
        .sequences
        .iter()
        .map(|path| simulate_emissions(path, &omegas, rng).unwrap())
        .collect()
}

fn prior_draw(cfg: &ModelConfig, rng: &mut RngStream) -> Joint {
    let trans = draw_transitions(cfg, rng);
    let precisions: Vec<PrecisionState> =
        (0..S).map(|_| sample_prior(R, cfg.tau0, DIAG_RATE, rng, 100_000).unwrap()).collect();
    let x = covariates();
    let sequences = (0..N).map(|i| draw_path(&trans.xi[i], &trans.rho[i], &x, rng)).collect();
    let mut chain = ChainState {
        sequences,
        trans,
        precisions,
        iteration: 0,
    };
    let series = draw_series(&chain, rng);
    chain.iteration = 0;
    Joint { chain, series }
}

/// Scalar functions of the joint state that are compared.
fn monitor(c: &ChainState) -> Vec<f64> {
    let occ = c.sequences[0].iter().filter(|&&s| s == 1).count() as f64 / T as f64;
    let w0 = &c.precisions[0].omega;
    let w1 = &c.precisions[1].omega;
    let base = vec![
        c.trans.xi[0][(0, 1)],
        c.trans.xi[0][(1, 1)],
        c.trans.rho[0][(1, 0)],
        c.trans.z[(0, 1)],
        c.trans.z[(1, 1)],
        c.trans.eta[(1, 0)],
        w0[(0, 1)],
        w1[(0, 1)],
        w0[(0, 0)],
        c.precisions[0].tau2.ln(),
        c.precisions[1].tau2.ln(),
        c.precisions[0].lambda2[(0, 1)].ln(),
        occ,
    ];
    let squares: Vec<f64> = base[..9].iter().map(|v| v * v).collect();
    [base, squares].concat()
}

const NAMES: [&str; 13] = [
    "xi[1,2]", "xi[2,2]", "rho[2]", "Z[1,2]", "Z[2,2]", "eta[2]", "omega1_12", "omega2_12", "omega1_11",
    "log tau2_1", "log tau2_2", "log lambda2_12", "occupancy",
];

fn dataset(series: &[DMatrix<f64>]) -> Dataset {
    let x = covariates();
    Dataset::new(
        series
            .iter()
            .enumerate()
            .map(|(i, y)| SubjectData::new(format!("{}", i + 1), y.clone(), x.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

/// One z-score per monitored scalar, with prior and chain means.
pub struct GewekeRow {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

fn compare(names: &[String], marginal: &[Vec<f64>], successive: &[Vec<f64>]) -> Vec<GewekeRow> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let a: Vec<f64> = marginal.iter().map(|m| m[k]).collect();
            let b: Vec<f64> = successive.iter().map(|m| m[k]).collect();
            GewekeRow { name: name.clone(), prior_mean: mean(&a), chain_mean: mean(&b), z: geweke_z(&a, &b) }
        })
        .collect()
}

/// Full model on N=2, T=20, R=2, S=2 with a proper diagonal prior.
pub fn full_model(rounds: usize) -> Vec<GewekeRow> {
    let cfg = config();
    let mut rng = RngStream::new(7, 0);
    let marginal: Vec<Vec<f64>> = (0..rounds).map(|_| monitor(&prior_draw(&cfg, &mut rng).chain)).collect();

    let start = prior_draw(&cfg, &mut rng);
    let mut sampler = Sampler::new(dataset(&start.series), cfg.clone(), 1).unwrap();
    sampler.set_chain(start.chain);
    let mut y_rng = RngStream::new(7, 1);
    let mut successive = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        sampler.sweep().unwrap();
        let series = draw_series(sampler.chain(), &mut y_rng);
        for (i, y) in series.into_iter().enumerate() {
            sampler.dataset_mut().replace_series(i, y).unwrap();
        }
        successive.push(monitor(sampler.chain()));
    }
    let names: Vec<String> = NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(NAMES[..9].iter().map(|s| format!("{s}^2")))
        .collect();
    compare(&names, &marginal, &successive)
}

/// Precision block alone: R=3, eight observations per round.
pub fn precision_block(draws: usize) -> Vec<GewekeRow> {
    let (r, n_obs, rate, tau0) = (3, 8, 1.5, 0.7);
    let mut rng = RngStream::new(8, 0);
    let pick = |p: &PrecisionState| {
        vec![
            p.omega[(0, 1)],
            p.omega[(1, 2)],
            p.omega[(2, 2)],
            p.omega[(0, 1)].powi(2),
            p.tau2.ln(),
            p.lambda2[(0, 2)].ln(),
            p.xi_tau.ln(),
        ]
    };
    let marginal: Vec<Vec<f64>> =
        (0..draws).map(|_| pick(&sample_prior(r, tau0, rate, &mut rng, 100_000).unwrap())).collect();

    let mut p = sample_prior(r, tau0, rate, &mut rng, 100_000).unwrap();
    let path = vec![0usize; n_obs];
    let rows: Vec<usize> = (0..n_obs).collect();
    let mut successive = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y = simulate_emissions(&path, std::slice::from_ref(&p.omega), &mut rng).unwrap();
        ghs_update(&mut p, &StateScatter::from_rows(&y, &rows), &mut rng).unwrap();
        successive.push(pick(&p));
    }
    let names: Vec<String> = ["omega_12", "omega_23", "omega_33", "omega_12^2", "log tau2", "log lambda2_13", "log xi_tau"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    compare(&names, &marginal, &successive)
}
