//! Reductions and initialization of the full sampler.

mod common;

use nalgebra::{DMatrix, DVector};
use pibdfc::config::ModelConfig;
use pibdfc::data::{Dataset, SubjectData};
use pibdfc::dist::RngStream;
use pibdfc::ghs::{ghs_update, PrecisionState, StateScatter};
use pibdfc::mcmc::{run_chain, Sampler};
use pibdfc::metrics::{align_labels, apply_permutation};
use pibdfc::simgen::{random_precision, simulate_dataset, simulate_emissions, QRegime, SimSpec};
use pibdfc::states::forward_backward_sample;
use pibdfc::transition::transition_sequence;

#[test]
fn initialization_recovers_separated_regimes() {
    let r = 4;
    let spec = SimSpec {
        t: 400,
        r,
        n: 3,
        s: 2,
        adjacencies: vec![
            vec![vec![0; r]; r],
            (0..r).map(|j| (0..r).map(|k| u8::from(j != k)).collect()).collect(),
        ],
        q_regimes: vec![QRegime { covariate: 0.0, q: vec![vec![0.98, 0.02], vec![0.02, 0.98]] }],
        switch_times: vec![],
        target_mean_abs_pcorr: 0.3,
        seed: 12,
        initial_state: 0,
    };
    let (ds, truth) = simulate_dataset(&spec).unwrap();
    let cfg = ModelConfig { n_states: 2, ..Default::default() };
    let sampler = Sampler::new(ds, cfg, 1).unwrap();
    let init = &sampler.chain().sequences;
    let perm = align_labels(&truth.sequences, init, 2);
    let aligned = apply_permutation(init, &perm);
    let total: usize = aligned.iter().map(|s| s.len()).sum();
    let agree: usize = aligned
        .iter()
        .zip(&truth.sequences)
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x == y).count())
        .sum();
    let frac = agree as f64 / total as f64;
    println!("initial agreement {frac:.3}");
    assert!(frac >= 0.8);
}

/// Softmax rows computed directly, independent of the crate's transition code.
fn homogeneous_q(xi: &DMatrix<f64>) -> Vec<Vec<f64>> {
    xi.row_iter()
        .map(|row| {
            let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

#[test]
fn zero_covariates_give_a_homogeneous_chain() {
    let (s, t_len) = (3, 6);
    let xi = DMatrix::from_row_slice(s, s, &[0.0, -0.5, 0.3, 0.0, 1.2, -1.0, 0.0, 0.4, 0.9]);
    let rho = DMatrix::from_row_slice(s, 1, &[0.0, 3.0, -2.0]);
    let x = DMatrix::zeros(t_len, 1);
    let q_seq = transition_sequence(&xi, &rho, &x);
    let flat = DMatrix::zeros(t_len, s);
    let pi0 = DVector::from_element(s, 1.0 / s as f64);
    let q_ref = homogeneous_q(&xi);

    let reps = 100_000;
    let mut model = vec![0.0f64; t_len + 1];
    let mut reference = vec![0.0f64; t_len + 1];
    let mut rng = RngStream::new(31, 0);
    for _ in 0..reps {
        let path = forward_backward_sample(&flat, &q_seq, &pi0, &mut rng).unwrap();
        model[path.iter().filter(|&&v| v == 1).count()] += 1.0;
        let mut cur = rng.categorical(&[1.0; 3]);
        let mut n1 = usize::from(cur == 1);
        for _ in 1..t_len {
            cur = rng.categorical(&q_ref[cur]);
            n1 += usize::from(cur == 1);
        }
        reference[n1] += 1.0;
    }
    // two-sample chi-square on the occupancy-count distribution
    let mut stat = 0.0;
    let mut df = 0;
    for (a, b) in model.iter().zip(&reference) {
        if a + b > 0.0 {
            stat += (a - b).powi(2) / (a + b);
            df += 1;
        }
    }
    df -= 1;
    println!("chi2 {stat:.2} on {df} df");
    assert!(stat < common::chi2_critical_001(df));
}

#[test]
fn single_state_matches_standalone_horseshoe() {
    let r = 5;
    let adj = DMatrix::from_fn(r, r, |j, k| j.abs_diff(k) == 1);
    let mut rng = RngStream::new(2, 9);
    let omega = random_precision(&adj, 0.4, &mut rng, 1000).unwrap();
    let subjects: Vec<SubjectData> = (0..2)
        .map(|i| {
            let y = simulate_emissions(&[0; 80], std::slice::from_ref(&omega), &mut rng).unwrap();
            let x = DMatrix::from_fn(80, 2, |t, b| (t * (b + 1)) as f64 / 80.0);
            SubjectData::new(format!("{i}"), y, x).unwrap()
        })
        .collect();
    let ds = Dataset::new(subjects).unwrap();
    let cfg = ModelConfig { n_states: 1, n_burn: 500, n_samples: 4000, seed: 3, ..Default::default() };
    let draws = run_chain(&ds, &cfg, 1).unwrap();

    // standalone sampler on the pooled scatter with the same diagonal prior
    let sampler = Sampler::new(ds.clone(), cfg.clone(), 1).unwrap();
    let rate = sampler.chain().precisions[0].diag_prior_rate;
    let mut sc = StateScatter::empty(r);
    for subj in ds.subjects() {
        let rows: Vec<usize> = (0..subj.len()).collect();
        sc.add(&StateScatter::from_rows(&subj.series, &rows));
    }
    let mut p = PrecisionState::new(DMatrix::identity(r, r), cfg.tau0, rate);
    let mut srng = RngStream::new(77, 0);
    let mut standalone = Vec::new();
    for k in 0..4500 {
        ghs_update(&mut p, &sc, &mut srng).unwrap();
        if k >= 500 {
            standalone.push(p.omega.clone());
        }
    }
    for (j, k) in [(0, 0), (0, 1), (1, 2), (0, 3), (2, 4), (4, 4)] {
        let a: Vec<f64> = draws.omega[0].iter().map(|m| m[(j, k)]).collect();
        let b: Vec<f64> = standalone.iter().map(|m| m[(j, k)]).collect();
        let se = (common::batch_means_se(&a, 40).powi(2) + common::batch_means_se(&b, 40).powi(2)).sqrt();
        let z = (common::mean(&a) - common::mean(&b)) / se;
        println!("omega[{j},{k}]: chain {:.4} standalone {:.4} z {z:+.2}", common::mean(&a), common::mean(&b));
        assert!(z.abs() < 4.0);
    }
    assert!(draws.sequences.iter().flatten().flatten().all(|&s| s == 0));
}
