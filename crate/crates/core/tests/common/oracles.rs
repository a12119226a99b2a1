//! Independent reference implementations.

use nalgebra::{DMatrix, DVector};
use pibdfc::dist::{sample_pg, RngStream};
use pibdfc::selection::bfdr_select;
use pibdfc::states::forward_backward_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};

use super::{ks_critical, ks_statistic};

/// `PG(1, c) = 1/(2 pi^2) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2))`, `g_k ~ Exp(1)`,
/// truncated at 200 terms.
pub fn pg_oracle(c: f64, rng: &mut ChaCha20Rng) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let shift = c * c / (4.0 * pi2);
    let mut sum = 0.0;
    for k in 1..=200 {
        let g: f64 = Exp1.sample(rng);
        let h = k as f64 - 0.5;
        sum += g / (h * h + shift);
    }
    sum / (2.0 * pi2)
}

/// Two-sample KS of the sampler against the oracle at each tilt, Bonferroni
/// corrected at overall level 0.01: `(c, D, critical value)`.
pub fn pg_ks(cs: &[f64], n: usize) -> Vec<(f64, f64, f64)> {
    let alpha = 0.01 / cs.len() as f64;
    let mut oracle_rng = ChaCha20Rng::seed_from_u64(2024);
    cs.iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut rng = RngStream::new(17, i as u64);
            let a: Vec<f64> = (0..n).map(|_| sample_pg(&mut rng, c)).collect();
            let b: Vec<f64> = (0..n).map(|_| pg_oracle(c, &mut oracle_rng)).collect();
            (c, ks_statistic(&a, &b), ks_critical(alpha, n, n))
        })
        .collect()
}

fn random_stochastic(s: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let mut q = DMatrix::from_fn(s, s, |_, _| 0.05 + rng.uniform());
    for mut row in q.row_iter_mut() {
        let sum = row.sum();
        row /= sum;
    }
    q
}

fn enumerate_posterior(ll: &DMatrix<f64>, q: &[DMatrix<f64>], pi0: &DVector<f64>) -> Vec<(Vec<usize>, f64)> {
    let (t_len, s) = ll.shape();
    let total = s.pow(t_len as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let path: Vec<usize> = (0..t_len).map(|t| (code / s.pow(t as u32)) % s).collect();
        let mut w = pi0[path[0]] * ll[(0, path[0])].exp();
        for t in 1..t_len {
            w *= q[t - 1][(path[t - 1], path[t])] * ll[(t, path[t])].exp();
        }
        out.push((path, w));
    }
    let z: f64 = out.iter().map(|p| p.1).sum();
    out.iter_mut().for_each(|p| p.1 /= z);
    out
}

/// Path draws against exact enumeration: max frequency error and a chi-square
/// statistic with its degrees of freedom.
pub fn fb_check(t_len: usize, s: usize, draws: usize, seed: u64) -> (f64, f64, usize) {
    let mut rng = RngStream::new(seed, 0);
    let ll = DMatrix::from_fn(t_len, s, |_, _| 2.0 * rng.std_normal());
    let q: Vec<DMatrix<f64>> = (0..t_len - 1).map(|_| random_stochastic(s, &mut rng)).collect();
    let pi0 = DVector::from_fn(s, |_, _| 0.2 + rng.uniform());
    let pi0 = &pi0 / pi0.sum();
    let exact = enumerate_posterior(&ll, &q, &pi0);

    let mut counts = vec![0usize; exact.len()];
    let mut draw_rng = RngStream::new(seed, 1);
    for _ in 0..draws {
        let path = forward_backward_sample(&ll, &q, &pi0, &mut draw_rng).unwrap();
        let code: usize = path.iter().enumerate().map(|(t, &x)| x * s.pow(t as u32)).sum();
        counts[code] += 1;
    }
    let mut max_err = 0.0f64;
    let mut chi2 = 0.0;
    let mut df = 0;
    for ((_, p), &c) in exact.iter().zip(&counts) {
        let freq = c as f64 / draws as f64;
        max_err = max_err.max((freq - p).abs());
        let e = p * draws as f64;
        if e > 0.0 {
            chi2 += (c as f64 - e).powi(2) / e;
            df += 1;
        }
    }
    (max_err, chi2, df - 1)
}

/// Try every observed value as the threshold and keep the largest valid one.
pub fn bfdr_exhaustive(kappa: &[f64], q: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &eta in kappa {
        let sel: Vec<f64> = kappa.iter().copied().filter(|&k| k <= eta).collect();
        let bfdr = sel.iter().sum::<f64>() / sel.len() as f64;
        if bfdr < q && best.is_none_or(|b| eta > b) {
            best = Some(eta);
        }
    }
    best
}

pub fn random_kappa(rng: &mut RngStream) -> Vec<f64> {
    let n = 1 + (rng.uniform() * 20.0) as usize;
    let coarse = rng.uniform() < 0.3;
    (0..n)
        .map(|_| {
            let u = rng.uniform().powf(1.0 + 3.0 * rng.uniform());
            let u = if coarse { (u * 10.0).round() / 10.0 } else { u };
            u.clamp(1e-6, 1.0 - 1e-6)
        })
        .collect()
}

/// Exhaustive-search agreement, level control and monotonicity over random sets.
/// Returns the number of failing sets.
pub fn bfdr_mechanics(sets: usize, seed: u64) -> usize {
    let mut rng = RngStream::new(seed, 0);
    let levels = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8];
    let mut failures = 0;
    for _ in 0..sets {
        let kappa = random_kappa(&mut rng);
        let q = 0.05 + 0.5 * rng.uniform();
        let got = bfdr_select(&kappa, q);
        let want = bfdr_exhaustive(&kappa, q);
        let expect_sel: Vec<bool> = kappa.iter().map(|&k| want.is_some_and(|e| k <= e)).collect();
        let mut ok = got.eta_star == want && got.selected == expect_sel;
        if got.selected.iter().any(|&s| s) {
            ok &= got.achieved_bfdr < q;
        }
        let mut prev: Option<Vec<bool>> = None;
        for &level in &levels {
            let sel = bfdr_select(&kappa, level).selected;
            if let Some(p) = &prev {
                ok &= p.iter().zip(&sel).all(|(a, b)| !a || *b);
            }
            prev = Some(sel);
        }
        failures += usize::from(!ok);
    }
    failures
}
