//! Scores of estimated graphs and state paths against a known truth.
//!
//! The edge "F1" here is the product `TPR * TNR`, not the harmonic mean of
//! precision and recall.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeScore {
    pub tpr: f64,
    pub tnr: f64,
    pub f1: f64,
}

/// Edge rates over the pairs `j < k`.
pub fn edge_metrics(truth: &DMatrix<bool>, est: &DMatrix<bool>) -> Result<EdgeScore> {
    if truth.shape() != est.shape() || truth.nrows() != truth.ncols() {
        return Err(Error::data(format!(
            "graph shape mismatch: truth {:?}, estimate {:?}",
            truth.shape(),
            est.shape()
        )));
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for k in 1..truth.nrows() {
        for j in 0..k {
            if truth[(j, k)] {
                pos += 1;
                tp += est[(j, k)] as usize;
            } else {
                neg += 1;
                tn += !est[(j, k)] as usize;
            }
        }
    }
    let tpr = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
    let tnr = if neg == 0 { 1.0 } else { tn as f64 / neg as f64 };
    Ok(EdgeScore { tpr, tnr, f1: tpr * tnr })
}

/// `counts[e][t]`: time points with estimate `e` and truth `t`.
fn overlap(truth: &[Vec<usize>], est: &[Vec<usize>], s: usize) -> Vec<Vec<i64>> {
    let mut c = vec![vec![0i64; s]; s];
    for (ts, es) in truth.iter().zip(est) {
        for (&t, &e) in ts.iter().zip(es) {
            c[e][t] += 1;
        }
    }
    c
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Label map `perm[estimated] = true` maximizing the matched time points.
///
/// `n_states` must cover the labels of both sides. Exhaustive search for up to
/// six states (ties go to the lexicographically first map), Hungarian
/// matching beyond.
pub fn align_labels(truth: &[Vec<usize>], est: &[Vec<usize>], n_states: usize) -> Vec<usize> {
    let c = overlap(truth, est, n_states);
    if n_states <= 6 {
        let mut best = (0..n_states).collect::<Vec<_>>();
        let mut best_score = -1;
        for p in permutations(n_states) {
            let score: i64 = (0..n_states).map(|e| c[e][p[e]]).sum();
            if score > best_score {
                best_score = score;
                best = p;
            }
        }
        best
    } else {
        let m = Matrix::from_rows(c).expect("square overlap matrix");
        kuhn_munkres(&m).1
    }
}

pub fn apply_permutation(seqs: &[Vec<usize>], perm: &[usize]) -> Vec<Vec<usize>> {
    seqs.iter().map(|s| s.iter().map(|&e| perm[e]).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateScore {
    /// `None` for states absent from the truth.
    pub accuracy: Vec<Option<f64>>,
    pub permutation: Vec<usize>,
}

/// Per-state fraction of true-`s` time points estimated as `s` after mapping
/// estimated labels through `perm`, pooled over subjects.
pub fn state_accuracy(truth: &[Vec<usize>], est: &[Vec<usize>], perm: &[usize]) -> StateScore {
    let s = perm.len();
    let mut hit = vec![0usize; s];
    let mut total = vec![0usize; s];
    for (ts, es) in truth.iter().zip(est) {
        for (&t, &e) in ts.iter().zip(es) {
            total[t] += 1;
            if perm[e] == t {
                hit[t] += 1;
            }
        }
    }
    StateScore {
        accuracy: (0..s)
            .map(|k| (total[k] > 0).then(|| hit[k] as f64 / total[k] as f64))
            .collect(),
        permutation: perm.to_vec(),
    }
}

/// Per-subject number of probabilities above `threshold`, and their mean.
pub fn count_change_points(probs: &[Vec<f64>], threshold: f64) -> (Vec<usize>, f64) {
    let counts: Vec<usize> = probs
        .iter()
        .map(|p| p.iter().filter(|&&x| x > threshold).count())
        .collect();
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    (counts, mean)
}

/// One `(metric, state, value)` row of a score table. `state` is 1-based;
/// 0 marks a value that is not tied to a state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreRow {
    pub metric: String,
    pub state: usize,
    pub value: Option<f64>,
}

pub fn format_scores(rows: &[ScoreRow]) -> String {
    let mut out = String::from("metric,state,value\n");
    for r in rows {
        let v = r.value.map_or_else(|| "NA".to_string(), |v| v.to_string());
        out.push_str(&format!("{},{},{}\n", r.metric, r.state, v));
    }
    out
}
