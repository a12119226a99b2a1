//! Run directories: writing fit results, reading them back, and the
//! long-format report tables.
//!
//! States, subjects, regions and time points are 1-based in every file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::data::{read_table, write_table};
use crate::error::{Error, Result};
use crate::mcmc::{GroupEffects, PosteriorDraws, SubjectEffects, Summary};

pub const MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Sampling finished without stored draws; no summaries were written.
    NoDraws,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub center: bool,
    pub standardize_covariates: bool,
    pub config: ModelConfig,
    pub inputs: Vec<InputFile>,
    pub n_subjects: usize,
    pub n_regions: usize,
    pub n_draws: usize,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Wall-clock seconds per phase; the only field that varies between repeats.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SelectionInfo {
    mode: crate::selection::SelectionMode,
    q_star: f64,
    eta_star: Option<f64>,
    achieved_bfdr: f64,
    n_selected: usize,
}

/// Write every summary file of a finished run into `dir`.
pub fn write_summary(dir: &Path, summary: &Summary, config: &ModelConfig) -> Result<()> {
    for (s, st) in summary.states.iter().enumerate() {
        let k = s + 1;
        let sel = &st.selection;
        write_table(&dir.join(format!("omega_state{k}.csv")), &st.omega_mean)?;
        write_table(&dir.join(format!("partial_corr_state{k}.csv")), &sel.selected_partial_corr)?;
        let r = sel.adjacency.nrows();
        let mut edges = String::from("j,k,kappa_hat,partial_corr,selected\n");
        let mut n_selected = 0;
        for b in 1..r {
            for a in 0..b {
                let on = sel.adjacency[(a, b)];
                n_selected += on as usize;
                writeln!(
                    edges,
                    "{},{},{},{},{}",
                    a + 1,
                    b + 1,
                    sel.kappa_hat[(a, b)],
                    sel.partial_corr[(a, b)],
                    on as u8
                )
                .unwrap();
            }
        }
        write_text(&dir.join(format!("edges_state{k}.csv")), &edges)?;
        write_json(
            &dir.join(format!("selection_state{k}.json")),
            &SelectionInfo {
                mode: config.selection_mode,
                q_star: config.q_star,
                eta_star: sel.eta_star,
                achieved_bfdr: sel.achieved_bfdr,
                n_selected,
            },
        )?;
    }
    let n_states = summary.states.len();
    let mut occupancy = vec![0.0; n_states];
    let mut total = 0.0;
    for (i, sub) in summary.subjects.iter().enumerate() {
        let t_len = sub.map_states.len() as f64;
        total += t_len;
        for (o, p) in occupancy.iter_mut().zip(&sub.occupancy) {
            *o += p * t_len;
        }
        let mut text = String::from("t,map_state");
        for k in 1..=n_states {
            write!(text, ",prob_state{k}").unwrap();
        }
        text.push('\n');
        for (t, (m, probs)) in sub.map_states.iter().zip(&sub.state_prob).enumerate() {
            write!(text, "{},{}", t + 1, m + 1).unwrap();
            for p in probs {
                write!(text, ",{p}").unwrap();
            }
            text.push('\n');
        }
        write_text(&dir.join(format!("states_subject{}.csv", i + 1)), &text)?;
        let mut text = String::from("t,change_prob,flagged\n");
        for (t, p) in sub.change_point_prob.iter().enumerate() {
            // probability that the state at t+2 (1-based) differs from t+1
            writeln!(text, "{},{},{}", t + 2, p, (*p > config.change_point_threshold) as u8).unwrap();
        }
        write_text(&dir.join(format!("changepoints_subject{}.csv", i + 1)), &text)?;
    }
    let mut text = String::from("state,occupancy\n");
    for (k, o) in occupancy.iter().enumerate() {
        writeln!(text, "{},{}", k + 1, o / total).unwrap();
    }
    write_text(&dir.join("occupancy.csv"), &text)?;
    write_json(&dir.join("effects_group.json"), &summary.group)?;
    for (i, e) in summary.subject_effects.iter().enumerate() {
        write_json(&dir.join(format!("effects_subject{}.json", i + 1)), e)?;
    }
    Ok(())
}

/// Per-draw trace of scalar monitors.
pub fn write_trace(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let s = draws.n_states;
    let mut text = String::from("iteration");
    for k in 1..=s {
        write!(text, ",log_tau2_state{k}").unwrap();
    }
    for k in 1..=s {
        write!(text, ",occupancy_state{k}").unwrap();
    }
    if !draws.z.is_empty() {
        for r in 0..s {
            for c in 1..s {
                write!(text, ",z_{}_{}", r + 1, c + 1).unwrap();
            }
        }
        for c in 1..s {
            for b in 0..draws.eta[0].ncols() {
                write!(text, ",eta_{}_{}", c + 1, b + 1).unwrap();
            }
        }
    }
    text.push('\n');
    for d in 0..draws.len() {
        write!(text, "{}", draws.iterations[d]).unwrap();
        for k in 0..s {
            write!(text, ",{}", draws.tau2[k][d].ln()).unwrap();
        }
        let mut counts = vec![0usize; s];
        let mut total = 0usize;
        for subj in &draws.sequences {
            for &x in &subj[d] {
                counts[x as usize] += 1;
            }
            total += subj[d].len();
        }
        for c in counts {
            write!(text, ",{}", c as f64 / total as f64).unwrap();
        }
        for r in 0..s {
            for c in 1..s {
                write!(text, ",{}", draws.z[d][(r, c)]).unwrap();
            }
        }
        for c in 1..s {
            for b in 0..draws.eta[d].ncols() {
                write!(text, ",{}", draws.eta[d][(c, b)]).unwrap();
            }
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// A completed run loaded back from its directory.
#[derive(Clone, Debug)]
pub struct RunResults {
    pub manifest: RunManifest,
    /// `adjacency[s]`
    pub adjacency: Vec<DMatrix<bool>>,
    pub partial_corr: Vec<DMatrix<f64>>,
    /// 0-based MAP labels per subject.
    pub map_states: Vec<Vec<usize>>,
    /// `state_prob[i][t][s]`
    pub state_prob: Vec<Vec<Vec<f64>>>,
    /// `change_prob[i][t]` for the move into 1-based time `t + 2`.
    pub change_prob: Vec<Vec<f64>>,
    pub group: GroupEffects,
    pub subjects: Vec<SubjectEffects>,
}

fn parse_csv_with_header(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::data(format!("{}: non-numeric cell on line {}", path.display(), n + 2)))
                })
                .collect()
        })
        .collect()
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::data(format!("incomplete run directory: missing {}", path.display())))
    }
}

impl RunResults {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        match manifest.status {
            RunStatus::Complete => {}
            RunStatus::NoDraws => return Err(Error::data("no samples stored")),
            RunStatus::Failed => {
                return Err(Error::data(format!(
                    "incomplete run directory: the run failed ({})",
                    manifest.error.as_deref().unwrap_or("unknown error")
                )))
            }
        }
        let s = manifest.config.n_states;
        let r = manifest.n_regions;
        let mut adjacency = Vec::with_capacity(s);
        let mut partial_corr = Vec::with_capacity(s);
        for k in 1..=s {
            let rows = parse_csv_with_header(&existing(dir.join(format!("edges_state{k}.csv")))?)?;
            let mut a = DMatrix::from_element(r, r, false);
            for row in rows {
                if row.len() != 5 {
                    return Err(Error::data(format!("edges_state{k}.csv: expected 5 columns")));
                }
                let (j, l) = (row[0] as usize - 1, row[1] as usize - 1);
                if j >= r || l >= r {
                    return Err(Error::data(format!("edges_state{k}.csv: region index out of range")));
                }
                a[(j, l)] = row[4] == 1.0;
                a[(l, j)] = row[4] == 1.0;
            }
            adjacency.push(a);
            partial_corr.push(read_table(&existing(dir.join(format!("partial_corr_state{k}.csv")))?)?);
        }
        let mut map_states = Vec::new();
        let mut state_prob = Vec::new();
        let mut change_prob = Vec::new();
        let mut subjects = Vec::new();
        for i in 1..=manifest.n_subjects {
            let rows = parse_csv_with_header(&existing(dir.join(format!("states_subject{i}.csv")))?)?;
            map_states.push(rows.iter().map(|r| r[1] as usize - 1).collect());
            state_prob.push(rows.iter().map(|r| r[2..].to_vec()).collect());
            let rows = parse_csv_with_header(&existing(dir.join(format!("changepoints_subject{i}.csv")))?)?;
            change_prob.push(rows.iter().map(|r| r[1]).collect());
            subjects.push(read_json(&existing(dir.join(format!("effects_subject{i}.json")))?)?);
        }
        let group = read_json(&existing(dir.join("effects_group.json"))?)?;
        Ok(RunResults {
            manifest,
            adjacency,
            partial_corr,
            map_states,
            state_prob,
            change_prob,
            group,
            subjects,
        })
    }
}

/// Write the plot-ready long-format tables of a run into `out`:
/// `heatmap_state{s}.csv`, `raster_subject{i}.csv` and `effect_quantiles.csv`.
pub fn write_report(run: &RunResults, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for (s, (pc, adj)) in run.partial_corr.iter().zip(&run.adjacency).enumerate() {
        let mut text = String::from("j,k,partial_corr,selected\n");
        for j in 0..pc.nrows() {
            for k in 0..pc.ncols() {
                writeln!(text, "{},{},{},{}", j + 1, k + 1, pc[(j, k)], (j == k || adj[(j, k)]) as u8).unwrap();
            }
        }
        let p = out.join(format!("heatmap_state{}.csv", s + 1));
        write_text(&p, &text)?;
        written.push(p);
    }
    for (i, (map, probs)) in run.map_states.iter().zip(&run.state_prob).enumerate() {
        let mut text = String::from("t,state,probability,map\n");
        for (t, (m, p)) in map.iter().zip(probs).enumerate() {
            for (k, v) in p.iter().enumerate() {
                writeln!(text, "{},{},{},{}", t + 1, k + 1, v, (k == *m) as u8).unwrap();
            }
        }
        let p = out.join(format!("raster_subject{}.csv", i + 1));
        write_text(&p, &text)?;
        written.push(p);
    }
    let mut text = String::from("level,subject,effect,state,covariate,mean,q025,q50,q975\n");
    let mut rows = |level: &str, subject: &str, effect: &str, m: &[Vec<crate::mcmc::Quantiles>]| {
        for (s, row) in m.iter().enumerate() {
            for (b, q) in row.iter().enumerate() {
                writeln!(
                    text,
                    "{level},{subject},{effect},{},{},{},{},{},{}",
                    s + 1,
                    b + 1,
                    q.mean,
                    q.q025,
                    q.median,
                    q.q975
                )
                .unwrap();
            }
        }
    };
    rows("group", "", "exp_eta", &run.group.exp_eta);
    for e in &run.subjects {
        rows("subject", &e.subject_id, "exp_rho", &e.exp_rho);
    }
    let p = out.join("effect_quantiles.csv");
    write_text(&p, &text)?;
    written.push(p);
    Ok(written)
}
