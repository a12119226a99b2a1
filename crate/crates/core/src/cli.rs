//! Command-line front end: `simulate`, `fit`, `score` and `report`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Without `--out`, results go under `$PIBDFC_OUT` (default `.`).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::config::{ModelConfig, Preset};
use crate::data::{read_table, DatasetManifest};
use crate::error::{Error, Result};
use crate::mcmc::{summarize, Sampler};
use crate::metrics::{align_labels, count_change_points, edge_metrics, format_scores, state_accuracy, ScoreRow};
use crate::output::{sha256_file, write_report, write_summary, write_trace, InputFile, RunManifest, RunResults, RunStatus};
use crate::selection::SelectionMode;
use crate::simgen::{read_sequence, save_simulation, simulate_dataset, SimSpec};

pub const OUT_ENV: &str = "PIBDFC_OUT";

#[derive(Debug, Parser)]
#[command(name = "pibdfc", version, about = "Covariate-informed Bayesian dynamic functional connectivity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and its generating truth.
    Simulate(SimulateArgs),
    /// Fit the model to a dataset manifest.
    Fit(FitArgs),
    /// Score a fitted run against a simulation truth directory.
    Score(ScoreArgs),
    /// Write plot-ready tables for a fitted run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation spec; defaults to the three-state, 16-region design.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subjects (default design only).
    #[arg(long, default_value_t = 30)]
    pub subjects: usize,
    /// Time points per subject (default design only).
    #[arg(long, default_value_t = 300)]
    pub time_points: usize,
    /// Mean absolute partial correlation of the edges (default design only).
    #[arg(long, default_value_t = 0.5)]
    pub signal: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset manifest (JSON) listing subject ids and files.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named hyperparameter profile: sim1 or case-study.
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub q_star: Option<f64>,
    /// bfdr, fixed_threshold or ci50.
    #[arg(long)]
    pub threshold_mode: Option<SelectionMode>,
    #[arg(long)]
    pub fixed_threshold: Option<f64>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Mean-center each region within each subject.
    #[arg(long)]
    pub center: bool,
    /// z-score each covariate within each subject.
    #[arg(long)]
    pub standardize_covariates: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Directory with `adjacency_state{s}.csv` and `states_subject{i}.csv`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Defaults to `<run>/scores.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
    root.join(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(p) => SimSpec::from_json_file(p)?,
        None => SimSpec::sim1(args.subjects, args.time_points, args.signal, 1),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let out = args.out.clone().unwrap_or_else(|| default_out("simulation"));
    create_dir(&out)?;
    let (dataset, truth) = simulate_dataset(&spec)?;
    save_simulation(&dataset, &truth, &spec, &out)?;
    Ok(out)
}

/// Configuration of a fit after applying presets, files and flag overrides.
pub fn resolve_config(args: &FitArgs) -> Result<ModelConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(p), _) => ModelConfig::from_json_file(p)?,
        (None, Some(p)) => ModelConfig::preset(p),
        (None, None) => ModelConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.q_star {
        cfg.q_star = v;
    }
    if let Some(v) = args.threshold_mode {
        cfg.selection_mode = v;
    }
    if let Some(v) = args.fixed_threshold {
        cfg.fixed_threshold = Some(v);
    }
    if let Some(v) = args.states {
        cfg.n_states = v;
    }
    if let Some(v) = args.burn {
        cfg.n_burn = v;
    }
    if let Some(v) = args.samples {
        cfg.n_samples = v;
    }
    if let Some(v) = args.thin {
        cfg.thin = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_fit(args: &FitArgs) -> Result<PathBuf> {
    let config = resolve_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| default_out("run"));
    let manifest_path = &args.manifest;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let data_manifest = DatasetManifest::read(manifest_path)?;
    let mut dataset = data_manifest.load(base)?;
    if args.center {
        dataset = dataset.center_series();
    }
    if args.standardize_covariates {
        dataset = dataset.standardize_covariates();
    }
    let mut inputs = vec![InputFile {
        path: manifest_path.display().to_string(),
        sha256: sha256_file(manifest_path)?,
    }];
    if let Some(c) = &args.config {
        inputs.push(InputFile {
            path: c.display().to_string(),
            sha256: sha256_file(c)?,
        });
    }
    for (s, c) in data_manifest.resolved_paths(base) {
        for p in [s, c] {
            inputs.push(InputFile {
                path: p.display().to_string(),
                sha256: sha256_file(&p)?,
            });
        }
    }
    create_dir(&out)?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "fit".to_string(),
        seed: config.seed,
        workers: args.workers,
        center: args.center,
        standardize_covariates: args.standardize_covariates,
        config: config.clone(),
        inputs,
        n_subjects: dataset.n_subjects(),
        n_regions: dataset.n_regions(),
        n_draws: 0,
        status: RunStatus::Failed,
        error: None,
        timings: BTreeMap::new(),
    };

    let clock = Instant::now();
    let sampled = Sampler::new(dataset.clone(), config.clone(), args.workers).and_then(|mut sampler| {
        manifest.timings.insert("initialize".into(), clock.elapsed().as_secs_f64());
        let clock = Instant::now();
        let draws = sampler.run();
        manifest.timings.insert("sample".into(), clock.elapsed().as_secs_f64());
        draws
    });
    let draws = match sampled {
        Ok(d) => d,
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.write(&out)?;
            return Err(e);
        }
    };
    manifest.n_draws = draws.len();
    write_trace(&out.join("trace.csv"), &draws)?;
    if draws.is_empty() {
        manifest.status = RunStatus::NoDraws;
        manifest.write(&out)?;
        return Ok(out);
    }
    let clock = Instant::now();
    let summary = summarize(&draws, &dataset, &config)?;
    write_summary(&out, &summary, &config)?;
    manifest.timings.insert("summarize".into(), clock.elapsed().as_secs_f64());
    manifest.status = RunStatus::Complete;
    manifest.write(&out)?;
    Ok(out)
}

fn read_truth(truth: &Path, n_subjects: usize) -> Result<(Vec<DMatrix<bool>>, Vec<Vec<usize>>)> {
    let mut adj = Vec::new();
    loop {
        let p = truth.join(format!("adjacency_state{}.csv", adj.len() + 1));
        if !p.exists() {
            break;
        }
        adj.push(read_table(&p)?.map(|v| v != 0.0));
    }
    if adj.is_empty() {
        return Err(Error::data(format!("{}: missing truth file adjacency_state1.csv", truth.display())));
    }
    let seqs = (1..=n_subjects)
        .map(|i| {
            let p = truth.join(format!("states_subject{i}.csv"));
            if !p.exists() {
                return Err(Error::data(format!("missing truth file {}", p.display())));
            }
            read_sequence(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((adj, seqs))
}

/// Score rows of a run against a truth directory.
pub fn score_run(run: &RunResults, truth_dir: &Path) -> Result<Vec<ScoreRow>> {
    let (true_adj, true_seqs) = read_truth(truth_dir, run.manifest.n_subjects)?;
    let r = run.manifest.n_regions;
    if let Some(a) = true_adj.iter().find(|a| a.nrows() != r) {
        return Err(Error::data(format!("region count mismatch: run has {r}, truth has {}", a.nrows())));
    }
    for (i, (t, e)) in true_seqs.iter().zip(&run.map_states).enumerate() {
        if t.len() != e.len() {
            return Err(Error::data(format!("subject {}: run and truth lengths differ", i + 1)));
        }
    }
    let s_run = run.adjacency.len();
    let s_true = true_adj.len();
    if let Some(&bad) = true_seqs.iter().flatten().find(|&&x| x >= s_true) {
        return Err(Error::data(format!("truth state {} has no adjacency file", bad + 1)));
    }
    let n = s_run.max(s_true);
    let perm = align_labels(&true_seqs, &run.map_states, n);
    let acc = state_accuracy(&true_seqs, &run.map_states, &perm);
    let mut rows = Vec::new();
    for (t, truth) in true_adj.iter().enumerate() {
        let e = perm.iter().position(|&p| p == t).expect("permutation");
        let score = if e < s_run { Some(edge_metrics(truth, &run.adjacency[e])?) } else { None };
        for (name, v) in [
            ("tpr", score.map(|s| s.tpr)),
            ("tnr", score.map(|s| s.tnr)),
            ("f1", score.map(|s| s.f1)),
            ("accuracy", acc.accuracy[t]),
        ] {
            rows.push(ScoreRow {
                metric: name.into(),
                state: t + 1,
                value: v,
            });
        }
    }
    let threshold = run.manifest.config.change_point_threshold;
    let (_, est_mean) = count_change_points(&run.change_prob, threshold);
    let true_mean = true_seqs
        .iter()
        .map(|s| s.windows(2).filter(|w| w[0] != w[1]).count() as f64)
        .sum::<f64>()
        / true_seqs.len() as f64;
    rows.push(ScoreRow {
        metric: "change_points_mean".into(),
        state: 0,
        value: Some(est_mean),
    });
    rows.push(ScoreRow {
        metric: "true_change_points_mean".into(),
        state: 0,
        value: Some(true_mean),
    });
    Ok(rows)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<PathBuf> {
    let run = RunResults::load(&args.run)?;
    let rows = score_run(&run, &args.truth)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("scores.csv"));
    fs::write(&out, format_scores(&rows)).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    let run = RunResults::load(&args.run)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("report"));
    write_report(&run, &out)?;
    Ok(out)
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
