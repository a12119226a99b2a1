//! Multi-subject time series with time-varying covariates.
//!
//! Files are headerless delimited text (comma or whitespace separated), one
//! row per time point. A JSON manifest lists the per-subject files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: `T x R` responses and `T x B` covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    pub series: DMatrix<f64>,
    pub covariates: DMatrix<f64>,
}

impl SubjectData {
    pub fn new(
        subject_id: impl Into<String>,
        series: DMatrix<f64>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if series.nrows() != covariates.nrows() {
            return Err(Error::data(format!(
                "subject {subject_id}: row mismatch between series ({} rows) and covariates ({} rows)",
                series.nrows(),
                covariates.nrows()
            )));
        }
        if series.nrows() < 2 {
            return Err(Error::data(format!(
                "subject {subject_id}: at least 2 time points required, found {}",
                series.nrows()
            )));
        }
        check_finite(&series, &subject_id, "series")?;
        check_finite(&covariates, &subject_id, "covariates")?;
        Ok(SubjectData {
            subject_id,
            series,
            covariates,
        })
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.series.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.series.nrows() == 0
    }
}

fn check_finite(m: &DMatrix<f64>, id: &str, what: &str) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::data(format!(
                    "subject {id} {what}: non-finite value at ({}, {})",
                    r + 1,
                    c + 1
                )));
            }
        }
    }
    Ok(())
}

/// Validated collection of subjects sharing region and covariate counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectData>,
    regions: usize,
    covariates: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectData>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::data("dataset has no subjects"))?;
        let (regions, covariates) = (first.series.ncols(), first.covariates.ncols());
        if regions == 0 {
            return Err(Error::data("dataset has zero regions"));
        }
        for s in &subjects {
            if s.series.ncols() != regions {
                return Err(Error::data(format!(
                    "subject {}: inconsistent region count {} (expected {regions})",
                    s.subject_id,
                    s.series.ncols()
                )));
            }
            if s.covariates.ncols() != covariates {
                return Err(Error::data(format!(
                    "subject {}: inconsistent covariate count {} (expected {covariates})",
                    s.subject_id,
                    s.covariates.ncols()
                )));
            }
        }
        Ok(Dataset {
            subjects,
            regions,
            covariates,
        })
    }

    pub fn subjects(&self) -> &[SubjectData] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_regions(&self) -> usize {
        self.regions
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates
    }

    pub fn total_time_points(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// Replace the series of subject `i`, keeping its covariates.
    pub fn replace_series(&mut self, i: usize, series: DMatrix<f64>) -> Result<()> {
        let old = &self.subjects[i];
        let new = SubjectData::new(old.subject_id.clone(), series, old.covariates.clone())?;
        if new.series.ncols() != self.regions {
            return Err(Error::data("inconsistent region count"));
        }
        self.subjects[i] = new;
        Ok(())
    }

    /// Subtract each region's per-subject mean. Covariates are left alone.
    pub fn center_series(mut self) -> Self {
        for s in &mut self.subjects {
            center_columns(&mut s.series);
        }
        self
    }

    /// z-score each covariate column within each subject; constant columns are kept as is.
    pub fn standardize_covariates(mut self) -> Self {
        for s in &mut self.subjects {
            let t = s.covariates.nrows() as f64;
            for mut col in s.covariates.column_iter_mut() {
                let mean = col.sum() / t;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
                if var > 0.0 {
                    let sd = var.sqrt();
                    col.apply(|x| *x = (*x - mean) / sd);
                }
            }
        }
        self
    }
}

fn center_columns(m: &mut DMatrix<f64>) {
    let t = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
        // second pass removes the rounding residue of the first
        let resid = col.sum() / t;
        col.add_scalar_mut(-resid);
    }
}

/// Parse a headerless delimited numeric table (commas and/or whitespace).
pub fn parse_table(text: &str, origin: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row_idx = rows.len() + 1;
        let mut row = Vec::new();
        for (col_idx, cell) in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|c| !c.is_empty())
            .enumerate()
        {
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!(
                    "{origin}: non-numeric cell {cell:?} at line {}",
                    line_no + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{origin}: non-finite value at ({row_idx}, {})",
                    col_idx + 1
                )));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::data(format!(
                    "{origin}: ragged row at line {} ({} columns, expected {})",
                    line_no + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Write a matrix as comma-separated text in shortest round-trip precision.
pub fn format_table(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            write!(out, "{}", m[(r, c)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_table(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, &path.display().to_string())
}

pub fn write_table(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_table(m)).map_err(|e| Error::io(path, e))
}

/// Load one subject per (series, covariates) file pair, preserving order.
pub fn load_dataset(series_paths: &[PathBuf], covariate_paths: &[PathBuf]) -> Result<Dataset> {
    if series_paths.len() != covariate_paths.len() {
        return Err(Error::data(format!(
            "{} series files but {} covariate files",
            series_paths.len(),
            covariate_paths.len()
        )));
    }
    let subjects = series_paths
        .iter()
        .zip(covariate_paths)
        .enumerate()
        .map(|(i, (sp, cp))| {
            let id = sp
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("subject{}", i + 1));
            SubjectData::new(id, read_table(sp)?, read_table(cp)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(subjects)
}

/// Entry of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub series: PathBuf,
    pub covariates: PathBuf,
}

/// JSON manifest listing subject ids and their files; relative paths are
/// resolved against the manifest's own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Resolved `(series, covariates)` paths of every subject.
    pub fn resolved_paths(&self, base: &Path) -> Vec<(PathBuf, PathBuf)> {
        self.subjects
            .iter()
            .map(|e| (base.join(&e.series), base.join(&e.covariates)))
            .collect()
    }

    pub fn load(&self, base: &Path) -> Result<Dataset> {
        let subjects = self
            .subjects
            .iter()
            .map(|e| {
                SubjectData::new(
                    e.id.clone(),
                    read_table(&base.join(&e.series))?,
                    read_table(&base.join(&e.covariates))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(subjects)
    }
}

/// Write every subject as `series_{id}.csv` / `covariates_{id}.csv` plus `manifest.json`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for s in dataset.subjects() {
        let series = PathBuf::from(format!("series_{}.csv", s.subject_id));
        let covariates = PathBuf::from(format!("covariates_{}.csv", s.subject_id));
        write_table(&dir.join(&series), &s.series)?;
        write_table(&dir.join(&covariates), &s.covariates)?;
        entries.push(ManifestEntry {
            id: s.subject_id.clone(),
            series,
            covariates,
        });
    }
    let manifest = DatasetManifest { subjects: entries };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}
