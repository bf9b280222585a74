//! Datasets: survival outcomes plus one or more covariate blocks, file
//! ingestion, the preprocessing filters, and test/cross-validation splits.
//!
//! Covariate matrices are stored features × samples, so column `j` of every
//! block belongs to `sample_ids[j]`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model_io::write_atomic;

/// Observed time (days) and event indicator for one individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }

    /// δ for the event hazard.
    pub fn delta_event(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }

    /// δ for the censoring hazard, 1 − δ.
    pub fn delta_censor(&self) -> f64 {
        1.0 - self.delta_event()
    }
}

/// Conditional distribution of a block given the latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Normal,
    Binomial,
    Multinomial,
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BlockKind::Normal => "normal",
            BlockKind::Binomial => "binomial",
            BlockKind::Multinomial => "multinomial",
        };
        f.write_str(s)
    }
}

/// One datatype: a `d_x × N` matrix and its conditional distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBlock {
    pub name: String,
    pub kind: BlockKind,
    /// Trial count `b`; ignored for normal blocks.
    pub trials: u32,
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
}

impl CovariateBlock {
    pub fn new(
        name: impl Into<String>,
        kind: BlockKind,
        trials: u32,
        values: DMatrix<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let block = Self {
            name: name.into(),
            kind,
            trials,
            values,
            feature_names,
        };
        block.validate()?;
        Ok(block)
    }

    /// Block with generated feature names `<name>_<i>`.
    pub fn with_default_names(
        name: impl Into<String>,
        kind: BlockKind,
        trials: u32,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let names = (0..values.nrows()).map(|i| format!("{name}_{i}")).collect();
        Self::new(name, kind, trials, values, names)
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_names.len() != self.values.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "block {}: {} feature names for {} rows",
                self.name,
                self.feature_names.len(),
                self.values.nrows()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "block {}: non-finite value",
                self.name
            )));
        }
        match self.kind {
            BlockKind::Normal => {}
            BlockKind::Binomial => {
                if self.trials == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "block {}: binomial trial count must be positive",
                        self.name
                    )));
                }
                let b = self.trials as f64;
                if let Some(v) = self
                    .values
                    .iter()
                    .find(|&&v| v.fract() != 0.0 || v < 0.0 || v > b)
                {
                    return Err(Error::InvalidArgument(format!(
                        "block {}: binomial entry {v} outside {{0,…,{}}}",
                        self.name, self.trials
                    )));
                }
            }
            BlockKind::Multinomial => {
                if self.trials == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "block {}: multinomial trial count must be positive",
                        self.name
                    )));
                }
                if self.values.nrows() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "block {}: multinomial needs at least two categories",
                        self.name
                    )));
                }
                let b = self.trials as f64;
                for (j, col) in self.values.column_iter().enumerate() {
                    if col.iter().any(|&v| v.fract() != 0.0 || v < 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "block {}: sample {j} has a non-integer or negative count",
                            self.name
                        )));
                    }
                    if col.sum() != b {
                        return Err(Error::InvalidArgument(format!(
                            "block {}: sample {j} counts sum to {} instead of {}",
                            self.name,
                            col.sum(),
                            self.trials
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            kind: self.kind,
            trials: self.trials,
            values: self.values.select_columns(indices),
            feature_names: self.feature_names.clone(),
        }
    }

    fn select_features(&self, rows: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            kind: self.kind,
            trials: self.trials,
            values: self.values.select_rows(rows),
            feature_names: rows.iter().map(|&i| self.feature_names[i].clone()).collect(),
        }
    }
}

/// A block as read from disk, before imputation. Missing cells carry
/// `observed == false`; their entry in `values` is meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub name: String,
    pub kind: BlockKind,
    pub trials: u32,
    pub values: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    pub feature_names: Vec<String>,
}

impl RawBlock {
    pub fn from_complete(block: CovariateBlock) -> Self {
        let observed = DMatrix::from_element(block.values.nrows(), block.values.ncols(), true);
        Self {
            name: block.name,
            kind: block.kind,
            trials: block.trials,
            values: block.values,
            observed,
            feature_names: block.feature_names,
        }
    }

    fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            kind: self.kind,
            trials: self.trials,
            values: self.values.select_columns(indices),
            observed: self.observed.select_columns(indices),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub blocks: Vec<CovariateBlock>,
    pub survival: Vec<SurvivalOutcome>,
    pub sample_ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        blocks: Vec<CovariateBlock>,
        survival: Vec<SurvivalOutcome>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            blocks,
            survival,
            sample_ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.survival.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.survival.len();
        if self.sample_ids.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} sample ids for {} survival records",
                self.sample_ids.len(),
                n
            )));
        }
        for block in &self.blocks {
            if block.n_samples() != n {
                return Err(Error::DimensionMismatch(format!(
                    "block {} has {} samples, expected {n}",
                    block.name,
                    block.n_samples()
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.select_samples(indices)).collect(),
            survival: indices.iter().map(|&i| self.survival[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.survival.iter().map(|s| s.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.survival.iter().map(|s| s.event).collect()
    }

    /// Stable digest of the block layout (names, kinds, trial counts, feature
    /// names). A fitted model records it so predictions on a differently
    /// shaped dataset can be refused.
    pub fn layout_hash(&self) -> String {
        layout_hash(self.blocks.iter().map(|b| {
            (
                b.name.as_str(),
                b.kind,
                b.trials,
                b.feature_names.as_slice(),
            )
        }))
    }
}

pub(crate) fn layout_hash<'a>(
    blocks: impl Iterator<Item = (&'a str, BlockKind, u32, &'a [String])>,
) -> String {
    let mut hasher = Sha256::new();
    for (name, kind, trials, features) in blocks {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(kind.to_string().as_bytes());
        hasher.update([0u8]);
        hasher.update(trials.to_le_bytes());
        for f in features {
            hasher.update(f.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([0xffu8]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Held-out test set plus cross-validation folds over the remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_indices: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SplitPlan {
    /// Indices used for cross-validation (all folds, sorted).
    pub fn learning_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    /// Training indices for fold `v`: every other fold.
    pub fn training_for_fold(&self, v: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != v)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub survival: PathBuf,
    #[serde(default, rename = "block")]
    pub blocks: Vec<ManifestBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestBlock {
    pub name: String,
    pub kind: BlockKind,
    #[serde(default = "default_trials")]
    pub b: u32,
    pub path: PathBuf,
}

fn default_trials() -> u32 {
    1
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })
    }
}

/// Raw, unimputed contents of a manifest, aligned by sample id.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub blocks: Vec<RawBlock>,
    pub survival: Vec<SurvivalOutcome>,
    pub sample_ids: Vec<String>,
}

struct RawMatrix {
    sample_ids: Vec<String>,
    feature_names: Vec<String>,
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
}

fn is_missing_token(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().next().unwrap_or("");
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        out.push((line, rec.iter().map(|c| c.trim().to_string()).collect()));
    }
    Ok(out)
}

fn check_unique_ids(path: &Path, line: usize, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::parse(path, line, format!("duplicate sample id {id:?}")));
        }
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<RawMatrix> {
    let records = read_records(path)?;
    let Some(((header_line, header), rows)) = records.split_first() else {
        return Err(Error::parse(path, 1, "empty matrix file"));
    };
    if header.len() < 2 {
        return Err(Error::parse(path, *header_line, "header has no sample ids"));
    }
    let sample_ids: Vec<String> = header[1..].to_vec();
    check_unique_ids(path, *header_line, &sample_ids)?;
    let n = sample_ids.len();
    let d = rows.len();
    let mut values = DMatrix::zeros(d, n);
    let mut observed = DMatrix::from_element(d, n, false);
    let mut feature_names = Vec::with_capacity(d);
    for (i, (line, row)) in rows.iter().enumerate() {
        if row.len() != n + 1 {
            return Err(Error::parse(
                path,
                *line,
                format!("expected {} cells, found {}", n + 1, row.len()),
            ));
        }
        feature_names.push(row[0].clone());
        for (j, cell) in row[1..].iter().enumerate() {
            if is_missing_token(cell) {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, *line, format!("non-numeric cell {cell:?} in column {}", j + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, *line, format!("non-finite cell {cell:?}")));
            }
            values[(i, j)] = v;
            observed[(i, j)] = true;
        }
    }
    Ok(RawMatrix {
        sample_ids,
        feature_names,
        values,
        observed,
    })
}

fn parse_event(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

/// Reads `(sample_id, time_days, event)` rows. Samples with a missing time or
/// event are dropped.
fn read_survival(path: &Path) -> Result<Vec<(String, SurvivalOutcome)>> {
    let records = read_records(path)?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for (k, (line, row)) in records.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::parse(
                path,
                *line,
                format!("expected 3 columns (sample_id, time_days, event), found {}", row.len()),
            ));
        }
        if k == 0 && row[1].parse::<f64>().is_err() && !is_missing_token(&row[1]) {
            continue; // header
        }
        if is_missing_token(&row[1]) || is_missing_token(&row[2]) {
            dropped += 1;
            continue;
        }
        let time: f64 = row[1]
            .parse()
            .map_err(|_| Error::parse(path, *line, format!("non-numeric time {:?}", row[1])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(Error::parse(path, *line, format!("invalid time {time}")));
        }
        let event = parse_event(&row[2])
            .ok_or_else(|| Error::parse(path, *line, format!("invalid event flag {:?}", row[2])))?;
        out.push((row[0].clone(), SurvivalOutcome::new(time, event)));
    }
    let ids: Vec<String> = out.iter().map(|(id, _)| id.clone()).collect();
    check_unique_ids(path, 0, &ids)?;
    if dropped > 0 {
        warn!(
            "{}: dropped {dropped} samples with missing survival",
            path.display()
        );
    }
    Ok(out)
}

/// Reads a manifest and its files, aligning blocks on the sample ids present
/// in every file (in survival-file order). Missing cells stay masked.
pub fn load_raw(manifest_path: &Path) -> Result<RawDataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let survival = read_survival(&base.join(&manifest.survival))?;
    let mut matrices = Vec::with_capacity(manifest.blocks.len());
    for mb in &manifest.blocks {
        matrices.push(read_matrix(&base.join(&mb.path))?);
    }

    let lookups: Vec<HashMap<&str, usize>> = matrices
        .iter()
        .map(|m| {
            m.sample_ids
                .iter()
                .enumerate()
                .map(|(j, id)| (id.as_str(), j))
                .collect()
        })
        .collect();
    let mut kept_ids = Vec::new();
    let mut kept_survival = Vec::new();
    let mut columns: Vec<Vec<usize>> = vec![Vec::new(); matrices.len()];
    for (id, outcome) in &survival {
        let cols: Option<Vec<usize>> = lookups.iter().map(|l| l.get(id.as_str()).copied()).collect();
        if let Some(cols) = cols {
            kept_ids.push(id.clone());
            kept_survival.push(*outcome);
            for (b, c) in cols.into_iter().enumerate() {
                columns[b].push(c);
            }
        }
    }
    let all_ids: HashSet<&str> = survival
        .iter()
        .map(|(id, _)| id.as_str())
        .chain(matrices.iter().flat_map(|m| m.sample_ids.iter().map(String::as_str)))
        .collect();
    let dropped = all_ids.len() - kept_ids.len();
    if dropped > 0 {
        warn!("dropped {dropped} samples not present in every file");
    }

    let blocks = manifest
        .blocks
        .iter()
        .zip(matrices)
        .zip(&columns)
        .map(|((mb, m), cols)| RawBlock {
            name: mb.name.clone(),
            kind: mb.kind,
            trials: mb.b,
            values: m.values.select_columns(cols),
            observed: m.observed.select_columns(cols),
            feature_names: m.feature_names,
        })
        .collect();
    Ok(RawDataset {
        blocks,
        survival: kept_survival,
        sample_ids: kept_ids,
    })
}

/// Loads a manifest, imputes missing covariates (10% tolerance) and replaces
/// zero survival times.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let raw = load_raw(manifest_path)?;
    let blocks = raw
        .blocks
        .into_iter()
        .map(|b| impute_missing(b, DEFAULT_MAX_MISSING))
        .collect::<Result<Vec<_>>>()?;
    let survival = if raw.survival.iter().any(|s| s.time == 0.0) {
        adjust_zero_times(&raw.survival)?
    } else {
        raw.survival
    };
    Dataset::new(blocks, survival, raw.sample_ids)
}

/// Restricts a raw dataset to a subset of samples (used before imputation
/// when a caller wants to drop individuals).
pub fn select_raw_samples(raw: &RawDataset, indices: &[usize]) -> RawDataset {
    RawDataset {
        blocks: raw.blocks.iter().map(|b| b.select_samples(indices)).collect(),
        survival: indices.iter().map(|&i| raw.survival[i]).collect(),
        sample_ids: indices.iter().map(|&i| raw.sample_ids[i].clone()).collect(),
    }
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Writes `dataset` as `<prefix>_manifest.toml`, one TSV per block and a
/// survival TSV inside `dir`. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        survival: PathBuf::from(format!("{prefix}_survival.tsv")),
        blocks: Vec::new(),
    };

    let mut surv = String::from("sample_id\ttime_days\tevent\n");
    for (id, s) in dataset.sample_ids.iter().zip(&dataset.survival) {
        surv.push_str(&format!(
            "{id}\t{}\t{}\n",
            format_value(s.time),
            u8::from(s.event)
        ));
    }
    write_atomic(&dir.join(&manifest.survival), surv.as_bytes())?;

    for block in &dataset.blocks {
        let file = PathBuf::from(format!("{prefix}_{}.tsv", block.name));
        let mut text = String::from("feature");
        for id in &dataset.sample_ids {
            text.push('\t');
            text.push_str(id);
        }
        text.push('\n');
        for (i, fname) in block.feature_names.iter().enumerate() {
            text.push_str(fname);
            for j in 0..block.n_samples() {
                text.push('\t');
                text.push_str(&format_value(block.values[(i, j)]));
            }
            text.push('\n');
        }
        write_atomic(&dir.join(&file), text.as_bytes())?;
        manifest.blocks.push(ManifestBlock {
            name: block.name.clone(),
            kind: block.kind,
            b: block.trials,
            path: file,
        });
    }

    let manifest_path = dir.join(format!("{prefix}_manifest.toml"));
    let text = toml::to_string(&manifest).map_err(|e| Error::Serialization(e.to_string()))?;
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// Preprocessing

pub const DEFAULT_MAX_MISSING: f64 = 0.10;

fn sample_variance(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = row.iter().sum::<f64>() / n;
    row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Keeps the `⌈keep_fraction · d_x⌉` features with the largest variance
/// across samples. Ties go to the lower original index; output rows keep
/// their original order.
pub fn variance_filter(block: &CovariateBlock, keep_fraction: f64) -> Result<CovariateBlock> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let d = block.n_features();
    if d == 0 {
        return Err(Error::InvalidArgument("variance_filter on an empty block".into()));
    }
    let keep = ((keep_fraction * d as f64).ceil() as usize).clamp(1, d);
    if keep == d {
        return Ok(block.clone());
    }
    if block.kind == BlockKind::Multinomial {
        return Err(Error::InvalidArgument(
            "variance_filter would break the multinomial sum constraint".into(),
        ));
    }
    let variances: Vec<f64> = (0..d)
        .map(|i| sample_variance(&block.values.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let mut rows: Vec<usize> = order[..keep].to_vec();
    rows.sort_unstable();
    Ok(block.select_features(&rows))
}

/// Rounds to the nearest integer with halves going toward zero.
fn round_half_toward_zero(v: f64) -> f64 {
    let r = v.round();
    if (v - v.trunc()).abs() == 0.5 {
        v.trunc()
    } else {
        r
    }
}

/// Drops features missing in more than `max_missing_fraction` of samples and
/// fills the remaining gaps with the feature's observed mean (rounded for
/// count data). Multinomial categories are never dropped individually; each
/// column's imputed entries are adjusted so the column sums to `b`.
pub fn impute_missing(raw: RawBlock, max_missing_fraction: f64) -> Result<CovariateBlock> {
    if !(0.0..=1.0).contains(&max_missing_fraction) {
        return Err(Error::InvalidArgument(format!(
            "max_missing_fraction must lie in [0, 1], got {max_missing_fraction}"
        )));
    }
    let (d, n) = raw.values.shape();
    let mut keep_rows = Vec::with_capacity(d);
    let mut means = vec![0.0; d];
    for i in 0..d {
        let obs: Vec<f64> = (0..n)
            .filter(|&j| raw.observed[(i, j)])
            .map(|j| raw.values[(i, j)])
            .collect();
        let missing = n - obs.len();
        if obs.is_empty() {
            if raw.kind == BlockKind::Multinomial {
                return Err(Error::InvalidArgument(format!(
                    "block {}: multinomial category {} is missing in every sample",
                    raw.name, raw.feature_names[i]
                )));
            }
            warn!(
                "block {}: feature {} missing in all samples, dropped",
                raw.name, raw.feature_names[i]
            );
            continue;
        }
        if raw.kind != BlockKind::Multinomial && missing as f64 > max_missing_fraction * n as f64 {
            continue;
        }
        means[i] = obs.iter().sum::<f64>() / obs.len() as f64;
        keep_rows.push(i);
    }
    let dropped = d - keep_rows.len();
    if dropped > 0 {
        warn!(
            "block {}: dropped {dropped} features over the missingness threshold",
            raw.name
        );
    }

    let mut values = raw.values.select_rows(&keep_rows);
    let observed = raw.observed.select_rows(&keep_rows);
    let b = raw.trials as f64;
    for (r, &i) in keep_rows.iter().enumerate() {
        let fill = match raw.kind {
            BlockKind::Normal => means[i],
            BlockKind::Binomial | BlockKind::Multinomial => {
                round_half_toward_zero(means[i]).clamp(0.0, b)
            }
        };
        for j in 0..n {
            if !observed[(r, j)] {
                values[(r, j)] = fill;
            }
        }
    }
    if raw.kind == BlockKind::Multinomial {
        for j in 0..n {
            let imputed: Vec<usize> = (0..keep_rows.len()).filter(|&r| !observed[(r, j)]).collect();
            if imputed.is_empty() {
                continue;
            }
            let mut deficit = b - values.column(j).sum();
            for &r in &imputed {
                if deficit == 0.0 {
                    break;
                }
                if deficit > 0.0 {
                    values[(r, j)] += deficit;
                    deficit = 0.0;
                } else {
                    let take = values[(r, j)].min(-deficit);
                    values[(r, j)] -= take;
                    deficit += take;
                }
            }
            if deficit != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "block {}: sample {j} observed counts exceed {}",
                    raw.name, raw.trials
                )));
            }
        }
    }
    CovariateBlock::new(
        raw.name,
        raw.kind,
        raw.trials,
        values,
        keep_rows.iter().map(|&i| raw.feature_names[i].clone()).collect(),
    )
}

/// Replaces zero times by one tenth of the smallest positive time.
pub fn adjust_zero_times(survival: &[SurvivalOutcome]) -> Result<Vec<SurvivalOutcome>> {
    if let Some(bad) = survival.iter().find(|s| !(s.time >= 0.0) || !s.time.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid survival time {}", bad.time)));
    }
    let min_pos = survival
        .iter()
        .map(|s| s.time)
        .filter(|&t| t > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return Err(Error::InvalidArgument(
            "all survival times are zero; no reference scale".into(),
        ));
    }
    let replacement = min_pos / 10.0;
    Ok(survival
        .iter()
        .map(|s| SurvivalOutcome {
            time: if s.time == 0.0 { replacement } else { s.time },
            event: s.event,
        })
        .collect())
}

/// Per-feature z-scoring of a normal block (sample standard deviation;
/// constant features are only centred).
pub fn standardize(block: &CovariateBlock) -> Result<CovariateBlock> {
    if block.kind != BlockKind::Normal {
        return Err(Error::InvalidArgument(
            "only normal blocks can be standardized".into(),
        ));
    }
    let mut out = block.clone();
    for mut row in out.values.row_iter_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = sample_variance(&row.iter().copied().collect::<Vec<_>>());
        let sd = var.sqrt();
        for v in row.iter_mut() {
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
    Ok(out)
}

/// Uniform random test/fold assignment driven only by `seed`.
pub fn make_split(n: usize, test_fraction: f64, n_folds: usize, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    if n_folds < 1 {
        return Err(Error::InvalidArgument("need at least one fold".into()));
    }
    if n < n_folds + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot be split into {n_folds} folds plus a test set"
        )));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    let remaining = n - n_test;
    if remaining < n_folds {
        return Err(Error::InvalidArgument(format!(
            "{remaining} learning samples cannot fill {n_folds} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut test_indices = perm[..n_test].to_vec();
    test_indices.sort_unstable();
    let rest = &perm[n_test..];
    let base = remaining / n_folds;
    let extra = remaining % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for v in 0..n_folds {
        let size = base + usize::from(v < extra);
        let mut fold = rest[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(SplitPlan {
        test_indices,
        folds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normal_block(rows: &[&[f64]]) -> CovariateBlock {
        let d = rows.len();
        let n = rows[0].len();
        let m = DMatrix::from_fn(d, n, |i, j| rows[i][j]);
        CovariateBlock::with_default_names("x", BlockKind::Normal, 1, m).unwrap()
    }

    #[test]
    fn variance_filter_keeps_top_variance() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![0.0, i as f64, 2.0 * i as f64])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let block = normal_block(&refs);
        let out = variance_filter(&block, 0.3).unwrap();
        assert_eq!(out.n_features(), 3);
        assert_eq!(out.feature_names, vec!["x_7", "x_8", "x_9"]);
    }

    #[test]
    fn variance_filter_ties_by_index() {
        let block = normal_block(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[4.0, 4.0]]);
        let out = variance_filter(&block, 0.5).unwrap();
        assert_eq!(out.feature_names, vec!["x_0", "x_1"]);
    }

    #[test]
    fn variance_filter_identity_and_errors() {
        let block = normal_block(&[&[1.0, 2.0], &[5.0, 3.0]]);
        assert_eq!(variance_filter(&block, 1.0).unwrap(), block);
        assert!(variance_filter(&block, 0.0).is_err());
        assert!(variance_filter(&block, -0.5).is_err());
    }

    fn raw(rows: &[&[Option<f64>]], kind: BlockKind, b: u32) -> RawBlock {
        let d = rows.len();
        let n = rows[0].len();
        RawBlock {
            name: "r".into(),
            kind,
            trials: b,
            values: DMatrix::from_fn(d, n, |i, j| rows[i][j].unwrap_or(0.0)),
            observed: DMatrix::from_fn(d, n, |i, j| rows[i][j].is_some()),
            feature_names: (0..d).map(|i| format!("f{i}")).collect(),
        }
    }

    #[test]
    fn impute_mean_fill() {
        let out = impute_missing(
            raw(&[&[Some(1.0), None, Some(3.0)]], BlockKind::Normal, 1),
            0.5,
        )
        .unwrap();
        assert_eq!(out.values.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn impute_drops_over_threshold() {
        // 3 of 20 samples missing = 15% > 10%
        let mut row: Vec<Option<f64>> = (0..20).map(|j| Some(j as f64)).collect();
        row[0] = None;
        row[5] = None;
        row[9] = None;
        let keep: Vec<Option<f64>> = (0..20).map(|j| Some(j as f64)).collect();
        let out = impute_missing(raw(&[&row, &keep], BlockKind::Normal, 1), 0.10).unwrap();
        assert_eq!(out.feature_names, vec!["f1"]);
    }

    #[test]
    fn impute_all_missing_feature_dropped() {
        let out = impute_missing(
            raw(&[&[None, None], &[Some(1.0), Some(2.0)]], BlockKind::Normal, 1),
            1.0,
        )
        .unwrap();
        assert_eq!(out.feature_names, vec!["f1"]);
    }

    #[test]
    fn impute_no_missing_identity() {
        let block = normal_block(&[&[1.5, 2.0, -1.0]]);
        let out = impute_missing(RawBlock::from_complete(block.clone()), 0.1).unwrap();
        assert_eq!(out, block);
    }

    #[test]
    fn impute_binomial_rounds_half_toward_zero() {
        // observed mean 0.5 -> 0
        let out = impute_missing(
            raw(&[&[Some(0.0), Some(1.0), None]], BlockKind::Binomial, 1),
            0.5,
        )
        .unwrap();
        assert_eq!(out.values[(0, 2)], 0.0);
        // observed mean 1.5 with b=2 -> 1
        let out = impute_missing(
            raw(&[&[Some(1.0), Some(2.0), None]], BlockKind::Binomial, 2),
            0.5,
        )
        .unwrap();
        assert_eq!(out.values[(0, 2)], 1.0);
    }

    #[test]
    fn impute_multinomial_keeps_column_sum() {
        let out = impute_missing(
            raw(
                &[
                    &[Some(1.0), Some(1.0), Some(0.0), None],
                    &[Some(0.0), Some(0.0), Some(1.0), None],
                    &[Some(0.0), Some(0.0), Some(0.0), None],
                ],
                BlockKind::Multinomial,
                1,
            ),
            0.5,
        )
        .unwrap();
        for col in out.values.column_iter() {
            assert_eq!(col.sum(), 1.0);
        }
    }

    #[test]
    fn zero_times() {
        let s = |ts: &[f64]| ts.iter().map(|&t| SurvivalOutcome::new(t, true)).collect::<Vec<_>>();
        let times = |v: Vec<SurvivalOutcome>| v.iter().map(|s| s.time).collect::<Vec<_>>();
        assert_eq!(times(adjust_zero_times(&s(&[0.0, 5.0, 10.0])).unwrap()), vec![0.5, 5.0, 10.0]);
        assert_eq!(times(adjust_zero_times(&s(&[1.0, 2.0])).unwrap()), vec![1.0, 2.0]);
        let adj = times(adjust_zero_times(&s(&[0.0, 0.0, 3.0])).unwrap());
        assert_eq!(adj, vec![3.0 / 10.0, 3.0 / 10.0, 3.0]);
        assert!(adjust_zero_times(&s(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn split_counts() {
        let p = make_split(100, 0.25, 5, 7).unwrap();
        assert_eq!(p.test_indices.len(), 25);
        assert!(p.folds.iter().all(|f| f.len() == 15));
        let p = make_split(8, 0.25, 2, 1).unwrap();
        assert_eq!(p.test_indices.len(), 2);
        assert_eq!(p.folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3]);
        assert!(make_split(3, 0.25, 5, 1).is_err());
    }

    #[test]
    fn split_deterministic() {
        assert_eq!(make_split(57, 0.25, 5, 42).unwrap(), make_split(57, 0.25, 5, 42).unwrap());
        assert_ne!(make_split(57, 0.25, 5, 42).unwrap(), make_split(57, 0.25, 5, 43).unwrap());
    }

    #[test]
    fn block_invariants_enforced() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        assert!(CovariateBlock::with_default_names("b", BlockKind::Binomial, 2, m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(CovariateBlock::with_default_names("m", BlockKind::Multinomial, 1, m).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 6usize..200, folds in 1usize..6, frac in 0.0f64..0.5, seed: u64) {
            prop_assume!(n >= folds + 1);
            let Ok(p) = make_split(n, frac, folds, seed) else { return Ok(()); };
            let mut all: Vec<usize> = p.test_indices.clone();
            for f in &p.folds { all.extend(f); }
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn variance_filter_idempotent(vals in proptest::collection::vec(-5.0f64..5.0, 24), frac in 0.05f64..1.0) {
            let m = DMatrix::from_vec(6, 4, vals);
            let block = CovariateBlock::with_default_names("x", BlockKind::Normal, 1, m).unwrap();
            let once = variance_filter(&block, frac).unwrap();
            let twice = variance_filter(&once, frac).unwrap();
            // ⌈f·⌈f·d⌉⌉ can be smaller than ⌈f·d⌉, so compare on the retained top set
            prop_assert!(twice.feature_names.iter().all(|n| once.feature_names.contains(n)));
            let again = variance_filter(&block, frac).unwrap();
            prop_assert_eq!(once, again);
        }

        #[test]
        fn imputation_preserves_observed(vals in proptest::collection::vec(-5.0f64..5.0, 30), mask in proptest::collection::vec(any::<bool>(), 30)) {
            let rb = RawBlock {
                name: "r".into(), kind: BlockKind::Normal, trials: 1,
                values: DMatrix::from_vec(3, 10, vals.clone()),
                observed: DMatrix::from_vec(3, 10, mask.clone()),
                feature_names: vec!["a".into(), "b".into(), "c".into()],
            };
            let out = impute_missing(rb.clone(), 1.0).unwrap();
            for (r, name) in out.feature_names.iter().enumerate() {
                let i = rb.feature_names.iter().position(|f| f == name).unwrap();
                for j in 0..10 {
                    if rb.observed[(i, j)] {
                        prop_assert_eq!(out.values[(r, j)].to_bits(), rb.values[(i, j)].to_bits());
                    }
                }
            }
        }

        #[test]
        fn zero_time_adjustment_order(ts in proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..100.0], 1..30)) {
            prop_assume!(ts.iter().any(|&t| t > 0.0));
            let s: Vec<SurvivalOutcome> = ts.iter().map(|&t| SurvivalOutcome::new(t, true)).collect();
            let out = adjust_zero_times(&s).unwrap();
            for (a, b) in out.iter().zip(&s) {
                prop_assert!(a.time > 0.0);
                if b.time > 0.0 { prop_assert_eq!(a.time, b.time); }
            }
        }
    }
}
