//! Concordance with ties, the cross-validation harness and the nested
//! interval selection rule.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitPlan};
use crate::ecph::{self, fit_ecph, PenaltyConfig, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::joint::{fit_fast, fit_joint, joint_predict, FitMode, JointConfig};
use crate::model_io::write_atomic;
use crate::rng::derive_seed;

/// Slack on interval end points, so that boundaries equal up to rounding
/// still count as contained.
const CONTAINMENT_SLACK: f64 = 1e-12;

fn pair_sign(a_n: f64, a_m: f64, d_n: bool, d_m: bool) -> i64 {
    (a_n >= a_m && d_m) as i64 - (a_n <= a_m && d_n) as i64
}

/// Concordance index allowing ties in both the observed and the predicted
/// times. `delta_pred` defaults to all ones (predictions are uncensored).
/// Sums are kept as exact integers.
pub fn c_index(t_true: &[f64], delta: &[bool], t_pred: &[f64], delta_pred: Option<&[bool]>) -> Result<f64> {
    let n = t_true.len();
    if delta.len() != n || t_pred.len() != n || delta_pred.is_some_and(|d| d.len() != n) {
        return Err(Error::DimensionMismatch("c-index inputs differ in length".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("c-index needs at least two samples".into()));
    }
    if t_true.iter().chain(t_pred).any(|t| t.is_nan()) {
        return Err(Error::InvalidArgument("c-index input contains NaN".into()));
    }
    let dp = |i: usize| delta_pred.map_or(true, |d| d[i]);
    let (mut num, mut den) = (0i64, 0i64);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = pair_sign(t_true[i], t_true[j], delta[i], delta[j]);
            if a == 0 {
                continue;
            }
            num += a * pair_sign(t_pred[i], t_pred[j], dp(i), dp(j));
            den += a * a;
        }
    }
    if den == 0 {
        return Err(Error::UndefinedCIndex);
    }
    // ½(num/den + 1) as a single correctly rounded division
    Ok((num + den) as f64 / (2 * den) as f64)
}

/// Observed-covariate selector for the fixed ECPH-C candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub block: String,
    pub feature: String,
}

impl std::str::FromStr for FeatureRef {
    type Err = Error;

    /// Parses `block:feature`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((b, f)) if !b.is_empty() && !f.is_empty() => Ok(Self {
                block: b.to_string(),
                feature: f.to_string(),
            }),
            _ => Err(Error::InvalidArgument(format!("feature selector {s:?} is not block:feature"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelCandidate {
    FaEcphC { d_z: usize, fit_mode: FitMode },
    EcphCL1 { gamma: f64 },
    EcphCFixed { features: Vec<FeatureRef> },
}

impl ModelCandidate {
    pub fn id(&self) -> String {
        match self {
            ModelCandidate::FaEcphC { d_z, fit_mode } => format!("fa_ecph_c_dz{d_z}_{fit_mode}"),
            ModelCandidate::EcphCL1 { gamma } => format!("ecph_c_l1_gamma{gamma}"),
            ModelCandidate::EcphCFixed { features } => {
                let names: Vec<String> = features.iter().map(|f| format!("{}:{}", f.block, f.feature)).collect();
                format!("ecph_c_fixed_{}", names.join("+"))
            }
        }
    }

    /// Orders candidates from smaller to larger model: fixed covariates,
    /// then latent models by d_z, then lasso models by decreasing γ.
    fn parsimony_cmp(&self, other: &Self) -> Ordering {
        use ModelCandidate::*;
        let rank = |c: &Self| match c {
            EcphCFixed { .. } => 0,
            FaEcphC { .. } => 1,
            EcphCL1 { .. } => 2,
        };
        match (self, other) {
            (FaEcphC { d_z: a, .. }, FaEcphC { d_z: b, .. }) => a.cmp(b),
            (EcphCL1 { gamma: a }, EcphCL1 { gamma: b }) => b.total_cmp(a),
            (EcphCFixed { features: a }, EcphCFixed { features: b }) => a.len().cmp(&b.len()),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldError {
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub candidate_id: String,
    pub candidate: ModelCandidate,
    pub fold_cindices: Vec<f64>,
    /// Fold index of each entry of `fold_cindices`.
    pub folds: Vec<usize>,
    pub mean: f64,
    /// Population (divide by n) standard deviation over folds.
    pub std: f64,
    pub heywood_excluded: bool,
    pub fold_errors: Vec<FoldError>,
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvReport {
    /// Left out of selection: Heywood case on some fold, or no fold
    /// produced a c-index.
    pub fn excluded(&self) -> bool {
        self.heywood_excluded || self.fold_cindices.is_empty()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.std, self.mean + self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub joint: JointConfig,
    pub ecph_iterations: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            joint: JointConfig::default(),
            ecph_iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// All covariate rows stacked into one `p × N` matrix.
pub fn stacked_features(ds: &Dataset) -> DMatrix<f64> {
    let p: usize = ds.blocks.iter().map(|b| b.n_features()).sum();
    let mut x = DMatrix::zeros(p, ds.n_samples());
    let mut r = 0;
    for b in &ds.blocks {
        x.rows_mut(r, b.n_features()).copy_from(&b.values);
        r += b.n_features();
    }
    x
}

/// Rows of the selected features, in selector order.
pub fn selected_features(ds: &Dataset, features: &[FeatureRef]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(features.len(), ds.n_samples());
    for (r, f) in features.iter().enumerate() {
        let block = ds
            .blocks
            .iter()
            .find(|b| b.name == f.block)
            .ok_or_else(|| Error::InvalidArgument(format!("no block named {}", f.block)))?;
        let i = block
            .feature_names
            .iter()
            .position(|n| *n == f.feature)
            .ok_or_else(|| Error::InvalidArgument(format!("block {} has no feature {}", f.block, f.feature)))?;
        x.set_row(r, &block.values.row(i));
    }
    Ok(x)
}

/// Result of fitting a candidate and predicting on held-out samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePrediction {
    pub predictions: Vec<f64>,
    pub heywood: bool,
}

/// Fits `candidate` on `train` and predicts event times for `test`.
pub fn fit_and_predict(
    candidate: &ModelCandidate,
    train: &Dataset,
    test: &Dataset,
    config: &CvConfig,
    seed: u64,
) -> Result<CandidatePrediction> {
    let ecph_predict = |x_train: DMatrix<f64>, x_test: DMatrix<f64>, penalty: Option<PenaltyConfig>| {
        let fit = fit_ecph(&x_train, &train.survival, penalty.as_ref(), config.ecph_iterations)?;
        let predictions = x_test
            .column_iter()
            .map(|c| ecph::predict(&fit.event, c.as_slice()))
            .collect();
        Ok::<_, Error>(CandidatePrediction {
            predictions,
            heywood: false,
        })
    };
    match candidate {
        ModelCandidate::FaEcphC { d_z, fit_mode } => {
            let model = match fit_mode {
                FitMode::FastDecoupled => fit_fast(&train.blocks, &train.survival, *d_z, config.joint.fa)?,
                FitMode::FullMcem => fit_joint(&train.blocks, &train.survival, *d_z, &config.joint, seed)?,
            };
            Ok(CandidatePrediction {
                predictions: joint_predict(&model, &test.blocks)?,
                heywood: model.fa.heywood_flag,
            })
        }
        ModelCandidate::EcphCL1 { gamma } => ecph_predict(
            stacked_features(train),
            stacked_features(test),
            Some(PenaltyConfig::new(*gamma)),
        ),
        ModelCandidate::EcphCFixed { features } => ecph_predict(
            selected_features(train, features)?,
            selected_features(test, features)?,
            None,
        ),
    }
}

fn fold_cindex(
    candidate: &ModelCandidate,
    dataset: &Dataset,
    split: &SplitPlan,
    v: usize,
    config: &CvConfig,
    seed: u64,
) -> Result<(f64, bool)> {
    let train = dataset.subset(&split.training_for_fold(v));
    let val = dataset.subset(&split.folds[v]);
    let out = fit_and_predict(candidate, &train, &val, config, derive_seed(seed, &[v as u64]))?;
    let c = c_index(&val.times(), &val.events(), &out.predictions, None)?;
    Ok((c, out.heywood))
}

/// Cross-validates each candidate over the folds of `split`. Fold fits use a
/// seed derived from `seed` and the fold index only, so reports do not
/// depend on candidate order.
pub fn run_cv(
    dataset: &Dataset,
    candidates: &[ModelCandidate],
    split: &SplitPlan,
    config: &CvConfig,
    seed: u64,
) -> Result<Vec<CvReport>> {
    let n = dataset.n_samples();
    if split.folds.is_empty() || split.folds.iter().flatten().chain(&split.test_indices).any(|&i| i >= n) {
        return Err(Error::InvalidArgument("split does not match the dataset".into()));
    }
    let mut reports = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let id = cand.id();
        let mut report = CvReport {
            candidate_id: id.clone(),
            candidate: cand.clone(),
            fold_cindices: Vec::new(),
            folds: Vec::new(),
            mean: 0.0,
            std: 0.0,
            heywood_excluded: false,
            fold_errors: Vec::new(),
        };
        for v in 0..split.folds.len() {
            match fold_cindex(cand, dataset, split, v, config, seed) {
                Ok((c, heywood)) => {
                    report.fold_cindices.push(c);
                    report.folds.push(v);
                    if heywood {
                        warn!("{id}: fold {v} approached a Heywood case; candidate excluded");
                        report.heywood_excluded = true;
                    }
                }
                Err(e) => {
                    warn!("{id}: fold {v} skipped: {e}");
                    report.fold_errors.push(FoldError {
                        fold: v,
                        message: e.to_string(),
                    });
                }
            }
        }
        (report.mean, report.std) = mean_std(&report.fold_cindices);
        info!("{id}: c-index {:.4} ± {:.4}", report.mean, report.std);
        reports.push(report);
    }
    Ok(reports)
}

fn contains(outer: (f64, f64), inner: (f64, f64)) -> bool {
    inner.0 >= outer.0 - CONTAINMENT_SLACK && inner.1 <= outer.1 + CONTAINMENT_SLACK
}

/// Larger mean first; equal means go to the smaller model.
fn better(a: &CvReport, b: &CvReport) -> Ordering {
    b.mean
        .total_cmp(&a.mean)
        .then_with(|| a.candidate.parsimony_cmp(&b.candidate))
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Picks the largest mean, then repeatedly moves to the largest-mean report
/// whose `mean ± std` interval lies inside the current one.
pub fn select_model(reports: &[CvReport]) -> Result<String> {
    let mut pool: Vec<&CvReport> = reports.iter().filter(|r| !r.excluded()).collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument("every candidate is excluded".into()));
    }
    pool.sort_by(|a, b| better(a, b));
    let mut visited = vec![false; pool.len()];
    let mut cur = 0;
    visited[0] = true;
    while let Some(next) =
        (0..pool.len()).find(|&j| !visited[j] && contains(pool[cur].interval(), pool[j].interval()))
    {
        visited[next] = true;
        cur = next;
    }
    Ok(pool[cur].candidate_id.clone())
}

pub fn reports_to_json(reports: &[CvReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn reports_to_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("candidate,fold,c_index\n");
    for r in reports {
        for (v, c) in r.folds.iter().zip(&r.fold_cindices) {
            let _ = writeln!(out, "{},{},{}", r.candidate_id, v, c);
        }
    }
    out
}

pub fn write_reports(reports: &[CvReport], json_path: &Path, csv_path: &Path) -> Result<()> {
    write_atomic(json_path, reports_to_json(reports)?.as_bytes())?;
    write_atomic(csv_path, reports_to_csv(reports).as_bytes())
}
