//! Factor analysis over mixed covariate blocks.
//!
//! Every block shares the latent `z ~ N(0, I)`. Normal blocks are handled
//! exactly; binomial and multinomial blocks replace their likelihood with a
//! quadratic-in-z lower bound carrying per-sample variational parameters,
//! so the (approximate) posterior of `z` stays Gaussian and the whole model
//! is fitted by expectation-conditional-maximisation.

pub mod binomial;
pub mod bounds;
pub mod gaussian;
pub mod multinomial;
pub mod ppca;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BlockKind, CovariateBlock};
use crate::error::{Error, Result};
use crate::linalg::{ln_choose, ln_factorial, log_logistic, spd_inverse_logdet};

pub use bounds::{lambda_of_xi, log_sum_exp, log_sum_exp_bound, logistic_bound};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_REL_TOL: f64 = 1e-6;
/// A noise variance below this fraction of the feature's sample variance is
/// treated as a Heywood case.
pub const HEYWOOD_RATIO: f64 = 1e-8;
const HEYWOOD_FLOOR: f64 = 1e-300;

/// Loadings, means and (normal blocks only) diagonal noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub w: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// Empty for binomial and multinomial blocks.
    pub psi: DVector<f64>,
}

impl BlockParams {
    pub fn n_features(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_z(&self) -> usize {
        self.w.ncols()
    }
}

/// Per-sample variational parameters of a count block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// `d_x × N`, stored as the non-negative root.
    pub xi: DMatrix<f64>,
    /// Length N for multinomial blocks, empty otherwise.
    pub alpha: DVector<f64>,
}

impl VariationalState {
    pub fn initial(kind: BlockKind, d_x: usize, n: usize) -> Option<Self> {
        match kind {
            BlockKind::Normal => None,
            BlockKind::Binomial => Some(Self {
                xi: DMatrix::from_element(d_x, n, 1.0),
                alpha: DVector::zeros(0),
            }),
            BlockKind::Multinomial => Some(Self {
                xi: DMatrix::from_element(d_x, n, 1.0),
                alpha: DVector::from_element(n, 1.0),
            }),
        }
    }

    /// Every sample gets the same ξ column and α.
    pub fn broadcast(summary: &VariationalSummary, kind: BlockKind, n: usize) -> Self {
        let d = summary.xi_mean.len();
        Self {
            xi: DMatrix::from_fn(d, n, |i, _| summary.xi_mean[i]),
            alpha: if kind == BlockKind::Multinomial {
                DVector::from_element(n, summary.alpha_mean)
            } else {
                DVector::zeros(0)
            },
        }
    }

    pub fn summary(&self) -> VariationalSummary {
        let n = self.xi.ncols().max(1) as f64;
        VariationalSummary {
            xi_mean: DVector::from_iterator(
                self.xi.nrows(),
                self.xi.row_iter().map(|r| r.sum() / n),
            ),
            alpha_mean: if self.alpha.is_empty() {
                0.0
            } else {
                self.alpha.mean()
            },
        }
    }
}

/// Learning-set averages of the variational parameters, used for
/// individuals outside the learning set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalSummary {
    pub xi_mean: DVector<f64>,
    pub alpha_mean: f64,
}

/// Gaussian (approximate) posterior of each sample's latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    /// `d_z × N`, column n is `E[zₙ | xₙ]`.
    pub mean: DMatrix<f64>,
    /// `Cₙ` per sample.
    pub cov: Vec<DMatrix<f64>>,
}

impl LatentPosterior {
    pub fn n_samples(&self) -> usize {
        self.mean.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.mean.nrows()
    }

    /// `E[zₙzₙᵀ | xₙ] = Cₙ + E[zₙ]E[zₙ]ᵀ`.
    pub fn second_moment(&self, n: usize) -> DMatrix<f64> {
        let m = self.mean.column(n);
        &self.cov[n] + m * m.transpose()
    }

    /// `Σₙ E[zₙzₙᵀ | xₙ]`.
    pub fn second_moment_sum(&self) -> DMatrix<f64> {
        let d = self.d_z();
        let mut s = DMatrix::zeros(d, d);
        for (n, c) in self.cov.iter().enumerate() {
            s += c;
            let m = self.mean.column(n);
            s.ger(1.0, &m, &m, 1.0);
        }
        s
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            mean: self.mean.select_columns(indices),
            cov: indices.iter().map(|&i| self.cov[i].clone()).collect(),
        }
    }
}

/// One block of a fitted factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct FaBlock {
    pub name: String,
    pub kind: BlockKind,
    pub trials: u32,
    pub params: BlockParams,
    /// Per-sample variational parameters of the learning set.
    pub state: Option<VariationalState>,
    /// Averages of `state`, kept after the per-sample values are dropped.
    pub summary: Option<VariationalSummary>,
    pub feature_names: Vec<String>,
}

impl FaBlock {
    pub fn refresh_summary(&mut self) {
        self.summary = self.state.as_ref().map(VariationalState::summary);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaModel {
    pub d_z: usize,
    pub blocks: Vec<FaBlock>,
    pub heywood_flag: bool,
}

/// Inputs to the diverse E-step for one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockInput<'a> {
    pub kind: BlockKind,
    pub trials: u32,
    pub params: &'a BlockParams,
    pub state: Option<&'a VariationalState>,
    pub x: &'a DMatrix<f64>,
}

impl<'a> BlockInput<'a> {
    fn check(&self, d_z: usize, n: usize) -> Result<()> {
        let p = self.params;
        if p.w.ncols() != d_z || p.w.nrows() != self.x.nrows() || p.mu.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "block parameters {}×{} do not match data {}×{} with d_z = {d_z}",
                p.w.nrows(),
                p.w.ncols(),
                self.x.nrows(),
                self.x.ncols()
            )));
        }
        if self.x.ncols() != n {
            return Err(Error::DimensionMismatch("blocks disagree on sample count".into()));
        }
        match self.kind {
            BlockKind::Normal => {
                if p.psi.len() != p.w.nrows() || p.psi.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument(
                        "normal block needs positive noise variances".into(),
                    ));
                }
            }
            BlockKind::Binomial | BlockKind::Multinomial => {
                let s = self.state.ok_or_else(|| {
                    Error::InvalidArgument("count block without variational parameters".into())
                })?;
                if s.xi.shape() != self.x.shape() {
                    return Err(Error::DimensionMismatch("ξ shape differs from data".into()));
                }
                if self.kind == BlockKind::Multinomial && s.alpha.len() != n {
                    return Err(Error::DimensionMismatch("α length differs from N".into()));
                }
            }
        }
        Ok(())
    }
}

/// Quadratic form of the (bounded) log joint density in z for one sample:
/// `log p̃(x, z) = c + hᵀz − ½ zᵀ P z − (d_z/2) ln 2π`, with P including the
/// prior's identity.
#[derive(Debug, Clone)]
pub struct NaturalParams {
    pub precision: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub constant: f64,
}

/// Accumulates every block's contribution for each sample. Normal-block
/// terms that do not depend on n are computed once.
pub fn natural_params(d_z: usize, inputs: &[BlockInput<'_>], with_constant: bool) -> Result<Vec<NaturalParams>> {
    let n = inputs.first().map(|b| b.x.ncols()).unwrap_or(0);
    for b in inputs {
        b.check(d_z, n)?;
    }
    let mut shared = DMatrix::<f64>::identity(d_z, d_z);
    let mut shared_const = 0.0;
    let mut weighted_w: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(inputs.len());
    for b in inputs {
        if b.kind == BlockKind::Normal {
            let p = b.params;
            let mut wp = p.w.clone();
            for (i, mut row) in wp.row_iter_mut().enumerate() {
                row /= p.psi[i];
            }
            shared += p.w.tr_mul(&wp);
            if with_constant {
                shared_const += p
                    .psi
                    .iter()
                    .map(|&s| -0.5 * (2.0 * std::f64::consts::PI * s).ln())
                    .sum::<f64>();
            }
            weighted_w.push(Some(wp));
        } else {
            weighted_w.push(None);
        }
    }

    let mut out = Vec::with_capacity(n);
    for col in 0..n {
        let mut precision = shared.clone();
        let mut shift = DVector::zeros(d_z);
        let mut constant = shared_const;
        for (b, wp) in inputs.iter().zip(&weighted_w) {
            let p = b.params;
            let x = b.x.column(col);
            match b.kind {
                BlockKind::Normal => {
                    let wp = wp.as_ref().expect("normal block weights");
                    let centred = &x - &p.mu;
                    shift += wp.tr_mul(&centred);
                    if with_constant {
                        constant -= 0.5
                            * centred
                                .iter()
                                .zip(p.psi.iter())
                                .map(|(c, s)| c * c / s)
                                .sum::<f64>();
                    }
                }
                BlockKind::Binomial | BlockKind::Multinomial => {
                    let state = b.state.expect("checked");
                    let bf = b.trials as f64;
                    let alpha = if b.kind == BlockKind::Multinomial {
                        state.alpha[col]
                    } else {
                        0.0
                    };
                    for i in 0..p.n_features() {
                        let xi = state.xi[(i, col)];
                        let lam = lambda_of_xi(xi);
                        let offset = p.mu[i] - alpha;
                        let wi = p.w.row(i);
                        let coef = x[i] - bf / 2.0 - 2.0 * bf * lam * offset;
                        shift.axpy(coef, &wi.transpose(), 1.0);
                        precision.ger(2.0 * bf * lam, &wi.transpose(), &wi.transpose(), 1.0);
                        if with_constant {
                            constant += bf * log_logistic(xi) - 0.5 * bf * (offset + xi)
                                - bf * lam * (offset * offset - xi * xi)
                                + x[i] * p.mu[i];
                        }
                    }
                    if with_constant {
                        match b.kind {
                            BlockKind::Binomial => {
                                for i in 0..p.n_features() {
                                    constant += ln_choose(b.trials as u64, x[i].round() as u64);
                                }
                            }
                            _ => {
                                constant += ln_factorial(b.trials as u64)
                                    - x.iter().map(|&v| ln_factorial(v.round() as u64)).sum::<f64>()
                                    - bf * alpha;
                            }
                        }
                    }
                }
            }
        }
        crate::linalg::symmetrize(&mut precision);
        out.push(NaturalParams {
            precision,
            shift,
            constant,
        });
    }
    Ok(out)
}

/// Posterior of z given all blocks (exact for normal blocks, through the
/// bounds for count blocks).
pub fn diverse_estep(d_z: usize, inputs: &[BlockInput<'_>]) -> Result<LatentPosterior> {
    let nat = natural_params(d_z, inputs, false)?;
    posterior_from_natural(d_z, &nat)
}

pub(crate) fn posterior_from_natural(d_z: usize, nat: &[NaturalParams]) -> Result<LatentPosterior> {
    let n = nat.len();
    let mut mean = DMatrix::zeros(d_z, n);
    let mut cov = Vec::with_capacity(n);
    for (col, np) in nat.iter().enumerate() {
        let (c, _) = spd_inverse_logdet(&np.precision)?;
        mean.set_column(col, &(&c * &np.shift));
        cov.push(c);
    }
    Ok(LatentPosterior { mean, cov })
}

/// Objective tracked by the fitter: exact marginal log-likelihood for normal
/// blocks, the variational lower bound for count blocks, integrated over z.
pub fn objective_from_inputs(d_z: usize, inputs: &[BlockInput<'_>]) -> Result<f64> {
    let nat = natural_params(d_z, inputs, true)?;
    let mut total = 0.0;
    for np in &nat {
        let (c, logdet) = spd_inverse_logdet(&np.precision)?;
        total += np.constant + 0.5 * np.shift.dot(&(&c * &np.shift)) - 0.5 * logdet;
    }
    Ok(total)
}

impl FaModel {
    fn inputs<'a>(&'a self, blocks: &'a [CovariateBlock]) -> Result<Vec<BlockInput<'a>>> {
        if blocks.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} blocks, data has {}",
                self.blocks.len(),
                blocks.len()
            )));
        }
        Ok(self
            .blocks
            .iter()
            .zip(blocks)
            .map(|(m, d)| BlockInput {
                kind: m.kind,
                trials: m.trials,
                params: &m.params,
                state: m.state.as_ref(),
                x: &d.values,
            })
            .collect())
    }

    /// Posterior for the learning set, using the per-sample variational
    /// parameters.
    pub fn estep(&self, blocks: &[CovariateBlock]) -> Result<LatentPosterior> {
        diverse_estep(self.d_z, &self.inputs(blocks)?)
    }

    pub fn natural_params(&self, blocks: &[CovariateBlock]) -> Result<Vec<NaturalParams>> {
        natural_params(self.d_z, &self.inputs(blocks)?, false)
    }

    /// Copy of the model whose count blocks carry the learning-set average
    /// variational parameters for `n` new individuals.
    pub fn with_averaged_state(&self, n: usize) -> Result<Self> {
        let mut m = self.clone();
        for b in &mut m.blocks {
            if b.kind == BlockKind::Normal {
                continue;
            }
            let summary = b
                .summary
                .clone()
                .or_else(|| b.state.as_ref().map(VariationalState::summary))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("block {} has no variational summary", b.name))
                })?;
            b.state = Some(VariationalState::broadcast(&summary, b.kind, n));
            b.summary = Some(summary);
        }
        Ok(m)
    }

    /// Posterior for individuals outside the learning set.
    pub fn project(&self, blocks: &[CovariateBlock]) -> Result<LatentPosterior> {
        let n = blocks.first().map(|b| b.n_samples()).unwrap_or(0);
        self.with_averaged_state(n)?.estep(blocks)
    }

    pub fn block_params(&self) -> Vec<&BlockParams> {
        self.blocks.iter().map(|b| &b.params).collect()
    }
}

/// Sum over samples of the marginal log-density (normal blocks) or its
/// variational lower bound (count blocks).
pub fn fa_objective(model: &FaModel, blocks: &[CovariateBlock]) -> Result<f64> {
    objective_from_inputs(model.d_z, &model.inputs(blocks)?)
}

/// Sample variance per row, divide-by-N.
pub(crate) fn row_variances(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.ncols() as f64;
    x.row_iter()
        .map(|r| {
            let m = r.sum() / n;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .collect()
}

pub(crate) fn heywood_threshold(variance: f64) -> f64 {
    (HEYWOOD_RATIO * variance).max(HEYWOOD_FLOOR)
}

/// Applies one round of per-block conditional maximisation given the
/// posterior. Returns whether a Heywood clamp fired.
pub fn mstep_blocks(model: &mut FaModel, blocks: &[CovariateBlock], posterior: &LatentPosterior) -> Result<bool> {
    let mut heywood = false;
    for (mb, data) in model.blocks.iter_mut().zip(blocks) {
        match mb.kind {
            BlockKind::Normal => {
                let (p, flag) = gaussian::gaussian_mstep(&data.values, posterior)?;
                mb.params = p;
                heywood |= flag;
            }
            BlockKind::Binomial => {
                let state = mb.state.as_ref().expect("binomial state");
                let (p, s) = binomial::binomial_mstep(&mb.params, state, posterior, &data.values, mb.trials)?;
                mb.params = p;
                mb.state = Some(s);
            }
            BlockKind::Multinomial => {
                let state = mb.state.as_ref().expect("multinomial state");
                let (p, s) =
                    multinomial::multinomial_mstep(&mb.params, state, posterior, &data.values, mb.trials)?;
                mb.params = p;
                mb.state = Some(s);
            }
        }
    }
    Ok(heywood)
}

/// Initial model: a probabilistic-PCA warm start per block and all
/// variational parameters set to one.
pub fn initial_model(blocks: &[CovariateBlock], d_z: usize) -> Result<FaModel> {
    if d_z == 0 {
        return Err(Error::InvalidArgument("latent dimension must be at least 1".into()));
    }
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("factor analysis needs at least one block".into()));
    }
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut params = ppca::ml_init(&b.values, d_z)?;
        if b.kind != BlockKind::Normal {
            params.psi = DVector::zeros(0);
        }
        if b.kind == BlockKind::Multinomial {
            let last = params.w.nrows() - 1;
            params.w.row_mut(last).fill(0.0);
            params.mu[last] = 0.0;
        }
        let state = VariationalState::initial(b.kind, b.n_features(), b.n_samples());
        let mut fb = FaBlock {
            name: b.name.clone(),
            kind: b.kind,
            trials: b.trials,
            params,
            state,
            summary: None,
            feature_names: b.feature_names.clone(),
        };
        fb.refresh_summary();
        out.push(fb);
    }
    Ok(FaModel {
        d_z,
        blocks: out,
        heywood_flag: false,
    })
}

/// Heywood check on every normal block against the data's feature variances.
pub fn detect_heywood(model: &FaModel, blocks: &[CovariateBlock]) -> bool {
    model.blocks.iter().zip(blocks).any(|(mb, data)| {
        mb.kind == BlockKind::Normal
            && row_variances(&data.values)
                .iter()
                .zip(mb.params.psi.iter())
                .any(|(&var, &psi)| psi < HEYWOOD_RATIO * var || psi <= HEYWOOD_FLOOR)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for FaConfig {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Runs E- and M-steps from `model` until the relative change of the
/// objective drops below `rel_tol` or `max_iters` is reached.
pub fn refine(model: &mut FaModel, blocks: &[CovariateBlock], config: FaConfig) -> Result<LatentPosterior> {
    let mut prev = fa_objective(model, blocks)?;
    for it in 0..config.max_iters {
        let posterior = model.estep(blocks)?;
        model.heywood_flag |= mstep_blocks(model, blocks, &posterior)?;
        let obj = fa_objective(model, blocks)?;
        let rel = (obj - prev).abs() / prev.abs().max(1e-300);
        debug!("fa iteration {it}: objective {obj:.6} (rel change {rel:e})");
        if !obj.is_finite() {
            return Err(Error::Numerical("factor analysis objective is not finite".into()));
        }
        prev = obj;
        if rel < config.rel_tol {
            break;
        }
    }
    for b in &mut model.blocks {
        b.refresh_summary();
    }
    model.heywood_flag |= detect_heywood(model, blocks);
    if model.heywood_flag {
        warn!("factor analysis approached a Heywood case (d_z = {})", model.d_z);
    }
    model.estep(blocks)
}

/// Fits the factor model to every block of `blocks`.
pub fn fit_fa(blocks: &[CovariateBlock], d_z: usize, config: FaConfig) -> Result<(FaModel, LatentPosterior)> {
    let n = blocks.first().map(|b| b.n_samples()).unwrap_or(0);
    if n < 2 {
        return Err(Error::InvalidArgument("factor analysis needs at least two samples".into()));
    }
    let mut model = initial_model(blocks, d_z)?;
    let posterior = refine(&mut model, blocks, config)?;
    Ok((model, posterior))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_rejected() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 0.5]);
        let b = CovariateBlock::with_default_names("g", BlockKind::Normal, 1, x).unwrap();
        assert!(fit_fa(&[b], 0, FaConfig::default()).is_err());
    }

    #[test]
    fn broadcast_roundtrip() {
        let s = VariationalState {
            xi: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 4.0]),
            alpha: DVector::from_vec(vec![0.5, 1.5]),
        };
        let sum = s.summary();
        assert_eq!(sum.xi_mean.as_slice(), &[2.0, 2.0]);
        assert_eq!(sum.alpha_mean, 1.0);
        let b = VariationalState::broadcast(&sum, BlockKind::Multinomial, 3);
        assert_eq!(b.xi.ncols(), 3);
        assert_eq!(b.alpha.as_slice(), &[1.0, 1.0, 1.0]);
    }
}
