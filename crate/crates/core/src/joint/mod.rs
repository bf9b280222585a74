//! The joint factor-analysis / exponential-hazards model: Monte-Carlo EM
//! with a Metropolis E-step, the fast decoupled fit, and prediction.

pub mod mh;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use mh::{diagnostics, ess_rhat, mh_sample, tune_kappa, ChainDiagnostics, KappaChoice, MhConfig, SampleTarget};

use crate::data::{CovariateBlock, SurvivalOutcome};
use crate::ecph::{fit_ecph, initial_log_rate, Hazard, HazardParams, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::fa::{detect_heywood, fit_fa, mstep_blocks, FaConfig, FaModel, LatentPosterior};
use crate::linalg::{cholesky_with_ridge, spd_inverse_logdet};
use crate::rng::derive_seed;

pub const DEFAULT_GEM_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    FullMcem,
    FastDecoupled,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitMode::FullMcem => "full_mcem",
            FitMode::FastDecoupled => "fast_decoupled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub fa: FaModel,
    /// Event hazard on `z̃ = (1, zᵀ)ᵀ`.
    pub w_t: HazardParams,
    /// Censoring hazard on `z̃`.
    pub w_c: HazardParams,
    /// Proposal scale used by the sampler; 0 when no sampling was done.
    pub kappa_used: f64,
    pub fit_mode: FitMode,
}

impl JointModel {
    pub fn d_z(&self) -> usize {
        self.fa.d_z
    }

    /// Per-sample sampling targets for the learning set, using each sample's
    /// own variational parameters.
    pub fn targets(&self, blocks: &[CovariateBlock], survival: &[SurvivalOutcome]) -> Result<Vec<SampleTarget>> {
        let nat = self.fa.natural_params(blocks)?;
        if nat.len() != survival.len() {
            return Err(Error::DimensionMismatch("covariates and survival differ in sample count".into()));
        }
        Ok(nat
            .iter()
            .zip(survival)
            .map(|(np, s)| SampleTarget::new(np, *s, &self.w_t, &self.w_c))
            .collect())
    }

    /// `log p(t̃ₙ, δₙ | z) + Σ_d log p̃(xₙ⁽ᵈ⁾ | z) + log p(z)` up to a constant
    /// in z, for learning-set sample `n`.
    pub fn conditional_log_density(
        &self,
        blocks: &[CovariateBlock],
        survival: &[SurvivalOutcome],
        n: usize,
        z: &DVector<f64>,
    ) -> Result<f64> {
        let targets = self.targets(blocks, survival)?;
        let t = targets
            .get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {n} out of range")))?;
        Ok(t.log_density(z))
    }
}

/// Monte-Carlo moments of one individual's draws used by the hazard update.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardMoments {
    /// `E[z̃]`
    pub mean: DVector<f64>,
    /// `E[z̃ exp(wᵀz̃)]`
    pub exp_mean: DVector<f64>,
    /// `E[z̃z̃ᵀ exp(wᵀz̃)]`
    pub exp_second: DMatrix<f64>,
}

/// Sample averages over the columns of `draws` (`d_z × K`) at `w`.
pub fn hazard_moments(w: &HazardParams, draws: &DMatrix<f64>) -> HazardMoments {
    let d1 = draws.nrows() + 1;
    let k = draws.ncols() as f64;
    let mut mean = DVector::zeros(d1);
    let mut exp_mean = DVector::zeros(d1);
    let mut exp_second = DMatrix::zeros(d1, d1);
    let mut zt = DVector::zeros(d1);
    zt[0] = 1.0;
    for col in draws.column_iter() {
        zt.rows_mut(1, d1 - 1).copy_from(&col);
        let e = w.w.dot(&zt).exp();
        mean += &zt;
        exp_mean.axpy(e, &zt, 1.0);
        exp_second.ger(e, &zt, &zt, 1.0);
    }
    HazardMoments {
        mean: mean / k,
        exp_mean: exp_mean / k,
        exp_second: exp_second / k,
    }
}

/// One damped Newton step `w + a·H⁻¹g` with
/// `H = Σ t̃ E[z̃z̃ᵀe^{wᵀz̃}]`, `g = Σ (δE[z̃] − t̃E[z̃e^{wᵀz̃}])`.
pub fn newton_mstep_w(
    w: &HazardParams,
    moments: &[HazardMoments],
    survival: &[SurvivalOutcome],
    hazard: Hazard,
    step: f64,
) -> Result<HazardParams> {
    if moments.len() != survival.len() {
        return Err(Error::DimensionMismatch("moments and survival differ in length".into()));
    }
    let d1 = w.w.len();
    let mut h = DMatrix::zeros(d1, d1);
    let mut g = DVector::zeros(d1);
    for (m, s) in moments.iter().zip(survival) {
        h += &m.exp_second * s.time;
        g.axpy(hazard.delta(s), &m.mean, 1.0);
        g.axpy(-s.time, &m.exp_mean, 1.0);
    }
    crate::linalg::symmetrize(&mut h);
    let dir = match h.clone().cholesky() {
        Some(c) => c.solve(&g),
        None => {
            warn!("hazard Newton step: Hessian singular, ridge added");
            let ridge = 1e-8 * h.trace().abs().max(f64::MIN_POSITIVE) / d1 as f64;
            let mut hr = h;
            for i in 0..d1 {
                hr[(i, i)] += ridge;
            }
            let (chol, _) = cholesky_with_ridge(&hr, 1e-8)?;
            chol.solve(&g)
        }
    };
    let mut out = w.clone();
    out.w.axpy(step, &dir, 1.0);
    if out.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("hazard Newton step diverged".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub gem_iters: usize,
    pub mh: MhConfig,
    pub fa: FaConfig,
    pub newton_step: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            gem_iters: DEFAULT_GEM_ITERS,
            mh: MhConfig::default(),
            fa: FaConfig::default(),
            newton_step: 1.0,
        }
    }
}

fn intercept_hazard(survival: &[SurvivalOutcome], hazard: Hazard, d_z: usize) -> Result<HazardParams> {
    let (w0, empty) = initial_log_rate(survival, hazard)?;
    if empty {
        warn!("{hazard:?} hazard has no events; its intercept is pinned near zero rate");
    }
    Ok(HazardParams::intercept_only(w0, d_z))
}

fn check_inputs(blocks: &[CovariateBlock], survival: &[SurvivalOutcome]) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no covariate blocks".into()));
    }
    if blocks.iter().any(|b| b.n_samples() != survival.len()) {
        return Err(Error::DimensionMismatch("blocks and survival differ in sample count".into()));
    }
    Ok(())
}

/// Sample mean and population covariance of each individual's draws.
fn mc_posterior(draws: &[DMatrix<f64>]) -> LatentPosterior {
    let d = draws.first().map(|m| m.nrows()).unwrap_or(0);
    let mut mean = DMatrix::zeros(d, draws.len());
    let mut cov = Vec::with_capacity(draws.len());
    for (n, s) in draws.iter().enumerate() {
        let k = s.ncols() as f64;
        let m = s.column_mean();
        let mut c = DMatrix::zeros(d, d);
        for col in s.column_iter() {
            let r = col - &m;
            c.ger(1.0 / k, &r, &r, 1.0);
        }
        mean.set_column(n, &m);
        cov.push(c);
    }
    LatentPosterior { mean, cov }
}

/// Full Monte-Carlo EM fit. Starts from the factor-analysis fit and
/// intercept-only hazards, tunes κ on the first individual, then runs
/// `gem_iters` cycles of sampling, block M-steps and one Newton step per
/// hazard.
pub fn fit_joint(
    blocks: &[CovariateBlock],
    survival: &[SurvivalOutcome],
    d_z: usize,
    config: &JointConfig,
    seed: u64,
) -> Result<JointModel> {
    check_inputs(blocks, survival)?;
    config.mh.validate()?;
    let (fa, _) = fit_fa(blocks, d_z, config.fa)?;
    let mut model = JointModel {
        fa,
        w_t: intercept_hazard(survival, Hazard::Event, d_z)?,
        w_c: intercept_hazard(survival, Hazard::Censoring, d_z)?,
        kappa_used: 0.0,
        fit_mode: FitMode::FullMcem,
    };
    let n = survival.len();
    let mut kappa = None;
    for it in 0..config.gem_iters {
        let targets = model.targets(blocks, survival)?;
        let mut inits = Vec::with_capacity(n);
        let mut covs = Vec::with_capacity(n);
        for t in &targets {
            let (c, _) = spd_inverse_logdet(&t.precision)?;
            inits.push(&c * &t.shift);
            covs.push(c);
        }
        if kappa.is_none() || config.mh.retune_each_iter {
            let choice = tune_kappa(&targets[0], &inits[0], &covs[0], &config.mh, derive_seed(seed, &[0, it as u64]))?;
            info!(
                "iteration {it}: kappa {} (acceptance {:.3}, n_eff {:.1}, rhat {:.3})",
                choice.kappa, choice.diagnostics.acceptance_rate, choice.diagnostics.n_eff, choice.diagnostics.rhat
            );
            kappa = Some(choice.kappa);
        }
        let k = kappa.expect("tuned above");
        let mut draws = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            let (s, d) = mh_sample(
                &targets[i],
                &inits[i],
                &covs[i],
                k,
                &config.mh,
                derive_seed(seed, &[1, it as u64, i as u64]),
            )?;
            acc += d.acceptance_rate;
            draws.push(s);
        }
        log::debug!("iteration {it}: mean acceptance {:.3}", acc / n as f64);

        let post = mc_posterior(&draws);
        model.fa.heywood_flag |= mstep_blocks(&mut model.fa, blocks, &post)?;
        let mt: Vec<HazardMoments> = draws.iter().map(|s| hazard_moments(&model.w_t, s)).collect();
        let mc: Vec<HazardMoments> = draws.iter().map(|s| hazard_moments(&model.w_c, s)).collect();
        model.w_t = newton_mstep_w(&model.w_t, &mt, survival, Hazard::Event, config.newton_step)?;
        model.w_c = newton_mstep_w(&model.w_c, &mc, survival, Hazard::Censoring, config.newton_step)?;
    }
    for b in &mut model.fa.blocks {
        b.refresh_summary();
    }
    model.fa.heywood_flag |= detect_heywood(&model.fa, blocks);
    model.kappa_used = kappa.unwrap_or(0.0);
    Ok(model)
}

/// Decoupled fit: factor analysis first, then unpenalised hazards on the
/// posterior means.
pub fn fit_fast(
    blocks: &[CovariateBlock],
    survival: &[SurvivalOutcome],
    d_z: usize,
    config: FaConfig,
) -> Result<JointModel> {
    check_inputs(blocks, survival)?;
    let (fa, post) = fit_fa(blocks, d_z, config)?;
    let hazards = fit_ecph(&post.mean, survival, None, DEFAULT_ITERATIONS)?;
    Ok(JointModel {
        fa,
        w_t: hazards.event,
        w_c: hazards.censoring,
        kappa_used: 0.0,
        fit_mode: FitMode::FastDecoupled,
    })
}

/// `t̂ = λ⁻¹ exp(½βᵀCβ − mᵀβ)`, the expected value of `exp(−wᵀz̃)` under
/// `z ~ N(m, C)`.
pub fn predict_time(w_t: &HazardParams, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let beta = w_t.beta();
    (-w_t.log_lambda() + 0.5 * beta.dot(&(cov * &beta)) - mean.dot(&beta)).exp()
}

/// Predicted event times for individuals outside the learning set, using
/// the learning-set average variational parameters.
pub fn joint_predict(model: &JointModel, blocks: &[CovariateBlock]) -> Result<Vec<f64>> {
    let post = model.fa.project(blocks)?;
    Ok((0..post.n_samples())
        .map(|n| predict_time(&model.w_t, &post.mean.column(n).into_owned(), &post.cov[n]))
        .collect())
}
