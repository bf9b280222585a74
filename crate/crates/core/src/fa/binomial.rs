use nalgebra::{DMatrix, DVector};

use super::{diverse_estep, lambda_of_xi, BlockInput, BlockParams, LatentPosterior, VariationalState};
use crate::data::BlockKind;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;

pub fn binomial_estep(
    params: &BlockParams,
    state: &VariationalState,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<LatentPosterior> {
    diverse_estep(
        params.d_z(),
        &[BlockInput {
            kind: BlockKind::Binomial,
            trials,
            params,
            state: Some(state),
            x,
        }],
    )
}

fn check(params: &BlockParams, posterior: &LatentPosterior, x: &DMatrix<f64>) -> Result<()> {
    if posterior.n_samples() != x.ncols() || params.n_features() != x.nrows() {
        return Err(Error::DimensionMismatch("binomial m-step shapes disagree".into()));
    }
    Ok(())
}

/// `ξᵢₙ² = E[(Wᵢz + μᵢ − αₙ)²]` under the posterior; `alpha` is zero for
/// binomial blocks.
pub(crate) fn xi_from_posterior(
    params: &BlockParams,
    posterior: &LatentPosterior,
    alpha: Option<&DVector<f64>>,
) -> DMatrix<f64> {
    let (d, n) = (params.n_features(), posterior.n_samples());
    let mut xi = DMatrix::zeros(d, n);
    for col in 0..n {
        let s = posterior.second_moment(col);
        let m = posterior.mean.column(col);
        let a = alpha.map(|a| a[col]).unwrap_or(0.0);
        for i in 0..d {
            let wi = params.w.row(i).transpose();
            let offset = params.mu[i] - a;
            let sq = wi.dot(&(&s * &wi)) + 2.0 * offset * wi.dot(&m) + offset * offset;
            xi[(i, col)] = sq.max(0.0).sqrt();
        }
    }
    xi
}

/// Per-feature loadings from `(Σₙ 2bλᵢₙ E[zzᵀ]) Wᵢᵀ = Σₙ cᵢₙ E[z]` where
/// `cᵢₙ = xᵢₙ − b/2 − 2bλᵢₙ(μᵢ − αₙ)`. Rows in `skip` are left untouched.
pub(crate) fn solve_loadings(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
    rows: std::ops::Range<usize>,
) -> Result<DMatrix<f64>> {
    let dz = params.d_z();
    let n = posterior.n_samples();
    let b = trials as f64;
    let seconds: Vec<DMatrix<f64>> = (0..n).map(|c| posterior.second_moment(c)).collect();
    let mut w = params.w.clone();
    for i in rows {
        let mut a = DMatrix::zeros(dz, dz);
        let mut r = DVector::zeros(dz);
        for col in 0..n {
            let lam = lambda_of_xi(state.xi[(i, col)]);
            let alpha = if state.alpha.is_empty() { 0.0 } else { state.alpha[col] };
            a += &seconds[col] * (2.0 * b * lam);
            let c = x[(i, col)] - b / 2.0 - 2.0 * b * lam * (params.mu[i] - alpha);
            r.axpy(c, &posterior.mean.column(col), 1.0);
        }
        let wi = spd_solve(&a, &r, "count-block loading update")?;
        w.set_row(i, &wi.transpose());
    }
    Ok(w)
}

/// `μᵢ = Σₙ(xᵢₙ − b/2 − 2bλᵢₙ(Wᵢ E[zₙ] − αₙ)) / Σₙ 2bλᵢₙ`.
pub(crate) fn solve_means(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
    rows: std::ops::Range<usize>,
) -> Result<DVector<f64>> {
    let n = posterior.n_samples();
    let b = trials as f64;
    let mut mu = params.mu.clone();
    for i in rows {
        let wi = params.w.row(i);
        let mut num = 0.0;
        let mut den = 0.0;
        for col in 0..n {
            let lam = lambda_of_xi(state.xi[(i, col)]);
            let alpha = if state.alpha.is_empty() { 0.0 } else { state.alpha[col] };
            let proj = wi.dot(&posterior.mean.column(col).transpose());
            num += x[(i, col)] - b / 2.0 - 2.0 * b * lam * (proj - alpha);
            den += 2.0 * b * lam;
        }
        if !(den > 0.0) {
            return Err(Error::Numerical(format!("mean update for feature {i} has zero weight")));
        }
        mu[i] = num / den;
    }
    Ok(mu)
}

/// Conditional update of ξ.
pub fn update_xi(params: &BlockParams, state: &VariationalState, posterior: &LatentPosterior) -> VariationalState {
    VariationalState {
        xi: xi_from_posterior(params, posterior, None),
        alpha: state.alpha.clone(),
    }
}

/// Conditional update of W given ξ and μ.
pub fn update_loadings(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<BlockParams> {
    let w = solve_loadings(params, state, posterior, x, trials, 0..params.n_features())?;
    Ok(BlockParams { w, ..params.clone() })
}

/// Conditional update of μ given ξ and W.
pub fn update_means(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<BlockParams> {
    let mu = solve_means(params, state, posterior, x, trials, 0..params.n_features())?;
    Ok(BlockParams { mu, ..params.clone() })
}

/// ξ → W → μ, each a conditional maximiser of the expected bound.
pub fn binomial_mstep(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<(BlockParams, VariationalState)> {
    check(params, posterior, x)?;
    let state = update_xi(params, state, posterior);
    let p = update_loadings(params, &state, posterior, x, trials)?;
    let p = update_means(&p, &state, posterior, x, trials)?;
    Ok((p, state))
}
