use nalgebra::{DMatrix, DVector};

use super::binomial::{solve_loadings, solve_means, xi_from_posterior};
use super::{diverse_estep, lambda_of_xi, BlockInput, BlockParams, LatentPosterior, VariationalState};
use crate::data::BlockKind;
use crate::error::{Error, Result};

pub fn multinomial_estep(
    params: &BlockParams,
    state: &VariationalState,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<LatentPosterior> {
    diverse_estep(
        params.d_z(),
        &[BlockInput {
            kind: BlockKind::Multinomial,
            trials,
            params,
            state: Some(state),
            x,
        }],
    )
}

/// Conditional update of ξ given the current α.
pub fn update_xi(params: &BlockParams, state: &VariationalState, posterior: &LatentPosterior) -> VariationalState {
    VariationalState {
        xi: xi_from_posterior(params, posterior, Some(&state.alpha)),
        alpha: state.alpha.clone(),
    }
}

/// `αₙ = (Σᵢ λᵢₙ(Wᵢ E[zₙ] + μᵢ) − (1 − d_x/2)/2) / Σᵢ λᵢₙ`.
pub fn update_alpha(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
) -> Result<VariationalState> {
    let d = params.n_features();
    let n = posterior.n_samples();
    let eta = &params.w * &posterior.mean; // d × N without μ
    let mut alpha = DVector::zeros(n);
    for col in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..d {
            let lam = lambda_of_xi(state.xi[(i, col)]);
            num += lam * (eta[(i, col)] + params.mu[i]);
            den += lam;
        }
        if !(den > 0.0) {
            return Err(Error::Numerical(format!("alpha update for sample {col} has zero weight")));
        }
        alpha[col] = (num - (1.0 - d as f64 / 2.0) / 2.0) / den;
    }
    Ok(VariationalState {
        xi: state.xi.clone(),
        alpha,
    })
}

fn free_rows(params: &BlockParams) -> std::ops::Range<usize> {
    0..params.n_features().saturating_sub(1)
}

pub fn update_loadings(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<BlockParams> {
    let w = solve_loadings(params, state, posterior, x, trials, free_rows(params))?;
    Ok(BlockParams { w, ..params.clone() })
}

pub fn update_means(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<BlockParams> {
    let mu = solve_means(params, state, posterior, x, trials, free_rows(params))?;
    Ok(BlockParams { mu, ..params.clone() })
}

/// ξ → α → W → μ; the reference category keeps zero loadings and mean.
pub fn multinomial_mstep(
    params: &BlockParams,
    state: &VariationalState,
    posterior: &LatentPosterior,
    x: &DMatrix<f64>,
    trials: u32,
) -> Result<(BlockParams, VariationalState)> {
    if posterior.n_samples() != x.ncols() || params.n_features() != x.nrows() {
        return Err(Error::DimensionMismatch("multinomial m-step shapes disagree".into()));
    }
    let state = update_xi(params, state, posterior);
    let state = update_alpha(params, &state, posterior)?;
    let p = update_loadings(params, &state, posterior, x, trials)?;
    let mut p = update_means(&p, &state, posterior, x, trials)?;
    let last = p.n_features() - 1;
    p.w.row_mut(last).fill(0.0);
    p.mu[last] = 0.0;
    Ok((p, state))
}
