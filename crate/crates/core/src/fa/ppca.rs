use log::warn;
use nalgebra::{DMatrix, DVector};

use super::BlockParams;
use crate::error::{Error, Result};

const SIGMA2_FLOOR: f64 = 1e-12;

struct Spectrum {
    mu: DVector<f64>,
    /// Left singular vectors, columns ordered by decreasing singular value.
    u: DMatrix<f64>,
    /// Squared singular values, descending, padded with zeros up to `d_x`.
    sq: Vec<f64>,
}

fn spectrum(x: &DMatrix<f64>, d_z: usize) -> Result<Spectrum> {
    let (d, n) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("initialisation needs at least two samples".into()));
    }
    if d == 0 || d_z == 0 {
        return Err(Error::InvalidArgument("empty block or zero latent dimension".into()));
    }
    let mu = DVector::from_iterator(d, x.row_iter().map(|r| r.sum() / n as f64));
    let mut centred = x.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mu;
    }
    let svd = centred.svd(true, false);
    let u_raw = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = DMatrix::from_fn(d, order.len(), |i, j| u_raw[(i, order[j])]);
    let sq = (0..d)
        .map(|i| order.get(i).map(|&k| svd.singular_values[k].powi(2)).unwrap_or(0.0))
        .collect();
    Ok(Spectrum { mu, u, sq })
}

fn residual_variance(sp: &Spectrum, n: usize, d_z: usize) -> f64 {
    let d = sp.sq.len();
    let tail: f64 = sp.sq[d_z..].iter().sum();
    (tail / (n as f64 * (d - d_z) as f64)).max(SIGMA2_FLOOR)
}

fn ones_fallback(sp: Spectrum, n: usize, d_z: usize) -> BlockParams {
    let d = sp.sq.len();
    let psi = (sp.sq[d - 1] / n as f64).max(SIGMA2_FLOOR);
    BlockParams {
        w: DMatrix::from_element(d, d_z, 1.0),
        mu: sp.mu,
        psi: DVector::from_element(d, psi),
    }
}

/// Closed-form start from the SVD `X − μ = UΛVᵀ` of the centred data.
///
/// With `d_x > d_z` the loadings are `U_{d_z}(Λ²_{d_z} − σ²I)` and every
/// noise variance is `σ² = Σ_{i>d_z} Λᵢᵢ² / (N(d_x − d_z))`. Note the
/// loading scale grows with N; see [`ml_init`]. With `d_x ≤ d_z` the
/// loadings are all ones.
pub fn ppca_init(x: &DMatrix<f64>, d_z: usize) -> Result<BlockParams> {
    let (d, n) = x.shape();
    let sp = spectrum(x, d_z)?;
    if d <= d_z {
        return Ok(ones_fallback(sp, n, d_z));
    }
    let sigma2 = residual_variance(&sp, n, d_z);
    let mut w = DMatrix::zeros(d, d_z);
    let mut negative = false;
    for j in 0..d_z.min(sp.u.ncols()) {
        let scale = sp.sq[j] - sigma2;
        negative |= scale < 0.0;
        w.set_column(j, &(sp.u.column(j) * scale));
    }
    if negative {
        warn!("initial loadings have a negative scale (rank-deficient block)");
    }
    Ok(BlockParams {
        w,
        mu: sp.mu,
        psi: DVector::from_element(d, sigma2),
    })
}

/// Same subspace and noise level as [`ppca_init`], with the maximum
/// likelihood PPCA scale `U_{d_z}(Λ²_{d_z}/N − σ²I)^{1/2}`. This is the start
/// used by the fitter: with the unscaled form EM spends hundreds of
/// iterations shrinking the loadings before it starts to fit.
pub fn ml_init(x: &DMatrix<f64>, d_z: usize) -> Result<BlockParams> {
    let (d, n) = x.shape();
    let sp = spectrum(x, d_z)?;
    if d <= d_z {
        return Ok(ones_fallback(sp, n, d_z));
    }
    let sigma2 = residual_variance(&sp, n, d_z);
    let mut w = DMatrix::zeros(d, d_z);
    for j in 0..d_z.min(sp.u.ncols()) {
        let scale = (sp.sq[j] / n as f64 - sigma2).max(0.0).sqrt();
        w.set_column(j, &(sp.u.column(j) * scale));
    }
    Ok(BlockParams {
        w,
        mu: sp.mu,
        psi: DVector::from_element(d, sigma2),
    })
}
