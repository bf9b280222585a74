use nalgebra::{Cholesky, DMatrix, DVector};

use super::{diverse_estep, heywood_threshold, row_variances, BlockInput, BlockParams, LatentPosterior};
use crate::data::BlockKind;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse_logdet;

/// Exact posterior of z for a single normal block:
/// mean `(WᵀΨ⁻¹W + I)⁻¹WᵀΨ⁻¹(x − μ)`, covariance `(WᵀΨ⁻¹W + I)⁻¹`.
pub fn gaussian_estep(params: &BlockParams, x: &DMatrix<f64>) -> Result<LatentPosterior> {
    diverse_estep(
        params.d_z(),
        &[BlockInput {
            kind: BlockKind::Normal,
            trials: 1,
            params,
            state: None,
            x,
        }],
    )
}

/// M-step with the mean fixed at the sample mean. Noise variances at or
/// below the Heywood threshold are clamped to it; the flag reports a clamp.
pub fn gaussian_mstep(x: &DMatrix<f64>, posterior: &LatentPosterior) -> Result<(BlockParams, bool)> {
    let (d, n) = x.shape();
    if posterior.n_samples() != n {
        return Err(Error::DimensionMismatch("posterior and data sample counts differ".into()));
    }
    let mu = DVector::from_iterator(d, x.row_iter().map(|r| r.sum() / n as f64));
    let mut centred = x.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mu;
    }
    let s = posterior.second_moment_sum();
    let cross = &centred * posterior.mean.transpose(); // d × d_z
    let (s_inv, _) = spd_inverse_logdet(&s)?;
    let w = &cross * &s_inv;
    let ws = &w * &s;
    let variances = row_variances(x);
    let mut psi = DVector::zeros(d);
    let mut heywood = false;
    for i in 0..d {
        let ss: f64 = centred.row(i).iter().map(|v| v * v).sum();
        let explained = ws.row(i).dot(&w.row(i));
        let value = (ss - explained) / n as f64;
        let floor = heywood_threshold(variances[i]);
        if !(value > floor) {
            psi[i] = floor;
            heywood = true;
        } else {
            psi[i] = value;
        }
    }
    Ok((BlockParams { w, mu, psi }, heywood))
}

/// `Σₙ log N(xₙ; μ, WWᵀ + Ψ)` evaluated with the full `d_x × d_x`
/// covariance.
pub fn marginal_log_likelihood(params: &BlockParams, x: &DMatrix<f64>) -> Result<f64> {
    let d = x.nrows();
    let mut cov = &params.w * params.w.transpose();
    for i in 0..d {
        cov[(i, i)] += params.psi[i];
    }
    let chol = Cholesky::new(cov)
        .ok_or_else(|| Error::Numerical("marginal covariance not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
    let mut total = 0.0;
    for col in x.column_iter() {
        let r = col - &params.mu;
        let sol = chol.solve(&r);
        total += norm - 0.5 * r.dot(&sol);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateBlock;
    use crate::fa::{fa_objective, initial_model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    #[test]
    fn prior_recovered_when_loadings_vanish() {
        let p = BlockParams {
            w: DMatrix::zeros(3, 2),
            mu: DVector::zeros(3),
            psi: DVector::from_element(3, 0.7),
        };
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, -1.0, 0.0, 5.0]);
        let post = gaussian_estep(&p, &x).unwrap();
        assert!(post.mean.iter().all(|&v| v == 0.0));
        assert_eq!(post.cov[0], DMatrix::identity(2, 2));
    }

    #[test]
    fn scalar_posterior() {
        let p = BlockParams {
            w: DMatrix::from_element(1, 1, 1.0),
            mu: DVector::zeros(1),
            psi: DVector::from_element(1, 1.0),
        };
        let post = gaussian_estep(&p, &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((post.mean[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((post.cov[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_joint_gaussian_conditioning() {
        // z | x from the joint Gaussian of (z, x):
        // mean = Wᵀ(WWᵀ+Ψ)⁻¹(x−μ), cov = I − Wᵀ(WWᵀ+Ψ)⁻¹W
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = DMatrix::from_fn(5, 3, |_, _| normal(&mut rng));
        let mu = DVector::from_fn(5, |_, _| normal(&mut rng));
        let psi = DVector::from_fn(5, |_, _| rng.random_range(0.2..1.5));
        let x = DMatrix::from_fn(5, 4, |_, _| normal(&mut rng));
        let p = BlockParams { w: w.clone(), mu: mu.clone(), psi: psi.clone() };
        let post = gaussian_estep(&p, &x).unwrap();

        let mut sigma = &w * w.transpose();
        for i in 0..5 {
            sigma[(i, i)] += psi[i];
        }
        let sigma_inv = sigma.try_inverse().unwrap();
        let gain = w.transpose() * &sigma_inv;
        let cov = DMatrix::identity(3, 3) - &gain * &w;
        for n in 0..4 {
            let m = &gain * (x.column(n) - &mu);
            assert!((post.mean.column(n) - m).amax() < 1e-10);
            assert!((&post.cov[n] - &cov).amax() < 1e-10);
        }
    }

    #[test]
    fn sample_mean_and_plugin() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 0.0]);
        let post = LatentPosterior {
            mean: DMatrix::zeros(1, 2),
            cov: vec![DMatrix::identity(1, 1); 2],
        };
        let (p, _) = gaussian_mstep(&x, &post).unwrap();
        assert_eq!(p.mu.as_slice(), &[2.0, 0.0]);
        assert!(p.w.iter().all(|&v| v == 0.0));
        // Ψ = diag of the (divide-by-N) sample covariance
        assert!((p.psi[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn em_does_not_decrease_marginal_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, dz, n) = (8, 2, 60);
        let w = DMatrix::from_fn(d, dz, |_, _| normal(&mut rng));
        let z = DMatrix::from_fn(dz, n, |_, _| normal(&mut rng));
        let x = &w * &z + DMatrix::from_fn(d, n, |_, _| 0.5 * normal(&mut rng));
        let block = CovariateBlock::with_default_names("g", BlockKind::Normal, 1, x.clone()).unwrap();
        let model = initial_model(std::slice::from_ref(&block), dz).unwrap();
        let before = marginal_log_likelihood(&model.blocks[0].params, &x).unwrap();
        let post = gaussian_estep(&model.blocks[0].params, &x).unwrap();
        let (p, _) = gaussian_mstep(&x, &post).unwrap();
        let after = marginal_log_likelihood(&p, &x).unwrap();
        assert!(after >= before - 1e-8 * before.abs());
        // the natural-parameter objective agrees with the direct density
        let obj = fa_objective(&model, std::slice::from_ref(&block)).unwrap();
        assert!((obj - before).abs() < 1e-8 * before.abs());
    }
}
