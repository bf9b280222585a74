//! Random-walk Metropolis sampling of one individual's latent vector, chain
//! diagnostics and proposal-scale tuning.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalOutcome;
use crate::ecph::HazardParams;
use crate::error::{Error, Result};
use crate::fa::NaturalParams;
use crate::linalg::cholesky_with_ridge;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub kappa_ladder: Vec<f64>,
    pub burn_in: usize,
    pub n_keep: usize,
    pub tuning_chains: usize,
    pub accept_lo: f64,
    pub accept_hi: f64,
    pub min_n_eff: f64,
    pub max_rhat: f64,
    /// Re-run the κ search at every GEM iteration instead of only the first.
    pub retune_each_iter: bool,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            kappa_ladder: vec![6.0, 5.5, 5.0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5, 1.0, 0.5, 0.25, 0.1],
            burn_in: 300,
            n_keep: 300,
            tuning_chains: 2,
            accept_lo: 0.134,
            accept_hi: 0.334,
            min_n_eff: 10.0,
            max_rhat: 1.2,
            retune_each_iter: false,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_ladder.is_empty() {
            return Err(Error::InvalidArgument("kappa ladder is empty".into()));
        }
        if self.kappa_ladder.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidArgument("kappa ladder entries must be positive".into()));
        }
        if self.kappa_ladder.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::InvalidArgument("kappa ladder must be strictly decreasing".into()));
        }
        if !(self.accept_lo < self.accept_hi) {
            return Err(Error::InvalidArgument("accept_lo must be below accept_hi".into()));
        }
        if self.n_keep < 4 || self.tuning_chains == 0 {
            return Err(Error::InvalidArgument("need at least 4 kept draws and one tuning chain".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub n_eff: f64,
    pub rhat: f64,
}

/// Unnormalised log density of one individual's latent vector given its
/// covariates and survival outcome.
#[derive(Debug, Clone)]
pub struct SampleTarget {
    /// Posterior precision of the covariate part.
    pub precision: DMatrix<f64>,
    /// Linear term of the covariate part: its log density is
    /// `−½zᵀPz + hᵀz` up to a constant.
    pub shift: DVector<f64>,
    pub outcome: SurvivalOutcome,
    pub w_t: HazardParams,
    pub w_c: HazardParams,
}

impl SampleTarget {
    pub fn new(nat: &NaturalParams, outcome: SurvivalOutcome, w_t: &HazardParams, w_c: &HazardParams) -> Self {
        Self {
            precision: nat.precision.clone(),
            shift: nat.shift.clone(),
            outcome,
            w_t: w_t.clone(),
            w_c: w_c.clone(),
        }
    }

    pub fn d_z(&self) -> usize {
        self.shift.len()
    }

    fn linear(w: &HazardParams, z: &DVector<f64>) -> f64 {
        w.w[0] + w.beta().dot(z)
    }

    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        let fa = -0.5 * z.dot(&(&self.precision * z)) + self.shift.dot(z);
        let (t, d) = (self.outcome.time, self.outcome.delta_event());
        let et = Self::linear(&self.w_t, z);
        let ec = Self::linear(&self.w_c, z);
        fa + d * et - t * et.exp() + (1.0 - d) * ec - t * ec.exp()
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let (t, d) = (self.outcome.time, self.outcome.delta_event());
        let et = Self::linear(&self.w_t, z);
        let ec = Self::linear(&self.w_c, z);
        let mut g = &self.shift - &self.precision * z;
        g.axpy(d - t * et.exp(), &self.w_t.beta(), 1.0);
        g.axpy(1.0 - d - t * ec.exp(), &self.w_c.beta(), 1.0);
        g
    }
}

/// One Metropolis chain with proposal `N(z, κ cov)`, started at `init`.
/// Returns the `d_z × n_keep` kept draws and the accepted-move count over
/// the kept segment.
fn run_chain<R: Rng>(
    target: &SampleTarget,
    init: &DVector<f64>,
    factor: &DMatrix<f64>,
    kappa: f64,
    burn_in: usize,
    n_keep: usize,
    rng: &mut R,
) -> (DMatrix<f64>, usize) {
    let d = init.len();
    let scale = kappa.sqrt();
    let mut z = init.clone();
    let mut lp = target.log_density(&z);
    let mut kept = DMatrix::zeros(d, n_keep);
    let mut accepted = 0;
    let mut eps = DVector::zeros(d);
    for step in 0..burn_in + n_keep {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let proposal = &z + factor * &eps * scale;
        let lq = target.log_density(&proposal);
        let u: f64 = rng.random();
        // compare in log space; NaN proposals are rejected
        if u.ln() < lq - lp {
            z = proposal;
            lp = lq;
            if step >= burn_in {
                accepted += 1;
            }
        }
        if step >= burn_in {
            kept.set_column(step - burn_in, &z);
        }
    }
    (kept, accepted)
}

fn proposal_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (chol, ridged) = cholesky_with_ridge(cov, 1e-10)?;
    if ridged {
        warn!("proposal covariance not positive definite, ridge added");
    }
    Ok(chol.l())
}

/// Runs one chain from `init` and returns the kept draws with their
/// diagnostics. Randomness comes only from `seed`.
pub fn mh_sample(
    target: &SampleTarget,
    init: &DVector<f64>,
    cov: &DMatrix<f64>,
    kappa: f64,
    config: &MhConfig,
    seed: u64,
) -> Result<(DMatrix<f64>, ChainDiagnostics)> {
    let factor = proposal_factor(cov)?;
    let mut rng = stream(seed, &[]);
    let (draws, accepted) = run_chain(target, init, &factor, kappa, config.burn_in, config.n_keep, &mut rng);
    let diag = diagnostics(std::slice::from_ref(&draws), accepted);
    Ok((draws, diag))
}

fn statistic(draws: &DMatrix<f64>) -> Vec<f64> {
    draws.column_iter().map(|c| c.norm_squared()).collect()
}

/// Acceptance rate, effective sample size and split-chain R̂ of `|z|²`
/// over one or more chains of equal length.
pub fn diagnostics(chains: &[DMatrix<f64>], accepted: usize) -> ChainDiagnostics {
    let total: usize = chains.iter().map(|c| c.ncols()).sum();
    let series: Vec<Vec<f64>> = chains.iter().map(statistic).collect();
    let (n_eff, rhat) = ess_rhat(&series);
    ChainDiagnostics {
        acceptance_rate: if total == 0 { 0.0 } else { accepted as f64 / total as f64 },
        n_eff,
        rhat,
    }
}

/// Splits each chain in half and returns `(n_eff, R̂)` following Gelman et
/// al. (BDA3, §11.4–11.5): variogram autocorrelations truncated at the first
/// negative sum of consecutive pairs, capped at the total draw count.
pub fn ess_rhat(chains: &[Vec<f64>]) -> (f64, f64) {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return (chains.iter().map(Vec::len).sum::<usize>() as f64, 1.0);
    }
    let split: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let start = c.len() - 2 * half;
            [&c[start..start + half], &c[start + half..start + 2 * half]]
        })
        .collect();
    let m = split.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = split.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = split
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    let total = chains.iter().map(Vec::len).sum::<usize>() as f64;

    if !(w > 0.0) {
        // every chain is constant: nothing mixed
        let rhat = if b > 0.0 { f64::INFINITY } else { 1.0 };
        return (1.0, rhat);
    }
    let rhat = (var_plus / w).sqrt().max(1.0);

    let rho = |t: usize| -> f64 {
        let v: f64 = split
            .iter()
            .map(|c| (t..half).map(|i| (c[i] - c[i - t]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (m * (n - t as f64));
        1.0 - v / (2.0 * var_plus)
    };
    let mut sum = 0.0;
    let mut t = 1;
    while t + 1 < half {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        sum += pair;
        t += 2;
    }
    let n_eff = (m * n / (1.0 + 2.0 * sum)).min(total);
    (n_eff, rhat)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaChoice {
    pub kappa: f64,
    pub diagnostics: ChainDiagnostics,
    /// Whether the returned κ met every threshold.
    pub passed: bool,
}

fn interval_distance(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

/// Walks the ladder from the largest κ and returns the first whose
/// multi-chain run meets the acceptance, n_eff and R̂ thresholds. Falls back
/// to the best acceptance distance (then largest n_eff) with a warning.
pub fn tune_kappa(
    target: &SampleTarget,
    init: &DVector<f64>,
    cov: &DMatrix<f64>,
    config: &MhConfig,
    seed: u64,
) -> Result<KappaChoice> {
    config.validate()?;
    let factor = proposal_factor(cov)?;
    let mut best: Option<KappaChoice> = None;
    for (step, &kappa) in config.kappa_ladder.iter().enumerate() {
        let mut chains = Vec::with_capacity(config.tuning_chains);
        let mut accepted = 0;
        for chain in 0..config.tuning_chains {
            let mut rng = stream(seed, &[step as u64, chain as u64]);
            let (draws, acc) = run_chain(target, init, &factor, kappa, config.burn_in, config.n_keep, &mut rng);
            accepted += acc;
            chains.push(draws);
        }
        let diag = diagnostics(&chains, accepted);
        let passed = (config.accept_lo..=config.accept_hi).contains(&diag.acceptance_rate)
            && diag.n_eff >= config.min_n_eff
            && diag.rhat <= config.max_rhat;
        if passed {
            return Ok(KappaChoice {
                kappa,
                diagnostics: diag,
                passed,
            });
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let da = interval_distance(diag.acceptance_rate, config.accept_lo, config.accept_hi);
                let db = interval_distance(b.diagnostics.acceptance_rate, config.accept_lo, config.accept_hi);
                da < db || (da == db && diag.n_eff > b.diagnostics.n_eff)
            }
        };
        if better {
            best = Some(KappaChoice {
                kappa,
                diagnostics: diag,
                passed: false,
            });
        }
    }
    let best = best.expect("ladder is non-empty");
    warn!(
        "no proposal scale met the chain thresholds; using kappa = {} (acceptance {:.3}, n_eff {:.1}, rhat {:.3})",
        best.kappa, best.diagnostics.acceptance_rate, best.diagnostics.n_eff, best.diagnostics.rhat
    );
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_target(precision: DMatrix<f64>, shift: DVector<f64>) -> SampleTarget {
        let d = shift.len();
        SampleTarget {
            precision,
            shift,
            outcome: SurvivalOutcome::new(1.0, true),
            w_t: HazardParams::intercept_only(0.0, d),
            w_c: HazardParams::intercept_only(0.0, d),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let target = SampleTarget {
                precision: &a * a.transpose() + DMatrix::identity(d, d),
                shift: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                outcome: SurvivalOutcome::new(rng.random_range(0.1..3.0), rng.random_bool(0.5)),
                w_t: HazardParams::new(DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0))),
                w_c: HazardParams::new(DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0))),
            };
            let z = DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
            let g = target.gradient(&z);
            let h = 1e-6;
            for j in 0..d {
                let mut up = z.clone();
                up[j] += h;
                let mut dn = z.clone();
                dn[j] -= h;
                let fd = (target.log_density(&up) - target.log_density(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-5, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn null_hazards_only_shift_by_constant() {
        let target = gaussian_target(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![0.3, -0.2]));
        let a = DVector::from_vec(vec![0.1, 0.4]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let fa = |z: &DVector<f64>| -0.5 * z.dot(&(&target.precision * z)) + target.shift.dot(z);
        let diff_a = target.log_density(&a) - fa(&a);
        let diff_b = target.log_density(&b) - fa(&b);
        assert!((diff_a - diff_b).abs() < 1e-14);
    }

    #[test]
    fn same_seed_same_draws() {
        let target = gaussian_target(DMatrix::identity(2, 2), DVector::zeros(2));
        let c = DMatrix::identity(2, 2);
        let cfg = MhConfig::default();
        let (a, _) = mh_sample(&target, &DVector::zeros(2), &c, 2.0, &cfg, 9).unwrap();
        let (b, _) = mh_sample(&target, &DVector::zeros(2), &c, 2.0, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let (c2, _) = mh_sample(&target, &DVector::zeros(2), &c, 2.0, &cfg, 10).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn matched_gaussian_target() {
        // 1-D N(0, 1) target with proposal N(z, 1): stationary acceptance is
        // (2/π)·atan(2) ≈ 0.705 for unit κ; κ = 6 gives (2/π)·atan(2/√6) ≈ 0.43
        let target = gaussian_target(DMatrix::identity(1, 1), DVector::zeros(1));
        let cfg = MhConfig {
            burn_in: 500,
            n_keep: 20_000,
            ..MhConfig::default()
        };
        let (draws, diag) = mh_sample(&target, &DVector::zeros(1), &DMatrix::identity(1, 1), 6.0, &cfg, 3).unwrap();
        let expected = 2.0 / std::f64::consts::PI * (2.0 / 6f64.sqrt()).atan();
        assert!((diag.acceptance_rate - expected).abs() < 0.02, "{}", diag.acceptance_rate);
        let mean = draws.row(0).sum() / draws.ncols() as f64;
        // MC standard error from the chain's own effective sample size
        let (n_eff, _) = ess_rhat(&[draws.row(0).iter().copied().collect()]);
        assert!(mean.abs() < 3.0 / n_eff.sqrt(), "mean {mean}, n_eff {n_eff}");
    }

    #[test]
    fn diagnostics_bounds() {
        let target = gaussian_target(DMatrix::identity(2, 2), DVector::zeros(2));
        for kappa in [0.1, 1.0, 6.0, 200.0] {
            let (_, d) = mh_sample(&target, &DVector::zeros(2), &DMatrix::identity(2, 2), kappa, &MhConfig::default(), 4)
                .unwrap();
            assert!((0.0..=1.0).contains(&d.acceptance_rate));
            assert!(d.rhat >= 1.0 - 1e-9);
            assert!(d.n_eff <= 300.0 && d.n_eff > 0.0);
        }
    }

    #[test]
    fn rhat_detects_separated_chains() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        let (_, rhat) = ess_rhat(&[a.clone(), b]);
        assert!(rhat > 2.0);
        let (_, same) = ess_rhat(&[a.clone(), a]);
        assert!(same < 1.1);
    }

    #[test]
    fn independent_draws_have_full_ess() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let chains: Vec<Vec<f64>> = (0..2).map(|_| (0..1000).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let (n_eff, rhat) = ess_rhat(&chains);
        assert!(n_eff > 1500.0, "{n_eff}");
        assert!(rhat < 1.01);
    }

    #[test]
    fn first_rung_accepted_when_it_passes() {
        // N(0, 1) target, proposal sd √(6·4) ≈ 4.9 at κ = 6: acceptance
        // (2/π)·atan(2/4.9) ≈ 0.25, inside the window
        let target = gaussian_target(DMatrix::identity(1, 1), DVector::zeros(1));
        let cov = DMatrix::from_element(1, 1, 4.0);
        let choice = tune_kappa(&target, &DVector::zeros(1), &cov, &MhConfig::default(), 1).unwrap();
        assert!(choice.passed);
        assert_eq!(choice.kappa, 6.0);
    }

    #[test]
    fn peaked_target_walks_down_the_ladder() {
        // proposal covariance 15² times the target variance: acceptance is
        // (2/π)·atan(2/(15√κ)), inside the window only from κ = 0.25 down
        let target = gaussian_target(DMatrix::identity(1, 1), DVector::zeros(1));
        let cov = DMatrix::from_element(1, 1, 225.0);
        for k in [0.5f64, 0.25] {
            let r = 2.0 / std::f64::consts::PI * (2.0 / (15.0 * k.sqrt())).atan();
            assert_eq!((0.134..=0.334).contains(&r), k == 0.25, "analytic rate {r} at {k}");
        }
        let choice = tune_kappa(&target, &DVector::zeros(1), &cov, &MhConfig::default(), 5).unwrap();
        assert!(choice.passed);
        assert_eq!(choice.kappa, 0.25);
    }

    #[test]
    fn impossible_thresholds_fall_back() {
        let target = gaussian_target(DMatrix::identity(1, 1), DVector::zeros(1));
        let cfg = MhConfig {
            min_n_eff: 1e9,
            ..MhConfig::default()
        };
        let choice = tune_kappa(&target, &DVector::zeros(1), &DMatrix::identity(1, 1), &cfg, 5).unwrap();
        assert!(!choice.passed);
        assert!(cfg.kappa_ladder.contains(&choice.kappa));
    }
}
