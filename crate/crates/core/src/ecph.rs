//! Exponential proportional-hazards model for an event time and an
//! independent censoring time, both conditional on covariates.
//!
//! Each hazard has parameters `w = (ln λ, βᵀ)ᵀ` and rate `exp(wᵀx̃)` with
//! `x̃ = (1, xᵀ)ᵀ`. The observed-data likelihood factors into one part per
//! hazard, so the two are fitted separately by the same iteratively
//! reweighted least-squares routine, optionally with an L1 penalty solved by
//! coordinate descent inside each iteration.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;

pub const DEFAULT_ITERATIONS: usize = 5;
/// Pseudo event count used when a hazard has no events at all.
pub const EMPTY_CLASS_EPSILON: f64 = 1e-8;
const LASSO_GAP_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 100_000;

/// `w[0] = ln λ`, `w[1..] = β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub w: DVector<f64>,
}

impl HazardParams {
    pub fn new(w: DVector<f64>) -> Self {
        Self { w }
    }

    pub fn intercept_only(log_lambda: f64, p: usize) -> Self {
        let mut w = DVector::zeros(p + 1);
        w[0] = log_lambda;
        Self { w }
    }

    pub fn n_covariates(&self) -> usize {
        self.w.len() - 1
    }

    pub fn log_lambda(&self) -> f64 {
        self.w[0]
    }

    pub fn lambda(&self) -> f64 {
        self.w[0].exp()
    }

    pub fn beta(&self) -> DVectorView<'_, f64> {
        self.w.rows(1, self.w.len() - 1)
    }

    /// `wᵀx̃` for a covariate vector `x`.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_covariates());
        self.w[0] + x.iter().zip(self.w.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn rate(&self, x: &[f64]) -> f64 {
        self.linear_predictor(x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub gamma_t: f64,
    pub gamma_c: f64,
    pub penalize_intercept: bool,
}

impl PenaltyConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma_t: gamma,
            gamma_c: gamma,
            penalize_intercept: true,
        }
    }
}

/// Which of the two hazards a routine is working on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hazard {
    Event,
    Censoring,
}

impl Hazard {
    pub fn delta(self, s: &SurvivalOutcome) -> f64 {
        match self {
            Hazard::Event => s.delta_event(),
            Hazard::Censoring => s.delta_censor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcphFit {
    pub event: HazardParams,
    pub censoring: HazardParams,
}

fn check_shapes(params: &HazardParams, x: &DMatrix<f64>, survival: &[SurvivalOutcome]) -> Result<()> {
    if x.ncols() != survival.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate columns for {} survival records",
            x.ncols(),
            survival.len()
        )));
    }
    if params.n_covariates() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "parameters have {} covariates, matrix has {} rows",
            params.n_covariates(),
            x.nrows()
        )));
    }
    Ok(())
}

/// Linear predictors `wᵀx̃ₙ` for every column of `x`.
fn linear_predictors(w: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let beta = w.rows(1, w.len() - 1);
    let mut eta = x.tr_mul(&beta);
    eta.add_scalar_mut(w[0]);
    eta
}

/// One hazard's share of the log-likelihood: Σ δₙηₙ − t̃ₙ exp(ηₙ).
pub fn partial_log_likelihood(
    params: &HazardParams,
    x: &DMatrix<f64>,
    survival: &[SurvivalOutcome],
    hazard: Hazard,
) -> Result<f64> {
    check_shapes(params, x, survival)?;
    let eta = linear_predictors(&params.w, x);
    Ok(survival
        .iter()
        .zip(eta.iter())
        .map(|(s, &e)| hazard.delta(s) * e - s.time * e.exp())
        .sum())
}

/// Log-likelihood of the observed times and indicators under both hazards.
pub fn log_likelihood(
    params_t: &HazardParams,
    params_c: &HazardParams,
    x: &DMatrix<f64>,
    survival: &[SurvivalOutcome],
) -> Result<f64> {
    Ok(partial_log_likelihood(params_t, x, survival, Hazard::Event)?
        + partial_log_likelihood(params_c, x, survival, Hazard::Censoring)?)
}

/// Expected event time `exp(−wᵀx̃)`.
pub fn predict(params_t: &HazardParams, x: &[f64]) -> f64 {
    (-params_t.linear_predictor(x)).exp()
}

/// Indices `i ≥ 1` of `w` with `|w[i]| > tol`.
pub fn l1_support(params: &HazardParams, tol: f64) -> Vec<usize> {
    params
        .w
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| v.abs() > tol)
        .map(|(i, _)| i)
        .collect()
}

/// Intercept-only starting point `ln(Σδ / Σt̃)`; with no events the count is
/// replaced by a tiny pseudo count. The flag reports the empty class.
pub(crate) fn initial_log_rate(survival: &[SurvivalOutcome], hazard: Hazard) -> Result<(f64, bool)> {
    let total_time: f64 = survival.iter().map(|s| s.time).sum();
    if !(total_time > 0.0) {
        return Err(Error::InvalidArgument("total follow-up time is zero".into()));
    }
    let events: f64 = survival.iter().map(|s| hazard.delta(s)).sum();
    if events == 0.0 {
        Ok(((EMPTY_CLASS_EPSILON / total_time).ln(), true))
    } else {
        Ok(((events / total_time).ln(), false))
    }
}

/// Smallest penalty at which the first penalised iteration (unpenalised
/// intercept) keeps every β at zero.
pub fn gamma_max(x: &DMatrix<f64>, survival: &[SurvivalOutcome], hazard: Hazard) -> Result<f64> {
    let (w0, _) = initial_log_rate(survival, hazard)?;
    let rate = w0.exp();
    let resid: DVector<f64> = DVector::from_iterator(
        survival.len(),
        survival.iter().map(|s| hazard.delta(s) - s.time * rate),
    );
    Ok((x * resid).amax())
}

/// Working response and squared weights of the least-squares step at `w`.
fn working_problem(
    w: &DVector<f64>,
    x: &DMatrix<f64>,
    survival: &[SurvivalOutcome],
    hazard: Hazard,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let eta = linear_predictors(w, x);
    let n = survival.len();
    let mut y = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    for (k, s) in survival.iter().enumerate() {
        let e = eta[k];
        let mu = s.time * e.exp();
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::Numerical(format!(
                "working weight degenerate at sample {k} (linear predictor {e})"
            )));
        }
        y[k] = e + hazard.delta(s) / mu - 1.0;
        v[k] = mu;
    }
    Ok((y, v))
}

/// Weighted least squares `argmin Σ vₙ (yₙ − wᵀx̃ₙ)²`.
fn weighted_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let p1 = x.nrows() + 1;
    let n = x.ncols();
    let mut gram = DMatrix::zeros(p1, p1);
    let mut rhs = DVector::zeros(p1);
    let mut xt = DVector::zeros(p1);
    for k in 0..n {
        xt[0] = 1.0;
        for j in 1..p1 {
            xt[j] = x[(j - 1, k)];
        }
        gram.ger(v[k], &xt, &xt, 1.0);
        rhs.axpy(v[k] * y[k], &xt, 1.0);
    }
    crate::linalg::symmetrize(&mut gram);
    spd_solve(&gram, &rhs, "ecph least squares")
}

/// Coordinate descent for `½ Σ vₙ (yₙ − wᵀx̃ₙ)² + γ Σ_{j∈S} |w_j|`, warm
/// started at `w`, run until the duality gap falls below tolerance.
pub(crate) fn weighted_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    gamma: f64,
    penalize_intercept: bool,
    w: &mut DVector<f64>,
) -> Result<LassoStats> {
    let p1 = x.nrows() + 1;
    let n = x.ncols();
    // rows of x̃ scaled by √v, stored feature-major for contiguous access
    let sv: Vec<f64> = v.iter().map(|a| a.sqrt()).collect();
    let mut a = DMatrix::zeros(n, p1);
    for k in 0..n {
        a[(k, 0)] = sv[k];
        for j in 1..p1 {
            a[(k, j)] = x[(j - 1, k)] * sv[k];
        }
    }
    let b: DVector<f64> = DVector::from_iterator(n, (0..n).map(|k| y[k] * sv[k]));
    let norms: Vec<f64> = (0..p1).map(|j| a.column(j).norm_squared()).collect();
    let penalty = |j: usize| if j == 0 && !penalize_intercept { 0.0 } else { gamma };

    let mut r = &b - &a * &*w;
    let half_b2 = 0.5 * b.norm_squared();
    let tol = LASSO_GAP_TOL * half_b2.max(1.0);
    let mut gap = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        for j in 0..p1 {
            if norms[j] == 0.0 {
                w[j] = 0.0;
                continue;
            }
            let col = a.column(j);
            let old = w[j];
            let rho = col.dot(&r) + norms[j] * old;
            let g = penalty(j);
            let new = soft_threshold(rho, g) / norms[j];
            if new != old {
                r.axpy(old - new, &col, 1.0);
                w[j] = new;
            }
        }
        if sweeps % 5 == 1 || sweeps == LASSO_MAX_SWEEPS {
            gap = duality_gap(&a, &b, &r, w, gamma, penalize_intercept, half_b2);
            if gap <= tol {
                break;
            }
        }
    }
    if gap > tol {
        warn!("lasso coordinate descent stopped at duality gap {gap:e} after {sweeps} sweeps");
    }
    Ok(LassoStats { gap, sweeps })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LassoStats {
    pub gap: f64,
    #[allow(dead_code)]
    pub sweeps: usize,
}

fn soft_threshold(x: f64, g: f64) -> f64 {
    if x > g {
        x - g
    } else if x < -g {
        x + g
    } else {
        0.0
    }
}

fn duality_gap(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    r: &DVector<f64>,
    w: &DVector<f64>,
    gamma: f64,
    penalize_intercept: bool,
    half_b2: f64,
) -> f64 {
    let l1: f64 = w
        .iter()
        .enumerate()
        .filter(|(j, _)| *j > 0 || penalize_intercept)
        .map(|(_, v)| v.abs())
        .sum();
    let primal = 0.5 * r.norm_squared() + gamma * l1;
    // dual point: residual projected off the unpenalised column, then scaled
    // into the box |A_jᵀθ| ≤ γ
    let mut theta = r.clone();
    if !penalize_intercept {
        let a0 = a.column(0);
        let n0 = a0.norm_squared();
        if n0 > 0.0 {
            let c = a0.dot(&theta) / n0;
            theta.axpy(-c, &a0, 1.0);
        }
    }
    let start = usize::from(!penalize_intercept);
    let max_corr = (start..a.ncols())
        .map(|j| a.column(j).dot(&theta).abs())
        .fold(0.0, f64::max);
    let scale = if max_corr > gamma { gamma / max_corr } else { 1.0 };
    theta *= scale;
    let dual = half_b2 - 0.5 * (b - &theta).norm_squared();
    (primal - dual).max(0.0)
}

/// Fits one hazard. `penalty` is `(γ, penalize_intercept)`.
pub fn fit_hazard(
    x: &DMatrix<f64>,
    survival: &[SurvivalOutcome],
    hazard: Hazard,
    penalty: Option<(f64, bool)>,
    iterations: usize,
) -> Result<HazardParams> {
    if survival.is_empty() {
        return Err(Error::InvalidArgument("no samples to fit".into()));
    }
    if x.ncols() != survival.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate columns for {} survival records",
            x.ncols(),
            survival.len()
        )));
    }
    if let Some((g, _)) = penalty {
        if !(g >= 0.0) {
            return Err(Error::InvalidArgument(format!("penalty must be non-negative, got {g}")));
        }
    }
    let p = x.nrows();
    let (w0, empty) = initial_log_rate(survival, hazard)?;
    let mut params = HazardParams::intercept_only(w0, p);
    if empty {
        warn!("{hazard:?} hazard has no events; returning intercept-only parameters");
        return Ok(params);
    }
    // with no covariates the starting point is the exact MLE and the
    // iteration's fixed point; iterating would only add rounding
    let unpenalised = penalty.is_none_or(|(g, pen_int)| g == 0.0 || !pen_int);
    if p == 0 && unpenalised {
        return Ok(params);
    }
    for _ in 0..iterations {
        let (y, v) = working_problem(&params.w, x, survival, hazard)?;
        match penalty {
            Some((g, pen_int)) if g > 0.0 => {
                let stats = weighted_lasso(x, &y, &v, g, pen_int, &mut params.w)?;
                debug!("lasso: gap {:e} after {} sweeps", stats.gap, stats.sweeps);
            }
            _ => params.w = weighted_least_squares(x, &y, &v)?,
        }
        if params.w.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("ecph iteration diverged".into()));
        }
    }
    Ok(params)
}

/// Fits both hazards on the `p × N` covariate matrix `x`.
pub fn fit_ecph(
    x: &DMatrix<f64>,
    survival: &[SurvivalOutcome],
    penalty: Option<&PenaltyConfig>,
    iterations: usize,
) -> Result<EcphFit> {
    let pen_t = penalty.map(|p| (p.gamma_t, p.penalize_intercept));
    let pen_c = penalty.map(|p| (p.gamma_c, p.penalize_intercept));
    Ok(EcphFit {
        event: fit_hazard(x, survival, Hazard::Event, pen_t, iterations)?,
        censoring: fit_hazard(x, survival, Hazard::Censoring, pen_c, iterations)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn surv(ts: &[f64], ds: &[bool]) -> Vec<SurvivalOutcome> {
        ts.iter().zip(ds).map(|(&t, &d)| SurvivalOutcome::new(t, d)).collect()
    }

    #[test]
    fn log_likelihood_single_sample() {
        let x = DMatrix::zeros(0, 1);
        let p = HazardParams::intercept_only(0.0, 0);
        let ll = log_likelihood(&p, &p, &x, &surv(&[1.0], &[true])).unwrap();
        assert_eq!(ll, -2.0);
    }

    #[test]
    fn log_likelihood_doubles_with_duplicates() {
        let x = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let s = surv(&[1.0, 2.5], &[true, false]);
        let pt = HazardParams::new(DVector::from_vec(vec![0.2, 0.7]));
        let pc = HazardParams::new(DVector::from_vec(vec![-0.4, 0.1]));
        let x2 = DMatrix::from_row_slice(1, 4, &[0.5, -1.0, 0.5, -1.0]);
        let s2 = [s.clone(), s.clone()].concat();
        let a = log_likelihood(&pt, &pc, &x, &s).unwrap();
        let b = log_likelihood(&pt, &pc, &x2, &s2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_product_of_densities() {
        // brute force: ∏ [f_T(t) S_C(t)]^δ [S_T(t) f_C(t)]^(1−δ), then log
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let x = DMatrix::from_fn(2, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s: Vec<SurvivalOutcome> = (0..n)
            .map(|_| SurvivalOutcome::new(rng.random_range(0.1..3.0), rng.random_bool(0.5)))
            .collect();
        let pt = HazardParams::new(DVector::from_vec(vec![0.3, -0.2, 0.5]));
        let pc = HazardParams::new(DVector::from_vec(vec![-0.1, 0.4, 0.0]));
        let mut prod = 1.0;
        for k in 0..n {
            let xk = [x[(0, k)], x[(1, k)]];
            let rt = (pt.w[0] + pt.w[1] * xk[0] + pt.w[2] * xk[1]).exp();
            let rc = (pc.w[0] + pc.w[1] * xk[0] + pc.w[2] * xk[1]).exp();
            let t = s[k].time;
            let (ft, st) = (rt * (-rt * t).exp(), (-rt * t).exp());
            let (fc, sc) = (rc * (-rc * t).exp(), (-rc * t).exp());
            prod *= if s[k].event { ft * sc } else { st * fc };
        }
        let ll = log_likelihood(&pt, &pc, &x, &s).unwrap();
        assert!((ll - prod.ln()).abs() < 1e-10, "{ll} vs {}", prod.ln());
    }

    #[test]
    fn intercept_only_mle() {
        let x = DMatrix::zeros(0, 3);
        let fit = fit_ecph(&x, &surv(&[1.0, 2.0, 3.0], &[true, true, true]), None, 5).unwrap();
        assert_eq!(fit.event.w[0], (3.0f64 / 6.0).ln());

        let x = DMatrix::zeros(0, 2);
        let fit = fit_ecph(&x, &surv(&[1.0, 2.0], &[true, false]), None, 5).unwrap();
        assert!((fit.event.lambda() - 1.0 / 3.0).abs() < 1e-15);
        assert!((fit.censoring.lambda() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_gives_intercept_only() {
        let x = DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]);
        let fit = fit_ecph(&x, &surv(&[1.0, 2.0, 3.0], &[true, true, true]), None, 5).unwrap();
        assert_eq!(fit.censoring.w[0], (1e-8f64 / 6.0).ln());
        assert_eq!(fit.censoring.w[1], 0.0);
    }

    #[test]
    fn zero_total_time_is_error() {
        let x = DMatrix::zeros(0, 2);
        assert!(fit_ecph(&x, &surv(&[0.0, 0.0], &[true, false]), None, 5).is_err());
    }

    #[test]
    fn predict_formula() {
        let p = HazardParams::new(DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(predict(&p, &[3.7]), 1.0);
        let p = HazardParams::new(DVector::from_vec(vec![2f64.ln(), 0.0]));
        assert!((predict(&p, &[1.0]) - 0.5).abs() < 1e-15);
        let p = HazardParams::new(DVector::from_vec(vec![0.0, 1.0]));
        assert!((predict(&p, &[1.0]) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn support_thresholding() {
        let p = HazardParams::new(DVector::from_vec(vec![0.4, 0.0, 0.3, 0.0]));
        assert_eq!(l1_support(&p, 1e-10), vec![2]);
    }

    fn simulate(n: usize, beta_t: &[f64], beta_c: &[f64], seed: u64) -> (DMatrix<f64>, Vec<SurvivalOutcome>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta_t.len() - 1;
        let x = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = (0..n)
            .map(|k| {
                let lt = beta_t[0] + (0..p).map(|j| beta_t[j + 1] * x[(j, k)]).sum::<f64>();
                let lc = beta_c[0] + (0..p).map(|j| beta_c[j + 1] * x[(j, k)]).sum::<f64>();
                let t: f64 = Exp::new(lt.exp()).unwrap().sample(&mut rng);
                let c: f64 = Exp::new(lc.exp()).unwrap().sample(&mut rng);
                SurvivalOutcome::new(t.min(c), t <= c)
            })
            .collect();
        (x, s)
    }

    #[test]
    fn huge_penalty_zeroes_betas() {
        let (x, s) = simulate(60, &[0.0, 0.8, -0.5], &[-0.5, 0.0, 0.3], 11);
        let g = gamma_max(&x, &s, Hazard::Event).unwrap();
        let p = fit_hazard(&x, &s, Hazard::Event, Some((g * 1.0001, false)), 5).unwrap();
        assert!(l1_support(&p, 1e-10).is_empty());
        let (w0, _) = initial_log_rate(&s, Hazard::Event).unwrap();
        assert!((p.w[0] - w0).abs() < 1e-6);
        // just below the threshold something enters
        let p = fit_hazard(&x, &s, Hazard::Event, Some((g * 0.9, false)), 5).unwrap();
        assert!(!l1_support(&p, 1e-10).is_empty());
    }

    #[test]
    fn zero_penalty_matches_unpenalized() {
        let (x, s) = simulate(50, &[0.2, 0.6, -0.4], &[-0.3, 0.0, 0.2], 5);
        let a = fit_hazard(&x, &s, Hazard::Event, None, 5).unwrap();
        let b = fit_hazard(&x, &s, Hazard::Event, Some((0.0, true)), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lasso_matches_unpenalized_at_tiny_gamma() {
        // coordinate descent reaches the least-squares optimum as γ → 0
        let (x, s) = simulate(80, &[0.2, 0.6, -0.4], &[-0.3, 0.0, 0.2], 8);
        let a = fit_hazard(&x, &s, Hazard::Event, None, 5).unwrap();
        let b = fit_hazard(&x, &s, Hazard::Event, Some((1e-9, true)), 5).unwrap();
        for j in 0..3 {
            assert!((a.w[j] - b.w[j]).abs() < 1e-6, "{} vs {}", a.w[j], b.w[j]);
        }
    }

    #[test]
    fn lasso_subproblem_kkt() {
        // at the returned point each coordinate satisfies the subgradient condition
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (p, n) = (6, 40);
        let x = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let gamma = 3.0;
        let mut w = DVector::zeros(p + 1);
        let stats = weighted_lasso(&x, &y, &v, gamma, false, &mut w).unwrap();
        assert!(stats.gap < 1e-6);
        for j in 0..=p {
            let grad: f64 = (0..n)
                .map(|k| {
                    let xt = if j == 0 { 1.0 } else { x[(j - 1, k)] };
                    let pred = w[0] + (0..p).map(|i| w[i + 1] * x[(i, k)]).sum::<f64>();
                    v[k] * xt * (y[k] - pred)
                })
                .sum();
            if j == 0 {
                assert!(grad.abs() < 1e-6);
            } else if w[j] != 0.0 {
                assert!((grad - gamma * w[j].signum()).abs() < 1e-5, "{grad}");
            } else {
                assert!(grad.abs() <= gamma + 1e-6);
            }
        }
    }

    #[test]
    fn penalized_intercept_shrinks() {
        let (x, s) = simulate(50, &[1.0, 0.5], &[0.0, 0.0], 9);
        let free = fit_hazard(&x, &s, Hazard::Event, Some((2.0, false)), 5).unwrap();
        let pen = fit_hazard(&x, &s, Hazard::Event, Some((2.0, true)), 5).unwrap();
        assert!(pen.w[0].abs() <= free.w[0].abs() + 1e-12);
    }

    #[test]
    fn factorization_independence() {
        let (x, s) = simulate(40, &[0.1, 0.5], &[-0.2, 0.3], 2);
        let fit = fit_ecph(&x, &s, None, 5).unwrap();
        let alone = fit_hazard(&x, &s, Hazard::Event, None, 5).unwrap();
        assert_eq!(fit.event, alone);
        let pt = &fit.event;
        let pc = &fit.censoring;
        let total = log_likelihood(pt, pc, &x, &s).unwrap();
        let split = partial_log_likelihood(pt, &x, &s, Hazard::Event).unwrap()
            + partial_log_likelihood(pc, &x, &s, Hazard::Censoring).unwrap();
        assert!((total - split).abs() < 1e-12);
    }
}
