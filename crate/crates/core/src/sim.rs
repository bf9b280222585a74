//! Generative simulation from the joint model: z ~ N(0, I), covariate blocks
//! given z, then event and censoring times from the two hazards.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BlockKind, CovariateBlock, Dataset, SurvivalOutcome};
use crate::ecph::HazardParams;
use crate::error::{Error, Result};
use crate::fa::BlockParams;
use crate::joint::JointModel;
use crate::linalg::logistic;
use crate::rng::stream;
use crate::serde_util::{matrix, vector};

/// Explicit parameters of one block in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBlockParams {
    #[serde(with = "matrix")]
    pub w: DMatrix<f64>,
    #[serde(with = "vector")]
    pub mu: DVector<f64>,
    /// Noise variances; empty for count blocks.
    #[serde(with = "vector", default = "empty_vector")]
    pub psi: DVector<f64>,
}

fn empty_vector() -> DVector<f64> {
    DVector::zeros(0)
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    pub name: String,
    pub kind: BlockKind,
    pub d_x: usize,
    #[serde(default = "one")]
    pub b: u32,
    /// Drawn from the scenario recipe when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SimBlockParams>,
}

/// How to draw block parameters that are not given explicitly: loadings
/// i.i.d. `N(0, loading_scale²)`, means i.i.d. `N(0, mean_scale²)`, noise
/// variances uniform on `[psi_min, psi_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRecipe {
    pub loading_scale: f64,
    #[serde(default)]
    pub mean_scale: f64,
    pub psi_min: f64,
    pub psi_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub d_z: usize,
    pub blocks: Vec<SimBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<ParamRecipe>,
    /// `(ln λ_T, β_T)`, length `d_z + 1`.
    pub w_t: Vec<f64>,
    /// `(ln λ_C, β_C)`, length `d_z + 1`.
    pub w_c: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub train: Dataset,
    pub test: Dataset,
    /// True latent vectors, `d_z × n_train`.
    pub z_train: DMatrix<f64>,
    /// True latent vectors, `d_z × n_test`.
    pub z_test: DMatrix<f64>,
    /// Block parameters actually used (recipe draws resolved).
    pub params: Vec<BlockParams>,
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_z == 0 {
            return bad("scenario d_z must be at least 1".into());
        }
        if self.w_t.len() != self.d_z + 1 || self.w_c.len() != self.d_z + 1 {
            return bad(format!("hazard vectors must have length d_z + 1 = {}", self.d_z + 1));
        }
        if self.blocks.is_empty() {
            return bad("scenario has no blocks".into());
        }
        for b in &self.blocks {
            if b.d_x == 0 {
                return bad(format!("block {} has no features", b.name));
            }
            if b.kind != BlockKind::Normal && b.b == 0 {
                return bad(format!("block {} needs a positive trial count", b.name));
            }
            if b.kind == BlockKind::Multinomial && b.d_x < 2 {
                return bad(format!("multinomial block {} needs at least two categories", b.name));
            }
            match &b.params {
                Some(p) => {
                    if p.w.shape() != (b.d_x, self.d_z) || p.mu.len() != b.d_x {
                        return bad(format!("block {} parameters do not match d_x × d_z", b.name));
                    }
                    if b.kind == BlockKind::Normal
                        && (p.psi.len() != b.d_x || p.psi.iter().any(|&v| !(v >= 0.0)))
                    {
                        return bad(format!("block {} needs d_x non-negative noise variances", b.name));
                    }
                }
                None => match self.recipe {
                    None => return bad(format!("block {} has no parameters and there is no recipe", b.name)),
                    Some(r) if !(r.psi_min >= 0.0 && r.psi_max >= r.psi_min && r.loading_scale >= 0.0) => {
                        return bad("recipe ranges are invalid".into())
                    }
                    Some(_) => {}
                },
            }
        }
        Ok(())
    }

    fn resolve_params(&self) -> Vec<BlockParams> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let mut p = match &b.params {
                    Some(p) => BlockParams {
                        w: p.w.clone(),
                        mu: p.mu.clone(),
                        psi: p.psi.clone(),
                    },
                    None => {
                        let r = self.recipe.expect("validated");
                        let mut rng = stream(self.seed, &[2, k as u64]);
                        let w = DMatrix::from_fn(b.d_x, self.d_z, |_, _| {
                            r.loading_scale * rng.sample::<f64, _>(StandardNormal)
                        });
                        let mu = DVector::from_fn(b.d_x, |_, _| r.mean_scale * rng.sample::<f64, _>(StandardNormal));
                        let psi = if b.kind == BlockKind::Normal {
                            DVector::from_fn(b.d_x, |_, _| {
                                if r.psi_max > r.psi_min {
                                    rng.random_range(r.psi_min..=r.psi_max)
                                } else {
                                    r.psi_min
                                }
                            })
                        } else {
                            DVector::zeros(0)
                        };
                        BlockParams { w, mu, psi }
                    }
                };
                if b.kind == BlockKind::Multinomial {
                    p.w.row_mut(b.d_x - 1).fill(0.0);
                    p.mu[b.d_x - 1] = 0.0;
                }
                p
            })
            .collect()
    }
}

fn draw_block<R: Rng>(kind: BlockKind, trials: u32, p: &BlockParams, z: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let eta = &p.w * z + &p.mu;
    let d = eta.len();
    match kind {
        BlockKind::Normal => DVector::from_fn(d, |i, _| {
            eta[i] + p.psi[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        }),
        BlockKind::Binomial => DVector::from_fn(d, |i, _| {
            Binomial::new(trials as u64, logistic(eta[i]))
                .expect("probability in [0, 1]")
                .sample(rng) as f64
        }),
        BlockKind::Multinomial => {
            let m = eta.max();
            let weights: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut x = DVector::zeros(d);
            for _ in 0..trials {
                let mut u = rng.random::<f64>() * total;
                let mut cat = d - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        cat = i;
                        break;
                    }
                    u -= w;
                }
                x[cat] += 1.0;
            }
            x
        }
    }
}

fn exp_draw<R: Rng>(w: &HazardParams, z: &DVector<f64>, rng: &mut R) -> f64 {
    let rate = (w.w[0] + w.beta().dot(z)).exp();
    match Exp::new(rate) {
        Ok(d) => d.sample(rng),
        // a zero or infinite rate: the event never / immediately happens
        Err(_) => {
            if rate > 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}

fn generate(
    scenario: &SimScenario,
    params: &[BlockParams],
    n: usize,
    part: u64,
    test: bool,
) -> Result<(Dataset, DMatrix<f64>)> {
    let w_t = HazardParams::new(DVector::from_vec(scenario.w_t.clone()));
    let w_c = HazardParams::new(DVector::from_vec(scenario.w_c.clone()));
    let mut zs = DMatrix::zeros(scenario.d_z, n);
    let mut values: Vec<DMatrix<f64>> = scenario.blocks.iter().map(|b| DMatrix::zeros(b.d_x, n)).collect();
    let mut survival = Vec::with_capacity(n);
    for col in 0..n {
        let mut rng = stream(scenario.seed, &[part, col as u64]);
        let z = DVector::from_fn(scenario.d_z, |_, _| rng.sample::<f64, _>(StandardNormal));
        for ((b, p), v) in scenario.blocks.iter().zip(params).zip(values.iter_mut()) {
            v.set_column(col, &draw_block(b.kind, b.b, p, &z, &mut rng));
        }
        let t = exp_draw(&w_t, &z, &mut rng);
        let outcome = if test {
            SurvivalOutcome::new(t, true)
        } else {
            let c = exp_draw(&w_c, &z, &mut rng);
            SurvivalOutcome::new(t.min(c), t <= c)
        };
        if !outcome.time.is_finite() {
            return Err(Error::Numerical("simulated time is infinite; both hazards vanish".into()));
        }
        survival.push(outcome);
        zs.set_column(col, &z);
    }
    let prefix = if test { "test" } else { "train" };
    let blocks = scenario
        .blocks
        .iter()
        .zip(values)
        .map(|(b, v)| CovariateBlock::with_default_names(b.name.clone(), b.kind, b.b, v))
        .collect::<Result<Vec<_>>>()?;
    let ids = (0..n).map(|i| format!("{prefix}_{i:05}")).collect();
    Ok((Dataset::new(blocks, survival, ids)?, zs))
}

/// Draws the training and test sets. Every sample has its own random
/// stream, so any subset of samples is reproducible on its own.
pub fn simulate_dataset(scenario: &SimScenario) -> Result<SimOutput> {
    scenario.validate()?;
    let params = scenario.resolve_params();
    let (train, z_train) = generate(scenario, &params, scenario.n_train, 0, false)?;
    let (test, z_test) = generate(scenario, &params, scenario.n_test, 1, true)?;
    Ok(SimOutput {
        train,
        test,
        z_train,
        z_test,
        params,
    })
}

/// Scenario carrying a fitted model's parameters verbatim.
pub fn scenario_from_model(model: &JointModel, n_train: usize, n_test: usize, seed: u64) -> SimScenario {
    SimScenario {
        d_z: model.d_z(),
        blocks: model
            .fa
            .blocks
            .iter()
            .map(|b| SimBlock {
                name: b.name.clone(),
                kind: b.kind,
                d_x: b.params.n_features(),
                b: b.trials,
                params: Some(SimBlockParams {
                    w: b.params.w.clone(),
                    mu: b.params.mu.clone(),
                    psi: b.params.psi.clone(),
                }),
            })
            .collect(),
        recipe: None,
        w_t: model.w_t.w.iter().copied().collect(),
        w_c: model.w_c.w.iter().copied().collect(),
        n_train,
        n_test,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(w_t: Vec<f64>, w_c: Vec<f64>, n_train: usize) -> SimScenario {
        SimScenario {
            d_z: 2,
            blocks: vec![
                SimBlock { name: "g".into(), kind: BlockKind::Normal, d_x: 4, b: 1, params: None },
                SimBlock { name: "b".into(), kind: BlockKind::Binomial, d_x: 3, b: 2, params: None },
                SimBlock { name: "m".into(), kind: BlockKind::Multinomial, d_x: 4, b: 3, params: None },
            ],
            recipe: Some(ParamRecipe { loading_scale: 1.0, mean_scale: 0.0, psi_min: 0.5, psi_max: 1.0 }),
            w_t,
            w_c,
            n_train,
            n_test: 10,
            seed: 42,
        }
    }

    #[test]
    fn null_hazards_give_unit_exponentials() {
        let s = scenario(vec![0.0; 3], vec![0.0; 3], 0);
        let mut s = s;
        s.n_test = 100_000;
        s.blocks.truncate(1);
        let out = simulate_dataset(&s).unwrap();
        let t = out.test.times();
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        // Exp(1): sd of the mean is 1/√n
        assert!((mean - 1.0).abs() < 3.0 / n.sqrt(), "{mean}");

        let mut s2 = scenario(vec![0.0; 3], vec![0.0; 3], 100_000);
        s2.blocks.truncate(1);
        s2.n_test = 0;
        let out = simulate_dataset(&s2).unwrap();
        let frac = out.train.events().iter().filter(|&&e| e).count() as f64 / 100_000.0;
        assert!((frac - 0.5).abs() < 3.0 * (0.25f64 / 100_000.0).sqrt(), "{frac}");
        assert_eq!(out.test.n_samples(), 0);
    }

    #[test]
    fn negligible_censoring_means_all_events() {
        let out = simulate_dataset(&scenario(vec![0.0, 0.5, 0.5], vec![-20.0, 0.0, 0.0], 200)).unwrap();
        assert!(out.train.events().iter().all(|&e| e));
        assert!(out.test.events().iter().all(|&e| e));
    }

    #[test]
    fn count_supports() {
        let out = simulate_dataset(&scenario(vec![0.0; 3], vec![0.0; 3], 50)).unwrap();
        let m = &out.train.blocks[2].values;
        for col in m.column_iter() {
            assert_eq!(col.sum(), 3.0);
        }
        let b = &out.train.blocks[1].values;
        assert!(b.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
        // reference category constraint
        assert!(out.params[2].w.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_json_round_trip() {
        let s = scenario(vec![0.1, 0.4, -0.2], vec![-0.5, 0.0, 0.3], 30);
        let a = simulate_dataset(&s).unwrap();
        let b = simulate_dataset(&s).unwrap();
        assert_eq!(a, b);
        let back = SimScenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn gaussian_marginal_covariance() {
        let mut s = scenario(vec![0.0; 3], vec![0.0; 3], 5000);
        s.blocks.truncate(1);
        s.blocks[0].d_x = 10;
        let out = simulate_dataset(&s).unwrap();
        let x = &out.train.blocks[0].values;
        let n = x.ncols() as f64;
        let mean = x.column_mean();
        let mut c = x.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let sample = &c * c.transpose() / n;
        let p = &out.params[0];
        let mut model = &p.w * p.w.transpose();
        for i in 0..10 {
            model[(i, i)] += p.psi[i];
        }
        let rel = (&sample - &model).norm() / model.norm();
        assert!(rel < 0.1, "{rel}");
    }

    #[test]
    fn shape_errors() {
        let mut s = scenario(vec![0.0; 2], vec![0.0; 3], 5);
        assert!(s.validate().is_err());
        s.w_t = vec![0.0; 3];
        s.recipe = None;
        assert!(s.validate().is_err());
    }
}
