use faecph::data::BlockKind;
use faecph::sim::{simulate_dataset, ParamRecipe, SimBlock, SimScenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn scenario(n_train: usize, n_test: usize) -> SimScenario {
    SimScenario {
        d_z: 2,
        blocks: vec![SimBlock {
            name: "x".into(),
            kind: BlockKind::Normal,
            d_x: 3,
            b: 1,
            params: None,
        }],
        recipe: Some(ParamRecipe {
            loading_scale: 1.0,
            mean_scale: 0.0,
            psi_min: 1.0,
            psi_max: 1.0,
        }),
        w_t: vec![0.3, 0.8, -0.5],
        w_c: vec![-0.2, -0.4, 0.6],
        n_train,
        n_test,
        seed: 2024,
    }
}

#[test]
fn event_times_follow_the_hazard_in_bins() {
    let s = scenario(0, 20_000);
    let out = simulate_dataset(&s).unwrap();
    let t = out.test.times();
    let eta: Vec<f64> = out
        .z_test
        .column_iter()
        .map(|z| s.w_t[0] + s.w_t[1] * z[0] + s.w_t[2] * z[1])
        .collect();
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| eta[a].total_cmp(&eta[b]));
    for bin in order.chunks(t.len() / 5) {
        let k = bin.len() as f64;
        let mean_t = bin.iter().map(|&i| t[i]).sum::<f64>() / k;
        let expected = bin.iter().map(|&i| (-eta[i]).exp()).sum::<f64>() / k;
        let var = bin.iter().map(|&i| (t[i] - mean_t).powi(2)).sum::<f64>() / (k - 1.0);
        let se = (var / k).sqrt();
        assert!((mean_t - expected).abs() < 3.0 * se, "bin mean {mean_t} expected {expected} se {se}");
    }
}

#[test]
fn censoring_fraction_matches_direct_estimate() {
    let s = scenario(20_000, 0);
    let out = simulate_dataset(&s).unwrap();
    let n = out.train.n_samples() as f64;
    let observed = out.train.events().iter().filter(|&&e| !e).count() as f64 / n;

    // P(c < t | z) = ρ_C / (ρ_T + ρ_C), averaged over independent latent draws
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let m = 200_000;
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..m {
        let z: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let rt = (s.w_t[0] + s.w_t[1] * z[0] + s.w_t[2] * z[1]).exp();
        let rc = (s.w_c[0] + s.w_c[1] * z[0] + s.w_c[2] * z[1]).exp();
        let p = rc / (rt + rc);
        acc += p;
        acc2 += p * p;
    }
    let direct = acc / m as f64;
    let var_direct = (acc2 / m as f64 - direct * direct) / m as f64;
    let se = (direct * (1.0 - direct) / n + var_direct).sqrt();
    assert!((observed - direct).abs() < 3.0 * se, "observed {observed} direct {direct} se {se}");
}

#[test]
fn subsets_of_samples_are_reproducible() {
    // per-sample streams: growing the training set leaves earlier samples unchanged
    let small = simulate_dataset(&scenario(10, 3)).unwrap();
    let large = simulate_dataset(&scenario(20, 3)).unwrap();
    assert_eq!(small.train.survival[..], large.train.survival[..10]);
    assert_eq!(small.z_train.columns(0, 10), large.z_train.columns(0, 10));
    assert_eq!(small.test, large.test);
}
