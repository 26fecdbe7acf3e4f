mod common;

use entrofact::dynamics::{
    block_min_probabilities, entropy_decay_check, lsi_constant, mixing_time, mlsi_constant, spectral_gap, tv_mixing_curve, BlockDynamics,
    StartSet,
};
use entrofact::inequalities::{estimate_best_constant, BlockWeights, WeightPreset};
use entrofact::lattice::Region;
use entrofact::mc::{mixing_time_scaling, McConfig};
use entrofact::model::{BoundaryCondition, Coupling, SpinModel};
use entrofact::optimize::OptimizerConfig;
use entrofact::{gibbs_table, ConfigFunction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn product_model(w: &[f64]) -> SpinModel {
    let q = w.len();
    SpinModel::new(q, vec![vec![Coupling::Finite(0.0); q]; q], w.to_vec()).unwrap()
}

#[test]
fn full_block_dirichlet_form_is_the_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let v = Region::chain(4);
    let table = gibbs_table(&SpinModel::potts(3, 0.6, &[0.2, 0.0, -0.1]).unwrap(), &v, &BoundaryCondition::constant(2)).unwrap();
    let dyn_ = BlockDynamics::new(&table, &BlockWeights::full(&v)).unwrap();
    for _ in 0..20 {
        let f = random_real(&mut rng, table.len());
        let m: f64 = table.probs().iter().zip(f.values()).map(|(p, x)| p * x).sum();
        let var: f64 = table.probs().iter().zip(f.values()).map(|(p, x)| p * (x - m) * (x - m)).sum();
        assert!((dyn_.dirichlet_form(&f, &f).unwrap() - var).abs() < 1e-12);
    }
}

#[test]
fn gaps_of_products() {
    // independent single-site resampling with rates α_x: gap = min α_x
    let v = Region::chain(3);
    let table = gibbs_table(&product_model(&[0.4, -0.3]), &v, &BoundaryCondition::free()).unwrap();
    let rates = [0.7, 1.3, 2.0];
    let weights = BlockWeights::new(v.clone(), v.iter().zip(rates).map(|(p, r)| (Region::new(1, [p.clone()]).unwrap(), r))).unwrap();
    let gap = spectral_gap(&BlockDynamics::new(&table, &weights).unwrap()).unwrap();
    assert!((gap.gap - 0.7).abs() < 1e-10, "{gap:?}");
    let single = Region::chain(1);
    let t1 = gibbs_table(&SpinModel::ising(0.9, 0.5), &single, &BoundaryCondition::constant(1)).unwrap();
    let g1 = spectral_gap(&BlockDynamics::new(&t1, &BlockWeights::singletons(&single)).unwrap()).unwrap();
    assert!((g1.gap - 1.0).abs() < 1e-12);
}

#[test]
fn mlsi_of_independent_resampling_is_at_least_one() {
    let v = Region::chain(3);
    let table = gibbs_table(&product_model(&[0.0, 0.8, -0.4]), &v, &BoundaryCondition::free()).unwrap();
    let dyn_ = BlockDynamics::new(&table, &BlockWeights::singletons(&v)).unwrap();
    let est = mlsi_constant(&dyn_, &OptimizerConfig::default().with_seed(32)).unwrap();
    assert!(est.rho_hat >= 1.0 - 1e-8, "{}", est.rho_hat);
    assert!((est.gap - 1.0).abs() < 1e-10);
}

#[test]
fn two_point_log_sobolev_constant() {
    // sup Ent(g²)/Var(g) for a two-point law with smaller mass π:
    // log(1/π - 1) / (1 - 2π), and 2 for the uniform law
    let single = Region::chain(1);
    for (w, pi) in [(0.0, 0.5), ((4.0f64).ln(), 0.2)] {
        let table = gibbs_table(&product_model(&[0.0, w]), &single, &BoundaryCondition::free()).unwrap();
        let dyn_ = BlockDynamics::new(&table, &BlockWeights::singletons(&single)).unwrap();
        let est = lsi_constant(&dyn_, &OptimizerConfig::default().with_seed(33)).unwrap();
        let exact = if pi == 0.5 { 2.0 } else { (1.0f64 / pi - 1.0).ln() / (1.0 - 2.0 * pi) };
        let grid_max = (1..4000)
            .map(|k| {
                let x = (k as f64 * 0.005 - 10.0).exp();
                let g = ConfigFunction::new(vec![1.0, x]);
                let f = g.map(|y| y * y);
                table.entropy(&f).unwrap() / table.variance(&g).unwrap()
            })
            .filter(|r| r.is_finite())
            .fold(0.0, f64::max);
        assert!(est.s_hat >= grid_max - 1e-9, "{} < {grid_max}", est.s_hat);
        assert!((est.s_hat - exact).abs() < 1e-4 * exact, "{} vs {exact}", est.s_hat);
        assert!(est.s_hat <= 1.0 + (1.0 / pi).ln() * 2.0);
        assert!((est.block_min_prob[0] - pi).abs() < 1e-12);
    }
}

#[test]
fn block_minimum_probability_at_infinite_temperature() {
    for q in 2..=4 {
        let v = Region::chain(4);
        let table = gibbs_table(&product_model(&vec![0.0; q]), &v, &BoundaryCondition::free()).unwrap();
        let weights = BlockWeights::new(v.clone(), [(Region::chain(1), 1.0), (Region::interval(1, 3), 2.0)]).unwrap();
        let mins = block_min_probabilities(&BlockDynamics::new(&table, &weights).unwrap()).unwrap();
        assert!((mins[0] - 1.0 / q as f64).abs() < 1e-12);
        assert!((mins[1] - (q as f64).powi(-3)).abs() < 1e-12);
    }
}

#[test]
fn doubling_rates_halves_time() {
    let v = Region::chain(4);
    let table = gibbs_table(&SpinModel::ising(0.4, 0.1), &v, &BoundaryCondition::constant(0)).unwrap();
    let w = BlockWeights::even_odd(&v);
    let times: Vec<f64> = (0..12).map(|k| k as f64 * 0.4).collect();
    let doubled: Vec<f64> = times.iter().map(|t| 2.0 * t).collect();
    let slow = tv_mixing_curve(&BlockDynamics::new(&table, &w).unwrap(), &doubled, StartSet::All).unwrap();
    let fast = tv_mixing_curve(&BlockDynamics::new(&table, &w.scaled(2.0).unwrap()).unwrap(), &times, StartSet::All).unwrap();
    for (a, b) in slow.tv.iter().zip(&fast.tv) {
        assert!((a - b).abs() < 1e-10);
    }
    let worst = 1.0 - table.probs().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((fast.tv[0] - worst).abs() < 1e-12);
    assert!(fast.tv.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn full_block_semigroup_is_explicit() {
    // L = μ - I, so P_t f = e^{-t} f + (1 - e^{-t}) μf
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let v = Region::chain(3);
    let table = gibbs_table(&SpinModel::ising(0.5, -0.2), &v, &BoundaryCondition::free()).unwrap();
    let dyn_ = BlockDynamics::new(&table, &BlockWeights::full(&v)).unwrap();
    let f = random_density(&mut rng, table.len());
    let m = table.mean(&f);
    let times = [0.0, 0.3, 1.0, 2.5];
    for (t, ft) in times.iter().zip(dyn_.evolve(f.values(), &times)) {
        for (x, y) in f.values().iter().zip(&ft) {
            assert!((y - ((-t).exp() * x + (1.0 - (-t).exp()) * m)).abs() < 1e-10 * (1.0 + x.abs()));
        }
    }
    let flat = entropy_decay_check(&dyn_, &ConfigFunction::constant(table.len(), 2.0), &[0.0, 1.0, 2.0], 1.0).unwrap();
    assert!(flat.entropy.iter().all(|&e| e == 0.0) && flat.slopes.is_empty() && flat.pass);
}

#[test]
fn entropy_decays_at_least_at_the_factorization_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let v = Region::chain(4);
    let table = gibbs_table(&SpinModel::ising(0.3, 0.0), &v, &BoundaryCondition::constant(1)).unwrap();
    let w = BlockWeights::even_odd(&v);
    let c = estimate_best_constant(&table, &w, &OptimizerConfig::default().with_seed(35)).unwrap().value;
    let dyn_ = BlockDynamics::new(&table, &w).unwrap();
    let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.25).collect();
    for _ in 0..5 {
        let f = random_density(&mut rng, table.len());
        let rep = entropy_decay_check(&dyn_, &f, &times, c).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.entropy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}

/// `t` at which the TV distance between `n` independent uniform bits, each
/// resampled at rate 1, and the uniform law reaches `1/4`: the law only
/// depends on how many bits still agree with the start.
fn product_mixing_time(n: usize) -> f64 {
    let tv = |t: f64| {
        let a = (-t).exp() + (1.0 - (-t).exp()) / 2.0;
        (0..=n)
            .map(|k| {
                let binom = (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
                binom * (a.powi(k as i32) * (1.0 - a).powi((n - k) as i32) - 0.5f64.powi(n as i32)).abs()
            })
            .sum::<f64>()
            / 2.0
    };
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tv(mid) > 0.25 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn infinite_temperature_scaling_matches_coupon_collector() {
    let model = product_model(&[0.0, 0.0]);
    let regions: Vec<Region> = (2..=7).map(Region::chain).collect();
    let tau = BoundaryCondition::free();
    let table = mixing_time_scaling(&model, &regions, &tau, &WeightPreset::Singletons, 1.0, 1 << 10, &McConfig::default()).unwrap();
    for row in &table.rows {
        assert_eq!(row.method, "exact-tv");
        assert!((row.value - product_mixing_time(row.sites)).abs() < 1e-6, "{row:?}");
    }
    // cutoff at (1/2) log n for independent bits
    assert!(table.fit.slope > 0.3 && table.fit.slope < 0.7, "{:?}", table.fit);
    let fast = mixing_time_scaling(&model, &regions, &tau, &WeightPreset::Singletons, 3.0, 1 << 10, &McConfig::default()).unwrap();
    assert!((fast.fit.slope - table.fit.slope / 3.0).abs() < 1e-6);
    assert!((fast.rows[0].gamma - 3.0).abs() < 1e-15);
}

#[test]
fn high_temperature_mixing_grows_slowly() {
    let model = SpinModel::ising(0.1, 0.0);
    let tau = BoundaryCondition::constant(1);
    let mut previous = 0.0;
    for n in [2, 4, 6, 8] {
        let v = Region::chain(n);
        let table = gibbs_table(&model, &v, &tau).unwrap();
        let t = mixing_time(&BlockDynamics::new(&table, &BlockWeights::singletons(&v)).unwrap(), 0.25, StartSet::All, 1e-9).unwrap();
        assert!(t >= previous);
        assert!(t <= 2.0 * product_mixing_time(n) + 1.0, "n={n}: {t}");
        previous = t;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dirichlet_form_is_symmetric_and_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Region::chain(rng.random_range(1..=4));
        let model = SpinModel::potts(3, rng.random_range(-0.5..1.0), &[0.0, rng.random_range(-1.0..1.0), 0.0]).unwrap();
        let table = gibbs_table(&model, &v, &random_boundary(&mut rng, &v, 3)).unwrap();
        let blocks: Vec<(Region, f64)> = (0..3).map(|_| (random_subset(&mut rng, &v, 0.5), rng.random_range(0.0..2.0))).collect();
        let Ok(w) = BlockWeights::new(v.clone(), blocks) else { return Ok(()) };
        let Ok(dyn_) = BlockDynamics::new(&table, &w) else { return Ok(()) };
        let (f, g) = (random_real(&mut rng, table.len()), random_real(&mut rng, table.len()));
        let (efg, egf) = (dyn_.dirichlet_form(&f, &g).unwrap(), dyn_.dirichlet_form(&g, &f).unwrap());
        prop_assert!((efg - egf).abs() <= 1e-10 * (1.0 + efg.abs()));
        let eff = dyn_.dirichlet_form(&f, &f).unwrap();
        prop_assert!(eff >= -1e-12);
        let lf = dyn_.generator(&f).unwrap();
        prop_assert!((eff + dyn_.inner(&f, &lf)).abs() <= 1e-10 * (1.0 + eff));
    }
}
