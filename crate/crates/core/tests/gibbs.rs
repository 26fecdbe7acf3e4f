mod common;

use entrofact::gibbs::marginal_density_psi;
use entrofact::lattice::Region;
use entrofact::model::{check_permissive, hamiltonian, BoundaryCondition, Energy, SpinModel};
use entrofact::{gibbs_table, ConfigFunction, GibbsTable};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn spin(s: u8) -> f64 {
    if s == 1 {
        1.0
    } else {
        -1.0
    }
}

#[test]
fn ising_chain_table_matches_transfer_matrix() {
    let (beta, h) = (0.7, 0.3);
    let n = 3;
    let table = gibbs_table(&SpinModel::ising(beta, h), &Region::chain(n), &BoundaryCondition::constant(1)).unwrap();
    // Z = e_+ᵀ T (D T)^n e_+ with T(s,t) = e^{βst} and D = diag(e^{βhs})
    let s = [-1.0, 1.0];
    let t = |a: usize, b: usize| (beta * s[a] * s[b]).exp();
    let mut row = [t(1, 0), t(1, 1)];
    for _ in 0..n {
        let scaled = [row[0] * (beta * h * s[0]).exp(), row[1] * (beta * h * s[1]).exp()];
        row = [scaled[0] * t(0, 0) + scaled[1] * t(1, 0), scaled[0] * t(0, 1) + scaled[1] * t(1, 1)];
    }
    let z = row[1];
    for i in 0..table.len() {
        let c = table.configuration(i);
        let mut lw = beta * (spin(c[0]) + spin(c[n - 1]));
        for k in 0..n {
            lw += beta * h * spin(c[k]);
            if k + 1 < n {
                lw += beta * spin(c[k]) * spin(c[k + 1]);
            }
        }
        assert!((table.probs()[i] - lw.exp() / z).abs() < 1e-12);
    }
    assert!((table.log_z() - z.ln()).abs() < 1e-12);
}

#[test]
fn potts_two_states_is_ising() {
    let (beta, h) = (0.45, -0.8);
    for n in 1..=4 {
        let v = Region::chain(n);
        for tau in [BoundaryCondition::free(), BoundaryCondition::constant(0), BoundaryCondition::constant(1)] {
            let a = gibbs_table(&SpinModel::ising(beta, h), &v, &tau).unwrap();
            let b = gibbs_table(&SpinModel::potts(2, 2.0 * beta, &[-h / 2.0, h / 2.0]).unwrap(), &v, &tau).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_site_ising_energy_by_hand() {
    let (beta, h) = (0.4, 0.25);
    let v = Region::chain(1);
    let e = hamiltonian(&SpinModel::ising(beta, h), &v, &BoundaryCondition::constant(1), &[1]).unwrap();
    assert_eq!(e, Energy::Finite(-(2.0 * beta + beta * h)));
    let flat = hamiltonian(&SpinModel::ising(0.0, 0.0), &Region::chain(3), &BoundaryCondition::constant(0), &[0, 1, 1]).unwrap();
    assert_eq!(flat, Energy::Finite(0.0));
}

#[test]
fn hard_constraints() {
    let v = Region::chain(2);
    let hc = SpinModel::hardcore(2.0).unwrap();
    assert_eq!(hamiltonian(&hc, &v, &BoundaryCondition::free(), &[1, 1]).unwrap(), Energy::Infinite);
    let one = gibbs_table(&SpinModel::hardcore(1.0).unwrap(), &Region::chain(1), &BoundaryCondition::free()).unwrap();
    assert!((one.probs()[1] - 0.5).abs() < 1e-15);
    let lam = 3.5;
    let one = gibbs_table(&SpinModel::hardcore(lam).unwrap(), &Region::chain(1), &BoundaryCondition::free()).unwrap();
    assert!((one.probs()[1] - lam / (1.0 + lam)).abs() < 1e-15);

    let col = SpinModel::colorings(3, 1).unwrap();
    let t = gibbs_table(&col, &Region::chain(3), &BoundaryCondition::free()).unwrap();
    let proper = (0..t.len()).filter(|&i| {
        let c = t.configuration(i);
        c[0] != c[1] && c[1] != c[2]
    });
    let count = proper.clone().count() as f64;
    for i in proper {
        assert!((t.probs()[i] - 1.0 / count).abs() < 1e-15);
    }

    assert!(check_permissive(&SpinModel::ising(1.0, 0.0), &Region::rectangle(&[2, 2]).unwrap(), 1 << 20).unwrap());
    assert!(check_permissive(&hc, &Region::rectangle(&[2, 2]).unwrap(), 1 << 20).unwrap());
    let site = Region::new(2, [vec![0, 0]]).unwrap();
    assert!(!check_permissive(&SpinModel::colorings(2, 2).unwrap(), &site, 1 << 20).unwrap());
}

#[test]
fn psi_matches_transfer_matrix_marginal() {
    let (beta, h) = (0.6, 0.1);
    let lambda = Region::chain(5);
    let oracle = ising_chain_plus_marginals(beta, h, 5, Some(1.0), Some(1.0));
    let model = SpinModel::ising(beta, h);
    for k in 0..5 {
        let delta = Region::interval(k, k);
        let psi = marginal_density_psi(&model, &lambda, &delta, &BoundaryCondition::constant(1), &[1]).unwrap();
        assert!((psi - oracle[k as usize]).abs() < 1e-12);
    }
    let table = gibbs_table(&model, &lambda, &BoundaryCondition::constant(1)).unwrap();
    let full = marginal_density_psi(&model, &lambda, &lambda, &BoundaryCondition::constant(1), &[1, 0, 1, 1, 0]).unwrap();
    assert!((full - table.probs()[entrofact::model::encode(&[1, 0, 1, 1, 0], 2)]).abs() < 1e-15);
    let flat = marginal_density_psi(&SpinModel::potts(3, 0.0, &[0.0; 3]).unwrap(), &Region::chain(3), &Region::chain(2), &BoundaryCondition::constant(2), &[1, 2]).unwrap();
    assert!((flat - 1.0 / 9.0).abs() < 1e-15);
}

#[test]
fn dlr_on_potts_rectangle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = Region::rectangle(&[2, 3]).unwrap();
    let table = gibbs_table(&SpinModel::potts(3, 0.8, &[0.3, 0.0, -0.2]).unwrap(), &v, &BoundaryCondition::constant(2)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let lambda = random_subset(&mut rng, &v, 0.5);
        let f = random_density(&mut rng, table.len());
        worst = worst.max(table.dlr_residual(&lambda, &f).unwrap());
    }
    assert!(worst <= 1e-10, "{worst}");
    let f = random_density(&mut rng, table.len());
    assert_eq!(table.dlr_residual(&v, &f).unwrap(), 0.0);
}

#[test]
fn entropy_of_two_point_function() {
    let t = gibbs_table(&SpinModel::ising(0.0, 0.0), &Region::chain(1), &BoundaryCondition::free()).unwrap();
    let ent = t.entropy(&ConfigFunction::new(vec![2.0, 0.0])).unwrap();
    assert!((ent - 2f64.ln()).abs() < 1e-15);
    let c = ConfigFunction::constant(2, 3.0);
    assert_eq!(t.entropy(&c).unwrap(), 0.0);
    assert_eq!(t.variance(&c).unwrap(), 0.0);
}

#[test]
fn telescoping_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let v = Region::rectangle(&[2, 2]).unwrap();
    let table = gibbs_table(&SpinModel::ising(0.9, 0.2), &v, &BoundaryCondition::constant(0)).unwrap();
    for _ in 0..50 {
        let f = random_density(&mut rng, table.len());
        // one step from the empty set is the plain decomposition
        let one = table.telescope_check(&[Region::empty(2), v.clone()], &f).unwrap();
        assert!(one.decomposition <= 1e-10 && one.telescope <= 1e-10);
        let l0 = random_subset(&mut rng, &v, 0.3);
        let l1 = l0.union(&random_subset(&mut rng, &v, 0.5));
        let r = table.telescope_check(&[l0, l1, v.clone()], &f).unwrap();
        assert!(r.decomposition <= 1e-10 && r.telescope <= 1e-10, "{r:?}");
    }
    let c = ConfigFunction::constant(table.len(), 2.0);
    let r = table.telescope_check(&[Region::empty(2), v.clone()], &c).unwrap();
    assert_eq!((r.decomposition, r.telescope), (0.0, 0.0));
}

#[test]
fn variational_bound_for_feasible_h() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let v = Region::chain(5);
    let table = gibbs_table(&SpinModel::ising(0.5, 0.3), &v, &BoundaryCondition::constant(1)).unwrap();
    for _ in 0..200 {
        let u = random_subset(&mut rng, &v, 0.5);
        let g = random_density(&mut rng, table.len());
        let raw = random_real(&mut rng, table.len());
        // shift h fiberwise so that μ_U(e^h) ≤ 1
        let norm = table.conditional_expectation(&u, &raw.map(f64::exp)).unwrap();
        let slack: f64 = rng.random_range(0.0..1.0);
        let h = ConfigFunction::new(raw.values().iter().zip(norm.values()).map(|(x, n)| x - n.ln() - slack).collect());
        assert!(table.variational_check(&u, &g, &h).unwrap() <= 1e-10);
    }
    let zero = ConfigFunction::constant(table.len(), 0.0);
    let g = random_density(&mut rng, table.len());
    assert!(table.variational_check(&v, &g, &zero).unwrap() <= 1e-12);
}

#[test]
fn jensen_sides_match_single_site_closed_form() {
    let (beta, h) = (0.7, -0.2);
    let (c, d, e) = (0.9, -0.4, 1.3);
    let v = Region::chain(4);
    let table = gibbs_table(&SpinModel::ising(beta, h), &v, &BoundaryCondition::constant(1)).unwrap();
    let f = ConfigFunction::new(
        (0..table.len())
            .map(|i| {
                let s = table.configuration(i);
                (c * spin(s[1]) + d * spin(s[0]) + e * spin(s[3])).exp()
            })
            .collect(),
    );
    let a = Region::interval(1, 1);
    let ent = table.block_entropy(&a, &f).unwrap();
    let cov = table.covariance_block(&a, &f, &f.map(f64::ln)).unwrap();
    for i in 0..table.len() {
        let s = table.configuration(i);
        let field = beta * (spin(s[0]) + spin(s[2])) + beta * h;
        let p_up = field.exp() / (field.exp() + (-field).exp());
        let law = [(1.0 - p_up, -1.0), (p_up, 1.0)];
        let k = (d * spin(s[0]) + e * spin(s[3])).exp();
        let mean_u: f64 = law.iter().map(|(p, x)| p * (c * x).exp()).sum();
        let mean_us: f64 = law.iter().map(|(p, x)| p * (c * x).exp() * x).sum();
        let mean_s: f64 = law.iter().map(|(p, x)| p * x).sum();
        let ent_oracle = k * (c * mean_us - mean_u * mean_u.ln());
        let cov_oracle = k * c * (mean_us - mean_u * mean_s);
        assert!((ent.values()[i] - ent_oracle).abs() < 1e-12);
        assert!((cov.values()[i] - cov_oracle).abs() < 1e-12);
        assert!(ent_oracle <= cov_oracle);
    }
}

/// A random small table and a density on it, from a seed.
fn instance(seed: u64) -> (GibbsTable, ConfigFunction, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let v = if rng.random_bool(0.5) { Region::chain(n) } else { Region::rectangle(&[2, n.min(3)]).unwrap() };
    let beta = rng.random_range(-1.0..1.0);
    let model = if n <= 3 && rng.random_bool(0.3) {
        SpinModel::potts(3, beta, &[0.2, -0.1, 0.0]).unwrap()
    } else {
        SpinModel::ising(beta, rng.random_range(-1.0..1.0))
    };
    let tau = random_boundary(&mut rng, &v, model.q());
    let table = gibbs_table(&model, &v, &tau).unwrap();
    let f = random_density(&mut rng, table.len());
    (table, f, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conditional_expectation_is_a_projection(seed in any::<u64>()) {
        let (table, f, mut rng) = instance(seed);
        let a = random_subset(&mut rng, table.region(), 0.5);
        let once = table.conditional_expectation(&a, &f).unwrap();
        let twice = table.conditional_expectation(&a, &once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-12 * (1.0 + f.values().iter().cloned().fold(0.0, f64::max)));
        let all = table.conditional_expectation(table.region(), &f).unwrap();
        let m = table.mean(&f);
        prop_assert!(all.values().iter().zip(table.probs()).all(|(x, p)| *p == 0.0 || (x - m).abs() <= 1e-12 * m.max(1.0)));
    }

    #[test]
    fn entropy_is_homogeneous_and_nonnegative(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (table, f, _) = instance(seed);
        let ent = table.entropy(&f).unwrap();
        prop_assert!(ent >= -1e-14);
        let scaled = table.entropy(&f.scale(c)).unwrap();
        prop_assert!((scaled - c * ent).abs() <= 1e-10 * (1.0 + c * ent.abs()));
    }

    #[test]
    fn block_entropy_grows_with_the_block(seed in any::<u64>()) {
        let (table, f, mut rng) = instance(seed);
        let a = random_subset(&mut rng, table.region(), 0.4);
        let b = a.union(&random_subset(&mut rng, table.region(), 0.4));
        let ea = table.mean_block_entropy(&a, &f).unwrap();
        let eb = table.mean_block_entropy(&b, &f).unwrap();
        prop_assert!(ea <= eb + 1e-12 * (1.0 + eb.abs()), "{} > {}", ea, eb);
    }

    #[test]
    fn marginals_are_probability_vectors(seed in any::<u64>()) {
        let (table, _, mut rng) = instance(seed);
        let delta = random_subset(&mut rng, table.region(), 0.5);
        let m = table.marginal(&delta).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(m.iter().all(|x| *x >= 0.0));
    }
}
