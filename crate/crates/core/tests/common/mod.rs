#![allow(dead_code)]

use entrofact::lattice::Region;
use entrofact::model::BoundaryCondition;
use entrofact::ConfigFunction;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A nonnegative test function of varied shape: log-normal with random
/// spread, sparse two-level, or a small perturbation of a constant.
pub fn random_density(rng: &mut ChaCha8Rng, n: usize) -> ConfigFunction {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mode = rng.random_range(0..4);
    let values = match mode {
        0 => {
            let s: f64 = rng.random_range(0.1..3.0);
            (0..n).map(|_| (s * normal.sample(rng)).exp()).collect()
        }
        1 => (0..n).map(|_| if rng.random_bool(0.3) { rng.random_range(1.0..10.0) } else { 1e-3 }).collect(),
        2 => (0..n).map(|_| 1.0 + 0.01 * normal.sample(rng)).collect(),
        _ => (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..5.0) } else { 0.0 }).collect(),
    };
    let mut f = ConfigFunction::new(values);
    if f.values().iter().all(|&x| x == 0.0) {
        f = ConfigFunction::constant(n, 1.0);
    }
    f
}

pub fn random_real(rng: &mut ChaCha8Rng, n: usize) -> ConfigFunction {
    ConfigFunction::new((0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
}

pub fn random_subset(rng: &mut ChaCha8Rng, v: &Region, p: f64) -> Region {
    v.filter_index(|_| rng.random_bool(p))
}

pub fn random_boundary(rng: &mut ChaCha8Rng, v: &Region, q: usize) -> BoundaryCondition {
    match rng.random_range(0..3) {
        0 => BoundaryCondition::free(),
        1 => BoundaryCondition::constant(rng.random_range(0..q) as u8),
        _ => BoundaryCondition::explicit(v.boundary().iter().map(|p| (p.clone(), rng.random_range(0..q) as u8)).collect::<Vec<_>>()),
    }
}

/// Site marginals `P(s_i = +1)` of the Ising chain `0..n` with weight
/// `exp(β Σ s_i s_{i+1} + β h Σ s_i)` and optional fixed end spins, by
/// forward/backward transfer vectors.
pub fn ising_chain_plus_marginals(beta: f64, h: f64, n: usize, left: Option<f64>, right: Option<f64>) -> Vec<f64> {
    let spins = [-1.0, 1.0];
    let site = |s: f64, i: usize| {
        let mut w = beta * h * s;
        if i == 0 {
            w += left.map_or(0.0, |b| beta * b * s);
        }
        if i == n - 1 {
            w += right.map_or(0.0, |b| beta * b * s);
        }
        w.exp()
    };
    let mut fwd = vec![[0.0; 2]; n];
    for (k, &s) in spins.iter().enumerate() {
        fwd[0][k] = site(s, 0);
    }
    for i in 1..n {
        for (k, &s) in spins.iter().enumerate() {
            fwd[i][k] = spins.iter().enumerate().map(|(j, &t)| fwd[i - 1][j] * (beta * s * t).exp()).sum::<f64>() * site(s, i);
        }
        let norm = fwd[i][0] + fwd[i][1];
        fwd[i].iter_mut().for_each(|x| *x /= norm);
    }
    let mut bwd = vec![[1.0; 2]; n];
    for i in (0..n - 1).rev() {
        for (k, &s) in spins.iter().enumerate() {
            bwd[i][k] = spins.iter().enumerate().map(|(j, &t)| bwd[i + 1][j] * (beta * s * t).exp() * site(t, i + 1)).sum();
        }
        let norm = bwd[i][0] + bwd[i][1];
        bwd[i].iter_mut().for_each(|x| *x /= norm);
    }
    (0..n)
        .map(|i| {
            let a = fwd[i][0] * bwd[i][0];
            let b = fwd[i][1] * bwd[i][1];
            b / (a + b)
        })
        .collect()
}

/// Largest and second eigenvalue of the symmetric 2x2 Ising transfer matrix
/// `[[e^{β}, e^{-β}], [e^{-β}, e^{β}]]`, by the closed-form 2x2 formula.
pub fn ising_transfer_eigenvalues(beta: f64) -> (f64, f64) {
    let (a, b, d) = (beta.exp(), (-beta).exp(), beta.exp());
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    ((tr + disc) / 2.0, (tr - disc) / 2.0)
}

/// `μ[Ent_A f]` by direct summation: for every configuration, scan all
/// configurations agreeing with it off `block` (positions in the region).
pub fn brute_mean_block_entropy(probs: &[f64], q: usize, n: usize, block: &[usize], f: &[f64]) -> f64 {
    let digits = |mut i: usize| {
        let mut d = vec![0usize; n];
        for x in d.iter_mut() {
            *x = i % q;
            i /= q;
        }
        d
    };
    let configs: Vec<Vec<usize>> = (0..probs.len()).map(digits).collect();
    let same_outside = |a: &[usize], b: &[usize]| (0..n).all(|k| block.contains(&k) || a[k] == b[k]);
    let mut total = 0.0;
    for (i, ci) in configs.iter().enumerate() {
        if probs[i] == 0.0 {
            continue;
        }
        let (mut mass, mut m, mut mflogf) = (0.0, 0.0, 0.0);
        for (j, cj) in configs.iter().enumerate() {
            if same_outside(ci, cj) {
                mass += probs[j];
                m += probs[j] * f[j];
                if f[j] > 0.0 {
                    mflogf += probs[j] * f[j] * f[j].ln();
                }
            }
        }
        let (m, mflogf) = (m / mass, mflogf / mass);
        let ent = if m > 0.0 { mflogf - m * m.ln() } else { 0.0 };
        total += probs[i] * ent;
    }
    total
}

pub fn brute_entropy(probs: &[f64], f: &[f64]) -> f64 {
    let m: f64 = probs.iter().zip(f).map(|(p, x)| p * x).sum();
    let s: f64 = probs.iter().zip(f).filter(|(_, x)| **x > 0.0).map(|(p, x)| p * x * x.ln()).sum();
    s - if m > 0.0 { m * m.ln() } else { 0.0 }
}
