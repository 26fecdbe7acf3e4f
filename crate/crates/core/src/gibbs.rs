//! Exact finite-volume Gibbs tables and the functionals built on them:
//! conditional expectations over sub-blocks, entropy, variance, covariance,
//! marginal densities, and the DLR / telescoping / variational identities.
//!
//! Configurations of a region with `n` sites are indexed in mixed radix
//! `q`, with the first site in canonical order as the least significant digit.

use serde::Serialize;

use crate::error::{check_cap, Error, Result};
use crate::lattice::Region;
use crate::model::{decode, BoundaryCondition, Interaction, Spin, SpinModel};

/// Default cap on the number of configurations of an exact table.
pub const DEFAULT_STATE_CAP: u128 = 1 << 24;

/// Tolerance used for exact identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// The partition of configuration indices into fibers `{σ : σ_{V\A} fixed}`.
///
/// Every index is `base + offset` for exactly one `base` (A-digits zero) and
/// one `offset` (only A-digits nonzero).
#[derive(Clone, Debug)]
pub struct Fibers {
    pub positions: Vec<usize>,
    pub offsets: Vec<usize>,
    pub bases: Vec<usize>,
    strides: Vec<usize>,
    q: usize,
}

fn digit_combinations(strides: &[usize], q: usize) -> Vec<usize> {
    let mut out = vec![0usize];
    for &stride in strides {
        let mut next = Vec::with_capacity(out.len() * q);
        for s in 0..q {
            next.extend(out.iter().map(|o| o + s * stride));
        }
        out = next;
    }
    out.sort_unstable();
    out
}

impl Fibers {
    pub fn new(q: usize, n: usize, positions: &[usize]) -> Self {
        let mut positions = positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        let strides: Vec<usize> = (0..n).map(|i| q.pow(i as u32)).collect();
        let inside: Vec<usize> = positions.iter().map(|&p| strides[p]).collect();
        let outside: Vec<usize> = (0..n).filter(|i| positions.binary_search(i).is_err()).map(|i| strides[i]).collect();
        Fibers {
            offsets: digit_combinations(&inside, q),
            bases: digit_combinations(&outside, q),
            positions,
            strides,
            q,
        }
    }

    /// Base index of the fiber containing `index`.
    pub fn base_of(&self, index: usize) -> usize {
        self.positions
            .iter()
            .fold(index, |acc, &p| acc - ((index / self.strides[p]) % self.q) * self.strides[p])
    }

    /// Index of the offset of `index` within its fiber (mixed radix over the block).
    pub fn local_of(&self, index: usize) -> usize {
        self.positions
            .iter()
            .rev()
            .fold(0, |acc, &p| acc * self.q + (index / self.strides[p]) % self.q)
    }

    pub fn fiber_size(&self) -> usize {
        self.offsets.len()
    }
}

/// A real function on the configurations of a region.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigFunction {
    values: Vec<f64>,
}

impl ConfigFunction {
    pub fn new(values: Vec<f64>) -> Self {
        ConfigFunction { values }
    }

    pub fn constant(len: usize, c: f64) -> Self {
        ConfigFunction { values: vec![c; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> ConfigFunction {
        ConfigFunction { values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, c: f64) -> ConfigFunction {
        self.map(|x| c * x)
    }

    /// Pointwise `max(x, floor)`.
    pub fn clamp_below(&self, floor: f64) -> ConfigFunction {
        self.map(|x| x.max(floor))
    }

    pub fn max_abs_diff(&self, other: &ConfigFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for ConfigFunction {
    fn from(values: Vec<f64>) -> Self {
        ConfigFunction::new(values)
    }
}

/// `x log(x / m)` with `0 log 0 = 0`.
#[inline]
/// `x log(x/m) - x + m`: nonnegative, and its `μ`-average equals that of
/// `x log(x/m)` when `m` is the mean. Written in `u = x/m - 1` so that
/// nearly constant `f` keep their relative accuracy.
pub(crate) fn xlogx_over(x: f64, m: f64) -> f64 {
    if x <= 0.0 {
        m
    } else {
        let u = (x - m) / m;
        (m * ((1.0 + u) * u.ln_1p() - u)).max(0.0)
    }
}

/// `log Σ exp(x_i)` skipping `-∞` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Exact Gibbs measure of a region under a boundary condition.
#[derive(Clone, Debug)]
pub struct GibbsTable {
    region: Region,
    tau: BoundaryCondition,
    q: usize,
    probs: Vec<f64>,
    log_z: f64,
    model_hash: String,
}

/// Builds the exact table. Errors when the state space exceeds `cap` or the
/// partition function vanishes.
pub fn gibbs_table(model: &SpinModel, region: &Region, tau: &BoundaryCondition) -> Result<GibbsTable> {
    gibbs_table_capped(model, region, tau, DEFAULT_STATE_CAP)
}

pub fn gibbs_table_capped(model: &SpinModel, region: &Region, tau: &BoundaryCondition, cap: u128) -> Result<GibbsTable> {
    let q = model.q();
    let n = region.len();
    let total = check_cap(q, n, cap)?;
    let inter = Interaction::new(model, region, tau)?;
    let mut sigma = vec![0 as Spin; n];
    let log_w: Vec<f64> = (0..total)
        .map(|c| {
            decode(c, q, n, &mut sigma);
            inter.log_weight(&sigma)
        })
        .collect();
    let log_z = log_sum_exp(&log_w);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::NonPermissive(format!(
            "partition function vanishes on {} sites under boundary {}",
            n,
            tau.hash()
        )));
    }
    let mut probs: Vec<f64> = log_w.iter().map(|&lw| (lw - log_z).exp()).collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    let table = GibbsTable { region: region.clone(), tau: tau.clone(), q, probs, log_z, model_hash: model.hash() };
    debug_assert!(table.check_invariants(&log_w).is_ok());
    Ok(table)
}

impl GibbsTable {
    /// Table from explicit probabilities (normalized here). Used for
    /// synthetic measures in tests and by callers composing product tables.
    pub fn from_probabilities(region: Region, q: usize, probs: Vec<f64>) -> Result<Self> {
        let n = region.len();
        if probs.len() as u128 != crate::error::state_count(q, n) {
            return Err(Error::StateSpaceMismatch(format!("{} probabilities for q={q}, n={n}", probs.len())));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::NonPermissive("total mass is zero".into()));
        }
        Ok(GibbsTable {
            region,
            tau: BoundaryCondition::free(),
            q,
            probs: probs.iter().map(|p| p / sum).collect(),
            log_z: sum.ln(),
            model_hash: String::from("explicit"),
        })
    }

    fn check_invariants(&self, log_w: &[f64]) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("table sums to {sum}")));
        }
        for (p, lw) in self.probs.iter().zip(log_w) {
            if *p < 0.0 || (*lw == f64::NEG_INFINITY) != (*p == 0.0 && *lw == f64::NEG_INFINITY) {
                return Err(Error::Domain("support does not match the hard constraints".into()));
            }
        }
        Ok(())
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn boundary(&self) -> &BoundaryCondition {
        &self.tau
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_sites(&self) -> usize {
        self.region.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    /// Smallest positive probability `μ_*`.
    pub fn min_positive(&self) -> f64 {
        self.probs.iter().copied().filter(|&p| p > 0.0).fold(f64::INFINITY, f64::min)
    }

    pub fn configuration(&self, index: usize) -> Vec<Spin> {
        let mut s = vec![0; self.n_sites()];
        decode(index, self.q, self.n_sites(), &mut s);
        s
    }

    pub fn fibers(&self, block: &Region) -> Result<Fibers> {
        let positions = self.region.positions_of(block)?;
        Ok(Fibers::new(self.q, self.n_sites(), &positions))
    }

    pub fn fibers_of_positions(&self, positions: &[usize]) -> Fibers {
        Fibers::new(self.q, self.n_sites(), positions)
    }

    pub(crate) fn check_len(&self, f: &ConfigFunction) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::StateSpaceMismatch(format!(
                "function has {} values, table has {}",
                f.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `μ f`.
    pub fn mean(&self, f: &ConfigFunction) -> f64 {
        self.probs.iter().zip(f.values()).filter(|(p, _)| **p > 0.0).map(|(p, x)| p * x).sum()
    }

    /// `μ_A f` as a function on the whole configuration space.
    pub fn conditional_expectation(&self, block: &Region, f: &ConfigFunction) -> Result<ConfigFunction> {
        self.check_len(f)?;
        let fib = self.fibers(block)?;
        Ok(self.cond_exp(&fib, f.values()).0)
    }

    /// Like [`conditional_expectation`](Self::conditional_expectation) but also
    /// returns the number of zero-mass fibers (set to 0 there).
    pub fn conditional_expectation_flagged(&self, block: &Region, f: &ConfigFunction) -> Result<(ConfigFunction, usize)> {
        self.check_len(f)?;
        let fib = self.fibers(block)?;
        Ok(self.cond_exp(&fib, f.values()))
    }

    pub(crate) fn cond_exp(&self, fib: &Fibers, f: &[f64]) -> (ConfigFunction, usize) {
        let mut out = vec![0.0; self.len()];
        let mut null = 0;
        if fib.fiber_size() == 1 {
            for (i, (&p, &x)) in self.probs.iter().zip(f).enumerate() {
                if p > 0.0 {
                    out[i] = x;
                } else {
                    null += 1;
                }
            }
            return (ConfigFunction::new(out), null);
        }
        for &b in &fib.bases {
            let mut mass = 0.0;
            let mut acc = 0.0;
            for &o in &fib.offsets {
                let p = self.probs[b + o];
                if p > 0.0 {
                    mass += p;
                    acc += p * f[b + o];
                }
            }
            let val = if mass > 0.0 {
                acc / mass
            } else {
                null += 1;
                0.0
            };
            for &o in &fib.offsets {
                out[b + o] = val;
            }
        }
        (ConfigFunction::new(out), null)
    }

    fn check_nonnegative(&self, f: &[f64]) -> Result<()> {
        for (i, (&p, &x)) in self.probs.iter().zip(f).enumerate() {
            if p > 0.0 && !(x >= 0.0) {
                return Err(Error::Domain(format!("entropy needs f ≥ 0, got f[{i}] = {x}")));
            }
        }
        Ok(())
    }

    /// `Ent f = μ[f log(f / μf)]`.
    pub fn entropy(&self, f: &ConfigFunction) -> Result<f64> {
        self.check_len(f)?;
        self.check_nonnegative(f.values())?;
        Ok(self.entropy_unchecked(f.values()))
    }

    pub(crate) fn entropy_unchecked(&self, f: &[f64]) -> f64 {
        let mut support = self.probs.iter().zip(f).filter(|(p, _)| **p > 0.0).map(|(_, x)| *x);
        let first = support.next().unwrap_or(0.0);
        if support.all(|x| x == first) {
            return 0.0;
        }
        let m: f64 = self.probs.iter().zip(f).filter(|(p, _)| **p > 0.0).map(|(p, x)| p * x).sum();
        if m <= 0.0 {
            return 0.0;
        }
        self.probs.iter().zip(f).filter(|(p, _)| **p > 0.0).map(|(p, &x)| p * xlogx_over(x, m)).sum::<f64>().max(0.0)
    }

    /// `Ent_A f` as a function (constant on fibers).
    pub fn block_entropy(&self, block: &Region, f: &ConfigFunction) -> Result<ConfigFunction> {
        self.check_len(f)?;
        self.check_nonnegative(f.values())?;
        let fib = self.fibers(block)?;
        let mut out = vec![0.0; self.len()];
        for &b in &fib.bases {
            let (mass, m) = self.fiber_mass_and_mean(&fib, b, f.values());
            let val = if mass > 0.0 && m > 0.0 {
                fib.offsets
                    .iter()
                    .map(|&o| {
                        let p = self.probs[b + o];
                        if p > 0.0 {
                            p * xlogx_over(f.values()[b + o], m)
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
                    / mass
            } else {
                0.0
            };
            for &o in &fib.offsets {
                out[b + o] = val.max(0.0);
            }
        }
        Ok(ConfigFunction::new(out))
    }

    /// Fiber mass and `μ`-mean of `f` on the fiber, exact when `f` is constant there.
    fn fiber_mass_and_mean(&self, fib: &Fibers, base: usize, f: &[f64]) -> (f64, f64) {
        let mut mass = 0.0;
        let mut acc = 0.0;
        let mut common = None;
        let mut constant = true;
        for &o in &fib.offsets {
            let p = self.probs[base + o];
            if p > 0.0 {
                let x = f[base + o];
                mass += p;
                acc += p * x;
                constant &= *common.get_or_insert(x) == x;
            }
        }
        match common {
            Some(x) if constant => (mass, x),
            _ if mass > 0.0 => (mass, acc / mass),
            _ => (0.0, 0.0),
        }
    }

    /// `μ[Ent_A f]`.
    pub fn mean_block_entropy(&self, block: &Region, f: &ConfigFunction) -> Result<f64> {
        self.check_len(f)?;
        self.check_nonnegative(f.values())?;
        let fib = self.fibers(block)?;
        Ok(self.mean_block_entropy_fib(&fib, f.values()))
    }

    pub(crate) fn mean_block_entropy_fib(&self, fib: &Fibers, f: &[f64]) -> f64 {
        let mut total = 0.0;
        for &b in &fib.bases {
            let (mass, m) = self.fiber_mass_and_mean(fib, b, f);
            if mass <= 0.0 || m <= 0.0 {
                continue;
            }
            let mut s = 0.0;
            for &o in &fib.offsets {
                let p = self.probs[b + o];
                if p > 0.0 {
                    s += p * xlogx_over(f[b + o], m);
                }
            }
            total += s.max(0.0);
        }
        total
    }

    /// `Ent f`, adding `∂Ent/∂f` into `grad`. Assumes `f > 0` on the support.
    pub(crate) fn entropy_with_grad(&self, f: &[f64], grad: &mut [f64], scale: f64) -> f64 {
        let m: f64 = self.probs.iter().zip(f).filter(|(p, _)| **p > 0.0).map(|(p, x)| p * x).sum();
        let lm = m.ln();
        let mut ent = 0.0;
        for (i, (&p, &x)) in self.probs.iter().zip(f).enumerate() {
            if p > 0.0 {
                let l = x.ln() - lm;
                ent += p * xlogx_over(x, m);
                grad[i] += scale * p * l;
            }
        }
        ent.max(0.0)
    }

    /// `μ[Ent_A f]`, adding `scale·∂/∂f` into `grad`. Assumes `f > 0` on the support.
    pub(crate) fn mean_block_entropy_with_grad(&self, fib: &Fibers, f: &[f64], grad: &mut [f64], scale: f64) -> f64 {
        let mut total = 0.0;
        for &b in &fib.bases {
            let (mass, m) = self.fiber_mass_and_mean(fib, b, f);
            if mass <= 0.0 {
                continue;
            }
            let lm = m.ln();
            let mut s = 0.0;
            for &o in &fib.offsets {
                let i = b + o;
                let p = self.probs[i];
                if p > 0.0 {
                    let l = f[i].ln() - lm;
                    s += p * xlogx_over(f[i], m);
                    grad[i] += scale * p * l;
                }
            }
            total += s.max(0.0);
        }
        total
    }

    /// `Var f = μ[(f - μf)^2]`.
    pub fn variance(&self, f: &ConfigFunction) -> Result<f64> {
        self.check_len(f)?;
        let m = self.mean(f);
        Ok(self
            .probs
            .iter()
            .zip(f.values())
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, x)| p * (x - m) * (x - m))
            .sum())
    }

    /// `cov_A(f, g) = μ_A[fg] - μ_A[f] μ_A[g]` as a function.
    pub fn covariance_block(&self, block: &Region, f: &ConfigFunction, g: &ConfigFunction) -> Result<ConfigFunction> {
        self.check_len(f)?;
        self.check_len(g)?;
        let fib = self.fibers(block)?;
        Ok(ConfigFunction::new(self.covariance_fib(&fib, f.values(), g.values())))
    }

    pub(crate) fn covariance_fib(&self, fib: &Fibers, f: &[f64], g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for &b in &fib.bases {
            let mut mass = 0.0;
            let (mut sf, mut sg) = (0.0, 0.0);
            for &o in &fib.offsets {
                let p = self.probs[b + o];
                if p > 0.0 {
                    mass += p;
                    sf += p * f[b + o];
                    sg += p * g[b + o];
                }
            }
            if mass <= 0.0 {
                continue;
            }
            let (mf, mg) = (sf / mass, sg / mass);
            // centred form keeps cancellation error small
            let mut c = 0.0;
            for &o in &fib.offsets {
                let p = self.probs[b + o];
                if p > 0.0 {
                    c += p * (f[b + o] - mf) * (g[b + o] - mg);
                }
            }
            let val = c / mass;
            for &o in &fib.offsets {
                out[b + o] = val;
            }
        }
        out
    }

    /// `Var_A f` as a function.
    pub fn block_variance(&self, block: &Region, f: &ConfigFunction) -> Result<ConfigFunction> {
        self.covariance_block(block, f, f)
    }

    /// Marginal law of `σ_Δ`, indexed in mixed radix over `Δ` in canonical order.
    /// With counting a-priori measure this is the density `ψ_{Λ,Δ}`.
    pub fn marginal(&self, delta: &Region) -> Result<Vec<f64>> {
        let fib = self.fibers(delta)?;
        let mut out = vec![0.0; fib.fiber_size()];
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                out[fib.local_of(i)] += p;
            }
        }
        Ok(out)
    }

    /// `|μ(μ_Λ f) - μ f|`.
    pub fn dlr_residual(&self, lambda: &Region, f: &ConfigFunction) -> Result<f64> {
        let g = self.conditional_expectation(lambda, f)?;
        if *lambda == self.region {
            // μ_V f is the constant μ f
            return Ok(0.0);
        }
        Ok((self.mean(&g) - self.mean(f)).abs())
    }

    /// Residuals of the entropy decomposition along a nested chain
    /// `Λ_0 ⊆ Λ_1 ⊆ … ⊆ Λ_k ⊆ V`.
    pub fn telescope_check(&self, chain: &[Region], f: &ConfigFunction) -> Result<TelescopeResiduals> {
        self.check_len(f)?;
        if chain.is_empty() {
            return Err(Error::Precondition("chain must contain at least one region".into()));
        }
        for w in chain.windows(2) {
            if !w[0].is_subset(&w[1]) {
                return Err(Error::Precondition(format!("chain is not nested: {:?} ⊄ {:?}", w[0], w[1])));
            }
        }
        if !chain[chain.len() - 1].is_subset(&self.region) {
            return Err(Error::Precondition("chain leaves the region".into()));
        }
        let ent = self.entropy(f)?;
        let mut decomposition = 0.0f64;
        for lam in chain {
            let lhs = self.mean_block_entropy(lam, f)? + self.entropy(&self.conditional_expectation(lam, f)?)?;
            decomposition = decomposition.max((ent - lhs).abs());
        }
        let mut sum = 0.0;
        for w in chain.windows(2) {
            let g = self.conditional_expectation(&w[0], f)?;
            sum += self.mean_block_entropy(&w[1], &g)?;
        }
        let g0 = self.conditional_expectation(&chain[0], f)?;
        let total = self.mean_block_entropy(&chain[chain.len() - 1], &g0)?;
        Ok(TelescopeResiduals { decomposition, telescope: (sum - total).abs() })
    }

    /// Largest fiberwise excess `μ_U(gh) - Ent_U g` for `g ≥ 0` and `h` with
    /// `μ_U(e^h) ≤ 1` on every fiber. Errors if the constraint fails.
    pub fn variational_check(&self, block: &Region, g: &ConfigFunction, h: &ConfigFunction) -> Result<f64> {
        self.check_len(g)?;
        self.check_len(h)?;
        let fib = self.fibers(block)?;
        let eh = h.map(f64::exp);
        let gh = ConfigFunction::new(g.values().iter().zip(h.values()).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * b }).collect());
        let (norm, _) = self.cond_exp(&fib, eh.values());
        if norm.values().iter().any(|&x| x > 1.0 + 1e-12) {
            return Err(Error::Domain("μ_U(e^h) exceeds 1 on some fiber".into()));
        }
        let (lhs, _) = self.cond_exp(&fib, gh.values());
        let ent = self.block_entropy(block, g)?;
        Ok(lhs
            .values()
            .iter()
            .zip(ent.values())
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|((a, b), _)| a - b)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Maximum deviation of `μ_Λ` from the product of its marginals on
    /// `parts` (a partition of `Λ`), over all fibers of `Λ` in `V`.
    pub fn product_deviation(&self, lambda: &Region, parts: &[Region]) -> Result<f64> {
        let fib = self.fibers(lambda)?;
        let part_fibs: Vec<Fibers> = parts
            .iter()
            .map(|p| {
                if !p.is_subset(lambda) {
                    return Err(Error::Precondition("part is not inside Λ".into()));
                }
                let pos = self.region.positions_of(p)?;
                Ok(Fibers::new(self.q, self.n_sites(), &pos))
            })
            .collect::<Result<_>>()?;
        let covered: usize = parts.iter().map(Region::len).sum();
        if covered != lambda.len() || parts.iter().fold(Region::empty(lambda.dim()), |a, p| a.union(p)) != *lambda {
            return Err(Error::Precondition("parts must partition Λ".into()));
        }
        let mut worst = 0.0f64;
        for &b in &fib.bases {
            let mass: f64 = fib.offsets.iter().map(|&o| self.probs[b + o]).sum();
            if mass <= 0.0 {
                continue;
            }
            // marginal of each part inside this fiber
            let marginals: Vec<Vec<f64>> = part_fibs
                .iter()
                .map(|pf| {
                    let mut m = vec![0.0; pf.fiber_size()];
                    for &o in &fib.offsets {
                        m[pf.local_of(b + o)] += self.probs[b + o] / mass;
                    }
                    m
                })
                .collect();
            for &o in &fib.offsets {
                let prod: f64 = part_fibs.iter().zip(&marginals).map(|(pf, m)| m[pf.local_of(b + o)]).product();
                worst = worst.max((self.probs[b + o] / mass - prod).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TelescopeResiduals {
    /// `max_Λ |Ent f - μ[Ent_Λ f] - Ent μ_Λ f|` over the chain.
    pub decomposition: f64,
    /// `|Σ_i μ[Ent_{Λ_i} μ_{Λ_{i-1}} f] - μ[Ent_{Λ_k} μ_{Λ_0} f]|`.
    pub telescope: f64,
}

/// `ψ_{Λ,Δ}^τ(σ_Δ)`: marginal density of `σ_Δ` under `μ_Λ^τ`.
pub fn marginal_density_psi(
    model: &SpinModel,
    lambda: &Region,
    delta: &Region,
    tau: &BoundaryCondition,
    sigma_delta: &[Spin],
) -> Result<f64> {
    if !delta.is_subset(lambda) {
        return Err(Error::Precondition("Δ must be a subset of Λ".into()));
    }
    if sigma_delta.len() != delta.len() {
        return Err(Error::IncompleteConfiguration("σ_Δ must assign every site of Δ".into()));
    }
    let table = gibbs_table(model, lambda, tau)?;
    let marg = table.marginal(delta)?;
    Ok(marg[crate::model::encode(sigma_delta, model.q())])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_table(beta: f64, n: usize) -> GibbsTable {
        gibbs_table(&SpinModel::ising(beta, 0.0), &Region::chain(n), &BoundaryCondition::constant(1)).unwrap()
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let t = gibbs_table(&SpinModel::potts(3, 0.0, &[0.0; 3]).unwrap(), &Region::chain(3), &BoundaryCondition::constant(0)).unwrap();
        for p in t.probs() {
            assert!((p - 1.0 / 27.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_site_hardcore() {
        for lambda in [0.5, 1.0, 3.0] {
            let m = SpinModel::hardcore(lambda).unwrap();
            let t = gibbs_table(&m, &Region::chain(1), &BoundaryCondition::free()).unwrap();
            assert!((t.probs()[1] - lambda / (1.0 + lambda)).abs() < 1e-14);
        }
    }

    #[test]
    fn fibers_partition_the_space() {
        let fib = Fibers::new(3, 4, &[1, 3]);
        let mut all: Vec<usize> = fib.bases.iter().flat_map(|b| fib.offsets.iter().map(move |o| b + o)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..81).collect::<Vec<_>>());
        for i in 0..81 {
            let b = fib.base_of(i);
            assert!(fib.bases.contains(&b));
            assert_eq!(fib.offsets[fib.local_of(i)], i - b);
        }
    }

    #[test]
    fn conditional_expectation_edges() {
        let t = chain_table(0.4, 3);
        let f = ConfigFunction::new((0..8).map(|i| 1.0 + i as f64).collect());
        let same = t.conditional_expectation(&Region::empty(1), &f).unwrap();
        assert_eq!(same, f);
        let all = t.conditional_expectation(t.region(), &f).unwrap();
        let m = t.mean(&f);
        assert!(all.values().iter().all(|x| (x - m).abs() < 1e-14));
        let a = Region::interval(1, 2);
        let once = t.conditional_expectation(&a, &f).unwrap();
        let twice = t.conditional_expectation(&a, &once).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-12);
    }

    #[test]
    fn entropy_basics() {
        let t = GibbsTable::from_probabilities(Region::chain(1), 2, vec![0.5, 0.5]).unwrap();
        let ent = t.entropy(&ConfigFunction::new(vec![2.0, 0.0])).unwrap();
        assert!((ent - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t.entropy(&ConfigFunction::constant(2, 3.0)).unwrap(), 0.0);
        assert_eq!(t.variance(&ConfigFunction::constant(2, 3.0)).unwrap(), 0.0);
        assert!(matches!(t.entropy(&ConfigFunction::new(vec![-1.0, 1.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn covariance_vanishes_for_outside_functions() {
        let t = chain_table(0.3, 3);
        let a = Region::interval(0, 1);
        // depends only on the spin at site 2
        let f = ConfigFunction::new((0..8).map(|i| if i >= 4 { 2.0 } else { 0.5 }).collect());
        let g = ConfigFunction::new((0..8).map(|i| (i as f64).sin()).collect());
        let c = t.covariance_block(&a, &f, &g).unwrap();
        assert!(c.values().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn variational_optimizer_attains_entropy() {
        let t = chain_table(0.5, 3);
        let a = Region::interval(0, 1);
        let g = ConfigFunction::new((0..8).map(|i| 0.2 + (i * i) as f64).collect());
        let mg = t.conditional_expectation(&a, &g).unwrap();
        let h = ConfigFunction::new(g.values().iter().zip(mg.values()).map(|(x, m)| (x / m).ln()).collect());
        let excess = t.variational_check(&a, &g, &h).unwrap();
        assert!(excess.abs() < 1e-10);
        let zero = ConfigFunction::constant(8, 0.0);
        assert!(t.variational_check(&a, &g, &zero).unwrap() <= 1e-12);
        assert!(t.variational_check(&a, &g, &ConfigFunction::constant(8, 0.1)).is_err());
    }

    #[test]
    fn marginal_sums_to_one() {
        let t = chain_table(0.8, 4);
        let m = t.marginal(&Region::interval(1, 2)).unwrap();
        assert_eq!(m.len(), 4);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let full = t.marginal(t.region()).unwrap();
        assert!(full.iter().zip(t.probs()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn telescope_rejects_non_nested_chain() {
        let t = chain_table(0.2, 3);
        let f = ConfigFunction::constant(8, 1.0);
        let chain = [Region::interval(0, 1), Region::interval(1, 2)];
        assert!(matches!(t.telescope_check(&chain, &f), Err(Error::Precondition(_))));
    }

    #[test]
    fn cap_is_enforced() {
        let r = gibbs_table_capped(&SpinModel::ising(0.1, 0.0), &Region::chain(10), &BoundaryCondition::constant(0), 512);
        assert!(matches!(r, Err(Error::StateSpaceTooLarge { states: 1024, cap: 512 })));
    }

    #[test]
    fn vanishing_partition_function() {
        let m = SpinModel::colorings(2, 1).unwrap();
        let tau = BoundaryCondition::explicit([(vec![-1], 0), (vec![1], 1)]);
        assert!(matches!(gibbs_table(&m, &Region::chain(1), &tau), Err(Error::NonPermissive(_))));
    }
}
