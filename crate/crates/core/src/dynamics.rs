//! The α-weighted heat-bath block dynamics `L f = Σ_A α_A (μ_A f - f)`:
//! Dirichlet form, spectral gap, MLSI/LSI constants, total-variation mixing
//! curves by uniformization and entropy decay.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{ConfigFunction, Fibers, GibbsTable};
use crate::inequalities::BlockWeights;
use crate::optimize::{optimize_ratio, Goal, OptimizerConfig, RatioObjective};

/// Largest state space for the dense eigensolver.
pub const DEFAULT_DENSE_CAP: usize = 4096;
/// Largest state space for matrix-free uniformization.
pub const UNIFORMIZATION_CAP: usize = 1 << 16;
/// Poisson tail mass dropped by uniformization.
pub const POISSON_TAIL: f64 = 1e-12;

pub struct BlockDynamics<'a> {
    table: &'a GibbsTable,
    weights: BlockWeights,
    blocks: Vec<(Fibers, f64)>,
    rate: f64,
}

impl<'a> BlockDynamics<'a> {
    pub fn new(table: &'a GibbsTable, weights: &BlockWeights) -> Result<Self> {
        if weights.volume() != table.region() {
            return Err(Error::Precondition("weights are declared on a different volume than the table".into()));
        }
        let blocks = weights.fibers(table)?;
        let rate = blocks.iter().map(|(_, w)| w).sum();
        Ok(BlockDynamics { table, weights: weights.clone(), blocks, rate })
    }

    pub fn table(&self) -> &GibbsTable {
        self.table
    }

    pub fn weights(&self) -> &BlockWeights {
        &self.weights
    }

    /// `R = Σ_A α_A`, the uniformization rate.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn generator(&self, f: &ConfigFunction) -> Result<ConfigFunction> {
        self.table.check_len(f)?;
        let mut out = vec![0.0; f.len()];
        for (fib, w) in &self.blocks {
            let (m, _) = self.table.cond_exp(fib, f.values());
            for ((o, x), y) in out.iter_mut().zip(m.values()).zip(f.values()) {
                *o += w * (x - y);
            }
        }
        Ok(ConfigFunction::new(out))
    }

    /// `P h = Σ_A (α_A / R) μ_A h`.
    fn step(&self, h: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (fib, w) in &self.blocks {
            let (m, _) = self.table.cond_exp(fib, h);
            let c = w / self.rate;
            for (o, x) in out.iter_mut().zip(m.values()) {
                *o += c * x;
            }
        }
    }

    /// `E(f,g) = Σ α_A μ[cov_A(f,g)]`.
    pub fn dirichlet_form(&self, f: &ConfigFunction, g: &ConfigFunction) -> Result<f64> {
        self.table.check_len(f)?;
        self.table.check_len(g)?;
        let mut total = 0.0;
        for (fib, w) in &self.blocks {
            let cov = self.table.covariance_fib(fib, f.values(), g.values());
            total += w * self.table.probs().iter().zip(&cov).map(|(p, c)| p * c).sum::<f64>();
        }
        Ok(total)
    }

    /// `⟨f, g⟩_μ`.
    pub fn inner(&self, f: &ConfigFunction, g: &ConfigFunction) -> f64 {
        self.table.probs().iter().zip(f.values()).zip(g.values()).map(|((p, a), b)| p * a * b).sum()
    }

    /// Dense matrix of `L` on the support of `μ`, symmetrized in `L²(μ)`.
    fn symmetric_generator(&self, support: &[usize]) -> DMatrix<f64> {
        let p = self.table.probs();
        let n = support.len();
        let mut pos = vec![usize::MAX; p.len()];
        for (k, &i) in support.iter().enumerate() {
            pos[i] = k;
        }
        let mut s = DMatrix::<f64>::zeros(n, n);
        for (fib, w) in &self.blocks {
            for &b in &fib.bases {
                let mass: f64 = fib.offsets.iter().map(|&o| p[b + o]).sum();
                if mass <= 0.0 {
                    continue;
                }
                for &o1 in &fib.offsets {
                    let i = b + o1;
                    if p[i] <= 0.0 {
                        continue;
                    }
                    for &o2 in &fib.offsets {
                        let j = b + o2;
                        if p[j] > 0.0 {
                            // sqrt(p_i) (p_j/mass) / sqrt(p_j)
                            s[(pos[i], pos[j])] += w * (p[i] * p[j]).sqrt() / mass;
                        }
                    }
                }
            }
        }
        for k in 0..n {
            s[(k, k)] -= self.rate;
        }
        let t = s.transpose();
        (s + t) * 0.5
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralGap {
    pub gap: f64,
    pub method: &'static str,
    pub residual: f64,
    /// Gap is zero within tolerance.
    pub reducible: bool,
}

pub fn spectral_gap(dyn_: &BlockDynamics) -> Result<SpectralGap> {
    spectral_gap_with(dyn_, DEFAULT_DENSE_CAP)
}

/// Dense symmetric eigensolve up to `dense_cap` states, deflated power
/// iteration on `P = I + L/R` above it.
pub fn spectral_gap_with(dyn_: &BlockDynamics, dense_cap: usize) -> Result<SpectralGap> {
    let p = dyn_.table.probs();
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    if support.len() < 2 {
        return Ok(SpectralGap { gap: f64::INFINITY, method: "trivial", residual: 0.0, reducible: false });
    }
    if dyn_.rate <= 0.0 {
        return Ok(SpectralGap { gap: 0.0, method: "trivial", residual: 0.0, reducible: true });
    }
    if support.len() <= dense_cap {
        let s = dyn_.symmetric_generator(&support);
        let eig = SymmetricEigen::new(s);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|x| -x).collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        let gap = vals[1].max(0.0);
        return Ok(SpectralGap { gap, method: "dense", residual: vals[0].abs(), reducible: gap <= 1e-10 });
    }
    Ok(power_gap(dyn_))
}

fn power_gap(dyn_: &BlockDynamics) -> SpectralGap {
    const MAX_ITER: usize = 200_000;
    let p = dyn_.table.probs();
    let n = p.len();
    let mean = |v: &[f64]| -> f64 { p.iter().zip(v).map(|(a, b)| a * b).sum() };
    let norm = |v: &[f64]| -> f64 { p.iter().zip(v).map(|(a, b)| a * b * b).sum::<f64>().sqrt() };
    let mut v: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).sin() + 0.3 * ((i * i) as f64).cos()).collect();
    let mut pv = vec![0.0; n];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let m = mean(&v);
        v.iter_mut().for_each(|x| *x -= m);
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        dyn_.step(&v, &mut pv);
        let m = mean(&pv);
        pv.iter_mut().for_each(|x| *x -= m);
        lambda = p.iter().zip(&v).zip(&pv).map(|((a, x), y)| a * x * y).sum();
        let r: Vec<f64> = pv.iter().zip(&v).map(|(y, x)| y - lambda * x).collect();
        residual = norm(&r);
        std::mem::swap(&mut v, &mut pv);
        if residual <= 1e-9 {
            break;
        }
    }
    let gap = dyn_.rate * (1.0 - lambda);
    SpectralGap { gap, method: "power", residual, reducible: gap <= 1e-10 }
}

struct MlsiObjective<'a> {
    dyn_: &'a BlockDynamics<'a>,
}

impl RatioObjective for MlsiObjective<'_> {
    fn probs(&self) -> &[f64] {
        self.dyn_.table.probs()
    }

    fn eval(&self, f: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
        gn.fill(0.0);
        gd.fill(0.0);
        let t = self.dyn_.table;
        let p = t.probs();
        let logf: Vec<f64> = f.iter().map(|x| x.ln()).collect();
        let mut num = 0.0;
        for (fib, w) in &self.dyn_.blocks {
            for &b in &fib.bases {
                let (mut mass, mut sf, mut sl) = (0.0, 0.0, 0.0);
                for &o in &fib.offsets {
                    let i = b + o;
                    if p[i] > 0.0 {
                        mass += p[i];
                        sf += p[i] * f[i];
                        sl += p[i] * logf[i];
                    }
                }
                if mass <= 0.0 {
                    continue;
                }
                let (mf, ml) = (sf / mass, sl / mass);
                // centered second pass: the raw moments cancel for nearly constant f
                let mut cov = 0.0;
                for &o in &fib.offsets {
                    let i = b + o;
                    if p[i] > 0.0 {
                        cov += p[i] * (f[i] - mf) * (logf[i] - ml);
                        gn[i] += w * p[i] * (logf[i] + 1.0 - ml - mf / f[i]);
                    }
                }
                num += w * cov.max(0.0);
            }
        }
        let den = t.entropy_with_grad(f, gd, 1.0);
        (num, den)
    }
}

struct LsiObjective<'a> {
    dyn_: &'a BlockDynamics<'a>,
}

impl RatioObjective for LsiObjective<'_> {
    fn probs(&self) -> &[f64] {
        self.dyn_.table.probs()
    }

    fn eval(&self, f: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
        gn.fill(0.0);
        gd.fill(0.0);
        let t = self.dyn_.table;
        let p = t.probs();
        let num = t.entropy_with_grad(f, gn, 1.0);
        let mut den = 0.0;
        for (fib, w) in &self.dyn_.blocks {
            for &b in &fib.bases {
                let (mut mass, mut sr) = (0.0, 0.0);
                for &o in &fib.offsets {
                    let i = b + o;
                    if p[i] > 0.0 {
                        mass += p[i];
                        sr += p[i] * f[i].sqrt();
                    }
                }
                if mass <= 0.0 {
                    continue;
                }
                let mr = sr / mass;
                let mut var = 0.0;
                for &o in &fib.offsets {
                    let i = b + o;
                    if p[i] > 0.0 {
                        let r = f[i].sqrt();
                        var += p[i] * (r - mr) * (r - mr);
                        gd[i] += w * p[i] * (1.0 - mr / r);
                    }
                }
                den += w * var;
            }
        }
        (num, den)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MlsiEstimate {
    /// Upper bound on `inf_f E(f, log f) / Ent f`.
    pub rho_hat: f64,
    /// `γ(α) / ρ̂`.
    pub implied_c: f64,
    pub witness: ConfigFunction,
    pub converged: bool,
    pub gap: f64,
}

pub fn mlsi_constant(dyn_: &BlockDynamics, cfg: &OptimizerConfig) -> Result<MlsiEstimate> {
    let r = optimize_ratio(&MlsiObjective { dyn_ }, Goal::Minimize, cfg)
        .ok_or_else(|| Error::Domain("no nonconstant density on the support".into()))?;
    let gap = spectral_gap(dyn_)?.gap;
    if r.value < 0.0 {
        log::warn!("negative MLSI ratio {}", r.value);
    }
    Ok(MlsiEstimate { rho_hat: r.value, implied_c: dyn_.weights.gamma() / r.value, witness: r.witness, converged: r.converged, gap })
}

/// `min` over blocks `A` with `α_A > 0` and all positive-mass conditionings
/// of the smallest positive probability of `μ_A`.
pub fn block_min_probabilities(dyn_: &BlockDynamics) -> Result<Vec<f64>> {
    let p = dyn_.table.probs();
    dyn_.blocks
        .iter()
        .map(|(fib, _)| {
            let mut worst = f64::INFINITY;
            for &b in &fib.bases {
                let mass: f64 = fib.offsets.iter().map(|&o| p[b + o]).sum();
                if mass <= 0.0 {
                    continue;
                }
                for &o in &fib.offsets {
                    if p[b + o] > 0.0 {
                        worst = worst.min(p[b + o] / mass);
                    }
                }
            }
            if worst.is_finite() {
                Ok(worst)
            } else {
                Err(Error::NonPermissive("block has no positive-mass conditioning".into()))
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct LsiEstimate {
    /// Lower bound on `sup_f Ent f / E(√f, √f)`.
    pub s_hat: f64,
    pub block_min_prob: Vec<f64>,
    /// `max_A log(1/μ_{A,*})`.
    pub max_log_inverse: f64,
    /// `ŝ γ(α) / max_A log(1/μ_{A,*})`: the measured prefactor.
    pub measured_d: f64,
    pub witness: ConfigFunction,
    pub converged: bool,
}

pub fn lsi_constant(dyn_: &BlockDynamics, cfg: &OptimizerConfig) -> Result<LsiEstimate> {
    let block_min_prob = block_min_probabilities(dyn_)?;
    let r = optimize_ratio(&LsiObjective { dyn_ }, Goal::Maximize, cfg)
        .ok_or_else(|| Error::Domain("Dirichlet form vanishes on every candidate".into()))?;
    let max_log_inverse = block_min_prob.iter().map(|m| (1.0 / m).ln()).fold(0.0, f64::max);
    let measured_d = if max_log_inverse > 0.0 { r.value * dyn_.weights.gamma() / max_log_inverse } else { f64::NAN };
    Ok(LsiEstimate { s_hat: r.value, block_min_prob, max_log_inverse, measured_d, witness: r.witness, converged: r.converged })
}

/// `P(N = k)` for `N ~ Poisson(λ)` for `k = 0..=K`, with `K` the first index
/// whose remaining tail is below `POISSON_TAIL`.
pub fn poisson_weights(lambda: f64) -> Vec<f64> {
    if lambda <= 0.0 {
        return vec![1.0];
    }
    let mut out = Vec::new();
    let mut log_fact = 0.0;
    let mut cum = 0.0;
    let mut k = 0usize;
    loop {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        let w = (-lambda + k as f64 * lambda.ln() - log_fact).exp();
        out.push(w);
        cum += w;
        let kf = k as f64;
        if kf + 2.0 > lambda {
            // tail ≤ w_{k+1} / (1 - λ/(k+2))
            let next = w * lambda / (kf + 1.0);
            let tail = next / (1.0 - lambda / (kf + 2.0));
            if tail <= POISSON_TAIL || cum >= 1.0 - POISSON_TAIL * 1e-3 {
                break;
            }
        }
        k += 1;
    }
    out
}

impl BlockDynamics<'_> {
    /// `e^{tL} h` for each `t` in `times`, by uniformization.
    pub fn evolve(&self, h0: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
        let n = h0.len();
        let weights: Vec<Vec<f64>> = times.iter().map(|&t| poisson_weights(self.rate * t)).collect();
        let kmax = weights.iter().map(Vec::len).max().unwrap_or(1);
        let mut acc = vec![vec![0.0; n]; times.len()];
        let mut h = h0.to_vec();
        let mut next = vec![0.0; n];
        for k in 0..kmax {
            for (a, w) in acc.iter_mut().zip(&weights) {
                if let Some(&wk) = w.get(k) {
                    if wk > 0.0 {
                        for (x, y) in a.iter_mut().zip(&h) {
                            *x += wk * y;
                        }
                    }
                }
            }
            if k + 1 < kmax {
                self.step(&h, &mut next);
                std::mem::swap(&mut h, &mut next);
            }
        }
        for (a, w) in acc.iter_mut().zip(&weights) {
            let total: f64 = w.iter().sum();
            a.iter_mut().for_each(|x| *x /= total);
        }
        acc
    }

    fn tv_of_density(&self, h: &[f64]) -> f64 {
        0.5 * self.table.probs().iter().zip(h).filter(|(p, _)| **p > 0.0).map(|(p, x)| p * (x - 1.0).abs()).sum::<f64>()
    }

    fn start_density(&self, s: usize) -> Vec<f64> {
        let p = self.table.probs();
        let mut h = vec![0.0; p.len()];
        h[s] = 1.0 / p[s];
        h
    }

    /// `‖δ_s e^{tL} - μ‖_TV` at each time.
    pub fn tv_from(&self, start: usize, times: &[f64]) -> Vec<f64> {
        self.evolve(&self.start_density(start), times).iter().map(|h| self.tv_of_density(h)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartSet {
    /// Every positive-mass configuration: the exact worst case.
    All,
    /// Constant configurations only: a lower bound on the worst case.
    Constant,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingCurve {
    pub times: Vec<f64>,
    pub tv: Vec<f64>,
    /// First grid time with `tv ≤ 1/4`.
    pub t_mix_quarter: Option<f64>,
    pub exact: bool,
}

fn starts(dyn_: &BlockDynamics, set: StartSet) -> Result<Vec<usize>> {
    let p = dyn_.table.probs();
    if p.len() > UNIFORMIZATION_CAP {
        return Err(Error::StateSpaceTooLarge { states: p.len() as u128, cap: UNIFORMIZATION_CAP as u128 });
    }
    Ok(match set {
        StartSet::All => (0..p.len()).filter(|&i| p[i] > 0.0).collect(),
        StartSet::Constant => {
            let q = dyn_.table.q();
            let n = dyn_.table.n_sites();
            (0..q)
                .map(|s| (0..n).fold(0usize, |acc, _| acc * q + s))
                .filter(|&i| p[i] > 0.0)
                .collect()
        }
    })
}

/// Worst-case-over-start TV distance on a time grid.
pub fn tv_mixing_curve(dyn_: &BlockDynamics, times: &[f64], set: StartSet) -> Result<MixingCurve> {
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Parameter("times must be nonnegative".into()));
    }
    let starts = starts(dyn_, set)?;
    let per_start: Vec<Vec<f64>> = starts.par_iter().map(|&s| dyn_.tv_from(s, times)).collect();
    let tv: Vec<f64> = (0..times.len()).map(|k| per_start.iter().map(|c| c[k]).fold(0.0, f64::max)).collect();
    let t_mix_quarter = times.iter().zip(&tv).find(|(_, v)| **v <= 0.25).map(|(t, _)| *t);
    Ok(MixingCurve { times: times.to_vec(), tv, t_mix_quarter, exact: set == StartSet::All })
}

/// First time the worst-case TV reaches `threshold`, by bisection to `tol`.
pub fn mixing_time(dyn_: &BlockDynamics, threshold: f64, set: StartSet, tol: f64) -> Result<f64> {
    if dyn_.rate <= 0.0 {
        return Err(Error::Domain("the dynamics has no active block".into()));
    }
    let starts = starts(dyn_, set)?;
    let mut t_max: f64 = 0.0;
    for &s in &starts {
        let tv_at = |t: f64| dyn_.tv_from(s, &[t])[0];
        // TV from a fixed start is nonincreasing in t
        if tv_at(t_max) <= threshold {
            continue;
        }
        let mut lo = t_max;
        let mut hi = (t_max * 2.0).max(1.0 / dyn_.rate);
        let mut guard = 0;
        while tv_at(hi) > threshold {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::Domain("TV does not reach the threshold; the chain may be reducible".into()));
            }
        }
        while hi - lo > tol * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if tv_at(mid) > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        t_max = hi;
    }
    Ok(t_max)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Finite-difference slopes of `log Ent f_t`.
    pub slopes: Vec<f64>,
    /// `γ(α) / Ĉ`.
    pub target_rate: f64,
    pub observed_rate: f64,
    pub pass: bool,
}

/// Evolves `f_0` and compares `d/dt log Ent f_t` against `-γ/Ĉ`.
pub fn entropy_decay_check(dyn_: &BlockDynamics, f0: &ConfigFunction, times: &[f64], c_hat: f64) -> Result<DecayReport> {
    const ENT_FLOOR: f64 = 1e-13;
    dyn_.table.check_len(f0)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("time grid must be strictly increasing".into()));
    }
    let evolved = dyn_.evolve(f0.values(), times);
    let entropy: Vec<f64> = evolved.iter().map(|h| dyn_.table.entropy_unchecked(h)).collect();
    let mut slopes = Vec::new();
    for k in 1..times.len() {
        if entropy[k - 1] > ENT_FLOOR && entropy[k] > ENT_FLOOR {
            slopes.push((entropy[k].ln() - entropy[k - 1].ln()) / (times[k] - times[k - 1]));
        }
    }
    let target_rate = dyn_.weights.gamma() / c_hat;
    let observed_rate = slopes.iter().map(|s| -s).fold(f64::INFINITY, f64::min);
    let pass = slopes.iter().all(|s| *s <= -target_rate + 1e-6 * target_rate.max(1.0));
    Ok(DecayReport { times: times.to_vec(), entropy, slopes, target_rate, observed_rate, pass })
}
