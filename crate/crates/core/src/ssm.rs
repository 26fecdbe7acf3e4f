//! Strong spatial mixing: exact marginal-density ratios under single-site
//! boundary flips, exponential decay fits and sweeps of condition `C(Λ,K,a)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_table_capped, GibbsTable, DEFAULT_STATE_CAP};
use crate::lattice::{fat_region, Point, Region};
use crate::model::{BoundaryCondition, Spin, SpinModel};

/// Deviations below this are treated as zero by the fit.
pub const DEVIATION_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiDeviation {
    /// `max |ψ^{τ'}/ψ^τ - 1|` over `σ_Δ` with `ψ^τ > 0` and ordered flips at `x`.
    pub deviation: f64,
    /// Some flip makes a `ψ^τ`-null `σ_Δ` positive.
    pub absolutely_continuous: bool,
    /// Spin pair `(τ_x, τ'_x)` attaining the deviation.
    pub worst_pair: Option<(Spin, Spin)>,
}

fn flip_deviation(base: &[f64], flipped: &[f64]) -> (f64, bool) {
    let mut dev = 0.0f64;
    let mut ac = true;
    for (a, b) in base.iter().zip(flipped) {
        if *a > 0.0 {
            dev = dev.max((b / a - 1.0).abs());
        } else if *b > 0.0 {
            ac = false;
        }
    }
    (dev, ac)
}

fn deviation_from_marginals(marginals: &[Option<Vec<f64>>]) -> PsiDeviation {
    let mut out = PsiDeviation { deviation: 0.0, absolutely_continuous: true, worst_pair: None };
    for (s, ms) in marginals.iter().enumerate() {
        for (t, mt) in marginals.iter().enumerate() {
            if s == t {
                continue;
            }
            match (ms, mt) {
                (Some(a), Some(b)) => {
                    let (dev, ac) = flip_deviation(a, b);
                    out.absolutely_continuous &= ac;
                    if dev > out.deviation || out.worst_pair.is_none() {
                        out.deviation = out.deviation.max(dev);
                        out.worst_pair = Some((s as Spin, t as Spin));
                    }
                }
                // Z = 0 for τ_x = s: no law to compare
                (None, Some(_)) | (Some(_), None) => out.absolutely_continuous = false,
                (None, None) => {}
            }
        }
    }
    if !out.absolutely_continuous {
        out.deviation = f64::INFINITY;
    }
    out
}

/// Tables of `μ_Λ` with `τ_x` set to each spin value (`None` when `Z = 0`).
fn flip_tables(model: &SpinModel, lambda: &Region, x: &[i64], tau: &BoundaryCondition, cap: u128) -> Result<Vec<Option<GibbsTable>>> {
    (0..model.q())
        .map(|s| match gibbs_table_capped(model, lambda, &tau.with(x, s as Spin), cap) {
            Ok(t) => Ok(Some(t)),
            Err(Error::NonPermissive(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsiOptions {
    /// Side `L` of the fat-set relaxation; with hard constraints, pairs with
    /// `d(x,Δ) < L/2` are skipped.
    pub relax_side: Option<usize>,
}

fn skipped_by_relaxation(model: &SpinModel, delta: &Region, x: &[i64], opts: &PsiOptions) -> Result<bool> {
    if !model.has_hard_constraints() {
        return Ok(false);
    }
    match opts.relax_side {
        Some(l) => {
            let d = delta.distance(&Region::new(delta.dim(), [x.to_vec()])?)?;
            Ok((2 * d as usize) < l)
        }
        None => Ok(false),
    }
}

/// Exact `sup` over single-site flips at `x ∈ ∂Λ` of `‖ψ^{τ'}/ψ^τ - 1‖_∞`,
/// with the rest of the boundary fixed to `tau`. `None` when skipped by the
/// hard-constraint relaxation.
pub fn psi_deviation(model: &SpinModel, lambda: &Region, delta: &Region, x: &[i64], tau: &BoundaryCondition, opts: &PsiOptions) -> Result<Option<PsiDeviation>> {
    if !delta.is_subset(lambda) || delta.is_empty() {
        return Err(Error::Precondition("Δ must be a nonempty subset of Λ".into()));
    }
    if !lambda.boundary().contains(x) {
        return Err(Error::Precondition(format!("{x:?} is not on the boundary of Λ")));
    }
    if skipped_by_relaxation(model, delta, x, opts)? {
        return Ok(None);
    }
    let tables = flip_tables(model, lambda, x, tau, DEFAULT_STATE_CAP)?;
    let marginals = tables.iter().map(|t| t.as_ref().map(|t| t.marginal(delta)).transpose()).collect::<Result<Vec<_>>>()?;
    Ok(Some(deviation_from_marginals(&marginals)))
}

/// Like [`psi_deviation`] but also maximizing over the rest of the boundary:
/// every assignment of `∂Λ \ {x}` when there are at most `max_sweep` of them,
/// otherwise the constant fills.
pub fn psi_deviation_sup(model: &SpinModel, lambda: &Region, delta: &Region, x: &[i64], max_sweep: usize, opts: &PsiOptions) -> Result<Option<PsiDeviation>> {
    let rest: Vec<Point> = lambda.boundary().iter().filter(|p| p.as_slice() != x).cloned().collect();
    let q = model.q();
    let count = crate::error::state_count(q, rest.len());
    let boundaries: Vec<BoundaryCondition> = if count <= max_sweep as u128 {
        (0..count as usize)
            .map(|c| {
                let mut s = vec![0; rest.len()];
                crate::model::decode(c, q, rest.len(), &mut s);
                BoundaryCondition::explicit(rest.iter().cloned().zip(s))
            })
            .collect()
    } else {
        (0..q).map(|s| BoundaryCondition::constant(s as Spin)).collect()
    };
    let mut best: Option<PsiDeviation> = None;
    for tau in &boundaries {
        match psi_deviation(model, lambda, delta, x, tau, opts) {
            Ok(Some(d)) => {
                if best.as_ref().is_none_or(|b| d.deviation > b.deviation) {
                    best = Some(d);
                }
            }
            Ok(None) => return Ok(None),
            Err(Error::NonPermissive(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SsmEstimate {
    /// `(d(x,Δ), deviation)` as supplied.
    pub samples: Vec<(u64, f64)>,
    pub k_hat: f64,
    pub a_hat: f64,
    /// Root-mean-square residual of the log fit.
    pub residual: f64,
    pub excluded_below_floor: usize,
    pub distances_used: Vec<u64>,
    /// Every usable deviation sits below the floor.
    pub too_fast_to_fit: bool,
}

/// Least-squares fit of `log dev = log K - a·d` over the per-distance maxima
/// with `d ≥ min_distance`.
pub fn fit_decay(samples: &[(u64, f64)], min_distance: u64) -> Result<SsmEstimate> {
    let mut per_distance: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    let mut excluded = 0;
    for &(d, dev) in samples {
        if d < min_distance {
            continue;
        }
        if !(dev > DEVIATION_FLOOR) {
            excluded += 1;
            continue;
        }
        let e = per_distance.entry(d).or_insert(0.0);
        *e = e.max(dev);
    }
    let used: Vec<(u64, f64)> = per_distance.into_iter().collect();
    if used.is_empty() {
        return Ok(SsmEstimate {
            samples: samples.to_vec(),
            k_hat: 0.0,
            a_hat: f64::INFINITY,
            residual: 0.0,
            excluded_below_floor: excluded,
            distances_used: Vec::new(),
            too_fast_to_fit: true,
        });
    }
    if used.len() < 4 {
        return Err(Error::Precondition(format!("need ≥ 4 distinct distances with positive deviation, have {}", used.len())));
    }
    let x: Vec<f64> = used.iter().map(|(d, _)| *d as f64).collect();
    let y: Vec<f64> = used.iter().map(|(_, v)| v.ln()).collect();
    let fit = crate::mc::linear_fit(&x, &y);
    let residual = (fit.residuals.iter().map(|r| r * r).sum::<f64>() / x.len() as f64).sqrt();
    Ok(SsmEstimate {
        samples: samples.to_vec(),
        k_hat: fit.intercept.exp(),
        a_hat: -fit.slope,
        residual,
        excluded_below_floor: excluded,
        distances_used: used.iter().map(|(d, _)| *d).collect(),
        too_fast_to_fit: false,
    })
}

/// One `(Λ, Δ, x)` triple of a sweep plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmProbe {
    pub lambda: Region,
    pub delta: Region,
    pub x: Point,
}

/// Chains `Λ = {0,…,n-1}`, `Δ = {0}`, `x = n` for `n` in `lengths`:
/// `d(x,Δ) = n`.
pub fn chain_plan(lengths: impl IntoIterator<Item = usize>) -> Vec<SsmProbe> {
    lengths
        .into_iter()
        .map(|n| SsmProbe { lambda: Region::chain(n), delta: Region::interval(0, 0), x: vec![n as i64] })
        .collect()
}

/// Evaluates a plan with base boundary `tau` and fits the decay.
pub fn fit_ssm(model: &SpinModel, plan: &[SsmProbe], tau: &BoundaryCondition, min_distance: u64, opts: &PsiOptions) -> Result<SsmEstimate> {
    let samples: Vec<Option<(u64, f64)>> = plan
        .par_iter()
        .map(|p| {
            let d = p.delta.distance(&Region::new(p.lambda.dim(), [p.x.clone()])?)?;
            Ok(psi_deviation(model, &p.lambda, &p.delta, &p.x, tau, opts)?.map(|dev| (d, dev.deviation)))
        })
        .collect::<Result<_>>()?;
    fit_decay(&samples.into_iter().flatten().collect::<Vec<_>>(), min_distance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepBudget {
    /// Exhaustive over all nonempty `Δ ⊆ Λ` when `|Λ|` is at most this.
    pub exhaustive_sites: usize,
    /// Number of random `Δ` otherwise.
    pub samples: usize,
    pub seed: u64,
}

impl Default for SweepBudget {
    fn default() -> Self {
        SweepBudget { exhaustive_sites: 12, samples: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub pass: bool,
    /// `max (dev - K e^{-a d})`.
    pub worst_margin: f64,
    pub worst_delta: Option<Region>,
    pub worst_x: Option<Point>,
    pub evaluated: usize,
    pub exhaustive: bool,
    pub absolutely_continuous: bool,
}

/// Checks `sup ‖ψ^{τ'}/ψ^τ - 1‖ ≤ K e^{-a d(x,Δ)}` for all `Δ ⊆ Λ`, `x ∈ ∂Λ`,
/// with the rest of the boundary given by `tau`.
pub fn check_condition(
    model: &SpinModel,
    lambda: &Region,
    tau: &BoundaryCondition,
    k: f64,
    a: f64,
    budget: &SweepBudget,
    opts: &PsiOptions,
) -> Result<ConditionReport> {
    let n = lambda.len();
    let exhaustive = n <= budget.exhaustive_sites;
    let deltas: Vec<Region> = if exhaustive {
        (1u64..(1u64 << n)).map(|mask| lambda.filter_index(|i| mask >> i & 1 == 1)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
        let mut idx: Vec<usize> = (0..n).collect();
        (0..budget.samples)
            .map(|s| {
                idx.shuffle(&mut rng);
                let size = 1 + s % n.min(8);
                let keep: Vec<usize> = idx[..size].to_vec();
                lambda.filter_index(|i| keep.contains(&i))
            })
            .collect()
    };
    let boundary = lambda.boundary();
    let per_x: Vec<(Point, Vec<Option<GibbsTable>>)> = boundary
        .iter()
        .map(|x| Ok((x.clone(), flip_tables(model, lambda, x, tau, DEFAULT_STATE_CAP)?)))
        .collect::<Result<_>>()?;
    let mut report = ConditionReport {
        pass: true,
        worst_margin: f64::NEG_INFINITY,
        worst_delta: None,
        worst_x: None,
        evaluated: 0,
        exhaustive,
        absolutely_continuous: true,
    };
    for delta in &deltas {
        for (x, tables) in &per_x {
            if skipped_by_relaxation(model, delta, x, opts)? {
                continue;
            }
            let d = delta.distance(&Region::new(lambda.dim(), [x.clone()])?)?;
            let marginals = tables.iter().map(|t| t.as_ref().map(|t| t.marginal(delta)).transpose()).collect::<Result<Vec<_>>>()?;
            let dev = deviation_from_marginals(&marginals);
            report.evaluated += 1;
            report.absolutely_continuous &= dev.absolutely_continuous;
            let margin = dev.deviation - k * (-a * d as f64).exp();
            if margin > report.worst_margin {
                report.worst_margin = margin;
                report.worst_delta = Some(delta.clone());
                report.worst_x = Some(x.clone());
            }
            if margin > 1e-12 {
                report.pass = false;
            }
        }
    }
    Ok(report)
}

/// [`check_condition`] on each fat region `∪_{y ∈ base} Q_L(y)`, with the
/// hard-constraint relaxation at side `L`.
pub fn check_condition_fat(
    model: &SpinModel,
    side: usize,
    bases: &[Region],
    tau: &BoundaryCondition,
    k: f64,
    a: f64,
    budget: &SweepBudget,
) -> Result<Vec<ConditionReport>> {
    let opts = PsiOptions { relax_side: Some(side) };
    bases.iter().map(|b| check_condition(model, &fat_region(side, b)?, tau, k, a, budget, &opts)).collect()
}
