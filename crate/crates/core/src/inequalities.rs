//! Block factorization of entropy and its relatives: Shearer, the
//! row/column tensorization lemma, two-block bounds, even/odd constants and
//! the reduction from even/odd to arbitrary weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{spectral_gap, BlockDynamics};
use crate::error::{Error, Result};
use crate::gibbs::{ConfigFunction, Fibers, GibbsTable};
use crate::lattice::{Point, Region};
use crate::optimize::{optimize_ratio, Goal, OptimizerConfig, RatioObjective};
use crate::report::safe_ratio;

/// Relative slack allowed on inequalities that are theorems.
pub const INEQ_TOL: f64 = 1e-10;

fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + INEQ_TOL * rhs.abs().max(lhs.abs()).max(1e-300) + 1e-15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedBlock {
    pub block: Region,
    pub weight: f64,
}

/// Nonnegative weights `α_A` over blocks `A ⊆ V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights")]
pub struct BlockWeights {
    volume: Region,
    blocks: Vec<WeightedBlock>,
}

#[derive(Deserialize)]
struct RawWeights {
    volume: Region,
    blocks: Vec<WeightedBlock>,
}

impl TryFrom<RawWeights> for BlockWeights {
    type Error = Error;

    fn try_from(raw: RawWeights) -> Result<Self> {
        BlockWeights::new(raw.volume, raw.blocks.into_iter().map(|b| (b.block, b.weight)))
    }
}

impl BlockWeights {
    /// Repeated blocks have their weights added; zero weights are kept.
    pub fn new<I: IntoIterator<Item = (Region, f64)>>(volume: Region, blocks: I) -> Result<Self> {
        let mut merged: BTreeMap<Region, f64> = BTreeMap::new();
        for (block, w) in blocks {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Parameter(format!("block weight must be finite and ≥ 0, got {w}")));
            }
            if !block.is_subset(&volume) {
                return Err(Error::Precondition(format!("block {:?} is not contained in V", block.points())));
            }
            *merged.entry(block).or_insert(0.0) += w;
        }
        Ok(BlockWeights {
            volume,
            blocks: merged.into_iter().map(|(block, weight)| WeightedBlock { block, weight }).collect(),
        })
    }

    pub fn singletons(v: &Region) -> Self {
        let dim = v.dim();
        let blocks = v.iter().map(|p| (Region::new(dim, [p.clone()]).expect("point has dim d"), 1.0));
        BlockWeights::new(v.clone(), blocks).expect("singletons are valid")
    }

    /// `α_E = α_O = 1` (empty parity classes are dropped).
    pub fn even_odd(v: &Region) -> Self {
        let (e, o) = v.even_odd_split();
        let blocks = [e, o].into_iter().filter(|b| !b.is_empty()).map(|b| (b, 1.0));
        BlockWeights::new(v.clone(), blocks).expect("parity classes are valid")
    }

    /// `α_V = 1` only.
    pub fn full(v: &Region) -> Self {
        BlockWeights::new(v.clone(), [(v.clone(), 1.0)]).expect("V ⊆ V")
    }

    /// Every nonempty subset of size at most `m`, weight 1.
    pub fn up_to_size(v: &Region, m: usize) -> Result<Self> {
        const MAX_BLOCKS: u128 = 1 << 16;
        let n = v.len();
        let count: u128 = (1..=m.min(n)).map(|k| binomial(n, k)).sum();
        if count > MAX_BLOCKS {
            return Err(Error::StateSpaceTooLarge { states: count, cap: MAX_BLOCKS });
        }
        let mut blocks = Vec::new();
        let mut current = Vec::new();
        subsets(v.points(), m, 0, &mut current, &mut blocks);
        let dim = v.dim();
        BlockWeights::new(v.clone(), blocks.into_iter().map(|pts| (Region::new(dim, pts).expect("dims agree"), 1.0)))
    }

    pub fn volume(&self) -> &Region {
        &self.volume
    }

    pub fn blocks(&self) -> &[WeightedBlock] {
        &self.blocks
    }

    /// Blocks with `α_A > 0`.
    pub fn active(&self) -> impl Iterator<Item = &WeightedBlock> {
        self.blocks.iter().filter(|b| b.weight > 0.0)
    }

    pub fn total_rate(&self) -> f64 {
        self.blocks.iter().map(|b| b.weight).sum()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        BlockWeights::new(self.volume.clone(), self.blocks.iter().map(|b| (b.block.clone(), b.weight * c)))
    }

    fn coverage(&self) -> Vec<f64> {
        let mut cov = vec![0.0; self.volume.len()];
        for b in &self.blocks {
            for p in b.block.iter() {
                if let Some(i) = self.volume.index_of(p) {
                    cov[i] += b.weight;
                }
            }
        }
        cov
    }

    /// `γ(α) = min_x Σ_{A ∋ x} α_A` (0 for an empty volume).
    pub fn gamma(&self) -> f64 {
        if self.volume.is_empty() {
            return 0.0;
        }
        self.coverage().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Vertices attaining `γ(α)`.
    pub fn gamma_argmin(&self) -> Vec<Point> {
        let cov = self.coverage();
        let g = self.gamma();
        self.volume.iter().zip(cov).filter(|(_, c)| *c == g).map(|(p, _)| p.clone()).collect()
    }

    pub(crate) fn fibers(&self, table: &GibbsTable) -> Result<Vec<(Fibers, f64)>> {
        self.active().map(|b| Ok((table.fibers(&b.block)?, b.weight))).collect()
    }
}

/// Named weight families, resolved against a volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightPreset {
    Singletons,
    EvenOdd,
    Full,
    UpToSize(usize),
    Explicit(Vec<WeightedBlock>),
}

impl WeightPreset {
    pub fn build(&self, v: &Region) -> Result<BlockWeights> {
        match self {
            WeightPreset::Singletons => Ok(BlockWeights::singletons(v)),
            WeightPreset::EvenOdd => Ok(BlockWeights::even_odd(v)),
            WeightPreset::Full => Ok(BlockWeights::full(v)),
            WeightPreset::UpToSize(m) => BlockWeights::up_to_size(v, *m),
            WeightPreset::Explicit(blocks) => BlockWeights::new(v.clone(), blocks.iter().map(|b| (b.block.clone(), b.weight))),
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn subsets(points: &[Point], m: usize, start: usize, current: &mut Vec<Point>, out: &mut Vec<Vec<Point>>) {
    if !current.is_empty() {
        out.push(current.clone());
    }
    if current.len() == m {
        return;
    }
    for i in start..points.len() {
        current.push(points[i].clone());
        subsets(points, m, i + 1, current, out);
        current.pop();
    }
}

fn check_table_volume(table: &GibbsTable, weights: &BlockWeights) -> Result<()> {
    if table.region() != weights.volume() {
        return Err(Error::Precondition("weights are declared on a different volume than the table".into()));
    }
    Ok(())
}

/// `Σ_A α_A μ[Ent_A f]`.
pub fn weighted_block_entropy(table: &GibbsTable, weights: &BlockWeights, f: &ConfigFunction) -> Result<f64> {
    let mut total = 0.0;
    for b in weights.active() {
        total += b.weight * table.mean_block_entropy(&b.block, f)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorizationReport {
    /// `γ(α)·Ent f`.
    pub lhs: f64,
    /// `Σ α_A μ[Ent_A f]`.
    pub rhs: f64,
    pub ratio: f64,
    pub gamma: f64,
    /// Both sides vanish.
    pub degenerate: bool,
    /// `rhs = 0 < lhs`.
    pub flagged: bool,
}

impl FactorizationReport {
    /// Whether `γ Ent f ≤ C Σ α μ[Ent_A f]`.
    pub fn holds_with(&self, c: f64) -> bool {
        holds(self.lhs, c * self.rhs)
    }
}

pub fn check_btc(table: &GibbsTable, weights: &BlockWeights, f: &ConfigFunction) -> Result<FactorizationReport> {
    check_table_volume(table, weights)?;
    let gamma = weights.gamma();
    let lhs = gamma * table.entropy(f)?;
    let rhs = weighted_block_entropy(table, weights, f)?;
    let degenerate = lhs <= 0.0 && rhs <= 0.0;
    let ratio = safe_ratio(lhs, rhs);
    Ok(FactorizationReport { lhs, rhs, ratio, gamma, degenerate, flagged: ratio.is_infinite() })
}

struct BtcObjective<'a> {
    table: &'a GibbsTable,
    blocks: Vec<(Fibers, f64)>,
    gamma: f64,
}

impl RatioObjective for BtcObjective<'_> {
    fn probs(&self) -> &[f64] {
        self.table.probs()
    }

    fn eval(&self, f: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
        gn.fill(0.0);
        gd.fill(0.0);
        let num = self.gamma * self.table.entropy_with_grad(f, gn, self.gamma);
        let mut den = 0.0;
        for (fib, w) in &self.blocks {
            den += w * self.table.mean_block_entropy_with_grad(fib, f, gd, *w);
        }
        (num, den)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantEstimate {
    pub value: f64,
    pub witness: ConfigFunction,
    pub converged: bool,
    pub source: String,
}

/// Lower bound `Ĉ` on the best constant in `γ Ent f ≤ C Σ α μ[Ent_A f]`.
pub fn estimate_best_constant(table: &GibbsTable, weights: &BlockWeights, cfg: &OptimizerConfig) -> Result<ConstantEstimate> {
    check_table_volume(table, weights)?;
    let obj = BtcObjective { table, blocks: weights.fibers(table)?, gamma: weights.gamma() };
    let r = optimize_ratio(&obj, Goal::Maximize, cfg)
        .ok_or_else(|| Error::Domain("every candidate f has Σ α μ[Ent_A f] = 0".into()))?;
    Ok(ConstantEstimate { value: r.value, witness: r.witness, converged: r.converged, source: r.source })
}

/// Whether `μ` restricted to `Λ` is a product over the sites of `Λ` (fiberwise, to 1e-10).
pub fn is_product_over_sites(table: &GibbsTable, lambda: &Region) -> Result<bool> {
    let dim = lambda.dim();
    let sites: Vec<Region> = lambda.iter().map(|p| Region::new(dim, [p.clone()]).expect("dims agree")).collect();
    Ok(table.product_deviation(lambda, &sites)? <= 1e-10)
}

/// Weighted Shearer inequality on a product region `Λ`, fiberwise in `V \ Λ`.
pub fn check_shearer_product(table: &GibbsTable, lambda: &Region, weights: &BlockWeights, f: &ConfigFunction) -> Result<FactorizationReport> {
    if weights.volume() != lambda {
        return Err(Error::Precondition("weights must be declared on Λ".into()));
    }
    if !is_product_over_sites(table, lambda)? {
        return Err(Error::Precondition("μ_Λ is not a product measure".into()));
    }
    let gamma = weights.gamma();
    let lhs = gamma * table.mean_block_entropy(lambda, f)?;
    let rhs = weighted_block_entropy_in(table, weights, f)?;
    let ratio = safe_ratio(lhs, rhs);
    Ok(FactorizationReport { lhs, rhs, ratio, gamma, degenerate: lhs <= 0.0 && rhs <= 0.0, flagged: ratio.is_infinite() })
}

fn weighted_block_entropy_in(table: &GibbsTable, weights: &BlockWeights, f: &ConfigFunction) -> Result<f64> {
    weights.active().map(|b| Ok(b.weight * table.mean_block_entropy(&b.block, f)?)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    /// The even/odd hypothesis held for this `f`.
    pub applicable: bool,
    pub lhs: f64,
    /// `2 C Σ α μ[Ent_A f]`.
    pub rhs: f64,
    pub pass: bool,
}

/// Given `Ent f ≤ C μ[Ent_E f + Ent_O f]`, checks `γ Ent f ≤ 2C Σ α μ[Ent_A f]`.
pub fn reduction_even_odd(table: &GibbsTable, c_eo: f64, weights: &BlockWeights, f: &ConfigFunction) -> Result<ReductionReport> {
    check_table_volume(table, weights)?;
    let (e, o) = table.region().even_odd_split();
    let ent = table.entropy(f)?;
    let eo = table.mean_block_entropy(&e, f)? + table.mean_block_entropy(&o, f)?;
    let applicable = holds(ent, c_eo * eo);
    let lhs = weights.gamma() * ent;
    let rhs = 2.0 * c_eo * weighted_block_entropy(table, weights, f)?;
    if !applicable {
        log::debug!("reduction skipped: Ent f = {ent} > C·μ[Ent_E f + Ent_O f] = {}", c_eo * eo);
    }
    Ok(ReductionReport { applicable, lhs, rhs, pass: !applicable || holds(lhs, rhs) })
}

/// `θ(ε) = 84 ε / (1 - ε)^2`.
pub fn theta(epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("θ(ε) needs 0 ≤ ε < 1, got {epsilon}")));
    }
    Ok(84.0 * epsilon / ((1.0 - epsilon) * (1.0 - epsilon)))
}

/// Exact smallest `ε` with `‖μ_B μ_A g - μ g‖_∞ ≤ ε μ|g|`, i.e.
/// `max |K(η,σ)/μ(σ) - 1|` over `η, σ` of positive mass, `K` the kernel of `μ_B μ_A`.
pub fn two_block_epsilon(table: &GibbsTable, a: &Region, b: &Region) -> Result<f64> {
    if a.union(b) != *table.region() {
        return Err(Error::Precondition("two-block bounds need A ∪ B = V".into()));
    }
    let fa = table.fibers(a)?;
    let fb = table.fibers(b)?;
    let p = table.probs();
    let mut worst = 0.0f64;
    let mut kernel = vec![0.0; p.len()];
    let mut touched: Vec<usize> = Vec::new();
    for eta in 0..p.len() {
        if p[eta] <= 0.0 {
            continue;
        }
        let bb = fb.base_of(eta);
        let mb: f64 = fb.offsets.iter().map(|&o| p[bb + o]).sum();
        for &ob in &fb.offsets {
            let xi = bb + ob;
            if p[xi] <= 0.0 {
                continue;
            }
            let w = p[xi] / mb;
            let ba = fa.base_of(xi);
            let ma: f64 = fa.offsets.iter().map(|&o| p[ba + o]).sum();
            for &oa in &fa.offsets {
                let s = ba + oa;
                if p[s] > 0.0 {
                    if kernel[s] == 0.0 {
                        touched.push(s);
                    }
                    kernel[s] += w * p[s] / ma;
                }
            }
        }
        // σ never reached from η has K = 0, deviation 1
        if touched.len() < p.iter().filter(|&&x| x > 0.0).count() {
            worst = worst.max(1.0);
        }
        for &s in &touched {
            worst = worst.max((kernel[s] / p[s] - 1.0).abs());
            kernel[s] = 0.0;
        }
        touched.clear();
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoBlockReport {
    pub epsilon: f64,
    pub theta: f64,
    pub ent: f64,
    /// `μ[Ent_A f + Ent_B f] + θ Ent f`.
    pub cesi1_rhs: f64,
    /// `μ[Ent_A f + Ent_B μ_A f] + θ Ent μ_A f`.
    pub cesi2_rhs: f64,
    /// `μ[f log(μ_B μ_A f / μ f)]`.
    pub penalty: f64,
    pub cesi1: bool,
    pub cesi2: bool,
    pub penalty_bound: bool,
}

impl TwoBlockReport {
    pub fn pass(&self) -> bool {
        self.cesi1 && self.cesi2 && self.penalty_bound
    }
}

/// Both two-block inequalities and the penalty bound with a given `ε < 1`.
pub fn check_two_block_with(table: &GibbsTable, a: &Region, b: &Region, epsilon: f64, f: &ConfigFunction) -> Result<TwoBlockReport> {
    let th = theta(epsilon)?;
    let ent = table.entropy(f)?;
    let ma_f = table.conditional_expectation(a, f)?;
    let ent_a = table.mean_block_entropy(a, f)?;
    let cesi1_rhs = ent_a + table.mean_block_entropy(b, f)? + th * ent;
    let cesi2_rhs = ent_a + table.mean_block_entropy(b, &ma_f)? + th * table.entropy(&ma_f)?;
    let mbma_f = table.conditional_expectation(b, &ma_f)?;
    let m = table.mean(f);
    let penalty: f64 = table
        .probs()
        .iter()
        .zip(f.values())
        .zip(mbma_f.values())
        .filter(|((p, x), _)| **p > 0.0 && **x > 0.0)
        .map(|((p, x), y)| p * x * (y / m).ln())
        .sum();
    Ok(TwoBlockReport {
        epsilon,
        theta: th,
        ent,
        cesi1_rhs,
        cesi2_rhs,
        penalty,
        cesi1: holds(ent, cesi1_rhs),
        cesi2: holds(ent, cesi2_rhs),
        // the penalty is a difference of nearly equal logs when ε ≈ 0
        penalty_bound: holds(penalty, th * ent) || penalty - th * ent <= 64.0 * f64::EPSILON * m,
    })
}

/// Two-block check with the exactly computed `ε`.
pub fn check_two_block(table: &GibbsTable, a: &Region, b: &Region, f: &ConfigFunction) -> Result<TwoBlockReport> {
    let eps = two_block_epsilon(table, a, b)?;
    if eps >= 1.0 {
        return Err(Error::Precondition(format!("two-block lemma inapplicable: ε = {eps} ≥ 1")));
    }
    check_two_block_with(table, a, b, eps, f)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorizationReport {
    /// Per-row constants, maximized over outer fibers.
    pub row_constants: Vec<f64>,
    pub s: f64,
    /// `μ[Ent_Λ f]`.
    pub lhs: f64,
    /// `Σ_fibers s_fiber Σ_j μ[Ent_{C_j} f]`.
    pub rhs: f64,
    /// Largest fiberwise `Ent_Λ f / (s Σ_j μ_Λ[Ent_{C_j} f])`.
    pub worst_ratio: f64,
    /// Premise held with the supplied constants (always true when derived).
    pub premise: bool,
    pub pass: bool,
}

/// Row/column tensorization. `blocks[i][j] = A_{i,j}`; rows `R_i = ∪_j A_{i,j}`
/// must carry a product measure. With `s = None` the per-row constants are the
/// smallest ones valid for the functions `μ_{Λ_{i-1}} f` the argument uses;
/// otherwise the supplied `s_i` are checked against that family first.
pub fn check_tensorization(table: &GibbsTable, blocks: &[Vec<Region>], s: Option<&[f64]>, f: &ConfigFunction) -> Result<TensorizationReport> {
    table.check_len(f)?;
    if blocks.is_empty() || blocks.iter().any(|r| r.is_empty()) {
        return Err(Error::Precondition("need at least one row with at least one block".into()));
    }
    let m = blocks[0].len();
    if blocks.iter().any(|r| r.len() != m) {
        return Err(Error::Precondition("every row needs the same number m of blocks".into()));
    }
    if let Some(s) = s {
        if s.len() != blocks.len() || s.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Parameter("one positive constant per row is required".into()));
        }
    }
    let dim = table.region().dim();
    let rows: Vec<Region> = blocks.iter().map(|r| r.iter().fold(Region::empty(dim), |acc, a| acc.union(a))).collect();
    let lambda = rows.iter().fold(Region::empty(dim), |acc, r| acc.union(r));
    let disjoint: usize = rows.iter().map(Region::len).sum();
    if disjoint != lambda.len() {
        return Err(Error::Precondition("rows must be pairwise disjoint".into()));
    }
    if table.product_deviation(&lambda, &rows)? > 1e-10 {
        return Err(Error::Precondition("μ_Λ is not a product along the rows".into()));
    }
    let columns: Vec<Region> = (0..m).map(|j| blocks.iter().fold(Region::empty(dim), |acc, r| acc.union(&r[j]))).collect();

    // g_k = μ_{Λ_{k-1}} f, Λ_k = R_1 ∪ … ∪ R_k
    let mut prefix = Region::empty(dim);
    let mut g = f.clone();
    let outer = table.fibers(&lambda)?;
    let n_fib = outer.bases.len();
    let fiber_of = |i: usize| outer.bases.binary_search(&outer.base_of(i)).expect("base is listed");
    let fiber_integral = |h: &ConfigFunction| -> Vec<f64> {
        let mut acc = vec![0.0; n_fib];
        for (i, (&p, &x)) in table.probs().iter().zip(h.values()).enumerate() {
            if p > 0.0 {
                acc[fiber_of(i)] += p * x;
            }
        }
        acc
    };
    let mut row_s: Vec<Vec<f64>> = Vec::new();
    let mut premise = true;
    for (k, row) in rows.iter().enumerate() {
        if k > 0 {
            prefix = prefix.union(&rows[k - 1]);
            g = table.conditional_expectation(&prefix, f)?;
        }
        let num = fiber_integral(&table.block_entropy(row, &g)?);
        let mut den = vec![0.0; n_fib];
        for a in &blocks[k] {
            for (d, x) in den.iter_mut().zip(fiber_integral(&table.block_entropy(a, &g)?)) {
                *d += x;
            }
        }
        let derived: Vec<f64> = num.iter().zip(&den).map(|(n, d)| safe_ratio(*n, *d)).collect();
        if let Some(s) = s {
            premise &= num.iter().zip(&den).all(|(n, d)| holds(*n, s[k] * d));
            row_s.push(vec![s[k]; n_fib]);
        } else {
            row_s.push(derived);
        }
    }
    let ent = fiber_integral(&table.block_entropy(&lambda, f)?);
    let mut col = vec![0.0; n_fib];
    for c in &columns {
        for (d, x) in col.iter_mut().zip(fiber_integral(&table.block_entropy(c, f)?)) {
            *d += x;
        }
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut worst_ratio = 0.0f64;
    let mut pass = true;
    for fi in 0..n_fib {
        let s_f = row_s.iter().map(|r| r[fi]).fold(0.0, f64::max);
        lhs += ent[fi];
        let r = if s_f.is_finite() { s_f * col[fi] } else { f64::INFINITY };
        rhs += r;
        pass &= holds(ent[fi], r);
        worst_ratio = worst_ratio.max(safe_ratio(ent[fi], r));
    }
    let row_constants: Vec<f64> = row_s.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let s_max = row_constants.iter().copied().fold(0.0, f64::max);
    Ok(TensorizationReport { row_constants, s: s_max, lhs, rhs, worst_ratio, premise, pass: premise && pass })
}

struct EvenOddObjective<'a> {
    table: &'a GibbsTable,
    even: Fibers,
    odd: Fibers,
}

impl RatioObjective for EvenOddObjective<'_> {
    fn probs(&self) -> &[f64] {
        self.table.probs()
    }

    fn eval(&self, f: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
        gn.fill(0.0);
        gd.fill(0.0);
        let num = self.table.mean_block_entropy_with_grad(&self.even, f, gn, 1.0)
            + self.table.mean_block_entropy_with_grad(&self.odd, f, gn, 1.0);
        let den = self.table.entropy_with_grad(f, gd, 1.0);
        (num, den)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaEstimate {
    /// Upper bound on the even/odd constant, attained by `witness`; at most 1.
    pub delta_hat: f64,
    pub witness: ConfigFunction,
    pub converged: bool,
    pub source: String,
    /// Analytic lower bound from the crude log-Sobolev and spectral-gap route.
    pub rough_lower_bound: f64,
    pub gap_even_odd: f64,
    pub mu_star: f64,
}

/// Log-Sobolev constant of the i.i.d. resampling chain with minimal mass
/// `μ_*`: `Ent f ≤ c(μ_*) Var(√f)` for every probability measure.
pub fn trivial_chain_lsi_constant(mu_star: f64) -> f64 {
    if (mu_star - 0.5).abs() < 1e-9 {
        2.0
    } else if mu_star >= 1.0 {
        0.0
    } else {
        (1.0 / mu_star - 1.0).ln() / (1.0 - 2.0 * mu_star)
    }
}

/// `δ̂ = inf_f μ[Ent_E f + Ent_O f] / Ent f` by multi-start descent.
pub fn even_odd_delta(table: &GibbsTable, cfg: &OptimizerConfig) -> Result<DeltaEstimate> {
    let (e, o) = table.region().even_odd_split();
    let obj = EvenOddObjective { table, even: table.fibers(&e)?, odd: table.fibers(&o)? };
    let support = table.probs().iter().filter(|&&p| p > 0.0).count();
    if support < 2 {
        return Err(Error::Domain("a single-configuration measure has no nonconstant f".into()));
    }
    let mut best = optimize_ratio(&obj, Goal::Minimize, cfg).ok_or_else(|| Error::Domain("no admissible f".into()))?;
    if best.value > 1.0 {
        // f depending only on σ_E has ratio μ[Ent_E f]/Ent f ≤ 1
        if let Some((r, f)) = even_measurable_witness(table, &e, &obj)? {
            if r < best.value {
                best.value = r;
                best.witness = f;
                best.source = "even-measurable".into();
            }
        }
    }
    let weights = BlockWeights::even_odd(table.region());
    let gap = spectral_gap(&BlockDynamics::new(table, &weights)?)?.gap;
    let mu_star = table.min_positive();
    let c = trivial_chain_lsi_constant(mu_star);
    let rough = if c > 0.0 { gap / c } else { 0.0 };
    Ok(DeltaEstimate {
        delta_hat: best.value,
        witness: best.witness,
        converged: best.converged,
        source: best.source,
        rough_lower_bound: rough,
        gap_even_odd: gap,
        mu_star,
    })
}

fn even_measurable_witness(table: &GibbsTable, e: &Region, obj: &EvenOddObjective) -> Result<Option<(f64, ConfigFunction)>> {
    if e.is_empty() {
        return Ok(None);
    }
    let fib = table.fibers(e)?;
    let mut best: Option<(f64, ConfigFunction)> = None;
    for target in 0..fib.fiber_size().min(64) {
        let f = ConfigFunction::new((0..table.len()).map(|i| if fib.local_of(i) == target { 2.0 } else { 1.0 }).collect());
        let (num, den) = obj.value(f.values());
        if den > 1e-14 && best.as_ref().is_none_or(|(r, _)| num / den < *r) {
            best = Some((num / den, f));
        }
    }
    Ok(best)
}

/// `ε_k = 5^d K ℓ^{d-1} e^{-aℓ/4}`.
pub fn epsilon_k(d: usize, k_const: f64, a: f64, ell: f64) -> f64 {
    5f64.powi(d as i32) * k_const * ell.powi(d as i32 - 1) * (-a * ell / 4.0).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionReport {
    pub ell_k: f64,
    pub delta_prev: f64,
    pub delta_k: f64,
    /// `(1 - 10/(ℓ_k δ(k-1))) δ(k-1)`.
    pub bound: f64,
    pub holds: bool,
}

/// Diagnostic comparison of independently estimated `δ̂(k-1)` and `δ̂(k)`.
pub fn recursion_consistency(delta_prev: f64, delta_k: f64, ell_k: f64) -> RecursionReport {
    let bound = (1.0 - 10.0 / (ell_k * delta_prev)) * delta_prev;
    let holds = delta_k >= bound - INEQ_TOL;
    if !holds {
        log::info!("recursion bound fails at ℓ_k = {ell_k}: δ̂(k) = {delta_k} < {bound}");
    }
    RecursionReport { ell_k, delta_prev, delta_k, bound, holds }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JensenReport {
    /// `max (Ent_A f - cov_A(f, log f))` over positive-mass fibers.
    pub max_excess: f64,
    pub pass: bool,
}

/// Fiberwise `Ent_A f ≤ cov_A(f, log f)`, with `f` floored at `floor`.
pub fn jensen_check(table: &GibbsTable, a: &Region, f: &ConfigFunction, floor: f64) -> Result<JensenReport> {
    let f = f.clamp_below(floor);
    let ent = table.block_entropy(a, &f)?;
    let cov = table.covariance_block(a, &f, &f.map(f64::ln))?;
    // both sides are differences of terms of size μ_A[f(|log f| + 1)]
    let scale = table.conditional_expectation(a, &f.map(|x| x * (x.ln().abs() + 1.0)))?;
    let mut max_excess = f64::NEG_INFINITY;
    let mut pass = true;
    for (((e, c), p), s) in ent.values().iter().zip(cov.values()).zip(table.probs()).zip(scale.values()) {
        if *p > 0.0 {
            max_excess = max_excess.max(e - c);
            pass &= holds(*e, *c) || e - c <= 64.0 * f64::EPSILON * s;
        }
    }
    Ok(JensenReport { max_excess, pass })
}
