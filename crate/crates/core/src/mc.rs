//! Event-driven Monte Carlo for the heat-bath block dynamics on regions too
//! large for exact tables. Each block is resampled exactly from its
//! conditional Gibbs law given the current spins around it.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mixing_time, BlockDynamics, StartSet};
use crate::error::{check_cap, state_count, Error, Result};
use crate::gibbs::gibbs_table_capped;
use crate::inequalities::{BlockWeights, WeightPreset};
use crate::lattice::Region;
use crate::model::{decode, encode, BoundaryCondition, Interaction, Spin, SpinModel};

/// Largest block state space resampled exactly.
pub const BLOCK_STATE_CAP: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    Constant(Spin),
    Config(Vec<Spin>),
    /// Site by site, the smallest spin compatible with what is already placed.
    Greedy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub horizon: f64,
    pub sample_interval: f64,
    pub seed: u64,
    pub replicas: usize,
    pub cache_capacity: usize,
    pub event_log: bool,
    pub initial: Initial,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            horizon: 100.0,
            sample_interval: 1.0,
            seed: 0,
            replicas: 1,
            cache_capacity: 1 << 16,
            event_log: false,
            initial: Initial::Constant(0),
        }
    }
}

#[derive(Clone)]
pub enum Observable {
    /// Mean spin label over the region.
    Magnetization,
    /// `H(σ)`.
    Energy,
    /// Fraction of sites in the block agreeing with the initial configuration.
    BlockOverlap(Region),
    Custom(String, Arc<dyn Fn(&[Spin]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Magnetization => "magnetization".into(),
            Observable::Energy => "energy".into(),
            Observable::BlockOverlap(r) => format!("overlap{:?}", r.points()),
            Observable::Custom(name, _) => name.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub block: usize,
    /// Configuration indices before and after, when `q^n` fits in a `usize`.
    pub from: Option<usize>,
    pub to: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `columns[k][i]`: observable `k` at `times[i]`.
    pub columns: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicaRun {
    pub replica: usize,
    pub series: TimeSeries,
    pub events: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub log: Option<Vec<Event>>,
    pub final_state: Vec<Spin>,
}

struct BlockPlan {
    sites: Vec<usize>,
    /// In-region neighbours of the block, outside it.
    rim: Vec<usize>,
    /// Site terms including exterior boundary spins, `fixed[i][s]`.
    fixed: Vec<Vec<f64>>,
    internal: Vec<(usize, usize)>,
    /// For each block site, indices into `rim`.
    cross: Vec<Vec<usize>>,
}

/// Static description of the dynamics on one region.
pub struct Simulator {
    q: usize,
    n: usize,
    labels: Vec<f64>,
    inter: Interaction,
    blocks: Vec<BlockPlan>,
    alias: WeightedAliasIndex<f64>,
    rate: f64,
    region: Region,
}

impl Simulator {
    pub fn new(model: &SpinModel, region: &Region, tau: &BoundaryCondition, weights: &BlockWeights) -> Result<Self> {
        if weights.volume() != region {
            return Err(Error::Precondition("weights are declared on a different volume".into()));
        }
        let q = model.q();
        let inter = Interaction::new(model, region, tau)?;
        let mut blocks = Vec::new();
        let mut rates = Vec::new();
        for b in weights.active() {
            check_cap(q, b.block.len(), BLOCK_STATE_CAP)?;
            let sites = region.positions_of(&b.block)?;
            let local: HashMap<usize, usize> = sites.iter().enumerate().map(|(k, &s)| (s, k)).collect();
            let mut rim: Vec<usize> = Vec::new();
            let mut cross = vec![Vec::new(); sites.len()];
            let mut internal = Vec::new();
            for (k, &s) in sites.iter().enumerate() {
                for &j in &inter.inner[s] {
                    match local.get(&j) {
                        Some(&l) if l > k => internal.push((k, l)),
                        Some(_) => {}
                        None => {
                            let r = rim.iter().position(|&x| x == j).unwrap_or_else(|| {
                                rim.push(j);
                                rim.len() - 1
                            });
                            cross[k].push(r);
                        }
                    }
                }
            }
            let fixed = sites.iter().map(|&s| (0..q).map(|v| inter.site_log_weight(s, v as Spin)).collect()).collect();
            blocks.push(BlockPlan { sites, rim, fixed, internal, cross });
            rates.push(b.weight);
        }
        if rates.is_empty() {
            return Err(Error::Precondition("no block has positive weight".into()));
        }
        let rate = rates.iter().sum();
        let alias = WeightedAliasIndex::new(rates).map_err(|e| Error::Parameter(format!("block weights: {e}")))?;
        Ok(Simulator { q, n: region.len(), labels: model.labels().to_vec(), inter, blocks, alias, rate, region: region.clone() })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn initial_state(&self, init: &Initial) -> Result<Vec<Spin>> {
        let state = match init {
            Initial::Constant(s) => vec![*s; self.n],
            Initial::Config(c) => c.clone(),
            Initial::Greedy => self.greedy()?,
        };
        if state.len() != self.n || state.iter().any(|&s| s as usize >= self.q) {
            return Err(Error::IncompleteConfiguration("initial configuration does not fit the region".into()));
        }
        if self.inter.log_weight(&state) == f64::NEG_INFINITY {
            return Err(Error::NonPermissive("initial configuration has zero weight".into()));
        }
        Ok(state)
    }

    fn greedy(&self) -> Result<Vec<Spin>> {
        let mut state = vec![0 as Spin; self.n];
        for i in 0..self.n {
            let ok = (0..self.q).find(|&v| {
                self.inter.site_log_weight(i, v as Spin) > f64::NEG_INFINITY
                    && self.inter.inner[i].iter().filter(|&&j| j < i).all(|&j| self.inter.pair_log_weight(v as Spin, state[j]) > f64::NEG_INFINITY)
            });
            match ok {
                Some(v) => state[i] = v as Spin,
                None => return Err(Error::NonPermissive(format!("greedy initialization stuck at site {i}"))),
            }
        }
        Ok(state)
    }

    /// Cumulative conditional law of block `b` given the rim spins.
    fn conditional_cdf(&self, b: usize, rim: &[Spin]) -> Result<Vec<f64>> {
        let plan = &self.blocks[b];
        let m = plan.sites.len();
        let total = self.q.pow(m as u32);
        let mut s = vec![0 as Spin; m];
        let mut lw = Vec::with_capacity(total);
        for c in 0..total {
            decode(c, self.q, m, &mut s);
            let mut acc = 0.0;
            for k in 0..m {
                acc += plan.fixed[k][s[k] as usize];
                for &r in &plan.cross[k] {
                    acc += self.inter.pair_log_weight(s[k], rim[r]);
                }
            }
            for &(k, l) in &plan.internal {
                acc += self.inter.pair_log_weight(s[k], s[l]);
            }
            lw.push(acc);
        }
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::NonPermissive(format!(
                "block {b} (sites {:?}) has zero conditional mass under rim spins {rim:?}",
                plan.sites.iter().map(|&i| &self.region.points()[i]).collect::<Vec<_>>()
            )));
        }
        let mut cdf = Vec::with_capacity(total);
        let mut run = 0.0;
        for x in lw {
            run += (x - max).exp();
            cdf.push(run);
        }
        cdf.iter_mut().for_each(|c| *c /= run);
        Ok(cdf)
    }

    pub fn replica(&self, index: usize, seed: u64, init: &Initial, cache_capacity: usize) -> Result<Replica<'_>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let state = self.initial_state(init)?;
        Ok(Replica {
            sim: self,
            initial: state.clone(),
            state,
            rng,
            cache: BoundedCache::new(cache_capacity),
            time: 0.0,
            events: 0,
        })
    }

    fn observe(&self, obs: &Observable, state: &[Spin], initial: &[Spin]) -> f64 {
        match obs {
            Observable::Magnetization => state.iter().map(|&s| self.labels[s as usize]).sum::<f64>() / self.n as f64,
            Observable::Energy => -self.inter.log_weight(state),
            Observable::BlockOverlap(r) => {
                let idx: Vec<usize> = r.iter().filter_map(|p| self.region.index_of(p)).collect();
                if idx.is_empty() {
                    return 0.0;
                }
                idx.iter().filter(|&&i| state[i] == initial[i]).count() as f64 / idx.len() as f64
            }
            Observable::Custom(_, f) => f(state),
        }
    }

    fn config_index(&self, state: &[Spin]) -> Option<usize> {
        if state_count(self.q, self.n) <= usize::MAX as u128 {
            Some(encode(state, self.q))
        } else {
            None
        }
    }
}

/// Conditional laws keyed by (block, rim spins); least recently used first out.
struct BoundedCache {
    map: Option<LruCache<(usize, Vec<Spin>), Arc<Vec<f64>>>>,
    hits: usize,
    misses: usize,
}

impl BoundedCache {
    fn new(capacity: usize) -> Self {
        BoundedCache { map: NonZeroUsize::new(capacity).map(LruCache::new), hits: 0, misses: 0 }
    }

    fn get_or_insert<F: FnOnce() -> Result<Vec<f64>>>(&mut self, key: (usize, Vec<Spin>), make: F) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.map.as_mut().and_then(|m| m.get(&key)) {
            self.hits += 1;
            return Ok(v.clone());
        }
        self.misses += 1;
        let value = Arc::new(make()?);
        if let Some(m) = self.map.as_mut() {
            m.put(key, value.clone());
        }
        Ok(value)
    }
}

/// One running copy of the chain with its own random stream.
pub struct Replica<'a> {
    sim: &'a Simulator,
    initial: Vec<Spin>,
    state: Vec<Spin>,
    rng: ChaCha8Rng,
    cache: BoundedCache,
    time: f64,
    events: usize,
}

impl Replica<'_> {
    pub fn state(&self) -> &[Spin] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Resamples block `b` from its conditional law; returns the new block
    /// configuration index (first block site least significant).
    pub fn resample(&mut self, b: usize) -> Result<usize> {
        let sim = self.sim;
        let plan = &sim.blocks[b];
        let rim: Vec<Spin> = plan.rim.iter().map(|&j| self.state[j]).collect();
        let cdf = self.cache.get_or_insert((b, rim.clone()), || sim.conditional_cdf(b, &rim))?;
        let u: f64 = self.rng.random();
        let c = cdf.partition_point(|&x| x < u).min(cdf.len() - 1);
        let mut s = vec![0 as Spin; plan.sites.len()];
        decode(c, sim.q, plan.sites.len(), &mut s);
        for (k, &site) in plan.sites.iter().enumerate() {
            self.state[site] = s[k];
        }
        Ok(c)
    }

    /// Advances to the next event; returns `(time, block)` or `None` past `horizon`.
    pub fn next_event(&mut self, horizon: f64) -> Result<Option<(f64, usize)>> {
        let exp = Exp::new(self.sim.rate).map_err(|e| Error::Parameter(e.to_string()))?;
        let dt: f64 = exp.sample(&mut self.rng);
        if self.time + dt > horizon {
            self.time = horizon;
            return Ok(None);
        }
        self.time += dt;
        let b = self.sim.alias.sample(&mut self.rng);
        self.resample(b)?;
        self.events += 1;
        Ok(Some((self.time, b)))
    }

    /// Runs to `cfg.horizon`, recording observables every `cfg.sample_interval`.
    pub fn run(mut self, index: usize, cfg: &McConfig, observables: &[Observable]) -> Result<ReplicaRun> {
        if !(cfg.sample_interval > 0.0) || !(cfg.horizon >= 0.0) {
            return Err(Error::Parameter("need sample_interval > 0 and horizon ≥ 0".into()));
        }
        let sim = self.sim;
        let mut times = Vec::new();
        let mut columns = vec![Vec::new(); observables.len()];
        let mut log = cfg.event_log.then(Vec::new);
        let mut next_sample = 0.0;
        let mut k = 0u64;
        loop {
            let before = log.as_ref().map(|_| sim.config_index(&self.state));
            let prev_state = self.state.clone();
            let ev = self.next_event(cfg.horizon)?;
            let now = ev.map(|(t, _)| t).unwrap_or(f64::INFINITY);
            while next_sample <= cfg.horizon && next_sample < now {
                times.push(next_sample);
                for (col, obs) in columns.iter_mut().zip(observables) {
                    col.push(sim.observe(obs, &prev_state, &self.initial));
                }
                k += 1;
                next_sample = k as f64 * cfg.sample_interval;
            }
            match ev {
                None => break,
                Some((t, b)) => {
                    if let Some(log) = log.as_mut() {
                        log.push(Event { time: t, block: b, from: before.flatten(), to: sim.config_index(&self.state) });
                    }
                }
            }
        }
        Ok(ReplicaRun {
            replica: index,
            series: TimeSeries { times, names: observables.iter().map(Observable::name).collect(), columns },
            events: self.events,
            cache_hits: self.cache.hits,
            cache_misses: self.cache.misses,
            log,
            final_state: self.state,
        })
    }
}

/// Runs `cfg.replicas` independent replicas (stream `i` for replica `i`).
pub fn mc_simulate(
    model: &SpinModel,
    region: &Region,
    tau: &BoundaryCondition,
    weights: &BlockWeights,
    cfg: &McConfig,
    observables: &[Observable],
) -> Result<Vec<ReplicaRun>> {
    let sim = Simulator::new(model, region, tau, weights)?;
    if weights.gamma() <= 0.0 {
        log::warn!("γ(α) = 0: some site is never resampled and the chain is not ergodic");
    }
    (0..cfg.replicas.max(1))
        .into_par_iter()
        .map(|i| sim.replica(i, cfg.seed, &cfg.initial, cfg.cache_capacity)?.run(i, cfg, observables))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Autocorrelation {
    pub tau_int: f64,
    pub window: usize,
    pub mean: f64,
    pub variance: f64,
    /// `sqrt(2 τ_int Var / N)`.
    pub std_error: f64,
}

/// Integrated autocorrelation time with Sokal's automatic window (`c = 5`),
/// in units of the sampling interval.
pub fn autocorrelation(series: &[f64]) -> Autocorrelation {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n.max(1) as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centred.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64;
    if n < 2 || c0 <= 0.0 {
        return Autocorrelation { tau_int: 0.5, window: 0, mean, variance: c0, std_error: 0.0 };
    }
    let mut tau = 0.5;
    let mut window = 0;
    for t in 1..n {
        let ct = centred[..n - t].iter().zip(&centred[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += ct / c0;
        window = t;
        if t as f64 >= 5.0 * tau {
            break;
        }
    }
    let tau = tau.max(0.5);
    Autocorrelation { tau_int: tau, window, mean, variance: c0, std_error: (2.0 * tau * c0 / n as f64).sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub sites: usize,
    pub gamma: f64,
    pub value: f64,
    /// `"exact-tv"` or `"autocorrelation-proxy"`.
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least squares of `value` against `log |V|`.
    pub fit: ScalingFit,
}

/// Least-squares line through `(x_i, y_i)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> ScalingFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(y).map(|(a, b)| b - (intercept + slope * a)).collect();
    ScalingFit { slope, intercept, residuals }
}

/// `t_mix(1/4)` per region (exact, while `q^|V| ≤ exact_cap`) or the
/// integrated autocorrelation time of the slowest of magnetization and
/// energy (larger regions), fitted against `log |V|`.
pub fn mixing_time_scaling(
    model: &SpinModel,
    regions: &[Region],
    tau: &BoundaryCondition,
    preset: &WeightPreset,
    scale: f64,
    exact_cap: u128,
    mc: &McConfig,
) -> Result<ScalingTable> {
    let mut rows = Vec::new();
    for v in regions {
        let weights = preset.build(v)?.scaled(scale)?;
        let gamma = weights.gamma();
        if state_count(model.q(), v.len()) <= exact_cap {
            let table = gibbs_table_capped(model, v, tau, exact_cap)?;
            let dyn_ = BlockDynamics::new(&table, &weights)?;
            let t = mixing_time(&dyn_, 0.25, StartSet::All, 1e-9)?;
            rows.push(ScalingRow { sites: v.len(), gamma, value: t, method: "exact-tv".into() });
        } else {
            let runs = mc_simulate(model, v, tau, &weights, mc, &[Observable::Magnetization, Observable::Energy])?;
            let mut worst: f64 = 0.0;
            for run in &runs {
                for col in &run.series.columns {
                    worst = worst.max(autocorrelation(col).tau_int * mc.sample_interval);
                }
            }
            rows.push(ScalingRow { sites: v.len(), gamma, value: worst, method: "autocorrelation-proxy".into() });
        }
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.sites as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.value).collect();
    Ok(ScalingTable { fit: linear_fit(&x, &y), rows })
}
