//! Executes the requested checks, one system (region × boundary) at a time,
//! in a fixed order.

use entrofact::dynamics::{entropy_decay_check, lsi_constant, mixing_time, mlsi_constant, spectral_gap, tv_mixing_curve, BlockDynamics, StartSet};
use entrofact::inequalities::{
    check_shearer_product, check_tensorization, check_two_block_with, estimate_best_constant, even_odd_delta, is_product_over_sites,
    jensen_check, reduction_even_odd, two_block_epsilon, BlockWeights,
};
use entrofact::lattice::{cesi_decomposition, in_scale_class, smallest_scale_class, verify_geo, Region, ScaleClass};
use entrofact::mc::{autocorrelation, mc_simulate, McConfig, Observable};
use entrofact::model::{BoundaryCondition, SpinModel};
use entrofact::optimize::OptimizerConfig;
use entrofact::report::{hash_of, CheckReport};
use entrofact::ssm::{chain_plan, fit_ssm, PsiOptions, SsmProbe};
use entrofact::{gibbs::gibbs_table_capped, ConfigFunction, GibbsTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Check, ExperimentConfig};
use crate::CliError;

const IDENTITY_TOL: f64 = 1e-10;
const SHEARER_TOL: f64 = 1e-8;

/// Named numeric columns, written to `series/<name>.csv`.
pub struct Series {
    pub name: String,
    pub columns: Vec<(String, Vec<f64>)>,
}

#[derive(Default)]
pub struct Outcome {
    pub reports: Vec<CheckReport>,
    pub series: Vec<Series>,
}

impl Outcome {
    pub fn hard_failures(&self) -> usize {
        self.reports.iter().filter(|r| !r.pass && r.extra.get("hard").and_then(|v| v.as_bool()).unwrap_or(false)).count()
    }
}

struct System<'a> {
    cfg: &'a ExperimentConfig,
    index: usize,
    model: SpinModel,
    v: Region,
    tau: BoundaryCondition,
    label: String,
    weights: BlockWeights,
    table: Option<GibbsTable>,
    c_hat: Option<f64>,
}

/// Normalized log-normal test function with a random spread.
fn density(rng: &mut ChaCha8Rng, n: usize) -> ConfigFunction {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let s: f64 = rng.random_range(0.1..1.5);
    ConfigFunction::new((0..n).map(|_| (s * normal.sample(rng)).exp()).collect())
}

fn real(rng: &mut ChaCha8Rng, n: usize) -> ConfigFunction {
    ConfigFunction::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn nonempty_subset(rng: &mut ChaCha8Rng, v: &Region) -> Region {
    let a = v.filter_index(|_| rng.random_bool(0.5));
    if a.is_empty() {
        let i = rng.random_range(0..v.len());
        v.filter_index(|j| j == i)
    } else {
        a
    }
}

impl System<'_> {
    fn rng(&self, check: Check) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.unwrap_or(0));
        rng.set_stream(((self.index as u64) << 8) | check as u64);
        rng
    }

    fn optimizer(&self, check: Check) -> OptimizerConfig {
        let seed = self.cfg.seed.unwrap_or(0) ^ (((self.index as u64) << 8) | check as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.cfg.optimizer.clone().with_seed(seed)
    }

    fn table(&self) -> &GibbsTable {
        self.table.as_ref().expect("table built for table checks")
    }

    fn report(&self, name: &str, lhs: f64, rhs: f64, pass: bool, hard: bool) -> CheckReport {
        let mut r = CheckReport::new(name, lhs, rhs, pass)
            .with_hash(hash_of(&(&self.model, &self.v, &self.tau, &self.weights)))
            .with("sites", self.v.len())
            .with("boundary", &self.label)
            .with("hard", hard);
        if let Some(seed) = self.cfg.seed {
            r = r.with_seed(seed);
        }
        r
    }

    fn not_applicable(&self, name: &str, why: &str) -> CheckReport {
        self.report(name, 0.0, 0.0, true, false).with("applicable", false).with("reason", why)
    }

    fn series_name(&self, base: &str) -> String {
        format!("{base}_n{}_{}", self.v.len(), self.label)
    }

    fn dynamics(&self) -> Result<BlockDynamics<'_>, CliError> {
        Ok(BlockDynamics::new(self.table(), &self.weights)?)
    }

    fn best_constant(&mut self) -> Result<f64, CliError> {
        if let Some(c) = self.c_hat {
            return Ok(c);
        }
        let c = estimate_best_constant(self.table(), &self.weights, &self.optimizer(Check::BestConstant))?.value;
        self.c_hat = Some(c);
        Ok(c)
    }

    fn run(&mut self, check: Check, out: &mut Outcome) -> Result<(), CliError> {
        let n = self.cfg.samples;
        match check {
            Check::Structural => {
                let mut rng = self.rng(check);
                let t = self.table();
                let dyn_ = self.dynamics()?;
                let (mut dlr, mut tel, mut dir, mut rev) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let f = f.scale(1.0 / t.mean(&f));
                    let g = real(&mut rng, t.len());
                    dlr = dlr.max(t.dlr_residual(&nonempty_subset(&mut rng, &self.v), &f)?);
                    let mut order: Vec<usize> = (0..self.v.len()).collect();
                    order.shuffle(&mut rng);
                    let mut cuts: Vec<usize> = (0..3).map(|_| rng.random_range(0..=order.len())).collect();
                    cuts.sort_unstable();
                    let chain: Vec<Region> = cuts.iter().map(|&c| self.v.filter_index(|i| order[..c].contains(&i))).collect();
                    let r = t.telescope_check(&chain, &f)?;
                    tel = tel.max(r.decomposition).max(r.telescope);
                    let (lf, lg) = (dyn_.generator(&f)?, dyn_.generator(&g)?);
                    dir = dir.max((dyn_.dirichlet_form(&f, &g)? + dyn_.inner(&f, &lg)).abs());
                    rev = rev.max((dyn_.inner(&f, &lg) - dyn_.inner(&lf, &g)).abs());
                }
                for (name, value) in [("structural/dlr", dlr), ("structural/telescope", tel), ("structural/dirichlet", dir), ("structural/reversibility", rev)] {
                    out.reports.push(self.report(name, value, IDENTITY_TOL, value <= IDENTITY_TOL, true).with("samples", n));
                }
            }
            Check::Shearer => {
                let t = self.table();
                if !is_product_over_sites(t, &self.v)? {
                    out.reports.push(self.not_applicable("shearer", "μ is not a product over sites"));
                    return Ok(());
                }
                let mut rng = self.rng(check);
                let (mut worst, mut violations) = (0.0f64, 0);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let r = check_shearer_product(t, &self.v, &self.weights, &f)?;
                    if !r.degenerate {
                        worst = worst.max(r.ratio);
                        violations += usize::from(r.ratio > 1.0 + SHEARER_TOL);
                    }
                }
                out.reports.push(self.report("shearer", worst, 1.0 + SHEARER_TOL, violations == 0, true).with("violations", violations));
            }
            Check::TwoBlock => {
                let t = self.table();
                let xs: Vec<i64> = self.v.iter().map(|p| p[0]).collect();
                let (lo, hi) = (*xs.iter().min().unwrap_or(&0), *xs.iter().max().unwrap_or(&0));
                let mid = lo + (hi - lo) / 2;
                let a = self.v.filter(|p| p[0] <= mid.max(lo + (hi - lo + 1) / 2));
                let b = self.v.filter(|p| p[0] >= mid);
                let eps = two_block_epsilon(t, &a, &b)?;
                if eps >= 1.0 {
                    out.reports.push(self.not_applicable("two-block", "ε ≥ 1 for the overlapping halves").with("epsilon", eps));
                    return Ok(());
                }
                let mut rng = self.rng(check);
                let (mut worst, mut violations, mut theta) = (0.0f64, 0, 0.0);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let r = check_two_block_with(t, &a, &b, eps, &f)?;
                    theta = r.theta;
                    if r.cesi1_rhs > 0.0 {
                        worst = worst.max(r.ent / r.cesi1_rhs.min(r.cesi2_rhs));
                    }
                    violations += usize::from(!r.pass());
                }
                out.reports.push(
                    self.report("two-block", worst, 1.0, violations == 0, true)
                        .with("epsilon", eps)
                        .with("theta", theta)
                        .with("violations", violations),
                );
            }
            Check::Tensorization => {
                let t = self.table();
                let last = self.v.dim() - 1;
                let mut ys: Vec<i64> = self.v.iter().map(|p| p[last]).collect();
                ys.dedup();
                ys.sort_unstable();
                ys.dedup();
                let rows: Vec<Region> = ys.iter().map(|&y| self.v.filter(|p| p[last] == y)).collect();
                let dev = t.product_deviation(&self.v, &rows)?;
                if rows.len() < 2 || dev > 1e-10 {
                    out.reports.push(self.not_applicable("tensorization", "μ is not a product over rows").with("product_deviation", dev));
                    return Ok(());
                }
                let blocks: Vec<Vec<Region>> = rows
                    .iter()
                    .map(|r| {
                        let (e, o) = r.even_odd_split();
                        [e, o].into_iter().filter(|b| !b.is_empty()).collect()
                    })
                    .collect();
                let mut rng = self.rng(check);
                let (mut worst, mut violations) = (0.0f64, 0);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let r = check_tensorization(t, &blocks, None, &f)?;
                    worst = worst.max(r.worst_ratio);
                    violations += usize::from(!r.pass);
                }
                out.reports.push(self.report("tensorization", worst, 1.0, violations == 0, true).with("rows", rows.len()).with("violations", violations));
            }
            Check::Reduction => {
                let t = self.table();
                let delta = even_odd_delta(t, &self.optimizer(Check::Delta))?;
                let c = 1.0 / delta.delta_hat;
                let mut rng = self.rng(check);
                let (mut violations, mut applicable, mut worst) = (0, 0, 0.0f64);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let r = reduction_even_odd(t, c, &self.weights, &f)?;
                    applicable += usize::from(r.applicable);
                    violations += usize::from(!r.pass);
                    if r.rhs > 0.0 {
                        worst = worst.max(r.lhs / r.rhs);
                    }
                }
                out.reports.push(
                    self.report("reduction", worst, 1.0, violations == 0, true)
                        .with("c_even_odd", c)
                        .with("applicable", applicable)
                        .with("violations", violations),
                );
            }
            Check::Jensen => {
                let t = self.table();
                let mut rng = self.rng(check);
                let (mut worst, mut failures) = (f64::NEG_INFINITY, 0);
                for _ in 0..n {
                    let f = density(&mut rng, t.len());
                    let a = nonempty_subset(&mut rng, &self.v);
                    let r = jensen_check(t, &a, &f, 1e-12)?;
                    worst = worst.max(r.max_excess);
                    failures += usize::from(!r.pass);
                }
                out.reports.push(self.report("jensen", worst, 0.0, failures == 0, true).with("failures", failures));
            }
            Check::Geometry => out.reports.push(self.geometry()),
            Check::Delta => {
                let d = even_odd_delta(self.table(), &self.optimizer(check))?;
                let ok = d.delta_hat > 0.0 && d.delta_hat <= 1.0 + 1e-9;
                out.reports.push(
                    self.report("delta", d.delta_hat, 1.0, ok, false)
                        .with("rough_lower_bound", d.rough_lower_bound)
                        .with("gap_even_odd", d.gap_even_odd)
                        .with("converged", d.converged)
                        .with("source", &d.source),
                );
            }
            Check::BestConstant => {
                let c = self.best_constant()?;
                out.reports.push(self.report("best-constant", c, 1.0, c.is_finite(), false).with("gamma", self.weights.gamma()));
            }
            Check::Gap => {
                let g = spectral_gap(&self.dynamics()?)?;
                out.reports.push(self.report("gap", g.gap, 0.0, g.gap > 0.0, false).with("method", g.method).with("residual", g.residual));
            }
            Check::Mlsi => {
                let m = mlsi_constant(&self.dynamics()?, &self.optimizer(check))?;
                out.reports.push(
                    self.report("mlsi", m.rho_hat, m.gap, m.rho_hat > 0.0, false).with("implied_c", m.implied_c).with("converged", m.converged),
                );
            }
            Check::Lsi => {
                let l = lsi_constant(&self.dynamics()?, &self.optimizer(check))?;
                out.reports.push(
                    self.report("lsi", l.s_hat, l.max_log_inverse, l.s_hat.is_finite(), false)
                        .with("measured_d", l.measured_d)
                        .with("converged", l.converged),
                );
            }
            Check::Mixing => {
                let dyn_ = self.dynamics()?;
                let t_mix = mixing_time(&dyn_, 0.25, StartSet::All, 1e-9)?;
                let times = self.cfg.times.clone().unwrap_or_else(|| (0..=40).map(|k| k as f64 * t_mix / 16.0).collect());
                let curve = tv_mixing_curve(&dyn_, &times, StartSet::All)?;
                out.reports.push(self.report("mixing", t_mix, 1.0 / dyn_.rate(), true, false).with("rate", dyn_.rate()));
                out.series.push(Series { name: self.series_name("tv"), columns: vec![("t".into(), curve.times), ("tv".into(), curve.tv)] });
            }
            Check::Decay => {
                let c = self.best_constant()?;
                let mut rng = self.rng(check);
                let f0 = density(&mut rng, self.table().len());
                let dyn_ = self.dynamics()?;
                let times = self.cfg.times.clone().unwrap_or_else(|| (0..=40).map(|k| k as f64 * 0.1).collect());
                let r = entropy_decay_check(&dyn_, &f0, &times, c)?;
                out.reports.push(self.report("decay", r.observed_rate, r.target_rate, r.pass, false));
                out.series.push(Series { name: self.series_name("entropy"), columns: vec![("t".into(), r.times), ("entropy".into(), r.entropy)] });
            }
            Check::Ssm => {
                let opts = PsiOptions::default();
                let (plan, min_d): (Vec<SsmProbe>, u64) = if self.cfg.region.is_chain() {
                    (chain_plan(1..=self.v.len()), if self.v.len() >= 3 { 2 } else { 1 })
                } else {
                    let mut plan = Vec::new();
                    for p in self.v.iter() {
                        let delta = self.v.filter(|y| y == p);
                        for x in self.v.boundary().iter() {
                            plan.push(SsmProbe { lambda: self.v.clone(), delta: delta.clone(), x: x.clone() });
                        }
                    }
                    (plan, 1)
                };
                let est = match fit_ssm(&self.model, &plan, &self.tau, min_d, &opts) {
                    Ok(est) => est,
                    Err(entrofact::Error::Precondition(why)) => {
                        out.reports.push(self.report("ssm", 0.0, 0.0, false, false).with("reason", why));
                        return Ok(());
                    }
                    Err(e) => return Err(e.into()),
                };
                out.reports.push(
                    self.report("ssm", est.a_hat, est.k_hat, !est.too_fast_to_fit, false)
                        .with("k_hat", est.k_hat)
                        .with("a_hat", est.a_hat)
                        .with("residual", est.residual)
                        .with("too_fast_to_fit", est.too_fast_to_fit),
                );
                let (d, dev): (Vec<f64>, Vec<f64>) = est.samples.iter().map(|&(d, x)| (d as f64, x)).unzip();
                out.series.push(Series { name: self.series_name("ssm"), columns: vec![("distance".into(), d), ("deviation".into(), dev)] });
            }
            Check::Simulate => {
                let mc = McConfig { seed: self.cfg.seed.unwrap_or(0) ^ (self.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), ..self.cfg.mc.clone() };
                let runs = mc_simulate(&self.model, &self.v, &self.tau, &self.weights, &mc, &[Observable::Magnetization, Observable::Energy])?;
                for run in runs {
                    let ac = autocorrelation(&run.series.columns[0]);
                    out.reports.push(
                        self.report("simulate", ac.mean, ac.std_error, true, false)
                            .with("replica", run.replica)
                            .with("tau_int", ac.tau_int * mc.sample_interval)
                            .with("events", run.events),
                    );
                    let mut columns = vec![("t".to_string(), run.series.times.clone())];
                    columns.extend(run.series.names.iter().cloned().zip(run.series.columns));
                    out.series.push(Series { name: format!("{}_r{}", self.series_name("mc"), run.replica), columns });
                }
            }
        }
        Ok(())
    }

    fn geometry(&self) -> CheckReport {
        if self.v.dim() < 2 {
            return self.not_applicable("geometry", "the decomposition needs d ≥ 2");
        }
        let Some(k0) = smallest_scale_class(&self.v, 60) else {
            return self.not_applicable("geometry", "region is in no scale class up to k = 60");
        };
        if k0 < 1 {
            return self.not_applicable("geometry", "region is in the base class, nothing to decompose");
        }
        match cesi_decomposition(&self.v, k0) {
            Ok(dec) => {
                let rep = verify_geo(&dec);
                self.report("geometry", rep.checks.len() as f64, 0.0, rep.passed(), true).with("k", k0).with("properties", rep.properties())
            }
            Err(e) => self.not_applicable("geometry", &e.to_string()).with("k", k0),
        }
    }
}

/// Runs every system of the config in order: regions, then boundaries,
/// then checks in the order given.
pub fn run(cfg: &ExperimentConfig, regions: &[Region]) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let q = cfg.model.q();
    let mut index = 0;
    for v in regions {
        let model = cfg.model.build(v.dim())?;
        let weights = cfg.weights.build(v)?;
        for (label, tau) in cfg.boundary.conditions(q) {
            let table = if cfg.checks.iter().any(|c| c.needs_table()) {
                Some(gibbs_table_capped(&model, v, &tau, cfg.cap() as u128)?)
            } else {
                None
            };
            let mut sys = System { cfg, index, model: model.clone(), v: v.clone(), tau, label, weights: weights.clone(), table, c_hat: None };
            for &check in &cfg.checks {
                log::info!("{} on {} sites ({})", check.name(), v.len(), sys.label);
                sys.run(check, &mut out)?;
            }
            index += 1;
        }
    }
    Ok(out)
}

/// Exhaustive sweep of the `d = 2` rectangles in `F_k \ F_{k-1}` (all
/// placements inside the `F_k` box) for each `k`.
pub fn geometry_sweep(ks: &[i64]) -> Outcome {
    let mut out = Outcome::default();
    for &k in ks {
        let lengths = ScaleClass::new(k, 2).lengths();
        let (w, h) = (lengths[0].floor() as i64, lengths[1].floor() as i64);
        let (mut swept, mut failures, mut errors) = (0usize, 0usize, Vec::new());
        for x0 in 0..=w {
            for x1 in x0..=w {
                for y0 in 0..=h {
                    for y1 in y0..=h {
                        let Ok(v) = Region::cuboid(&[x0, y0], &[x1, y1]) else { continue };
                        if in_scale_class(&v, k - 1) {
                            continue;
                        }
                        swept += 1;
                        match cesi_decomposition(&v, k) {
                            Ok(dec) => failures += usize::from(!verify_geo(&dec).passed()),
                            Err(e) => errors.push(format!("[{x0},{x1}]x[{y0},{y1}]: {e}")),
                        }
                    }
                }
            }
        }
        let pass = failures == 0 && errors.is_empty() && swept > 0;
        let mut r = CheckReport::new("geometry-sweep", failures as f64, 0.0, pass)
            .with("k", k)
            .with("rectangles", swept)
            .with("hard", true);
        if !errors.is_empty() {
            r = r.with("errors", &errors);
        }
        out.reports.push(r);
    }
    out
}

/// The smallest `count` values of `k` whose `d = 2` decomposition has `r ≥ 1`.
pub fn admissible_ks(count: usize) -> Vec<i64> {
    (1..200).filter(|&k| (ScaleClass::new(k, 2).lengths()[1] / 6.0).floor() >= 1.0).take(count).collect()
}
