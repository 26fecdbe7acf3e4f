//! Multi-start multiplicative-update search for extremal ratios of
//! functionals of a density `f`.
//!
//! Iterates live on the probability simplex in the coordinates `h = p·f`
//! (so `μ f = 1`), where the entropic mirror step is a multiplicative update.
//! Results are bounds attained by a witness, never certified optima.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gibbs::ConfigFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub max_iter: usize,
    pub floor: f64,
    pub seed: u64,
    /// Also evaluate every floored point mass when the space has at most this many states.
    pub indicator_cap: usize,
    /// Stop a start once the step size falls below this.
    pub min_step: f64,
    /// Stop a start after this many consecutive accepted steps improving by less than `rel_tol`.
    pub patience: usize,
    pub rel_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            starts: 32,
            max_iter: 10_000,
            floor: 1e-12,
            seed: 0,
            indicator_cap: 4096,
            min_step: 1e-9,
            patience: 200,
            rel_tol: 1e-13,
        }
    }
}

impl OptimizerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, starts: usize, max_iter: usize) -> Self {
        self.starts = starts;
        self.max_iter = max_iter;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    Maximize,
    Minimize,
}

/// A ratio `num(f) / den(f)` with gradients taken with respect to `f`.
pub trait RatioObjective: Sync {
    fn probs(&self) -> &[f64];

    /// Returns `(num, den)` and writes `∂num/∂f`, `∂den/∂f` into the buffers.
    fn eval(&self, f: &[f64], grad_num: &mut [f64], grad_den: &mut [f64]) -> (f64, f64);

    /// Value only; override when cheaper than [`eval`](Self::eval).
    fn value(&self, f: &[f64]) -> (f64, f64) {
        let n = f.len();
        self.eval(f, &mut vec![0.0; n], &mut vec![0.0; n])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimResult {
    pub value: f64,
    pub witness: ConfigFunction,
    /// Every start stopped on the step-size or patience criterion.
    pub converged: bool,
    pub iterations: usize,
    /// `"start:<i>"` or `"indicator:<σ>"`.
    pub source: String,
}

// below this the ratio of two entropies is dominated by roundoff
const DEN_EPS: f64 = 1e-12;

fn better(goal: Goal, a: f64, b: f64) -> bool {
    match goal {
        Goal::Maximize => a > b,
        Goal::Minimize => a < b,
    }
}

fn ratio<O: RatioObjective + ?Sized>(obj: &O, f: &[f64]) -> Option<f64> {
    let (num, den) = obj.value(f);
    if den > DEN_EPS && num.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

struct StartOutcome {
    value: f64,
    f: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn h_to_f(h: &[f64], p: &[f64], floor: f64, f: &mut [f64]) {
    for i in 0..h.len() {
        f[i] = if p[i] > 0.0 { (h[i] / p[i]).max(floor) } else { 1.0 };
    }
}

fn run_start<O: RatioObjective + ?Sized>(obj: &O, goal: Goal, cfg: &OptimizerConfig, mut h: Vec<f64>) -> Option<StartOutcome> {
    let p = obj.probs();
    let n = p.len();
    let sign = if goal == Goal::Maximize { 1.0 } else { -1.0 };
    let mut f = vec![0.0; n];
    h_to_f(&h, p, cfg.floor, &mut f);
    let mut gn = vec![0.0; n];
    let mut gd = vec![0.0; n];
    let (num, den) = obj.eval(&f, &mut gn, &mut gd);
    if !(den > DEN_EPS) {
        return None;
    }
    let mut cur = num / den;
    let mut grad: Vec<f64> = (0..n).map(|i| (gn[i] - cur * gd[i]) / den).collect();
    let mut step = 1.0;
    let mut stale = 0;
    let mut trial_h = vec![0.0; n];
    let mut trial_f = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        // gradient in h-coordinates is (1/p)·∂/∂f
        let mut gmax = 0.0f64;
        for i in 0..n {
            if p[i] > 0.0 {
                grad[i] /= p[i];
                gmax = gmax.max(grad[i].abs());
            }
        }
        if !(gmax > 0.0) || !gmax.is_finite() {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step >= cfg.min_step {
            let mut total = 0.0;
            for i in 0..n {
                trial_h[i] = if p[i] > 0.0 { h[i] * (sign * step * grad[i] / gmax).exp() } else { 0.0 };
                total += trial_h[i];
            }
            for (i, x) in trial_h.iter_mut().enumerate() {
                *x = (*x / total).max(cfg.floor * p[i]);
            }
            h_to_f(&trial_h, p, cfg.floor, &mut trial_f);
            let (tn, td) = obj.eval(&trial_f, &mut gn, &mut gd);
            if td > DEN_EPS && tn.is_finite() && better(goal, tn / td, cur) {
                let next = tn / td;
                let gain = (next - cur).abs() / cur.abs().max(1e-300);
                stale = if gain < cfg.rel_tol { stale + 1 } else { 0 };
                cur = next;
                std::mem::swap(&mut h, &mut trial_h);
                std::mem::swap(&mut f, &mut trial_f);
                for i in 0..n {
                    grad[i] = (gn[i] - cur * gd[i]) / td;
                }
                step = (step * 1.5).min(64.0);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || stale >= cfg.patience {
            converged = true;
            break;
        }
    }
    Some(StartOutcome { value: cur, f, converged, iterations })
}

fn dirichlet_start(p: &[f64], seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma parameters");
    let mut h: Vec<f64> = p.iter().map(|&pi| if pi > 0.0 { gamma.sample(&mut rng) + 1e-300 } else { 0.0 }).collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= s);
    h
}

/// Searches for the extremal value of `num/den` over densities `f > 0`.
///
/// Returns `None` when no start (nor indicator) has a positive denominator.
pub fn optimize_ratio<O: RatioObjective + ?Sized>(obj: &O, goal: Goal, cfg: &OptimizerConfig) -> Option<OptimResult> {
    let p = obj.probs();
    let n = p.len();
    let outcomes: Vec<Option<StartOutcome>> = (0..cfg.starts)
        .into_par_iter()
        .map(|s| run_start(obj, goal, cfg, dirichlet_start(p, cfg.seed, s as u64 + 1)))
        .collect();

    let mut best: Option<OptimResult> = None;
    let mut all_converged = true;
    let mut total_iter = 0;
    let consider = |value: f64, f: Vec<f64>, source: String, best: &mut Option<OptimResult>| {
        if best.as_ref().is_none_or(|b| better(goal, value, b.value)) {
            *best = Some(OptimResult { value, witness: ConfigFunction::new(f), converged: true, iterations: 0, source });
        }
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        if let Some(o) = o {
            all_converged &= o.converged;
            total_iter += o.iterations;
            consider(o.value, o.f, format!("start:{i}"), &mut best);
        }
    }

    let support = p.iter().filter(|&&x| x > 0.0).count();
    if n <= cfg.indicator_cap && support > 1 {
        let found: Vec<Option<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|s| {
                if p[s] <= 0.0 {
                    return None;
                }
                let f = indicator(p, s, cfg.floor);
                ratio(obj, &f).map(|r| (r, s))
            })
            .collect();
        for (r, s) in found.into_iter().flatten() {
            consider(r, indicator(p, s, cfg.floor), format!("indicator:{s}"), &mut best);
        }
    }
    best.map(|mut b| {
        b.converged = all_converged;
        b.iterations = total_iter;
        b
    })
}

/// Point mass at `s` normalized to `μ f = 1`, floored elsewhere.
pub fn indicator(p: &[f64], s: usize, floor: f64) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| if i == s { 1.0 / pi } else if pi > 0.0 { floor } else { 1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Σ p f^2 / (Σ p f)^2` is maximized by concentrating on the lightest state.
    struct SecondMoment {
        p: Vec<f64>,
    }

    impl RatioObjective for SecondMoment {
        fn probs(&self) -> &[f64] {
            &self.p
        }

        fn eval(&self, f: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
            let m: f64 = self.p.iter().zip(f).map(|(p, x)| p * x).sum();
            let s: f64 = self.p.iter().zip(f).map(|(p, x)| p * x * x).sum();
            for i in 0..f.len() {
                gn[i] = 2.0 * self.p[i] * f[i];
                gd[i] = 2.0 * m * self.p[i];
            }
            (s, m * m)
        }
    }

    #[test]
    fn finds_extremes_of_second_moment() {
        let obj = SecondMoment { p: vec![0.1, 0.2, 0.3, 0.4] };
        let cfg = OptimizerConfig { indicator_cap: 0, ..OptimizerConfig::default() }.with_budget(8, 5000);
        let max = optimize_ratio(&obj, Goal::Maximize, &cfg).unwrap();
        assert!((max.value - 10.0).abs() < 1e-6, "{}", max.value);
        let min = optimize_ratio(&obj, Goal::Minimize, &cfg).unwrap();
        assert!((min.value - 1.0).abs() < 1e-8, "{}", min.value);
    }

    #[test]
    fn deterministic_under_seed() {
        let obj = SecondMoment { p: vec![0.25; 4] };
        let cfg = OptimizerConfig::default().with_budget(4, 50).with_seed(7);
        let a = optimize_ratio(&obj, Goal::Minimize, &cfg).unwrap();
        let b = optimize_ratio(&obj, Goal::Minimize, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.witness, b.witness);
    }
}
