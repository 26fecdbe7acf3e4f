use std::path::PathBuf;

use entrofact::error::state_count;
use entrofact::inequalities::WeightPreset;
use entrofact::lattice::{fat_region, Point, Region};
use entrofact::mc::{Initial, McConfig};
use entrofact::model::{BoundaryCondition, Spin, SpinModel};
use entrofact::optimize::OptimizerConfig;
use entrofact::report::hash_of;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CAP_STATES: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Ising {
        beta: f64,
        #[serde(default)]
        field: f64,
    },
    Potts {
        q: usize,
        beta: f64,
        #[serde(default)]
        field: Vec<f64>,
    },
    HardCore {
        lambda: f64,
    },
    Colorings {
        q: usize,
    },
    /// `{q, pair, site}` with `"-inf"` for forbidden pairs.
    Custom(SpinModel),
}

impl ModelSpec {
    pub fn build(&self, dim: usize) -> Result<SpinModel, CliError> {
        Ok(match self {
            ModelSpec::Ising { beta, field } => SpinModel::ising(*beta, *field),
            ModelSpec::Potts { q, beta, field } => {
                let h = if field.is_empty() { vec![0.0; *q] } else { field.clone() };
                SpinModel::potts(*q, *beta, &h)?
            }
            ModelSpec::HardCore { lambda } => SpinModel::hardcore(*lambda)?,
            ModelSpec::Colorings { q } => SpinModel::colorings(*q, dim)?,
            ModelSpec::Custom(m) => m.clone(),
        })
    }

    pub fn q(&self) -> usize {
        match self {
            ModelSpec::Ising { .. } | ModelSpec::HardCore { .. } => 2,
            ModelSpec::Potts { q, .. } | ModelSpec::Colorings { q } => *q,
            ModelSpec::Custom(m) => m.q(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionSpec {
    Chain(usize),
    /// One run per chain length in `from..=to`.
    Chains { from: usize, to: usize },
    Rectangle(Vec<usize>),
    Points(Region),
    Fat { side: usize, base: Region },
}

impl RegionSpec {
    pub fn regions(&self) -> Result<Vec<Region>, CliError> {
        Ok(match self {
            RegionSpec::Chain(n) => vec![Region::chain(*n)],
            RegionSpec::Chains { from, to } => {
                if from > to || *from == 0 {
                    return Err(CliError::Usage(format!("empty chain range {from}..={to}")));
                }
                (*from..=*to).map(Region::chain).collect()
            }
            RegionSpec::Rectangle(sides) => vec![Region::rectangle(sides)?],
            RegionSpec::Points(r) => vec![r.clone()],
            RegionSpec::Fat { side, base } => vec![fat_region(*side, base)?],
        })
    }

    pub fn is_chain(&self) -> bool {
        matches!(self, RegionSpec::Chain(_) | RegionSpec::Chains { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySpec {
    Free,
    Constant(Spin),
    Explicit(Vec<(Point, Spin)>),
    /// Every constant boundary in turn.
    Sweep,
}

impl BoundarySpec {
    pub fn conditions(&self, q: usize) -> Vec<(String, BoundaryCondition)> {
        match self {
            BoundarySpec::Free => vec![("free".into(), BoundaryCondition::free())],
            BoundarySpec::Constant(s) => vec![(format!("constant-{s}"), BoundaryCondition::constant(*s))],
            BoundarySpec::Explicit(sites) => vec![("explicit".into(), BoundaryCondition::explicit(sites.iter().cloned()))],
            BoundarySpec::Sweep => (0..q).map(|s| (format!("constant-{s}"), BoundaryCondition::constant(s as Spin))).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Structural,
    Shearer,
    TwoBlock,
    Tensorization,
    Reduction,
    Jensen,
    Geometry,
    Delta,
    BestConstant,
    Gap,
    Mlsi,
    Lsi,
    Mixing,
    Decay,
    Ssm,
    Simulate,
}

impl Check {
    pub const ALL: [Check; 16] = [
        Check::Structural,
        Check::Shearer,
        Check::TwoBlock,
        Check::Tensorization,
        Check::Reduction,
        Check::Jensen,
        Check::Geometry,
        Check::Delta,
        Check::BestConstant,
        Check::Gap,
        Check::Mlsi,
        Check::Lsi,
        Check::Mixing,
        Check::Decay,
        Check::Ssm,
        Check::Simulate,
    ];

    pub fn needs_table(self) -> bool {
        !matches!(self, Check::Geometry | Check::Ssm | Check::Simulate)
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Check::Geometry | Check::Gap | Check::Mixing | Check::Ssm)
    }

    /// Needs a time evolution on the full state space.
    pub fn needs_uniformization(self) -> bool {
        matches!(self, Check::Mixing | Check::Decay)
    }

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

fn default_boundary() -> BoundarySpec {
    BoundarySpec::Constant(1)
}

fn default_weights() -> WeightPreset {
    WeightPreset::EvenOdd
}

fn default_checks() -> Vec<Check> {
    Check::ALL.to_vec()
}

fn default_samples() -> usize {
    50
}

fn default_mc() -> McConfig {
    McConfig { horizon: 200.0, replicas: 2, initial: Initial::Greedy, ..McConfig::default() }
}

/// Everything a run depends on. `threads` and `out` do not change results
/// and are left out of the hash.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub region: RegionSpec,
    #[serde(default = "default_boundary")]
    pub boundary: BoundarySpec,
    #[serde(default = "default_weights")]
    pub weights: WeightPreset,
    #[serde(default = "default_checks")]
    pub checks: Vec<Check>,
    /// Random test functions per randomized check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_mc")]
    pub mc: McConfig,
    /// Time grid of the TV and entropy curves.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cap_states: Option<u64>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, region: RegionSpec, checks: Vec<Check>) -> Self {
        ExperimentConfig {
            model,
            region,
            boundary: default_boundary(),
            weights: default_weights(),
            checks,
            samples: default_samples(),
            optimizer: OptimizerConfig::default(),
            mc: default_mc(),
            times: None,
            seed: None,
            cap_states: None,
            out: None,
            threads: None,
        }
    }

    pub fn cap(&self) -> u64 {
        self.cap_states.unwrap_or(DEFAULT_CAP_STATES)
    }

    pub fn hash(&self) -> String {
        hash_of(self)
    }

    /// Validates everything that can be checked without heavy compute:
    /// parameters, weights and predicted state-space sizes.
    pub fn validate(&self) -> Result<Vec<Region>, CliError> {
        if self.checks.is_empty() {
            return Err(CliError::Usage("no checks requested".into()));
        }
        if self.seed.is_none() && self.checks.iter().any(|c| c.is_stochastic()) {
            return Err(CliError::Usage("a seed is required for randomized checks (--seed or \"seed\" in the config)".into()));
        }
        if let Some(times) = &self.times {
            if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::Usage("times must be nonnegative and strictly increasing".into()));
            }
        }
        let regions = self.region.regions()?;
        let q = self.model.q();
        for v in &regions {
            if v.is_empty() {
                return Err(CliError::Usage("the region is empty".into()));
            }
            self.model.build(v.dim())?;
            let weights = self.weights.build(v)?;
            if weights.total_rate() <= 0.0 {
                return Err(CliError::Usage("every block weight is zero".into()));
            }
            let states = state_count(q, v.len());
            if self.checks.iter().any(|c| c.needs_table()) && states > self.cap() as u128 {
                return Err(CliError::Cap(format!(
                    "{q}^{} = {states} configurations exceed --cap-states {}; shrink the region or raise the cap",
                    v.len(),
                    self.cap()
                )));
            }
            if self.checks.iter().any(|c| c.needs_uniformization()) && states > DEFAULT_CAP_STATES as u128 {
                return Err(CliError::Cap(format!(
                    "mixing and decay curves are exact only up to {DEFAULT_CAP_STATES} states; drop them or shrink the region"
                )));
            }
        }
        Ok(regions)
    }
}

pub fn parse_weights(s: &str) -> Result<WeightPreset, CliError> {
    Ok(match s {
        "singletons" => WeightPreset::Singletons,
        "even-odd" => WeightPreset::EvenOdd,
        "full" => WeightPreset::Full,
        other => match other.strip_prefix("up-to-") {
            Some(m) => WeightPreset::UpToSize(m.parse().map_err(|_| CliError::Usage(format!("bad weight preset {other}")))?),
            None => return Err(CliError::Usage(format!("unknown weight preset {other}; use singletons, even-odd, full or up-to-<m>"))),
        },
    })
}

pub fn parse_boundary(s: &str) -> Result<BoundarySpec, CliError> {
    Ok(match s {
        "free" => BoundarySpec::Free,
        "plus" => BoundarySpec::Constant(1),
        "minus" => BoundarySpec::Constant(0),
        "sweep" => BoundarySpec::Sweep,
        other => BoundarySpec::Constant(other.parse().map_err(|_| CliError::Usage(format!("unknown boundary {other}")))?),
    })
}

/// `"a..b"`, `"a..=b"` or a single number.
pub fn parse_range(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("bad range {s}; expected a..b or n"));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
    } else {
        let n = s.trim().parse().map_err(|_| bad())?;
        Ok((n, n))
    }
}
