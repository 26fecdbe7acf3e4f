//! Finite-spin interaction models and the Hamiltonian of a region under a
//! boundary condition.

use std::collections::BTreeMap;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{check_cap, Error, Result};
use crate::lattice::{neighbors, Point, Region};

/// Index into the single-spin alphabet `{0, ..., q-1}`.
pub type Spin = u8;

/// A pair-potential entry. `Forbidden` encodes `U = -∞` (a hard constraint).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coupling {
    Finite(f64),
    Forbidden,
}

impl Coupling {
    pub fn is_forbidden(&self) -> bool {
        matches!(self, Coupling::Forbidden)
    }
}

impl Serialize for Coupling {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Coupling::Finite(x) => s.serialize_f64(*x),
            Coupling::Forbidden => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Coupling {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct CouplingVisitor;
        impl Visitor<'_> for CouplingVisitor {
            type Value = Coupling;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a finite number or the string \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Coupling, E> {
                if v.is_finite() {
                    Ok(Coupling::Finite(v))
                } else if v == f64::NEG_INFINITY {
                    Ok(Coupling::Forbidden)
                } else {
                    Err(E::custom("pair potential must be finite or -inf"))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Coupling, E> {
                Ok(Coupling::Finite(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Coupling, E> {
                Ok(Coupling::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Coupling, E> {
                match v.trim() {
                    "-inf" | "\u{2212}inf" | "-Infinity" => Ok(Coupling::Forbidden),
                    other => Err(E::custom(format!("unrecognised potential literal {other:?}"))),
                }
            }
        }
        d.deserialize_any(CouplingVisitor)
    }
}

/// Value of a Hamiltonian; `Infinite` means the configuration has zero weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Energy {
    Finite(f64),
    Infinite,
}

impl Energy {
    /// `-H`, with `-∞` for forbidden configurations.
    pub fn log_weight(&self) -> f64 {
        match self {
            Energy::Finite(h) => -h,
            Energy::Infinite => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Energy::Finite(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ising,
    Potts,
    HardCore,
    Colorings,
    Custom,
}

fn default_kind() -> ModelKind {
    ModelKind::Custom
}

/// A finite-spin nearest-neighbour model: alphabet size, symmetric pair
/// potential `U` and site potential `W`. Temperature is folded into both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct SpinModel {
    q: usize,
    pair: Vec<Vec<Coupling>>,
    site: Vec<f64>,
    /// Numeric value of each symbol, used by observables such as magnetization.
    #[serde(default)]
    labels: Vec<f64>,
    #[serde(default = "default_kind")]
    kind: ModelKind,
}

#[derive(Deserialize)]
struct RawModel {
    q: usize,
    pair: Vec<Vec<Coupling>>,
    site: Vec<f64>,
    #[serde(default)]
    labels: Vec<f64>,
    #[serde(default = "default_kind")]
    kind: ModelKind,
}

impl TryFrom<RawModel> for SpinModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        let mut m = SpinModel::new(raw.q, raw.pair, raw.site)?;
        if !raw.labels.is_empty() {
            m = m.with_labels(raw.labels)?;
        }
        m.kind = raw.kind;
        Ok(m)
    }
}

impl SpinModel {
    pub fn new(q: usize, pair: Vec<Vec<Coupling>>, site: Vec<f64>) -> Result<Self> {
        if q < 2 {
            return Err(Error::Parameter(format!("alphabet size must be at least 2, got {q}")));
        }
        if q > Spin::MAX as usize + 1 {
            return Err(Error::Parameter(format!("alphabet size {q} is too large")));
        }
        if pair.len() != q || pair.iter().any(|row| row.len() != q) {
            return Err(Error::Parameter("pair potential must be a q×q matrix".into()));
        }
        if site.len() != q {
            return Err(Error::Parameter("site potential must have q entries".into()));
        }
        if site.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("site potential entries must be finite".into()));
        }
        for s in 0..q {
            for t in 0..q {
                if let Coupling::Finite(x) = pair[s][t] {
                    if !x.is_finite() {
                        return Err(Error::Parameter("finite couplings must be finite".into()));
                    }
                }
                if pair[s][t] != pair[t][s] {
                    return Err(Error::Parameter(format!("pair potential is not symmetric at ({s},{t})")));
                }
            }
        }
        if pair.iter().flatten().all(Coupling::is_forbidden) {
            return Err(Error::Parameter("every spin pair is forbidden".into()));
        }
        Ok(SpinModel { q, pair, site, labels: (0..q).map(|s| s as f64).collect(), kind: ModelKind::Custom })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.q {
            return Err(Error::Parameter("labels must have q entries".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Ising model with spins `-1` (symbol 0) and `+1` (symbol 1):
    /// `U(s,s') = β s s'`, `W(s) = β h s`.
    pub fn ising(beta: f64, h: f64) -> Self {
        let spin = [-1.0, 1.0];
        let pair = (0..2)
            .map(|a| (0..2).map(|b| Coupling::Finite(beta * spin[a] * spin[b])).collect())
            .collect();
        let site = spin.iter().map(|s| beta * h * s).collect();
        let mut m = SpinModel::new(2, pair, site).expect("ising parameters are valid");
        m.labels = spin.to_vec();
        m.kind = ModelKind::Ising;
        m
    }

    /// Potts model: `U(s,s') = β·1{s=s'}`, `W(s) = β h_s`.
    pub fn potts(q: usize, beta: f64, h: &[f64]) -> Result<Self> {
        if h.len() != q {
            return Err(Error::Parameter("field vector must have q entries".into()));
        }
        let pair = (0..q)
            .map(|a| (0..q).map(|b| Coupling::Finite(if a == b { beta } else { 0.0 })).collect())
            .collect();
        let site = h.iter().map(|x| beta * x).collect();
        let mut m = SpinModel::new(q, pair, site)?;
        m.kind = ModelKind::Potts;
        Ok(m)
    }

    /// Hard-core gas: symbols `0` (empty) and `1` (occupied), `U(1,1) = -∞`, `W(s) = s log λ`.
    pub fn hardcore(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("fugacity must be positive, got {lambda}")));
        }
        let f = Coupling::Finite(0.0);
        let pair = vec![vec![f, f], vec![f, Coupling::Forbidden]];
        let mut m = SpinModel::new(2, pair, vec![0.0, lambda.ln()])?;
        m.kind = ModelKind::HardCore;
        Ok(m)
    }

    /// Uniform proper `q`-colorings: `U(s,s) = -∞`, all other potentials zero.
    ///
    /// Permissivity on `Z^d` is only guaranteed for `q ≥ 2d+1`; a warning is
    /// logged below that threshold.
    pub fn colorings(q: usize, dim: usize) -> Result<Self> {
        let pair = (0..q)
            .map(|a| (0..q).map(|b| if a == b { Coupling::Forbidden } else { Coupling::Finite(0.0) }).collect())
            .collect();
        let mut m = SpinModel::new(q, pair, vec![0.0; q])?;
        m.kind = ModelKind::Colorings;
        if q < 2 * dim + 1 {
            log::warn!("{q}-colorings in dimension {dim} are not guaranteed to be permissive (need q ≥ {})", 2 * dim + 1);
        }
        Ok(m)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn coupling(&self, s: Spin, t: Spin) -> Coupling {
        self.pair[s as usize][t as usize]
    }

    pub fn site_potential(&self, s: Spin) -> f64 {
        self.site[s as usize]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn has_hard_constraints(&self) -> bool {
        self.pair.iter().flatten().any(Coupling::is_forbidden)
    }

    /// Stable short hash of the model parameters.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// How sites outside the explicit assignment are treated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fill {
    /// Unlisted exterior sites carry no spin and do not interact.
    Free,
    /// Unlisted exterior sites carry this spin.
    Spin(Spin),
    /// Every exterior neighbour must be listed.
    Strict,
}

/// Spins on (a superset of) the exterior boundary of a region. Sites that
/// are not neighbours of the region are ignored, so one condition can serve
/// nested regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    fill: Fill,
    #[serde(default)]
    sites: BTreeMap<String, Spin>,
}

fn point_key(p: &[i64]) -> String {
    p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

impl BoundaryCondition {
    pub fn constant(s: Spin) -> Self {
        BoundaryCondition { fill: Fill::Spin(s), sites: BTreeMap::new() }
    }

    pub fn free() -> Self {
        BoundaryCondition { fill: Fill::Free, sites: BTreeMap::new() }
    }

    pub fn explicit<I: IntoIterator<Item = (Point, Spin)>>(assignment: I) -> Self {
        let sites = assignment.into_iter().map(|(p, s)| (point_key(&p), s)).collect();
        BoundaryCondition { fill: Fill::Strict, sites }
    }

    /// Returns a copy with `p` set to `s`.
    pub fn with(&self, p: &[i64], s: Spin) -> Self {
        let mut out = self.clone();
        out.sites.insert(point_key(p), s);
        out
    }

    pub fn fill(&self) -> &Fill {
        &self.fill
    }

    /// Spin at an exterior site; `Ok(None)` means no interaction (free fill).
    pub fn spin_at(&self, p: &[i64]) -> Result<Option<Spin>> {
        if let Some(&s) = self.sites.get(&point_key(p)) {
            return Ok(Some(s));
        }
        match self.fill {
            Fill::Free => Ok(None),
            Fill::Spin(s) => Ok(Some(s)),
            Fill::Strict => Err(Error::IncompleteConfiguration(format!(
                "boundary condition has no spin at {p:?}"
            ))),
        }
    }

    /// Stable short hash of the condition.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("boundary serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Precomputed neighbourhood structure of a region under a boundary condition:
/// interior edges and, per site, the spins of its exterior neighbours.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub(crate) q: usize,
    pub(crate) edges: Vec<(usize, usize)>,
    /// For each site, the in-region neighbours (both directions).
    pub(crate) inner: Vec<Vec<usize>>,
    /// For each site, the spins of its exterior neighbours (free sites omitted).
    pub(crate) outer: Vec<Vec<Spin>>,
    /// `log_pair[s*q+t] = U(s,t)` or `-∞`.
    pub(crate) log_pair: Vec<f64>,
    pub(crate) site: Vec<f64>,
}

impl Interaction {
    pub fn new(model: &SpinModel, region: &Region, tau: &BoundaryCondition) -> Result<Self> {
        let q = model.q();
        let n = region.len();
        let mut inner = vec![Vec::new(); n];
        let mut outer = vec![Vec::new(); n];
        for (i, p) in region.iter().enumerate() {
            for y in neighbors(p) {
                match region.index_of(&y) {
                    Some(j) => inner[i].push(j),
                    None => {
                        if let Some(s) = tau.spin_at(&y)? {
                            if s as usize >= q {
                                return Err(Error::Parameter(format!("boundary spin {s} outside alphabet")));
                            }
                            outer[i].push(s);
                        }
                    }
                }
            }
        }
        let log_pair = (0..q * q)
            .map(|st| match model.pair[st / q][st % q] {
                Coupling::Finite(u) => u,
                Coupling::Forbidden => f64::NEG_INFINITY,
            })
            .collect();
        Ok(Interaction { q, edges: region.edges(), inner, outer, log_pair, site: model.site.clone() })
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    /// `-H(σ)` for a full configuration (`-∞` if forbidden).
    pub fn log_weight(&self, sigma: &[Spin]) -> f64 {
        let q = self.q;
        let mut acc = 0.0;
        for &(i, j) in &self.edges {
            acc += self.log_pair[sigma[i] as usize * q + sigma[j] as usize];
        }
        for (i, &s) in sigma.iter().enumerate() {
            let s = s as usize;
            acc += self.site[s];
            for &t in &self.outer[i] {
                acc += self.log_pair[s * q + t as usize];
            }
        }
        acc
    }

    /// Site term of `-H` for spin `s` at site `i`, including exterior neighbours.
    pub(crate) fn site_log_weight(&self, i: usize, s: Spin) -> f64 {
        let q = self.q;
        let s = s as usize;
        let mut acc = self.site[s];
        for &t in &self.outer[i] {
            acc += self.log_pair[s * q + t as usize];
        }
        acc
    }

    pub(crate) fn pair_log_weight(&self, s: Spin, t: Spin) -> f64 {
        self.log_pair[s as usize * self.q + t as usize]
    }
}

/// Hamiltonian of `σ` (indexed by canonical vertex order of `region`).
pub fn hamiltonian(model: &SpinModel, region: &Region, tau: &BoundaryCondition, sigma: &[Spin]) -> Result<Energy> {
    if sigma.len() != region.len() {
        return Err(Error::IncompleteConfiguration(format!(
            "configuration has {} spins for a region of {} sites",
            sigma.len(),
            region.len()
        )));
    }
    if let Some(&s) = sigma.iter().find(|&&s| s as usize >= model.q()) {
        return Err(Error::Parameter(format!("spin {s} outside alphabet")));
    }
    let lw = Interaction::new(model, region, tau)?.log_weight(sigma);
    if lw == f64::NEG_INFINITY {
        Ok(Energy::Infinite)
    } else {
        Ok(Energy::Finite(-lw))
    }
}

/// Decodes a mixed-radix configuration index (least-significant digit first).
pub fn decode(mut index: usize, q: usize, n: usize, out: &mut [Spin]) {
    for slot in out.iter_mut().take(n) {
        *slot = (index % q) as Spin;
        index /= q;
    }
}

pub fn encode(sigma: &[Spin], q: usize) -> usize {
    sigma.iter().rev().fold(0, |acc, &s| acc * q + s as usize)
}

/// Exhaustive permissivity check: every assignment on `∂Λ` admits a
/// configuration of finite energy.
pub fn check_permissive(model: &SpinModel, region: &Region, cap: u128) -> Result<bool> {
    let boundary = region.boundary();
    let q = model.q();
    check_cap(q, boundary.len() + region.len(), cap)?;
    let n_b = check_cap(q, boundary.len(), cap)?;
    let n_in = check_cap(q, region.len(), cap)?;
    let mut tau_spins = vec![0 as Spin; boundary.len()];
    let mut sigma = vec![0 as Spin; region.len()];
    for b in 0..n_b {
        decode(b, q, boundary.len(), &mut tau_spins);
        let tau = BoundaryCondition::explicit(boundary.iter().cloned().zip(tau_spins.iter().copied()));
        let inter = Interaction::new(model, region, &tau)?;
        let ok = (0..n_in).any(|c| {
            decode(c, q, region.len(), &mut sigma);
            inter.log_weight(&sigma) > f64::NEG_INFINITY
        });
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether the single-site heat-bath chain on `Λ` with boundary `τ` connects
/// all configurations of positive weight (exhaustive search).
pub fn check_irreducible(model: &SpinModel, region: &Region, tau: &BoundaryCondition, cap: u128) -> Result<bool> {
    let q = model.q();
    let n = region.len();
    let total = check_cap(q, n, cap)?;
    let inter = Interaction::new(model, region, tau)?;
    let mut sigma = vec![0 as Spin; n];
    let allowed: Vec<bool> = (0..total)
        .map(|c| {
            decode(c, q, n, &mut sigma);
            inter.log_weight(&sigma) > f64::NEG_INFINITY
        })
        .collect();
    let Some(start) = allowed.iter().position(|&a| a) else {
        return Err(Error::NonPermissive("no configuration has positive weight".into()));
    };
    let mut seen = vec![false; total];
    seen[start] = true;
    let mut stack = vec![start];
    let mut reached = 1;
    while let Some(c) = stack.pop() {
        let mut stride = 1;
        for _ in 0..n {
            let digit = (c / stride) % q;
            for t in 0..q {
                if t != digit {
                    let next = c - digit * stride + t * stride;
                    if allowed[next] && !seen[next] {
                        seen[next] = true;
                        reached += 1;
                        stack.push(next);
                    }
                }
            }
            stride *= q;
        }
    }
    Ok(reached == allowed.iter().filter(|&&a| a).count())
}
