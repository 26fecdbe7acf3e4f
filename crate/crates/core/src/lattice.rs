//! Finite regions of the integer lattice and the geometric constructions
//! built on them: exterior boundaries, parity classes, scale classes,
//! fat sets and the nested two-block decomposition used by the recursion.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A lattice point. All points of a region have the same length.
pub type Point = Vec<i64>;

/// Nearest neighbours of `p` in `Z^d`, in a fixed order (axis by axis, `-1` before `+1`).
pub fn neighbors(p: &[i64]) -> impl Iterator<Item = Point> + '_ {
    (0..p.len()).flat_map(move |axis| {
        [-1i64, 1].into_iter().map(move |step| {
            let mut q = p.to_vec();
            q[axis] += step;
            q
        })
    })
}

pub fn l1_distance(x: &[i64], y: &[i64]) -> u64 {
    x.iter().zip(y).map(|(a, b)| a.abs_diff(*b)).sum()
}

/// Coordinate-sum parity.
pub fn is_even(p: &[i64]) -> bool {
    p.iter().sum::<i64>().rem_euclid(2) == 0
}

/// A finite subset of `Z^d`, stored deduplicated in lexicographic order.
///
/// The position of a point in this order is the digit position used by the
/// configuration index of every table built on the region.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region {
    dim: usize,
    points: Vec<Point>,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Region(d={}, {:?})", self.dim, self.points)
    }
}

impl Region {
    pub fn new<I: IntoIterator<Item = Point>>(dim: usize, points: I) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("lattice dimension must be positive".into()));
        }
        let mut set = BTreeSet::new();
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            set.insert(p);
        }
        Ok(Region { dim, points: set.into_iter().collect() })
    }

    pub fn empty(dim: usize) -> Self {
        Region { dim: dim.max(1), points: Vec::new() }
    }

    /// `{0, 1, ..., n-1}` in one dimension.
    pub fn chain(n: usize) -> Self {
        Region { dim: 1, points: (0..n as i64).map(|x| vec![x]).collect() }
    }

    /// `{a, ..., b}` in one dimension (empty when `b < a`).
    pub fn interval(a: i64, b: i64) -> Self {
        Region { dim: 1, points: (a..=b).map(|x| vec![x]).collect() }
    }

    /// All integer points of the box `lo ≤ x ≤ hi` (inclusive, coordinatewise).
    pub fn cuboid(lo: &[i64], hi: &[i64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        let dim = lo.len();
        if dim == 0 {
            return Err(Error::Parameter("lattice dimension must be positive".into()));
        }
        let mut points = Vec::new();
        if lo.iter().zip(hi).all(|(a, b)| a <= b) {
            let mut cur = lo.to_vec();
            loop {
                points.push(cur.clone());
                // odometer, last axis fastest keeps lexicographic order
                let mut axis = dim;
                loop {
                    if axis == 0 {
                        return Region::new(dim, points);
                    }
                    axis -= 1;
                    if cur[axis] < hi[axis] {
                        cur[axis] += 1;
                        break;
                    }
                    cur[axis] = lo[axis];
                }
            }
        }
        Region::new(dim, points)
    }

    /// Rectangle with `sides[i]` points along axis `i`, anchored at the origin.
    pub fn rectangle(sides: &[usize]) -> Result<Self> {
        let lo = vec![0; sides.len()];
        let hi: Vec<i64> = sides.iter().map(|&s| s as i64 - 1).collect();
        Region::cuboid(&lo, &hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        self.index_of(p).is_some()
    }

    /// Position of `p` in canonical order.
    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        self.points.binary_search_by(|q| q.as_slice().cmp(p)).ok()
    }

    /// Positions of the points of `sub` inside `self`; errors if `sub ⊄ self`.
    pub fn positions_of(&self, sub: &Region) -> Result<Vec<usize>> {
        sub.points
            .iter()
            .map(|p| {
                self.index_of(p)
                    .ok_or_else(|| Error::Precondition(format!("point {p:?} is not in the region")))
            })
            .collect()
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.points.iter().all(|p| other.contains(p))
    }

    fn check_dim(&self, other: &Region) -> Result<()> {
        if self.dim != other.dim && !self.is_empty() && !other.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok(())
    }

    fn from_sorted(dim: usize, points: Vec<Point>) -> Region {
        Region { dim, points }
    }

    pub fn union(&self, other: &Region) -> Region {
        let set: BTreeSet<Point> = self.points.iter().chain(other.points.iter()).cloned().collect();
        Region::from_sorted(self.dim.max(other.dim), set.into_iter().collect())
    }

    pub fn intersection(&self, other: &Region) -> Region {
        let pts = self.points.iter().filter(|p| other.contains(p)).cloned().collect();
        Region::from_sorted(self.dim, pts)
    }

    pub fn difference(&self, other: &Region) -> Region {
        let pts = self.points.iter().filter(|p| !other.contains(p)).cloned().collect();
        Region::from_sorted(self.dim, pts)
    }

    pub fn filter<F: FnMut(&Point) -> bool>(&self, mut keep: F) -> Region {
        let pts = self.points.iter().filter(|p| keep(p)).cloned().collect();
        Region::from_sorted(self.dim, pts)
    }

    /// Sub-region of the points whose canonical position passes `keep`.
    pub fn filter_index<F: FnMut(usize) -> bool>(&self, mut keep: F) -> Region {
        let pts = self.points.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, p)| p.clone()).collect();
        Region::from_sorted(self.dim, pts)
    }

    pub fn translate(&self, offset: &[i64]) -> Result<Region> {
        if offset.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: offset.len() });
        }
        let pts = self
            .points
            .iter()
            .map(|p| p.iter().zip(offset).map(|(a, b)| a + b).collect())
            .collect();
        Ok(Region::from_sorted(self.dim, pts))
    }

    /// Exterior boundary: points outside at graph distance one.
    pub fn boundary(&self) -> Region {
        let mut set = BTreeSet::new();
        for p in &self.points {
            for y in neighbors(p) {
                if !self.contains(&y) {
                    set.insert(y);
                }
            }
        }
        Region::from_sorted(self.dim, set.into_iter().collect())
    }

    /// `(even, odd)` sites by coordinate-sum parity.
    pub fn even_odd_split(&self) -> (Region, Region) {
        let (even, odd): (Vec<Point>, Vec<Point>) =
            self.points.iter().cloned().partition(|p| is_even(p));
        (Region::from_sorted(self.dim, even), Region::from_sorted(self.dim, odd))
    }

    pub fn distance(&self, other: &Region) -> Result<u64> {
        graph_distance(self, other)
    }

    /// Coordinatewise minimum and maximum, `None` for the empty region.
    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        let first = self.points.first()?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in &self.points {
            for i in 0..self.dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Some((lo, hi))
    }

    /// Side lengths `max_i - min_i` of the bounding box (zero for a single point).
    pub fn extents(&self) -> Vec<i64> {
        match self.bounding_box() {
            Some((lo, hi)) => hi.iter().zip(&lo).map(|(h, l)| h - l).collect(),
            None => vec![0; self.dim],
        }
    }

    /// Nearest-neighbour edges `(i, j)` with `i < j`, as positions.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            for y in neighbors(p) {
                if let Some(j) = self.index_of(&y) {
                    if i < j {
                        out.push((i, j));
                    }
                }
            }
        }
        out
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.points.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Region {
    /// An empty array deserializes to the empty one-dimensional region.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let points: Vec<Point> = Vec::deserialize(d)?;
        let dim = points.first().map_or(1, |p| p.len());
        Region::new(dim, points).map_err(serde::de::Error::custom)
    }
}

/// Minimum L1 distance between the two regions.
pub fn graph_distance(x: &Region, y: &Region) -> Result<u64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::DistanceUndefined);
    }
    x.check_dim(y)?;
    let mut best = u64::MAX;
    for p in x.iter() {
        for q in y.iter() {
            best = best.min(l1_distance(p, q));
            if best == 0 {
                return Ok(0);
            }
        }
    }
    Ok(best)
}

/// `ℓ_k = (3/2)^{k/d}`.
pub fn ell(k: i64, d: usize) -> f64 {
    1.5f64.powf(k as f64 / d as f64)
}

const CONTAINMENT_SLACK: f64 = 1e-12;

fn le_real(x: f64, bound: f64) -> bool {
    x <= bound + CONTAINMENT_SLACK * bound.abs().max(1.0)
}

/// The scale class `F_k`: rectangles `[0,ℓ_{k+1}] × ... × [0,ℓ_{k+d}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleClass {
    pub k: i64,
    pub dim: usize,
}

impl ScaleClass {
    pub fn new(k: i64, dim: usize) -> Self {
        ScaleClass { k, dim }
    }

    /// `ℓ_{k+1}, ..., ℓ_{k+d}`, increasing.
    pub fn lengths(&self) -> Vec<f64> {
        (1..=self.dim as i64).map(|j| ell(self.k + j, self.dim)).collect()
    }

    pub fn contains(&self, v: &Region) -> bool {
        in_scale_class(v, self.k)
    }
}

/// Whether `V ∈ F_k`, up to translation and permutation of coordinates.
///
/// Sorting the bounding-box sides and the rectangle sides ascending gives the
/// best permutation, so a single comparison decides membership.
pub fn in_scale_class(v: &Region, k: i64) -> bool {
    if v.is_empty() {
        return true;
    }
    let mut sides: Vec<i64> = v.extents();
    sides.sort_unstable();
    let lengths = ScaleClass::new(k, v.dim()).lengths();
    sides.iter().zip(&lengths).all(|(&s, &l)| le_real(s as f64, l))
}

/// Smallest `k ≥ 0` with `V ∈ F_k`, searching up to `k_max`.
pub fn smallest_scale_class(v: &Region, k_max: i64) -> Option<i64> {
    (0..=k_max).find(|&k| in_scale_class(v, k))
}

/// Union of the cubes `Q_L(y) = L·y + [0, L-1]^d` over `y ∈ base`.
pub fn fat_region(side: usize, base: &Region) -> Result<Region> {
    if side == 0 {
        return Err(Error::Parameter("cube side must be at least 1".into()));
    }
    let l = side as i64;
    let d = base.dim();
    let mut set = BTreeSet::new();
    for y in base.iter() {
        let lo: Vec<i64> = y.iter().map(|c| c * l).collect();
        let hi: Vec<i64> = lo.iter().map(|c| c + l - 1).collect();
        for p in Region::cuboid(&lo, &hi)?.points {
            set.insert(p);
        }
    }
    Region::new(d, set)
}

/// If `V ∈ F^(L)`, returns the base `Λ'` with `V = ∪_{y∈Λ'} Q_L(y)`.
pub fn fat_base(v: &Region, side: usize) -> Result<Option<Region>> {
    if side == 0 {
        return Err(Error::Parameter("cube side must be at least 1".into()));
    }
    let l = side as i64;
    let base = Region::new(
        v.dim(),
        v.iter().map(|p| p.iter().map(|c| c.div_euclid(l)).collect::<Point>()),
    )?;
    if fat_region(side, &base)? == *v {
        Ok(Some(base))
    } else {
        Ok(None)
    }
}

/// Sets of the two-block decomposition of a region at scale `k`.
///
/// `a[i]` is `A_i` for `i = 1..=r+1` and `gamma[i]` is `Γ_i` for `i = 2..=r+1`;
/// lower indices hold empty padding so indices match the construction.
#[derive(Clone, Debug)]
pub struct CesiDecomposition {
    pub v: Region,
    pub k: i64,
    pub r: usize,
    pub b: Region,
    pub a: Vec<Region>,
    pub gamma: Vec<Region>,
}

impl CesiDecomposition {
    pub fn a(&self, i: usize) -> &Region {
        &self.a[i]
    }

    pub fn gamma(&self, i: usize) -> &Region {
        &self.gamma[i]
    }
}

/// Builds `B = Q ∩ V`, the interleaved parity sets `A_i` and the layers
/// `Γ_i = A_i \ A_{i-1}` for a region placed inside `[0,ℓ_{k+1}]×…×[0,ℓ_{k+d}]`.
pub fn cesi_decomposition(v: &Region, k: i64) -> Result<CesiDecomposition> {
    if v.is_empty() {
        return Err(Error::Precondition("region must be nonempty".into()));
    }
    let d = v.dim();
    let lengths = ScaleClass::new(k, d).lengths();
    for p in v.iter() {
        for (axis, (&c, &l)) in p.iter().zip(&lengths).enumerate() {
            if c < 0 || !le_real(c as f64, l) {
                return Err(Error::Precondition(format!(
                    "point {p:?} lies outside [0, {l:.6}] along axis {axis}; \
                     V must be contained in the scale-{k} rectangle"
                )));
            }
        }
    }
    if in_scale_class(v, k - 1) {
        return Err(Error::Precondition(format!(
            "V already belongs to the scale class {}",
            k - 1
        )));
    }
    let top = lengths[d - 1];
    let r = (top / 6.0).floor() as usize;
    let last = |p: &Point| p[d - 1] as f64;

    let b = v.filter(|p| {
        let y = last(p);
        y >= top / 3.0 - CONTAINMENT_SLACK * top && le_real(y, top)
    });
    let in_r = |p: &Point, i: usize| le_real(last(p), top / 2.0 + i as f64);

    let mut a = vec![Region::empty(d)];
    for i in 1..=r + 1 {
        let ai = v.filter(|p| {
            let even = is_even(p);
            // even i: even sites up to R_i and odd sites up to R_{i-1}; odd i swaps parities
            let current_parity = if i % 2 == 0 { even } else { !even };
            if current_parity {
                in_r(p, i)
            } else {
                in_r(p, i - 1)
            }
        });
        a.push(ai);
    }
    let mut gamma = vec![Region::empty(d), Region::empty(d)];
    for i in 2..=r + 1 {
        gamma.push(a[i].difference(&a[i - 1]));
    }
    Ok(CesiDecomposition { v: v.clone(), k, r, b, a, gamma })
}

/// Outcome of the four structural checks for one index `i`.
#[derive(Clone, Debug, Serialize)]
pub struct GeoCheck {
    pub i: usize,
    pub cover: bool,
    pub separation_distance: bool,
    pub scale: bool,
    pub layer: bool,
    pub distance: Option<u64>,
}

impl GeoCheck {
    pub fn all(&self) -> bool {
        self.cover && self.separation_distance && self.scale && self.layer
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeoReport {
    pub k: i64,
    pub r: usize,
    pub checks: Vec<GeoCheck>,
}

impl GeoReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GeoCheck::all)
    }

    /// `[cover, distance, scale, layer]`, each true iff it holds for every `i`.
    pub fn properties(&self) -> [bool; 4] {
        [
            self.checks.iter().all(|c| c.cover),
            self.checks.iter().all(|c| c.separation_distance),
            self.checks.iter().all(|c| c.scale),
            self.checks.iter().all(|c| c.layer),
        ]
    }
}

/// Checks every path inside `v` from `from` to `to` crosses `cut`, by BFS in `v \ cut`.
pub fn separates(v: &Region, cut: &Region, from: &Region, to: &Region) -> bool {
    let allowed = v.difference(cut);
    let mut seen = vec![false; allowed.len()];
    let mut queue = VecDeque::new();
    for p in from.iter() {
        if let Some(i) = allowed.index_of(p) {
            if !seen[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let p = &allowed.points()[i];
        if to.contains(p) {
            return false;
        }
        for y in neighbors(p) {
            if let Some(j) = allowed.index_of(&y) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    true
}

/// Verifies the structural properties of a decomposition for `i = 1..=r`.
pub fn verify_geo(dec: &CesiDecomposition) -> GeoReport {
    let v = &dec.v;
    let d = v.dim();
    let (even, odd) = v.even_odd_split();
    let ell_k = ell(dec.k, d);
    let outside_b = v.difference(&dec.b);
    let mut checks = Vec::new();
    for i in 1..=dec.r {
        let ai = &dec.a[i];
        let outside_a = v.difference(ai);
        let cover = ai.union(&dec.b) == *v && !outside_b.is_empty() && !outside_a.is_empty();
        let distance = graph_distance(&outside_b, &outside_a).ok();
        let separation_distance = distance.is_some_and(|dist| dist as f64 >= ell_k / 4.0 - 1e-12);
        let scale = in_scale_class(&dec.b, dec.k - 1) && in_scale_class(ai, dec.k - 1);
        let layer = match (dec.gamma.get(i + 1), dec.a.get(i + 1)) {
            (Some(g), Some(next)) => {
                let parity_ok = if i % 2 == 1 { g.is_subset(&even) } else { g.is_subset(&odd) };
                parity_ok && separates(v, g, ai, &v.difference(next))
            }
            _ => false,
        };
        checks.push(GeoCheck { i, cover, separation_distance, scale, layer, distance });
    }
    GeoReport { k: dec.k, r: dec.r, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r2(points: &[[i64; 2]]) -> Region {
        Region::new(2, points.iter().map(|p| p.to_vec())).unwrap()
    }

    #[test]
    fn boundary_of_single_point() {
        let b = r2(&[[0, 0]]).boundary();
        assert_eq!(b, r2(&[[-1, 0], [1, 0], [0, -1], [0, 1]]));
        assert!(Region::empty(2).boundary().is_empty());
        assert_eq!(Region::chain(2).boundary(), Region::new(1, vec![vec![-1], vec![2]]).unwrap());
    }

    #[test]
    fn parity_split() {
        let (e, o) = r2(&[[0, 0], [1, 0], [0, 1]]).even_odd_split();
        assert_eq!(e, r2(&[[0, 0]]));
        assert_eq!(o, r2(&[[1, 0], [0, 1]]));
        let (e, o) = r2(&[[2, 3]]).even_odd_split();
        assert!(e.is_empty());
        assert_eq!(o.len(), 1);
        let (e, o) = Region::empty(2).even_odd_split();
        assert!(e.is_empty() && o.is_empty());
    }

    #[test]
    fn distances() {
        assert_eq!(graph_distance(&r2(&[[0, 0]]), &r2(&[[3, 4]])).unwrap(), 7);
        let x = r2(&[[1, 1], [2, 2]]);
        assert_eq!(graph_distance(&x, &x).unwrap(), 0);
        assert_eq!(graph_distance(&Region::interval(0, 0), &Region::interval(5, 5)).unwrap(), 5);
        assert!(matches!(
            graph_distance(&Region::empty(1), &Region::chain(1)),
            Err(Error::DistanceUndefined)
        ));
    }

    #[test]
    fn scale_class_in_one_dimension() {
        assert!(in_scale_class(&r2(&[[4, 9]]), 0));
        for k in 0..12 {
            for n in 0..30 {
                let v = Region::interval(0, n);
                assert_eq!(in_scale_class(&v, k), n as f64 <= 1.5f64.powi(k as i32 + 1), "k={k} n={n}");
            }
        }
    }

    #[test]
    fn fat_regions() {
        let base = r2(&[[0, 0], [3, -2]]);
        assert_eq!(fat_region(1, &base).unwrap(), base);
        assert_eq!(fat_region(2, &Region::chain(1)).unwrap(), Region::chain(2));
        let v = fat_region(3, &r2(&[[0, 0], [1, 0]])).unwrap();
        assert_eq!(v, Region::rectangle(&[6, 3]).unwrap());
        assert_eq!(fat_base(&v, 3).unwrap(), Some(r2(&[[0, 0], [1, 0]])));
        assert_eq!(fat_base(&Region::rectangle(&[5, 3]).unwrap(), 3).unwrap(), None);
    }

    #[test]
    fn decomposition_rejects_bad_input() {
        // far outside the scale-8 rectangle
        let v = Region::rectangle(&[20, 20]).unwrap();
        assert!(matches!(cesi_decomposition(&v, 8), Err(Error::Precondition(_))));
        // already in the previous class
        let v = Region::rectangle(&[2, 2]).unwrap();
        assert!(matches!(cesi_decomposition(&v, 8), Err(Error::Precondition(_))));
    }

    #[test]
    fn shrunk_b_breaks_cover() {
        let v = Region::rectangle(&[7, 8]).unwrap();
        let mut dec = cesi_decomposition(&v, 8).unwrap();
        assert!(dec.r >= 1);
        assert!(verify_geo(&dec).passed());
        let drop = dec.b.points()[dec.b.len() - 1].clone();
        dec.b = dec.b.filter(|p| *p != drop);
        let report = verify_geo(&dec);
        assert!(!report.properties()[0]);
    }

    #[test]
    fn region_json_is_sorted_array() {
        let v = r2(&[[1, 0], [0, 2], [0, 1]]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[[0,1],[0,2],[1,0]]");
        let back: Region = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
