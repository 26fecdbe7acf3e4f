use std::collections::BTreeSet;

use entrofact::lattice::{
    cesi_decomposition, ell, fat_region, graph_distance, in_scale_class, is_even, neighbors, separates, smallest_scale_class,
    verify_geo, Point, Region, ScaleClass,
};
use proptest::prelude::*;

fn region_2d(points: &[(i64, i64)]) -> Region {
    Region::new(2, points.iter().map(|&(x, y)| vec![x, y])).unwrap()
}

/// Membership in `F_k` by trying every assignment of the sides to the axes.
fn in_class_by_permutation(sides: &[i64], k: i64) -> bool {
    let d = sides.len();
    let lengths: Vec<f64> = (1..=d as i64).map(|j| 1.5f64.powf((k + j) as f64 / d as f64)).collect();
    let mut perm: Vec<usize> = (0..d).collect();
    loop {
        if perm.iter().enumerate().all(|(axis, &j)| sides[axis] as f64 <= lengths[j] * (1.0 + 1e-12)) {
            return true;
        }
        // next lexicographic permutation
        let Some(i) = (0..d.saturating_sub(1)).rev().find(|&i| perm[i] < perm[i + 1]) else { return false };
        let j = (i + 1..d).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
}

#[test]
fn scale_class_matches_permutation_search() {
    for w in 0..12 {
        for h in 0..12 {
            let v = Region::cuboid(&[0, 0], &[w, h]).unwrap();
            let brute = (0..=20).find(|&k| in_class_by_permutation(&[w, h], k));
            assert_eq!(smallest_scale_class(&v, 20), brute, "{w}x{h}");
        }
    }
    for sides in [[1, 2, 3], [4, 0, 2], [5, 5, 1]] {
        let v = Region::cuboid(&[0, 0, 0], &sides).unwrap();
        let brute = (0..=20).find(|&k| in_class_by_permutation(&sides, k));
        assert_eq!(smallest_scale_class(&v, 20), brute);
    }
    // bounding box 3x4 (sides 2 and 3 in lattice units)
    let v = Region::rectangle(&[3, 4]).unwrap();
    assert_eq!(smallest_scale_class(&v, 20), (0..=20).find(|&k| in_class_by_permutation(&[2, 3], k)));
}

#[test]
fn single_points_are_in_every_class() {
    for k in 0..10 {
        assert!(in_scale_class(&region_2d(&[(7, -3)]), k));
    }
}

#[test]
fn fat_union_of_two_cubes() {
    let v = fat_region(3, &region_2d(&[(0, 0), (1, 0)])).unwrap();
    assert_eq!(v.len(), 18);
    assert_eq!(v.extents(), vec![5, 2]);
    let direct: BTreeSet<Point> = (0..6).flat_map(|x| (0..3).map(move |y| vec![x, y])).collect();
    assert_eq!(v.points().iter().cloned().collect::<BTreeSet<_>>(), direct);
    assert_eq!(fat_region(2, &Region::chain(1)).unwrap(), Region::chain(2));
}

/// The decomposition sets written out from the rectangle definitions,
/// checking every coordinate against its interval.
fn direct_decomposition(v: &Region, k: i64) -> (Region, Vec<Region>) {
    let d = v.dim();
    let l: Vec<f64> = (1..=d as i64).map(|j| ell(k + j, d)).collect();
    let top = l[d - 1];
    let inside = |p: &Point, hi_last: f64, lo_last: f64| {
        p.iter().enumerate().all(|(axis, &c)| {
            let c = c as f64;
            if axis + 1 == d {
                c >= lo_last - 1e-9 && c <= hi_last + 1e-9
            } else {
                c >= 0.0 && c <= l[axis] + 1e-9
            }
        })
    };
    let q = v.filter(|p| inside(p, top, top / 3.0));
    let r_set = |i: usize| v.filter(|p| inside(p, top / 2.0 + i as f64, 0.0));
    let r = (top / 6.0).floor() as usize;
    let mut a = vec![Region::empty(d)];
    for i in 1..=r + 1 {
        let (ri, rprev) = (r_set(i), r_set(i - 1));
        let (e_i, o_i) = ri.even_odd_split();
        let (e_p, o_p) = rprev.even_odd_split();
        a.push(if i % 2 == 0 { e_i.union(&o_p) } else { o_i.union(&e_p) });
    }
    (q, a)
}

#[test]
fn decomposition_matches_direct_evaluation() {
    let mut k = 1;
    let mut checked = 0;
    while checked < 2 {
        let lengths = ScaleClass::new(k, 2).lengths();
        if (lengths[1] / 6.0).floor() >= 1.0 {
            let v = Region::cuboid(&[0, 0], &[lengths[0].floor() as i64, lengths[1].floor() as i64]).unwrap();
            let dec = cesi_decomposition(&v, k).unwrap();
            let (b, a) = direct_decomposition(&v, k);
            assert_eq!(dec.b, b, "k={k}");
            assert_eq!(dec.a, a, "k={k}");
            for i in 2..=dec.r + 1 {
                assert_eq!(*dec.gamma(i), a[i].difference(&a[i - 1]));
            }
            let report = verify_geo(&dec);
            assert!(report.passed(), "k={k}: {report:?}");
            for c in &report.checks {
                assert!(c.distance.unwrap() as f64 >= ell(k, 2) / 4.0);
            }
            checked += 1;
        }
        k += 1;
    }
}

/// Whether some simple path in `v` from `from` to `to` avoids `cut`, by
/// enumerating every simple path.
fn path_avoiding(v: &Region, cut: &Region, from: &Region, to: &Region) -> bool {
    fn dfs(v: &Region, cut: &Region, to: &Region, p: &Point, seen: &mut BTreeSet<Point>) -> bool {
        if to.contains(p) {
            return true;
        }
        for y in neighbors(p) {
            if v.contains(&y) && !cut.contains(&y) && !seen.contains(&y) {
                seen.insert(y.clone());
                if dfs(v, cut, to, &y, seen) {
                    return true;
                }
                seen.remove(&y);
            }
        }
        false
    }
    from.iter().filter(|p| !cut.contains(p)).any(|p| {
        let mut seen = BTreeSet::from([p.clone()]);
        dfs(v, cut, to, p, &mut seen)
    })
}

fn small_region_2d() -> impl Strategy<Value = Region> {
    prop::collection::btree_set((0i64..5, 0i64..4), 1..=20).prop_map(|s| region_2d(&s.into_iter().collect::<Vec<_>>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn separation_agrees_with_path_enumeration(v in small_region_2d(), mask in prop::collection::vec(0u8..4, 20)) {
        let pick = |tag: u8| v.filter_index(|i| mask[i % mask.len()] == tag);
        let (cut, from, to) = (pick(0), pick(1), pick(2));
        prop_assert_eq!(separates(&v, &cut, &from, &to), !path_avoiding(&v, &cut, &from, &to));
    }

    #[test]
    fn boundary_is_outside_and_adjacent(v in small_region_2d()) {
        let b = v.boundary();
        for p in b.iter() {
            prop_assert!(!v.contains(p));
            prop_assert!(neighbors(p).any(|y| v.contains(&y)));
        }
        for p in v.iter() {
            for y in neighbors(p) {
                prop_assert!(v.contains(&y) || b.contains(&y));
            }
        }
    }

    #[test]
    fn parity_split_partitions(v in small_region_2d()) {
        let (e, o) = v.even_odd_split();
        prop_assert_eq!(e.union(&o), v.clone());
        prop_assert!(e.intersection(&o).is_empty());
        prop_assert!(e.iter().all(|p| is_even(p)));
        prop_assert!(o.iter().all(|p| !is_even(p)));
        // nearest neighbours have opposite parity, so each class is independent
        prop_assert!(e.iter().all(|p| neighbors(p).all(|y| !e.contains(&y))));
    }

    #[test]
    fn distance_is_a_metric_on_points(a in (0i64..9, 0i64..9), b in (0i64..9, 0i64..9), c in (0i64..9, 0i64..9)) {
        let (x, y, z) = (region_2d(&[a]), region_2d(&[b]), region_2d(&[c]));
        let dxy = x.distance(&y).unwrap();
        prop_assert_eq!(dxy, y.distance(&x).unwrap());
        prop_assert!(dxy <= x.distance(&z).unwrap() + z.distance(&y).unwrap());
        prop_assert_eq!(x.distance(&x).unwrap(), 0);
        prop_assert_eq!(graph_distance(&x, &y).unwrap(), ((a.0 - b.0).abs() + (a.1 - b.1).abs()) as u64);
    }

    #[test]
    fn scale_classes_are_nested(w in 0i64..15, h in 0i64..15, k in 0i64..12) {
        let v = Region::cuboid(&[0, 0], &[w, h]).unwrap();
        if in_scale_class(&v, k) {
            prop_assert!(in_scale_class(&v, k + 1));
        }
        let shifted = v.translate(&[-3, 7]).unwrap();
        prop_assert_eq!(in_scale_class(&shifted, k), in_scale_class(&v, k));
    }
}
