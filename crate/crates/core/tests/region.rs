use std::collections::BTreeSet;

use msk_balance::env::ComState;
use msk_balance::region::{
    alpha_shape, build_br, build_pbr, compare_regions, delaunay, margin_of_stability, point_in_polygon, polygon_area,
    polygons_area, signed_area, BalanceRegion, LipBounds, Trial, DEFAULT_ALPHA,
};
use msk_balance::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type P = [f64; 2];

fn cloud(rng: &mut impl Rng, n: usize) -> Vec<P> {
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

fn cross(o: P, a: P, b: P) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn circle(a: P, b: P, c: P) -> (P, f64) {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    let sq = |p: P| p[0] * p[0] + p[1] * p[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    ([ux, uy], (a[0] - ux).hypot(a[1] - uy))
}

/// Every triple whose circumcircle holds no other point, counter-clockwise with
/// the smallest index first.
fn brute_delaunay(pts: &[P]) -> Vec<([usize; 3], f64)> {
    let n = pts.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if cross(pts[i], pts[j], pts[k]).abs() < 1e-14 {
                    continue;
                }
                let (c, r) = circle(pts[i], pts[j], pts[k]);
                let empty = (0..n)
                    .filter(|&m| m != i && m != j && m != k)
                    .all(|m| (pts[m][0] - c[0]).hypot(pts[m][1] - c[1]) > r * (1.0 + 1e-12));
                if empty {
                    let t = if cross(pts[i], pts[j], pts[k]) > 0.0 { [i, j, k] } else { [i, k, j] };
                    out.push((t, r));
                }
            }
        }
    }
    out.sort_by_key(|x| x.0);
    out
}

fn brute_kept(pts: &[P], alpha: f64) -> Vec<[usize; 3]> {
    brute_delaunay(pts).into_iter().filter(|(_, r)| alpha == 0.0 || *r < 1.0 / alpha).map(|(t, _)| t).collect()
}

/// Andrew's monotone chain; strict hull vertices only.
fn hull(pts: &[P]) -> Vec<P> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut lower: Vec<P> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<P> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn in_triangle(t: [P; 3], p: P) -> bool {
    let d1 = cross(t[0], t[1], p);
    let d2 = cross(t[1], t[2], p);
    let d3 = cross(t[2], t[0], p);
    d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0
}

/// Cell-centre rasterization of a triangle union over the unit square.
fn raster_area(tris: &[[P; 3]], res: usize) -> f64 {
    let h = 1.0 / res as f64;
    let mut hit = vec![false; res * res];
    for t in tris {
        let lo = |d: usize| ((t.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min) / h).floor().max(0.0) as usize).min(res - 1);
        let hi = |d: usize| ((t.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max) / h).ceil() as usize).min(res - 1);
        for j in lo(1)..=hi(1) {
            for i in lo(0)..=hi(0) {
                if !hit[j * res + i] && in_triangle(*t, [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]) {
                    hit[j * res + i] = true;
                }
            }
        }
    }
    hit.iter().filter(|&&b| b).count() as f64 * h * h
}

fn coords(pts: &[P], tris: &[[usize; 3]]) -> Vec<[P; 3]> {
    tris.iter().map(|t| t.map(|i| pts[i])).collect()
}

fn trial(x: f64, v: f64, success: bool) -> Trial {
    Trial { initial: ComState { x, v }, success, trajectory: vec![ComState { x, v }] }
}

const SQUARE: [P; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

#[test]
fn unit_square_cases() {
    let s = alpha_shape(&SQUARE, 1.0).unwrap();
    assert_eq!(s.triangles.len(), 2);
    assert!((s.area() - 1.0).abs() < 1e-15);
    assert_eq!(s.rings.len(), 1);
    assert_eq!(s.rings[0].len(), 4);
    assert!((polygons_area(&s.ring_coords()).unwrap() - 1.0).abs() < 1e-15);

    let e = alpha_shape(&SQUARE, 10.0).unwrap();
    assert!(e.is_empty());
    assert!(e.rings.is_empty());
    assert_eq!(e.area(), 0.0);
    assert!(!e.contains([0.5, 0.5]));
}

#[test]
fn degenerate_inputs_rejected() {
    assert!(matches!(alpha_shape(&[[0.0, 0.0], [1.0, 1.0]], 1.0), Err(Error::Degenerate(_))));
    let line: Vec<P> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
    assert!(matches!(alpha_shape(&line, 1.0), Err(Error::Degenerate(_))));
    assert!(matches!(alpha_shape(&SQUARE, -1.0), Err(Error::Domain(_))));
    assert!(matches!(build_pbr(&[trial(0.0, 0.0, true), trial(1.0, 0.0, true)], 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn duplicate_points_are_harmless() {
    let mut pts = SQUARE.to_vec();
    pts.push([1.0, 1.0]);
    pts.push([0.0, 0.0]);
    let s = alpha_shape(&pts, 1.0).unwrap();
    assert!((s.area() - 1.0).abs() < 1e-15);
    assert!(s.triangles.iter().flatten().all(|&i| i < 4));
}

#[test]
fn hundred_points_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts = cloud(&mut rng, 100);
    let s = alpha_shape(&pts, 3.0).unwrap();
    assert_eq!(s.triangles, brute_kept(&pts, 3.0));
}

#[test]
fn random_clouds_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.random_range(3..=60);
        let pts = cloud(&mut rng, n);
        let alpha = [0.0, 1.0, 2.0, 3.0, 5.0, 8.0][case % 6];

        let all = brute_kept(&pts, 0.0);
        assert_eq!(delaunay(&pts).unwrap(), all, "case {case}: Delaunay");
        let s = alpha_shape(&pts, alpha).unwrap();
        let expect = brute_kept(&pts, alpha);
        assert_eq!(s.triangles, expect, "case {case}: kept set, alpha {alpha}");

        let raster = raster_area(&coords(&pts, &expect), 1000);
        let area = s.area();
        assert!((area - raster).abs() <= 0.01 * area.max(1e-3), "case {case}: area {area} vs raster {raster}");
        let ring_sum: f64 = s.ring_coords().iter().map(|r| signed_area(r)).sum();
        assert!((ring_sum - area).abs() < 1e-12, "case {case}: rings {ring_sum} vs triangles {area}");
        for ring in s.ring_coords() {
            assert!(polygon_area(&ring).is_ok(), "case {case}: ring not simple");
        }

        if alpha == 0.0 {
            let h: BTreeSet<(u64, u64)> = hull(&pts).iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
            let b: BTreeSet<(u64, u64)> =
                s.boundary_points().iter().map(|&i| (pts[i][0].to_bits(), pts[i][1].to_bits())).collect();
            assert_eq!(s.rings.len(), 1);
            assert_eq!(h, b, "case {case}: hull vertices");
            assert!((area - signed_area(&hull(&pts))).abs() < 1e-12);
        }
    }
}

#[test]
fn rings_agree_with_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let pts = cloud(&mut rng, 60);
        let s = alpha_shape(&pts, 4.0).unwrap();
        let rings = s.ring_coords();
        for _ in 0..500 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let parity = rings.iter().filter(|r| point_in_polygon(r, p)).count() % 2 == 1;
            assert_eq!(parity, s.contains(p));
        }
    }
}

#[test]
fn pinched_shapes_keep_simple_rings() {
    // Two triangles sharing one vertex.
    let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.8], [0.0, 1.6], [1.0, 1.6]];
    let s = alpha_shape(&pts, 1.0 / 0.6).unwrap();
    assert_eq!(s.triangles.len(), 2);
    assert_eq!(s.rings.len(), 2);
    assert!(s.rings.iter().all(|r| r.len() == 3));
}

#[test]
fn polygon_area_examples() {
    assert_eq!(polygon_area(&SQUARE).unwrap(), 1.0);
    assert_eq!(polygon_area(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap(), 0.5);
    let mut rev = SQUARE.to_vec();
    rev.reverse();
    assert_eq!(polygon_area(&rev).unwrap(), 1.0);
    let bowtie = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    assert!(matches!(polygon_area(&bowtie), Err(Error::Contract(_))));
}

#[test]
fn point_in_polygon_boundary_is_inside() {
    assert!(point_in_polygon(&SQUARE, [0.5, 0.5]));
    assert!(point_in_polygon(&SQUARE, [1.0, 0.5]));
    assert!(point_in_polygon(&SQUARE, [0.0, 0.0]));
    assert!(!point_in_polygon(&SQUARE, [1.0 + 1e-12, 0.5]));
    let s = alpha_shape(&SQUARE, 1.0).unwrap();
    assert!(s.contains([1.0, 0.5]) && s.contains([0.0, 1.0]) && !s.contains([-1e-12, 0.5]));
}

fn star(rng: &mut impl Rng, n: usize) -> Vec<P> {
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    angles.into_iter().map(|t| {
        let r = rng.random_range(0.3..1.0);
        [r * t.cos(), r * t.sin()]
    }).collect()
}

proptest! {
    #[test]
    fn kept_set_monotone_in_alpha(seed in 0u64..10_000, a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = cloud(&mut rng, 40);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small: BTreeSet<_> = alpha_shape(&pts, hi).unwrap().triangles.into_iter().collect();
        let large: BTreeSet<_> = alpha_shape(&pts, lo).unwrap().triangles.into_iter().collect();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn area_invariant_under_reorder_and_translation(seed in 0u64..10_000, shift in 0usize..20, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ring = star(&mut rng, 20);
        let base = polygon_area(&ring).unwrap();
        let mut rotated = ring.clone();
        rotated.rotate_left(shift);
        let mut reversed = ring.clone();
        reversed.reverse();
        let moved: Vec<P> = ring.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        prop_assert!((polygon_area(&rotated).unwrap() - base).abs() < 1e-12);
        prop_assert!((polygon_area(&reversed).unwrap() - base).abs() < 1e-12);
        prop_assert!((polygon_area(&moved).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn internal_rate_bounded_by_overall(seed in 0u64..10_000) {
        // Failures outside the hull of the successes are excluded by construction.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trials: Vec<Trial> = (0..80).map(|_| {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            trial(p[0], p[1], rng.random::<f64>() < 0.8)
        }).collect();
        for _ in 0..20 {
            trials.push(trial(2.0 + rng.random::<f64>(), rng.random::<f64>(), false));
        }
        let r = build_pbr(&trials, 0.0).unwrap();
        prop_assert!(r.internal_rate >= r.overall_rate - 1e-15 && r.internal_rate <= 1.0);
        prop_assert_eq!(r.n_success + r.n_fail, trials.len());
        prop_assert!(r.n_fail_inside <= r.n_fail && r.n_success_inside == r.n_success);
    }
}

/// 59 x 101 jittered lattice of successes, 74 failures at interior cell
/// centres and 100 failures far outside.
fn published_fixture() -> Vec<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut trials = Vec::new();
    for i in 0..59 {
        for j in 0..101 {
            let jx = rng.random_range(-1e-4..1e-4);
            let jv = rng.random_range(-1e-4..1e-4);
            trials.push(trial(-0.03 + 0.002 * i as f64 + jx, -0.25 + 0.005 * j as f64 + jv, true));
        }
    }
    for k in 0..74 {
        let i = 5 + k % 37;
        let j = 10 + 2 * (k / 37);
        trials.push(trial(-0.03 + 0.002 * (i as f64 + 0.5), -0.25 + 0.005 * (j as f64 + 0.5), false));
    }
    for k in 0..100 {
        trials.push(trial(1.0 + 0.01 * k as f64, 2.0, false));
    }
    trials
}

#[test]
fn published_internal_rate() {
    let trials = published_fixture();
    let r = build_pbr(&trials, DEFAULT_ALPHA).unwrap();
    assert_eq!(r.n_success, 5959);
    assert_eq!(r.n_success_inside, 5959);
    assert_eq!(r.n_fail_inside, 74);
    assert_eq!(r.n_fail, 174);
    assert!((r.internal_rate * 100.0 - 98.77).abs() < 0.005);
    assert!((r.overall_rate - 5959.0 / 6133.0).abs() < 1e-15);
    assert_eq!(r.contained_fraction, 1.0);
}

#[test]
fn all_successful_rate_is_one() {
    let trials: Vec<Trial> = SQUARE.iter().map(|p| trial(p[0], p[1], true)).collect();
    let r = build_pbr(&trials, 1.0).unwrap();
    assert_eq!(r.internal_rate, 1.0);
    assert_eq!(r.overall_rate, 1.0);
}

#[test]
fn disk_with_interior_failures() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut trials = Vec::new();
    for _ in 0..800 {
        let r = 0.1 * rng.random::<f64>().sqrt();
        let t = rng.random::<f64>() * std::f64::consts::TAU;
        trials.push(trial(r * t.cos(), r * t.sin(), true));
    }
    for k in 0..10 {
        let t = k as f64 * 0.6;
        trials.push(trial(0.03 * t.cos(), 0.03 * t.sin(), false));
    }
    for k in 0..7 {
        trials.push(trial(0.5, 0.1 * k as f64, false));
    }
    let r = build_pbr(&trials, DEFAULT_ALPHA).unwrap();
    assert_eq!(r.n_fail_inside, 10);
    assert_eq!(r.n_fail, 17);
    assert_eq!(r.internal_rate, 800.0 / 810.0);
    assert_eq!(r.overall_rate, 800.0 / 817.0);
}

fn disk_trials(rng: &mut impl Rng, n: usize, moving: bool) -> Vec<Trial> {
    (0..n)
        .map(|_| {
            let r = 0.1 * rng.random::<f64>().sqrt();
            let t = rng.random::<f64>() * std::f64::consts::TAU;
            let (x, v) = (r * t.cos(), 0.3 * r * t.sin());
            let trajectory = if moving {
                // Decaying spiral back toward the origin.
                (0..60)
                    .map(|k| {
                        let s = (-0.08 * k as f64).exp();
                        let a = t + 0.1 * k as f64;
                        ComState { x: s * r * a.cos(), v: 0.3 * s * r * a.sin() }
                    })
                    .collect()
            } else {
                vec![ComState { x, v }; 5]
            };
            Trial { initial: ComState { x, v }, success: rng.random::<f64>() < 0.9, trajectory }
        })
        .collect()
}

#[test]
fn stationary_trajectories_reproduce_pbr() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = disk_trials(&mut rng, 400, false);
    let pbr = build_pbr(&trials, DEFAULT_ALPHA).unwrap();
    let br = build_br(&pbr, &trials, 100, DEFAULT_ALPHA, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(br.rings, pbr.rings);
    assert_eq!(br.area, pbr.area);
    assert_eq!(br.contained_fraction, 1.0);
}

#[test]
fn trajectory_region_contains_its_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let trials = disk_trials(&mut rng, 600, true);
    let pbr = build_pbr(&trials, DEFAULT_ALPHA).unwrap();
    let br = build_br(&pbr, &trials, 100, DEFAULT_ALPHA, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(br.contained_fraction >= 0.99, "{}", br.contained_fraction);
    assert!(br.area >= pbr.area * 0.99);
    let again = build_br(&pbr, &trials, 100, DEFAULT_ALPHA, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(again.rings, br.rings);
}

#[test]
fn pendulum_limits() {
    let lip = LipBounds::new(9.81, 0.9877, -0.049, 0.15).unwrap();
    assert!((lip.omega - (9.81f64 / 0.9877).sqrt()).abs() < 1e-15);
    assert!((lip.omega - 3.1516).abs() < 1e-4);
    assert!((lip.v_max(0.0) - 0.47274).abs() < 1e-4);
    assert_eq!(lip.v_max(0.15), 0.0);
    assert_eq!(lip.v_min(-0.049), 0.0);
    let xs: Vec<f64> = (0..50).map(|i| -0.2 + 0.01 * i as f64).collect();
    let lines = lip.lines(&xs);
    for w in lines.windows(2) {
        let dx = w[1][0] - w[0][0];
        assert!(((w[1][1] - w[0][1]) / dx + lip.omega).abs() < 1e-12);
        assert!(((w[1][2] - w[0][2]) / dx + lip.omega).abs() < 1e-12);
    }
    assert!(LipBounds::new(9.81, 0.0, -0.049, 0.15).is_err());
    assert!(LipBounds::with_omega(3.0, 0.2, 0.1).is_err());
}

#[test]
fn margin_examples() {
    assert_eq!(margin_of_stability(0.15, 0.0, 0.15, 3.0).unwrap(), 0.0);
    assert_eq!(margin_of_stability(0.0, 0.0, 0.15, 3.1516).unwrap(), 0.15);
    assert!((margin_of_stability(0.05, 0.157580, 0.15, 3.1516).unwrap() - 0.05).abs() < 1e-6);
    assert!(margin_of_stability(0.0, 0.0, 0.15, 0.0).is_err());
}

fn region_of(points: &[P], alpha: f64) -> BalanceRegion {
    let trials: Vec<Trial> = points.iter().map(|p| trial(p[0], p[1], true)).collect();
    build_pbr(&trials, alpha).unwrap()
}

#[test]
fn band_comparison_trivial_cases() {
    let lip = LipBounds::with_omega(2.0, -0.1, 0.2).unwrap();
    // The band clipped to v in [-0.5, 0.5]: x + v/2 in [-0.1, 0.2].
    let band = [[-0.1 + 0.25, -0.5], [0.2 + 0.25, -0.5], [0.2 - 0.25, 0.5], [-0.1 - 0.25, 0.5]];
    let c = compare_regions(&region_of(&band, 0.0), &lip);
    assert!((c.inside_band_fraction - 1.0).abs() < 1e-12);
    assert!((c.equilibrium_coverage - 1.0).abs() < 1e-12);

    let far = [[3.0, 0.0], [4.0, 0.0], [4.0, 1.0], [3.0, 1.0]];
    let c = compare_regions(&region_of(&far, 0.0), &lip);
    assert_eq!(c.inside_band_fraction, 0.0);
    assert_eq!(c.equilibrium_coverage, 0.0);
}

#[test]
fn band_comparison_matches_grid() {
    let lip = LipBounds::new(9.81, 0.9877, -0.049, 0.15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let pts: Vec<P> = (0..300).map(|_| [rng.random_range(-0.15..0.25), rng.random_range(-0.6..0.6)]).collect();
        let region = region_of(&pts, 6.0);
        let c = compare_regions(&region, &lip);

        let n = 1000;
        let (x0, x1, v0, v1) = (-0.15, 0.25, -0.6, 0.6);
        let (mut inside, mut total) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let p = [x0 + (x1 - x0) * (i as f64 + 0.5) / n as f64, v0 + (v1 - v0) * (j as f64 + 0.5) / n as f64];
                if region.contains(p) {
                    total += 1;
                    inside += lip.contains(p) as usize;
                }
            }
        }
        let grid_inside = inside as f64 / total as f64;
        let covered = (0..n)
            .filter(|&i| region.contains([lip.u_min + (lip.u_max - lip.u_min) * (i as f64 + 0.5) / n as f64, 0.0]))
            .count() as f64
            / n as f64;
        assert!((c.inside_band_fraction - grid_inside).abs() < 0.01, "{} vs {grid_inside}", c.inside_band_fraction);
        assert!((c.equilibrium_coverage - covered).abs() < 0.01, "{} vs {covered}", c.equilibrium_coverage);
    }
}
