//! COM state-space analysis: alpha shapes, point-based and trajectory-based
//! balance regions, linear inverted pendulum limits and the margin of stability.
//!
//! The alpha parameter acts on raw `(x [m], v [m/s])` coordinates; no
//! normalization of the mixed units is applied.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::env::{ComState, EpisodeOutcome};
use crate::error::{Error, Result};
use crate::plant::Vec2;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default alpha for balance-region envelopes.
pub const DEFAULT_ALPHA: f64 = 15.0;

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    robust::orient2d(
        robust::Coord { x: a[0], y: a[1] },
        robust::Coord { x: b[0], y: b[1] },
        robust::Coord { x: c[0], y: c[1] },
    )
}

pub fn triangle_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
}

pub fn circumradius(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let area = triangle_area(a, b, c);
    if area == 0.0 {
        f64::INFINITY
    } else {
        ab * bc * ca / (4.0 * area)
    }
}

/// Delaunay triangles as counter-clockwise index triples into `points`, sorted.
/// Repeated points are reported under their first index.
pub fn delaunay(points: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {}", points.len())));
    }
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut original: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let h = tri
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Degenerate(format!("point {i} ({}, {}) rejected: {e:?}", p[0], p[1])))?;
        if h.index() == original.len() {
            original.push(i);
        }
    }
    let mut out: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let [a, b, c] = f.vertices().map(|v| original[v.fix().index()]);
            let t = if orient(points[a], points[b], points[c]) > 0.0 { [a, b, c] } else { [a, c, b] };
            canonical(t)
        })
        .collect();
    if out.is_empty() {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    out.sort_unstable();
    Ok(out)
}

/// Rotates a counter-clockwise triple so its smallest index comes first.
fn canonical(t: [usize; 3]) -> [usize; 3] {
    let k = (0..3).min_by_key(|&i| t[i]).unwrap();
    [t[k], t[(k + 1) % 3], t[(k + 2) % 3]]
}

/// Union of the Delaunay triangles whose circumradius is below `1 / alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaShape {
    pub points: Vec<Vec2>,
    /// Kept triangles, counter-clockwise, sorted.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary rings as point indices; outer boundaries run counter-clockwise,
    /// holes clockwise.
    pub rings: Vec<Vec<usize>>,
    grid: TriangleGrid,
}

impl AlphaShape {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area(self.points[t[0]], self.points[t[1]], self.points[t[2]]))
            .sum()
    }

    pub fn ring_coords(&self) -> Vec<Vec<Vec2>> {
        self.rings.iter().map(|r| r.iter().map(|&i| self.points[i]).collect()).collect()
    }

    /// True when `p` lies in a kept triangle or on its boundary.
    pub fn contains(&self, p: Vec2) -> bool {
        self.grid.candidates(p).iter().any(|&k| {
            let [a, b, c] = self.triangles[k].map(|i| self.points[i]);
            orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
        })
    }

    /// Point indices appearing on any boundary ring.
    pub fn boundary_points(&self) -> BTreeSet<usize> {
        self.rings.iter().flatten().copied().collect()
    }
}

/// Alpha shape of `points`. `alpha = 0` keeps every Delaunay triangle (the
/// convex hull).
pub fn alpha_shape(points: &[Vec2], alpha: f64) -> Result<AlphaShape> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be finite and non-negative, got {alpha}")));
    }
    let all = delaunay(points)?;
    let radius = if alpha == 0.0 { f64::INFINITY } else { 1.0 / alpha };
    let triangles: Vec<[usize; 3]> = all
        .into_iter()
        .filter(|t| alpha == 0.0 || circumradius(points[t[0]], points[t[1]], points[t[2]]) < radius)
        .collect();
    let rings = boundary_rings(points, &triangles);
    let grid = TriangleGrid::new(points, &triangles);
    Ok(AlphaShape { points: points.to_vec(), triangles, rings, grid })
}

/// Traces the boundary edges (those used by exactly one triangle) into closed
/// rings. At vertices shared by several boundary pieces the walk takes the
/// first outgoing edge clockwise from the incoming one; repeated vertices are
/// then split off so every ring is simple.
fn boundary_rings(points: &[Vec2], triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if count[&(a.min(b), a.max(b))] == 1 {
                outgoing.entry(a).or_default().push(b);
            }
        }
    }
    let angle = |from: usize, to: usize| (points[to][1] - points[from][1]).atan2(points[to][0] - points[from][0]);
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut rings = Vec::new();
    let starts: Vec<(usize, usize)> = outgoing.iter().flat_map(|(&a, bs)| bs.iter().map(move |&b| (a, b))).collect();
    for (a0, b0) in starts {
        if used.contains(&(a0, b0)) {
            continue;
        }
        let mut ring = vec![a0];
        let (mut a, mut b) = (a0, b0);
        used.insert((a, b));
        while b != a0 {
            ring.push(b);
            let back = angle(b, a);
            let next = outgoing[&b]
                .iter()
                .copied()
                .filter(|&c| !used.contains(&(b, c)))
                .min_by(|&c1, &c2| {
                    let cw = |c: usize| (back - angle(b, c)).rem_euclid(std::f64::consts::TAU);
                    cw(c1).total_cmp(&cw(c2))
                });
            let Some(c) = next else { break };
            used.insert((b, c));
            a = b;
            b = c;
        }
        rings.extend(split_at_repeats(ring));
    }
    rings
}

/// Splits a closed walk into loops that visit each vertex once. Happens where
/// a hole touches the outer boundary at a single vertex.
fn split_at_repeats(walk: Vec<usize>) -> Vec<Vec<usize>> {
    let mut loops = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for v in walk {
        if let Some(p) = stack.iter().position(|&u| u == v) {
            loops.push(stack.split_off(p));
        }
        stack.push(v);
    }
    loops.push(stack);
    loops.retain(|l| l.len() >= 3);
    loops
}

/// Uniform bucket grid over triangle bounding boxes for point queries.
#[derive(Debug, Clone, PartialEq, Default)]
struct TriangleGrid {
    origin: Vec2,
    cell: Vec2,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl TriangleGrid {
    fn new(points: &[Vec2], triangles: &[[usize; 3]]) -> Self {
        if triangles.is_empty() {
            return Self::default();
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in triangles {
            for &i in t {
                for d in 0..2 {
                    lo[d] = lo[d].min(points[i][d]);
                    hi[d] = hi[d].max(points[i][d]);
                }
            }
        }
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let cell = [((hi[0] - lo[0]) / side as f64).max(1e-300), ((hi[1] - lo[1]) / side as f64).max(1e-300)];
        let mut grid = Self { origin: lo, cell, dims: [side, side], buckets: vec![Vec::new(); side * side] };
        for (k, t) in triangles.iter().enumerate() {
            let xs = t.map(|i| points[i][0]);
            let ys = t.map(|i| points[i][1]);
            let (i0, j0) = grid.cell_of([xs.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::INFINITY, f64::min)]);
            let (i1, j1) = grid.cell_of([
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ]);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    grid.buckets[j * side + i].push(k);
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let f = |d: usize| (((p[d] - self.origin[d]) / self.cell[d]).floor().max(0.0) as usize).min(self.dims[d] - 1);
        (f(0), f(1))
    }

    fn candidates(&self, p: Vec2) -> &[usize] {
        if self.buckets.is_empty() {
            return &[];
        }
        let eps = 1e-9;
        let [w, h] = [self.cell[0] * self.dims[0] as f64, self.cell[1] * self.dims[1] as f64];
        if p[0] < self.origin[0] - eps * w.max(1.0)
            || p[1] < self.origin[1] - eps * h.max(1.0)
            || p[0] > self.origin[0] + w * (1.0 + eps) + eps
            || p[1] > self.origin[1] + h * (1.0 + eps) + eps
        {
            return &[];
        }
        let (i, j) = self.cell_of(p);
        &self.buckets[j * self.dims[0] + i]
    }
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Vec2, b: Vec2, p: Vec2, d: f64| {
        d == 0.0 && p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// True when two non-adjacent edges of the closed ring touch or cross.
pub fn is_self_intersecting(ring: &[Vec2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Signed shoelace area (positive for counter-clockwise rings).
pub fn signed_area(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Area of a simple polygon; rejects self-intersecting rings.
pub fn polygon_area(ring: &[Vec2]) -> Result<f64> {
    if ring.len() < 3 {
        return Err(Error::Contract(format!("polygon needs at least 3 vertices, got {}", ring.len())));
    }
    if is_self_intersecting(ring) {
        return Err(Error::Contract("polygon is self-intersecting".into()));
    }
    Ok(signed_area(ring).abs())
}

/// Sum of the areas of separate simple polygons.
pub fn polygons_area(rings: &[Vec<Vec2>]) -> Result<f64> {
    rings.iter().map(|r| polygon_area(r)).sum()
}

/// Ray casting; points on an edge count as inside.
pub fn point_in_polygon(ring: &[Vec2], p: Vec2) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if orient(a, b, p) == 0.0
            && p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
        {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// One test trial in COM state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub initial: ComState,
    pub success: bool,
    pub trajectory: Vec<ComState>,
}

impl From<&EpisodeOutcome> for Trial {
    fn from(o: &EpisodeOutcome) -> Self {
        Self { initial: o.initial, success: o.success(), trajectory: o.com.clone() }
    }
}

fn xy(s: &ComState) -> Vec2 {
    [s.x, s.v]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    Pbr,
    Br,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRegion {
    pub kind: RegionKind,
    pub alpha: f64,
    /// Boundary rings in `(x, v)`; outer rings counter-clockwise, holes clockwise.
    pub rings: Vec<Vec<Vec2>>,
    pub area: f64,
    pub n_success: usize,
    pub n_fail: usize,
    pub n_success_inside: usize,
    pub n_fail_inside: usize,
    /// `n_success / (n_success + n_fail)`.
    pub overall_rate: f64,
    /// `n_success_inside / (n_success_inside + n_fail_inside)`.
    pub internal_rate: f64,
    /// Fraction of the envelope's input points lying inside it.
    pub contained_fraction: f64,
    #[serde(skip)]
    pub shape: Option<AlphaShape>,
}

impl BalanceRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        self.shape.as_ref().is_some_and(|s| s.contains(p))
    }

    /// Triangles of the envelope in coordinates.
    pub fn triangles(&self) -> Vec<[Vec2; 3]> {
        match &self.shape {
            Some(s) => s.triangles.iter().map(|t| t.map(|i| s.points[i])).collect(),
            None => Vec::new(),
        }
    }
}

fn region_from(kind: RegionKind, alpha: f64, shape: AlphaShape, trials: &[Trial], input: &[Vec2]) -> BalanceRegion {
    let n_success = trials.iter().filter(|t| t.success).count();
    let n_fail = trials.len() - n_success;
    let n_success_inside = trials.iter().filter(|t| t.success && shape.contains(xy(&t.initial))).count();
    let n_fail_inside = trials.iter().filter(|t| !t.success && shape.contains(xy(&t.initial))).count();
    let contained = input.iter().filter(|p| shape.contains(**p)).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    BalanceRegion {
        kind,
        alpha,
        rings: shape.ring_coords(),
        area: shape.area(),
        n_success,
        n_fail,
        n_success_inside,
        n_fail_inside,
        overall_rate: ratio(n_success, trials.len()),
        internal_rate: ratio(n_success_inside, n_success_inside + n_fail_inside),
        contained_fraction: ratio(contained, input.len()),
        shape: Some(shape),
    }
}

/// Point-based region: alpha shape of the successful initial COM states.
pub fn build_pbr(trials: &[Trial], alpha: f64) -> Result<BalanceRegion> {
    let pts: Vec<Vec2> = trials.iter().filter(|t| t.success).map(|t| xy(&t.initial)).collect();
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 successful trials, got {}", pts.len())));
    }
    let shape = alpha_shape(&pts, alpha)?;
    Ok(region_from(RegionKind::Pbr, alpha, shape, trials, &pts))
}

/// Trajectory-based region: COM states along the successful trajectories that
/// start on the PBR boundary plus `n_internal` random interior ones, together
/// with all PBR input points.
pub fn build_br<R: Rng + ?Sized>(
    pbr: &BalanceRegion,
    trials: &[Trial],
    n_internal: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<BalanceRegion> {
    let shape = pbr.shape.as_ref().ok_or_else(|| Error::Contract("PBR has no envelope".into()))?;
    let successes: Vec<&Trial> = trials.iter().filter(|t| t.success).collect();
    if successes.len() != shape.points.len() {
        return Err(Error::Contract("trials do not match the PBR input".into()));
    }
    let boundary = shape.boundary_points();
    let interior: Vec<usize> = (0..successes.len()).filter(|i| !boundary.contains(i)).collect();
    let mut chosen: Vec<usize> = boundary.iter().copied().collect();
    let k = n_internal.min(interior.len());
    let mut picks: Vec<usize> = index::sample(rng, interior.len(), k).into_iter().map(|j| interior[j]).collect();
    picks.sort_unstable();
    chosen.extend(picks);
    chosen.sort_unstable();

    let mut pts: Vec<Vec2> = shape.points.clone();
    for &i in &chosen {
        pts.extend(successes[i].trajectory.iter().map(xy));
    }
    let br_shape = alpha_shape(&pts, alpha)?;
    Ok(region_from(RegionKind::Br, alpha, br_shape, trials, &pts))
}

/// Linear inverted pendulum stability limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipBounds {
    pub omega: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl LipBounds {
    pub fn new(gravity: f64, length: f64, u_min: f64, u_max: f64) -> Result<Self> {
        if !(gravity > 0.0 && length > 0.0) {
            return Err(Error::Domain("pendulum gravity and length must be positive".into()));
        }
        Self::with_omega((gravity / length).sqrt(), u_min, u_max)
    }

    pub fn with_omega(omega: f64, u_min: f64, u_max: f64) -> Result<Self> {
        if !(omega > 0.0) || !(u_min < u_max) {
            return Err(Error::Domain(format!("invalid pendulum bounds omega={omega}, u=[{u_min}, {u_max}]")));
        }
        Ok(Self { omega, u_min, u_max })
    }

    /// Pendulum frequency of `env` and the support range of its model.
    pub fn from_env(env: &crate::env::Env) -> Result<Self> {
        let [lo, hi] = env
            .model
            .support_range()
            .ok_or_else(|| Error::ModelConfig("model has no foot contact spheres".into()))?;
        Self::with_omega(env.omega(), lo, hi)
    }

    pub fn v_max(&self, x: f64) -> f64 {
        self.omega * (self.u_max - x)
    }

    pub fn v_min(&self, x: f64) -> f64 {
        self.omega * (self.u_min - x)
    }

    /// `(x, v_max(x), v_min(x))` at each sample.
    pub fn lines(&self, xs: &[f64]) -> Vec<[f64; 3]> {
        xs.iter().map(|&x| [x, self.v_max(x), self.v_min(x)]).collect()
    }

    /// Inside the band `u_min <= x + v / omega <= u_max`.
    pub fn contains(&self, p: Vec2) -> bool {
        let m = p[0] + p[1] / self.omega;
        (self.u_min..=self.u_max).contains(&m)
    }
}

/// `|bos_limit - (x + v / omega)|`.
pub fn margin_of_stability(x: f64, v: f64, bos_limit: f64, omega: f64) -> Result<f64> {
    Ok((bos_limit - crate::env::xcom(x, v, omega)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    /// Area fraction of the region inside the pendulum band.
    pub inside_band_fraction: f64,
    /// Length fraction of the static equilibrium segment `{(x, 0): u_min <= x <= u_max}`
    /// covered by the region.
    pub equilibrium_coverage: f64,
}

/// Clips a convex polygon to the half-plane `n . p <= c`.
fn clip(poly: &[Vec2], n: Vec2, c: f64) -> Vec<Vec2> {
    let f = |p: Vec2| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (fa, fb) = (f(a), f(b));
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            let t = fa / (fa - fb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Exact overlap measures between a region and the pendulum band; both are
/// computed per envelope triangle (half-plane clipping and segment
/// intersection) rather than by sampling.
pub fn compare_regions(region: &BalanceRegion, lip: &LipBounds) -> RegionComparison {
    let tris = region.triangles();
    let w = lip.omega;
    let mut total = 0.0;
    let mut inside = 0.0;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for t in &tris {
        total += triangle_area(t[0], t[1], t[2]);
        // x + v / w <= u_max  and  -(x + v / w) <= -u_min
        let poly = clip(t, [1.0, 1.0 / w], lip.u_max);
        let poly = clip(&poly, [-1.0, -1.0 / w], -lip.u_min);
        if poly.len() >= 3 {
            inside += signed_area(&poly).abs();
        }
        if let Some(iv) = triangle_axis_interval(t) {
            let lo = iv.0.max(lip.u_min);
            let hi = iv.1.min(lip.u_max);
            if hi > lo {
                intervals.push((lo, hi));
            }
        }
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (lo, hi) in intervals {
        cur = match cur {
            Some((a, b)) if lo <= b => Some((a, b.max(hi))),
            Some((a, b)) => {
                covered += b - a;
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    if let Some((a, b)) = cur {
        covered += b - a;
    }
    RegionComparison {
        inside_band_fraction: if total > 0.0 { (inside / total).clamp(0.0, 1.0) } else { 0.0 },
        equilibrium_coverage: (covered / (lip.u_max - lip.u_min)).clamp(0.0, 1.0),
    }
}

/// Intersection of a triangle with the line `v = 0` as an x interval.
fn triangle_axis_interval(t: &[Vec2; 3]) -> Option<(f64, f64)> {
    let mut xs = Vec::new();
    for i in 0..3 {
        let (a, b) = (t[i], t[(i + 1) % 3]);
        if a[1] == 0.0 {
            xs.push(a[0]);
        }
        if (a[1] < 0.0 && b[1] > 0.0) || (a[1] > 0.0 && b[1] < 0.0) {
            let s = a[1] / (a[1] - b[1]);
            xs.push(a[0] + s * (b[0] - a[0]));
        }
    }
    let lo = xs.iter().copied().reduce(f64::min)?;
    let hi = xs.iter().copied().reduce(f64::max)?;
    Some((lo, hi))
}

/// Machine-readable summary of one balance-region analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub schema_version: u32,
    pub n_trials: usize,
    pub pbr: Option<BalanceRegion>,
    pub br: Option<BalanceRegion>,
    /// Set when too few successes were available to build an envelope.
    pub degenerate: Option<String>,
    pub lip: LipBounds,
    pub pbr_vs_lip: Option<RegionComparison>,
    pub br_vs_lip: Option<RegionComparison>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub fn write_report(path: impl AsRef<Path>, report: &RegionReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Plot data: trial points with labels, envelope rings and pendulum lines.
pub fn write_plot_data(dir: impl AsRef<Path>, trials: &[Trial], report: &RegionReport) -> Result<()> {
    let dir = dir.as_ref();
    let mut w = csv::Writer::from_path(dir.join("points.csv"))?;
    w.write_record(["x", "v", "success"])?;
    for t in trials {
        w.write_record([t.initial.x.to_string(), t.initial.v.to_string(), (t.success as u8).to_string()])?;
    }
    w.flush()?;

    for (name, region) in [("pbr", &report.pbr), ("br", &report.br)] {
        let mut w = csv::Writer::from_path(dir.join(format!("{name}_rings.csv")))?;
        w.write_record(["ring", "vertex", "x", "v"])?;
        if let Some(r) = region {
            for (k, ring) in r.rings.iter().enumerate() {
                for (j, p) in ring.iter().enumerate() {
                    w.write_record([k.to_string(), j.to_string(), p[0].to_string(), p[1].to_string()])?;
                }
            }
        }
        w.flush()?;
    }

    let lip = &report.lip;
    let span = lip.u_max - lip.u_min;
    let xs: Vec<f64> = (0..=100).map(|i| lip.u_min - 0.5 * span + 2.0 * span * i as f64 / 100.0).collect();
    let mut w = csv::Writer::from_path(dir.join("lip_lines.csv"))?;
    w.write_record(["x", "v_max", "v_min"])?;
    for [x, hi, lo] in lip.lines(&xs) {
        w.write_record([x.to_string(), hi.to_string(), lo.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
