//! Planar geometry and the local tangent-plane projection.
//!
//! All planning math runs on [`LocalPoint`]s (meters east/north of a scenario
//! origin). [`GeoPoint`]s only appear where data enters or leaves the system.

pub mod geojson;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest lat/lon offset (degrees) accepted by [`project`].
pub const MAX_LOCAL_SPAN_DEG: f64 = 1.0;

/// Local-plane validity bound on `|LocalPoint|`.
pub const MAX_LOCAL_MAGNITUDE_M: f64 = 100_000.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is more than {MAX_LOCAL_SPAN_DEG} degree from the projection origin")]
    OutOfLocalRange,
    #[error("local point ({x}, {y}) is outside the local-plane validity bound")]
    InvalidLocalPoint { x: f64, y: f64 },
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    Degenerate,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

/// WGS84 latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Meters east (`x`) and north (`y`) of a scenario origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct LocalPoint {
    pub x: f64,
    pub y: f64,
}

impl LocalPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        LocalPoint { x, y }
    }

    pub fn checked(x: f64, y: f64) -> Result<Self, GeoError> {
        let p = LocalPoint { x, y };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidLocalPoint { x, y })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.x.hypot(self.y) < MAX_LOCAL_MAGNITUDE_M
    }

    pub fn scale(self, k: f64) -> LocalPoint {
        LocalPoint::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: LocalPoint) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: LocalPoint) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Point at fraction `t` of the way from `self` to `o`.
    pub fn lerp(self, o: LocalPoint, t: f64) -> LocalPoint {
        LocalPoint::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

impl std::ops::Add for LocalPoint {
    type Output = LocalPoint;

    fn add(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for LocalPoint {
    type Output = LocalPoint;

    fn sub(self, o: LocalPoint) -> LocalPoint {
        LocalPoint::new(self.x - o.x, self.y - o.y)
    }
}

/// Euclidean distance between two local points.
pub fn dist(p: LocalPoint, q: LocalPoint) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

/// Equirectangular projection of `p` into the tangent plane at `origin`.
pub fn project(origin: GeoPoint, p: GeoPoint) -> Result<LocalPoint, GeoError> {
    for g in [origin, p] {
        if !g.is_valid() {
            return Err(GeoError::InvalidCoordinate { lat: g.lat, lon: g.lon });
        }
    }
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    if dlat.abs() >= MAX_LOCAL_SPAN_DEG || dlon.abs() >= MAX_LOCAL_SPAN_DEG {
        return Err(GeoError::OutOfLocalRange);
    }
    let x = dlon.to_radians() * EARTH_RADIUS_M * origin.lat.to_radians().cos();
    let y = dlat.to_radians() * EARTH_RADIUS_M;
    Ok(LocalPoint { x, y })
}

/// Inverse of [`project`].
pub fn unproject(origin: GeoPoint, p: LocalPoint) -> GeoPoint {
    let lat = origin.lat + (p.y / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (p.x / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint { lat, lon }
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: LocalPoint, a: LocalPoint, b: LocalPoint) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    dist(p, a.lerp(b, t))
}

/// A simple polygon, implicitly closed. Either winding order is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "Vec<LocalPoint>", into = "Vec<LocalPoint>")]
pub struct Polygon {
    vertices: Vec<LocalPoint>,
}

impl TryFrom<Vec<LocalPoint>> for Polygon {
    type Error = GeoError;

    fn try_from(v: Vec<LocalPoint>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<LocalPoint> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    /// Builds a polygon, rejecting degenerate and self-intersecting rings.
    /// A repeated closing vertex is dropped.
    pub fn new(mut vertices: Vec<LocalPoint>) -> Result<Self, GeoError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeoError::TooFewVertices(vertices.len()));
        }
        if let Some(v) = vertices.iter().find(|v| !v.is_valid()) {
            return Err(GeoError::InvalidLocalPoint { x: v.x, y: v.y });
        }
        let poly = Polygon { vertices };
        if poly.signed_area().abs() <= EPS {
            return Err(GeoError::Degenerate);
        }
        poly.check_simple()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle with corners `min` and `max`.
    pub fn rectangle(min: LocalPoint, max: LocalPoint) -> Result<Self, GeoError> {
        Polygon::new(vec![
            min,
            LocalPoint::new(max.x, min.y),
            max,
            LocalPoint::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[LocalPoint] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (LocalPoint, LocalPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.cross(b)).sum::<f64>() / 2.0
    }

    fn check_simple(&self) -> Result<(), GeoError> {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (shared, other_i, other_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    let ei = other_i - shared;
                    let ej = other_j - shared;
                    if ei.cross(ej).abs() <= EPS * ei.norm() * ej.norm() && ei.dot(ej) > 0.0 {
                        return Err(GeoError::SelfIntersecting(i, j));
                    }
                } else if segments_intersect(a, b, c, d) {
                    return Err(GeoError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(())
    }

    /// Projection of the vertices onto `axis`, as (min, max).
    pub fn extent_along(&self, axis: LocalPoint) -> (f64, f64) {
        self.vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                let s = v.dot(axis);
                (lo.min(s), hi.max(s))
            })
    }

    pub fn bounding_box(&self) -> (LocalPoint, LocalPoint) {
        let (x0, x1) = self.extent_along(LocalPoint::new(1.0, 0.0));
        let (y0, y1) = self.extent_along(LocalPoint::new(0.0, 1.0));
        (LocalPoint::new(x0, y0), LocalPoint::new(x1, y1))
    }

    pub fn centroid(&self) -> LocalPoint {
        let a = self.signed_area();
        let (cx, cy) = self.edges().fold((0.0, 0.0), |(cx, cy), (p, q)| {
            let w = p.cross(q);
            (cx + (p.x + q.x) * w, cy + (p.y + q.y) * w)
        });
        LocalPoint::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn on_boundary(&self, p: LocalPoint) -> bool {
        self.edges().any(|(a, b)| point_segment_distance(p, a, b) <= EPS)
    }

    /// Distance from `p` to the nearest polygon edge.
    pub fn boundary_distance(&self, p: LocalPoint) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// True when `p` is inside and not on the boundary.
    pub fn strictly_contains(&self, p: LocalPoint) -> bool {
        !self.on_boundary(p) && ray_parity(self, p)
    }

    pub fn translated(&self, by: LocalPoint) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| *v + by).collect(),
        }
    }
}

fn orient(a: LocalPoint, b: LocalPoint, c: LocalPoint) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: LocalPoint, b: LocalPoint, p: LocalPoint) -> bool {
    p.x >= a.x.min(b.x) - EPS && p.x <= a.x.max(b.x) + EPS && p.y >= a.y.min(b.y) - EPS && p.y <= a.y.max(b.y) + EPS
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: LocalPoint, b: LocalPoint, c: LocalPoint, d: LocalPoint) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    (d1.abs() <= EPS && on_segment(c, d, a))
        || (d2.abs() <= EPS && on_segment(c, d, b))
        || (d3.abs() <= EPS && on_segment(a, b, c))
        || (d4.abs() <= EPS && on_segment(a, b, d))
}

fn ray_parity(poly: &Polygon, p: LocalPoint) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Point-in-polygon by ray casting. Boundary points count as inside.
pub fn contains(poly: &Polygon, p: LocalPoint) -> bool {
    poly.on_boundary(p) || ray_parity(poly, p)
}

/// Unsigned shoelace area in square meters.
pub fn area(poly: &Polygon) -> f64 {
    poly.signed_area().abs()
}

/// Parameter intervals `[t0, t1] ⊂ [0, 1]` of `a + t·(b − a)` lying inside `poly`,
/// merged and sorted.
pub fn clip_intervals(poly: &Polygon, a: LocalPoint, b: LocalPoint) -> Vec<(f64, f64)> {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return if contains(poly, a) {
            vec![(0.0, 0.0)]
        } else {
            Vec::new()
        };
    }
    let mut ts = vec![0.0, 1.0];
    for (p, q) in poly.edges() {
        let pq = q - p;
        let denom = ab.cross(pq);
        let ap = p - a;
        if denom.abs() > EPS * ab.norm() * pq.norm() {
            let t = ap.cross(pq) / denom;
            let s = ap.cross(ab) / denom;
            if (-EPS..=1.0 + EPS).contains(&s) && (0.0..=1.0).contains(&t) {
                ts.push(t);
            }
        } else if ap.cross(ab).abs() <= EPS * ab.norm() {
            // Collinear edge: its endpoints split the line.
            for v in [p, q] {
                let t = (v - a).dot(ab) / len2;
                if (0.0..=1.0).contains(&t) {
                    ts.push(t);
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12);

    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if !contains(poly, a.lerp(b, 0.5 * (t0 + t1))) {
            continue;
        }
        match out.last_mut() {
            Some(last) if (last.1 - t0).abs() <= 1e-12 => last.1 = t1,
            _ => out.push((t0, t1)),
        }
    }
    out
}

/// Maximal sub-segments of `a`–`b` inside `poly`, ordered from `a` to `b`.
pub fn clip_line(poly: &Polygon, a: LocalPoint, b: LocalPoint) -> Vec<(LocalPoint, LocalPoint)> {
    clip_intervals(poly, a, b)
        .into_iter()
        .filter(|(t0, t1)| t1 > t0)
        .map(|(t0, t1)| (a.lerp(b, t0), a.lerp(b, t1)))
        .collect()
}

/// Removes `cut` intervals from sorted, disjoint `base` intervals.
pub fn subtract_intervals(base: &[(f64, f64)], cut: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = base.to_vec();
    for &(c0, c1) in cut {
        out = out
            .into_iter()
            .flat_map(|(b0, b1)| {
                let mut parts = Vec::with_capacity(2);
                if c1 <= b0 || c0 >= b1 {
                    parts.push((b0, b1));
                } else {
                    if c0 > b0 {
                        parts.push((b0, c0));
                    }
                    if c1 < b1 {
                        parts.push((c1, b1));
                    }
                }
                parts
            })
            .collect();
    }
    out
}

/// Intersection of two sorted, disjoint interval lists.
pub fn intersect_intervals(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
        let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
        let dlat = la2 - la1;
        let dlon = (b.lon - a.lon).to_radians();
        let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * h.sqrt().asin()
    }

    fn winding_number(poly: &Polygon, p: LocalPoint) -> i32 {
        let mut wn = 0;
        for (a, b) in poly.edges() {
            if a.y <= p.y {
                if b.y > p.y && orient(a, b, p) > 0.0 {
                    wn += 1;
                }
            } else if b.y <= p.y && orient(a, b, p) < 0.0 {
                wn -= 1;
            }
        }
        wn
    }

    fn unit_square() -> Polygon {
        Polygon::rectangle(LocalPoint::new(0.0, 0.0), LocalPoint::new(1.0, 1.0)).unwrap()
    }

    fn u_shape() -> Polygon {
        Polygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(3.0, 0.0),
            LocalPoint::new(3.0, 3.0),
            LocalPoint::new(2.0, 3.0),
            LocalPoint::new(2.0, 1.0),
            LocalPoint::new(1.0, 1.0),
            LocalPoint::new(1.0, 3.0),
            LocalPoint::new(0.0, 3.0),
        ])
        .unwrap()
    }

    #[test]
    fn project_identity() {
        let o = GeoPoint::new(9.03, 38.74).unwrap();
        assert_eq!(project(o, o).unwrap(), LocalPoint::new(0.0, 0.0));
    }

    #[test]
    fn project_matches_haversine_north() {
        let o = GeoPoint::new(0.0, 0.0).unwrap();
        let p = GeoPoint::new(0.001, 0.0).unwrap();
        let l = project(o, p).unwrap();
        let h = haversine(o, p);
        assert!((l.y - h).abs() / h < 1e-3, "{} vs {h}", l.y);
        assert!((l.y - 111.19).abs() < 0.01);
        assert_eq!(l.x, 0.0);
    }

    #[test]
    fn project_shrinks_longitude_with_latitude() {
        let o = GeoPoint::new(60.0, 0.0).unwrap();
        let p = GeoPoint::new(60.0, 0.001).unwrap();
        let l = project(o, p).unwrap();
        let h = haversine(o, p);
        assert!((l.x - h).abs() / h < 1e-3, "{} vs {h}", l.x);
        assert!((l.x - 55.6).abs() < 0.05);
    }

    #[test]
    fn project_rejects_far_points() {
        let o = GeoPoint::new(10.0, 10.0).unwrap();
        assert_eq!(
            project(o, GeoPoint::new(11.5, 10.0).unwrap()),
            Err(GeoError::OutOfLocalRange)
        );
        assert_eq!(
            project(o, GeoPoint::new(10.0, 9.0).unwrap()),
            Err(GeoError::OutOfLocalRange)
        );
        assert!(GeoPoint::new(91.0, 0.0).is_err());
    }

    #[test]
    fn dist_basics() {
        let p = LocalPoint::new(3.5, -2.0);
        assert_eq!(dist(p, p), 0.0);
        assert_eq!(dist(LocalPoint::new(0.0, 0.0), LocalPoint::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn contains_square() {
        let sq = unit_square();
        assert!(contains(&sq, LocalPoint::new(0.5, 0.5)));
        assert!(!contains(&sq, LocalPoint::new(2.0, 0.5)));
        assert!(contains(&sq, LocalPoint::new(1.0, 0.3)), "boundary counts as inside");
        assert!(contains(&sq, LocalPoint::new(0.0, 0.0)));
        assert!(!sq.strictly_contains(LocalPoint::new(1.0, 0.3)));
    }

    #[test]
    fn contains_agrees_with_winding_number_on_concave_polygon() {
        let u = u_shape();
        for i in 0..60 {
            for j in 0..60 {
                let p = LocalPoint::new(-0.25 + i as f64 * 0.0593, -0.25 + j as f64 * 0.0593);
                if u.on_boundary(p) {
                    continue;
                }
                assert_eq!(contains(&u, p), winding_number(&u, p) != 0, "{p:?}");
            }
        }
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&unit_square()), 1.0);
        let farm = Polygon::rectangle(LocalPoint::new(0.0, 0.0), LocalPoint::new(200.0, 200.0)).unwrap();
        assert_eq!(area(&farm), 40_000.0);
        assert_eq!(area(&u_shape()), 7.0);
    }

    #[test]
    fn polygon_validation() {
        assert_eq!(
            Polygon::new(vec![LocalPoint::new(0.0, 0.0), LocalPoint::new(1.0, 0.0)]),
            Err(GeoError::TooFewVertices(2))
        );
        assert_eq!(
            Polygon::new(vec![
                LocalPoint::new(0.0, 0.0),
                LocalPoint::new(1.0, 0.0),
                LocalPoint::new(2.0, 0.0)
            ]),
            Err(GeoError::Degenerate)
        );
        let bowtie = Polygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(2.0, 2.0),
            LocalPoint::new(2.0, 0.0),
            LocalPoint::new(0.0, 1.0),
        ]);
        assert!(matches!(bowtie, Err(GeoError::SelfIntersecting(_, _))));
        // Explicitly closed rings are accepted.
        let closed = Polygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(1.0, 0.0),
            LocalPoint::new(0.0, 1.0),
            LocalPoint::new(0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(closed.vertices().len(), 3);
    }

    #[test]
    fn clip_line_through_square() {
        let segs = clip_line(&unit_square(), LocalPoint::new(-1.0, 0.5), LocalPoint::new(2.0, 0.5));
        assert_eq!(segs.len(), 1);
        let (a, b) = segs[0];
        assert!(dist(a, LocalPoint::new(0.0, 0.5)) < 1e-12);
        assert!(dist(b, LocalPoint::new(1.0, 0.5)) < 1e-12);
    }

    #[test]
    fn clip_line_missing() {
        assert!(clip_line(&unit_square(), LocalPoint::new(-1.0, 3.0), LocalPoint::new(2.0, 3.0)).is_empty());
    }

    #[test]
    fn clip_line_through_u_matches_sampling() {
        let u = u_shape();
        let a = LocalPoint::new(-0.5, 2.0);
        let b = LocalPoint::new(3.5, 2.0);
        let segs = clip_line(&u, a, b);
        assert_eq!(segs.len(), 2);
        // Oracle: dense sampling; every sample is inside iff it lies on a clipped segment.
        for k in 0..=4000 {
            let p = a.lerp(b, k as f64 / 4000.0);
            let on = segs.iter().any(|&(s, e)| point_segment_distance(p, s, e) < 1e-9);
            assert_eq!(on, contains(&u, p), "{p:?}");
        }
    }

    #[test]
    fn clip_line_along_edge_counts_as_inside() {
        let segs = clip_line(&unit_square(), LocalPoint::new(-1.0, 0.0), LocalPoint::new(2.0, 0.0));
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn interval_arithmetic() {
        let base = [(0.0, 1.0)];
        assert_eq!(subtract_intervals(&base, &[(0.25, 0.5)]), vec![(0.0, 0.25), (0.5, 1.0)]);
        assert_eq!(subtract_intervals(&base, &[(0.0, 1.0)]), vec![]);
        assert_eq!(
            intersect_intervals(&[(0.0, 0.5), (0.6, 1.0)], &[(0.4, 0.7)]),
            vec![(0.4, 0.5), (0.6, 0.7)]
        );
    }
}
