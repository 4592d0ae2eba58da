//! Planar geometry kernel.
//!
//! Everything the rest of the crate does in the top-down plane goes through
//! here: hulls, ray casting, subtended angles, field-of-view and occlusion
//! predicates, and convex offsetting. All angles are radians and all lengths
//! meters. Polygons are stored counter-clockwise.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (meters) for on-boundary and collinearity tests.
pub const GEOM_EPS: f64 = 1e-9;

/// A point (or free vector) in the top-down plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// Unit vector at `heading` radians from the +x axis.
    pub fn from_angle(heading: f64) -> Self {
        Point2::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Counter-clockwise rotation by `angle` radians about the origin.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        self + (o - self) * t
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_tau(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// A sensor or object pose in the top-down plane.
///
/// `theta` is always normalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    x_m: f64,
    y_m: f64,
    theta_rad: f64,
}

impl From<PoseRepr> for Pose2D {
    fn from(r: PoseRepr) -> Self {
        Pose2D::new(r.x_m, r.y_m, r.theta_rad)
    }
}

impl From<Pose2D> for PoseRepr {
    fn from(p: Pose2D) -> Self {
        PoseRepr {
            x_m: p.x,
            y_m: p.y,
            theta_rad: p.theta,
        }
    }
}

impl Default for Pose2D {
    fn default() -> Self {
        Pose2D::new(0.0, 0.0, 0.0)
    }
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: wrap_tau(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Expresses a world point in this pose's frame.
    pub fn to_local(&self, p: Point2) -> Point2 {
        (p - self.position()).rotate(-self.theta)
    }

    /// Maps a point from this pose's frame into the world.
    pub fn to_world(&self, p: Point2) -> Point2 {
        p.rotate(self.theta) + self.position()
    }

    /// Bearing of a world point relative to the heading, in `(-π, π]`.
    pub fn bearing_to(&self, p: Point2) -> f64 {
        wrap_pi((p - self.position()).angle() - self.theta)
    }
}

/// A simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polygon2 {
    vertices: Vec<Point2>,
}

impl<'de> Deserialize<'de> for Polygon2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: Vec<Point2>,
        }
        let raw = Raw::deserialize(d)?;
        Polygon2::new(raw.vertices).map_err(serde::de::Error::custom)
    }
}

impl Polygon2 {
    /// Validates and normalizes to counter-clockwise order.
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateInput(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite polygon vertex".into()));
        }
        let area = signed_area(&vertices);
        if area.abs() <= GEOM_EPS * GEOM_EPS {
            return Err(Error::DegenerateInput("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let poly = Polygon2 { vertices };
        if !poly.is_simple() {
            return Err(Error::DegenerateInput("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle.
    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        Polygon2::new(vec![
            Point2::new(min_x, min_y),
            Point2::new(max_x, min_y),
            Point2::new(max_x, max_y),
            Point2::new(min_x, max_y),
        ])
    }

    pub(crate) fn from_ccw_unchecked(vertices: Vec<Point2>) -> Self {
        debug_assert!(vertices.len() >= 3);
        Polygon2 { vertices }
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges as `(start, end)` pairs, closing back to the first vertex.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point2 {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for (p, q) in self.edges() {
            let w = p.cross(q);
            a2 += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    /// Convex with every turn left (collinear vertices tolerated).
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            signed_line_distance(a, b, c) >= -GEOM_EPS
        })
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Distance from `p` to the nearest point of the boundary.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Inside or within [`GEOM_EPS`] of the boundary.
    pub fn contains(&self, p: Point2) -> bool {
        self.boundary_distance(p) <= GEOM_EPS || self.crossing_inside(p)
    }

    /// Inside and farther than [`GEOM_EPS`] from the boundary.
    pub fn contains_strict(&self, p: Point2) -> bool {
        self.crossing_inside(p) && self.boundary_distance(p) > GEOM_EPS
    }

    /// Signed distance: negative inside, positive outside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        let d = self.boundary_distance(p);
        if self.crossing_inside(p) {
            -d
        } else {
            d
        }
    }

    fn crossing_inside(&self, p: Point2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Applies a rigid pose (rotation then translation) to every vertex.
    pub fn transformed(&self, pose: &Pose2D) -> Polygon2 {
        Polygon2 {
            vertices: self.vertices.iter().map(|&p| pose.to_world(p)).collect(),
        }
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>()
}

/// Signed distance of `p` from the directed line `a -> b` (positive = left).
fn signed_line_distance(a: Point2, b: Point2, p: Point2) -> f64 {
    let e = b - a;
    let len = e.norm();
    if len == 0.0 {
        return (p - a).norm();
    }
    e.cross(p - a) / len
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    p.distance(a + e * t)
}

fn segments_touch(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0 && o3 * o4 < 0 {
        return true;
    }
    (o1 == 0 && point_segment_distance(c, a, b) <= GEOM_EPS)
        || (o2 == 0 && point_segment_distance(d, a, b) <= GEOM_EPS)
        || (o3 == 0 && point_segment_distance(a, c, d) <= GEOM_EPS)
        || (o4 == 0 && point_segment_distance(b, c, d) <= GEOM_EPS)
}

fn orient(a: Point2, b: Point2, p: Point2) -> i8 {
    let s = signed_line_distance(a, b, p);
    if s > GEOM_EPS {
        1
    } else if s < -GEOM_EPS {
        -1
    } else {
        0
    }
}

/// A half-line with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray2 {
    pub origin: Point2,
    direction: Point2,
}

impl Ray2 {
    pub fn from_heading(origin: Point2, heading: f64) -> Self {
        Ray2 {
            origin,
            direction: Point2::from_angle(heading),
        }
    }

    /// Normalizes `direction`; fails on a zero vector.
    pub fn new(origin: Point2, direction: Point2) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() || !origin.is_finite() {
            return Err(Error::InvalidArgument("ray needs a finite non-zero direction".into()));
        }
        Ok(Ray2 {
            origin,
            direction: direction * (1.0 / n),
        })
    }

    pub fn direction(&self) -> Point2 {
        self.direction
    }

    pub fn heading(&self) -> f64 {
        self.direction.angle()
    }

    pub fn at(&self, t: f64) -> Point2 {
        self.origin + self.direction * t
    }
}

/// Convex hull by Quickhull.
///
/// Returns a strictly convex CCW polygon whose vertices are a subset of the
/// input; points within [`GEOM_EPS`] of a hull edge are dropped.
pub fn convex_hull(points: &[Point2]) -> Result<Polygon2> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("non-finite point in hull input".into()));
    }
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "convex hull needs at least 3 points, got {}",
            points.len()
        )));
    }
    let lex = |p: &Point2, q: &Point2| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y));
    let a = *points.iter().min_by(|p, q| lex(p, q)).unwrap();
    let b = *points.iter().max_by(|p, q| lex(p, q)).unwrap();
    if a == b {
        return Err(Error::DegenerateInput("all hull points coincide".into()));
    }

    let mut below = Vec::new();
    let mut above = Vec::new();
    for &p in points {
        let s = signed_line_distance(a, b, p);
        if s < -GEOM_EPS {
            below.push(p);
        } else if s > GEOM_EPS {
            above.push(p);
        }
    }

    let mut hull = vec![a];
    hull_chain(a, b, &below, &mut hull);
    hull.push(b);
    hull_chain(b, a, &above, &mut hull);

    if hull.len() < 3 {
        return Err(Error::DegenerateInput("hull points are collinear".into()));
    }
    Ok(Polygon2::from_ccw_unchecked(hull))
}

/// Appends the hull vertices strictly right of `p -> q`, in order from p to q.
fn hull_chain(p: Point2, q: Point2, candidates: &[Point2], out: &mut Vec<Point2>) {
    let mut far = None;
    let mut far_d = GEOM_EPS;
    for &c in candidates {
        let d = -signed_line_distance(p, q, c);
        if d > far_d {
            far_d = d;
            far = Some(c);
        }
    }
    let Some(c) = far else { return };

    let right_of = |s: Point2, e: Point2| -> Vec<Point2> {
        candidates
            .iter()
            .copied()
            .filter(|&r| signed_line_distance(s, e, r) < -GEOM_EPS)
            .collect()
    };
    let left = right_of(p, c);
    let right = right_of(c, q);
    hull_chain(p, c, &left, out);
    out.push(c);
    hull_chain(c, q, &right, out);
}

/// Smallest `t >= 0` at which the ray meets the polygon boundary.
pub fn ray_polygon_entry(ray: &Ray2, poly: &Polygon2) -> Option<f64> {
    let o = ray.origin;
    let d = ray.direction;
    let mut best: Option<f64> = None;
    let mut take = |t: f64| {
        if best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    for (a, b) in poly.edges() {
        let e = b - a;
        let elen = e.norm();
        let denom = d.cross(e);
        let ao = a - o;
        if denom.abs() <= 1e-12 * elen {
            // parallel; only a collinear edge can be hit
            if ao.cross(d).abs() <= GEOM_EPS {
                let ta = ao.dot(d);
                let tb = (b - o).dot(d);
                if ta.max(tb) >= 0.0 {
                    take(ta.min(tb).max(0.0));
                }
            }
            continue;
        }
        let t = ao.cross(e) / denom;
        let s = ao.cross(d) / denom;
        let s_tol = GEOM_EPS / elen;
        if t >= -GEOM_EPS && s >= -s_tol && s <= 1.0 + s_tol {
            take(t.max(0.0));
        }
    }
    best
}

/// Unsigned angle at `viewpoint` between the rays towards `a` and `b`, in `[0, π]`.
pub fn subtended_angle(viewpoint: Point2, a: Point2, b: Point2) -> Result<f64> {
    let u = a - viewpoint;
    let w = b - viewpoint;
    if u.norm() <= GEOM_EPS || w.norm() <= GEOM_EPS {
        return Err(Error::DegenerateInput(
            "subtended angle endpoint coincides with the viewpoint".into(),
        ));
    }
    Ok(u.cross(w).abs().atan2(u.dot(w)))
}

/// Whether `p` lies inside the sensor's angular field of view and range.
pub fn in_fov(sensor: &Pose2D, fov: f64, max_range: f64, p: Point2) -> bool {
    let d = p - sensor.position();
    let dist = d.norm();
    if dist > max_range {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    sensor.bearing_to(p).abs() <= 0.5 * fov
}

/// Whether the open segment `(a, b)` passes through the interior of any blocker.
pub fn segment_occluded(a: Point2, b: Point2, blockers: &[Polygon2]) -> bool {
    blockers.iter().any(|poly| segment_enters(a, b, poly))
}

fn segment_enters(a: Point2, b: Point2, poly: &Polygon2) -> bool {
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return false;
    }
    let mut cuts = vec![0.0, 1.0];
    for (p, q) in poly.edges() {
        let e = q - p;
        let denom = d.cross(e);
        let ap = p - a;
        if denom.abs() <= 1e-12 * len * e.norm() {
            if ap.cross(d).abs() <= GEOM_EPS * len {
                cuts.push(ap.dot(d) / (len * len));
                cuts.push((q - a).dot(d) / (len * len));
            }
            continue;
        }
        let t = ap.cross(e) / denom;
        let s = ap.cross(d) / denom;
        if (-1e-12..=1.0 + 1e-12).contains(&s) {
            cuts.push(t);
        }
    }
    cuts.retain(|t| (0.0..=1.0).contains(t));
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2)
        .filter(|w| (w[1] - w[0]) * len > GEOM_EPS)
        .any(|w| poly.contains_strict(a + d * (0.5 * (w[0] + w[1]))))
}

/// Mitred outward offset of a convex polygon.
///
/// Every edge moves outward by `d` along its normal; each vertex moves along
/// its bisector by `d / cos(half turning angle)`.
pub fn offset_convex(poly: &Polygon2, d: f64) -> Result<Polygon2> {
    if !poly.is_convex() {
        return Err(Error::DegenerateInput("offset requires a convex polygon".into()));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::InvalidArgument(format!("offset distance must be >= 0, got {d}")));
    }
    if d == 0.0 {
        return Ok(poly.clone());
    }
    let v = poly.vertices();
    let n = v.len();
    let normals: Vec<Point2> = (0..n)
        .map(|i| {
            let e = v[(i + 1) % n] - v[i];
            Point2::new(e.y, -e.x) * (1.0 / e.norm())
        })
        .collect();
    let out = (0..n)
        .map(|i| {
            let n_prev = normals[(i + n - 1) % n];
            let n_next = normals[i];
            let k = d / (1.0 + n_prev.dot(n_next));
            v[i] + (n_prev + n_next) * k
        })
        .collect();
    Ok(Polygon2::from_ccw_unchecked(out))
}
