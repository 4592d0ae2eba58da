//! Shared fixtures and independent reference implementations for the integration tests.
#![allow(dead_code)]

use lightcurtain::geom2d::{Point2, Polygon2, Ray2};
use lightcurtain::layout::{load_scenario, Scenario};
use lightcurtain::plcsim::Body;
use lightcurtain::robotarm::{ArmChain, JointState, Point3};

pub fn fixture(name: &str) -> Scenario {
    let path = format!("{}/../../fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Jarvis march. Returns hull vertices counter-clockwise, collinear points dropped.
pub fn gift_wrap(points: &[Point2]) -> Vec<Point2> {
    let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let d2 = |a: Point2, b: Point2| (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    let start = *points
        .iter()
        .min_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)))
        .unwrap();
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut next = if points[0] == cur { points[1] } else { points[0] };
        for &p in points {
            if p == cur {
                continue;
            }
            let c = cross(cur, next, p);
            // p is clockwise of next, or collinear and farther
            if c < 0.0 || (c == 0.0 && d2(cur, p) > d2(cur, next)) {
                next = p;
            }
        }
        if next == start {
            break;
        }
        hull.push(next);
        cur = next;
        assert!(hull.len() <= points.len(), "gift wrap did not close");
    }
    hull
}

/// Same vertex cycle up to rotation, within `tol`.
pub fn same_cycle(a: &[Point2], b: &[Point2], tol: f64) -> bool {
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let n = a.len();
    (0..n).any(|s| (0..n).all(|i| a[i].distance(b[(i + s) % n]) <= tol))
}

fn inside_crossing(poly: &[Point2], p: Point2) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
    }
    inside
}

/// Walks the ray in fixed steps, then bisects the first outside-to-inside step.
pub fn march_entry(ray: &Ray2, poly: &Polygon2, max_t: f64, step: f64) -> Option<f64> {
    let v = poly.vertices();
    if inside_crossing(v, ray.origin) {
        return Some(0.0);
    }
    let mut t = 0.0;
    while t < max_t {
        let t1 = t + step;
        if inside_crossing(v, ray.at(t1)) {
            let (mut lo, mut hi) = (t, t1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside_crossing(v, ray.at(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        t = t1;
    }
    None
}

/// Point-in-polygon by crossing number with a strict margin from the boundary.
pub fn strictly_inside(poly: &[Point2], p: Point2) -> bool {
    if !inside_crossing(poly, p) {
        return false;
    }
    let n = poly.len();
    (0..n).all(|i| seg_dist(p, poly[i], poly[(i + 1) % n]) > 1e-12)
}

pub fn seg_dist(p: Point2, a: Point2, b: Point2) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let l2 = abx * abx + aby * aby;
    let t = if l2 == 0.0 { 0.0 } else { (((p.x - a.x) * abx + (p.y - a.y) * aby) / l2).clamp(0.0, 1.0) };
    ((p.x - a.x - t * abx).powi(2) + (p.y - a.y - t * aby).powi(2)).sqrt()
}

type M4 = [[f64; 4]; 4];

fn mat_mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn rot(axis: [f64; 3], q: f64) -> M4 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = q.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0.0],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0.0],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn frame(translation: [f64; 3], rpy: [f64; 3]) -> M4 {
    let r = mat_mul(&mat_mul(&rot([0.0, 0.0, 1.0], rpy[2]), &rot([0.0, 1.0, 0.0], rpy[1])), &rot([1.0, 0.0, 0.0], rpy[0]));
    let mut m = r;
    for i in 0..3 {
        m[i][3] = translation[i];
    }
    m
}

fn apply(m: &M4, p: [f64; 3]) -> Point3 {
    let v: Vec<f64> = (0..3).map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3]).collect();
    Point3::new(v[0], v[1], v[2])
}

/// Forward kinematics by explicit 4x4 homogeneous products.
pub fn fk_matrix(chain: &ArmChain, state: &JointState) -> Vec<Point3> {
    let mut t = frame(chain.base.translation, chain.base.rpy);
    let mut joints = Vec::new();
    let mut out = Vec::new();
    for (link, &q) in chain.links.iter().zip(&state.angles) {
        let j = mat_mul(&t, &rot(link.axis, q));
        t = mat_mul(&j, &frame(link.transform.translation, link.transform.rpy));
        out.push(apply(&t, [0.0; 3]));
        joints.push(j);
    }
    for vp in chain.virtual_points() {
        out.push(apply(&joints[vp.link], vp.offset));
    }
    out
}

/// Euclidean distance from `p` to the surface of the nearest vertical prism.
pub fn surface_distance(bodies: &[Body], p: &Point3) -> f64 {
    bodies
        .iter()
        .map(|b| {
            let v = b.footprint.vertices();
            let q = Point2::new(p.x, p.y);
            let edge = (0..v.len())
                .map(|i| seg_dist(q, v[i], v[(i + 1) % v.len()]))
                .fold(f64::INFINITY, f64::min);
            let inside = inside_crossing(v, q);
            let dz = (b.z_min - p.z).max(p.z - b.z_max).max(0.0);
            match (inside, dz > 0.0) {
                (true, false) => edge.min(p.z - b.z_min).min(b.z_max - p.z),
                (true, true) => dz,
                (false, false) => edge,
                (false, true) => edge.hypot(dz),
            }
        })
        .fold(f64::INFINITY, f64::min)
}
