//! Sweep merging, back-projection and rigid registration.


use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::curtain::{camera_ray, sweep_schedule, CurtainProfile, PlcModel};
use crate::error::{Error, Result};
use crate::layout::Scenario;
use crate::monitor::{robot_body, robot_points};
use crate::plcsim::{render_depth, scene_at, shade, Body, IntensityImage, RenderOptions};
use crate::robotarm::Point3;

/// Per-pixel maximum over a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedImage {
    pub width: usize,
    pub height: usize,
    pub intensity: Vec<f64>,
    /// Control range of the frame that supplied the maximum; infinite where nothing returned.
    pub range: Vec<f64>,
}

impl MergedImage {
    pub fn empty(width: usize, height: usize) -> Self {
        MergedImage {
            width,
            height,
            intensity: vec![0.0; width * height],
            range: vec![f64::INFINITY; width * height],
        }
    }

    fn take(&mut self, k: usize, v: f64, r: f64) {
        let (cur, cur_r) = (self.intensity[k], self.range[k]);
        if v > cur || (v == cur && v > 0.0 && r < cur_r) {
            self.intensity[k] = v;
            self.range[k] = r;
        }
    }

    /// Folds one frame into the running maximum.
    pub fn add(&mut self, img: &IntensityImage) -> Result<()> {
        if img.width != self.width || img.height != self.height {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{}, merge is {}x{}",
                img.width, img.height, self.width, self.height
            )));
        }
        for row in 0..self.height {
            for col in 0..self.width {
                let k = row * self.width + col;
                self.take(k, img.intensity[k], img.column_range[col]);
            }
        }
        Ok(())
    }

    /// Merges two partial results; the same rule as [`MergedImage::add`].
    pub fn combine(&self, other: &MergedImage) -> Result<MergedImage> {
        if other.width != self.width || other.height != self.height {
            return Err(Error::DimensionMismatch("merged images differ in size".into()));
        }
        let mut out = self.clone();
        for k in 0..out.intensity.len() {
            out.take(k, other.intensity[k], other.range[k]);
        }
        Ok(out)
    }

    pub fn lit_pixels(&self) -> usize {
        self.intensity.iter().filter(|&&v| v > 0.0).count()
    }
}

pub fn merge_max(images: &[IntensityImage]) -> Result<MergedImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("merge needs at least one image".into()))?;
    let mut m = MergedImage::empty(first.width, first.height);
    for img in images {
        m.add(img)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub frame_id: String,
    pub points: Vec<Point3>,
    pub intensity: Vec<f64>,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>) -> Self {
        PointCloud {
            frame_id: frame_id.into(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point3, intensity: f64) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    pub fn transformed(&self, t: &RigidTransform3) -> PointCloud {
        PointCloud {
            frame_id: self.frame_id.clone(),
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            intensity: self.intensity.clone(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.intensity.extend_from_slice(&other.intensity);
    }
}

/// One world-frame point per pixel at or above `min_intensity`.
pub fn backproject(merged: &MergedImage, plc: &PlcModel, min_intensity: f64) -> Result<PointCloud> {
    if !(min_intensity > 0.0 && min_intensity <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "min_intensity must be in (0, 1], got {min_intensity}"
        )));
    }
    if merged.width != plc.n_cols || merged.height != plc.n_rows {
        return Err(Error::DimensionMismatch("merged image does not match the PLC".into()));
    }
    let mut cloud = PointCloud::new("world");
    for col in 0..merged.width {
        let ray = camera_ray(plc, col)?;
        for row in 0..merged.height {
            let k = row * merged.width + col;
            let v = merged.intensity[k];
            if v >= min_intensity {
                let r = merged.range[k];
                let xy = ray.at(r);
                cloud.push(Point3::new(xy.x, xy.y, plc.row_height(row, r)), v);
            }
        }
    }
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation_m: [f64; 3],
}

impl Serialize for RigidTransform3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        TransformRepr {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation_m: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let t = TransformRepr::deserialize(d)?;
        let r = Matrix3::from_fn(|i, j| t.rotation[i][j]);
        let out = RigidTransform3 {
            rotation: r,
            translation: Vector3::from(t.translation_m),
        };
        if !out.is_proper(1e-9) {
            return Err(serde::de::Error::custom("rotation is not orthonormal with det +1"));
        }
        Ok(out)
    }
}

impl Default for RigidTransform3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform3 {
    pub fn identity() -> Self {
        RigidTransform3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation by `yaw` about +z followed by a translation.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        RigidTransform3 {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::new(x, y, 0.0),
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform3 {
            rotation: *r.matrix(),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &RigidTransform3) -> RigidTransform3 {
        RigidTransform3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform3 {
        let rt = self.rotation.transpose();
        RigidTransform3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Angle of the rotation part.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

/// Uniform-grid spatial hash for nearest-neighbour queries.
///
/// Cells are stored densely over the occupied bounding box; the cell edge is
/// doubled until the box holds at most [`GridIndex::MAX_CELLS`] cells.
pub struct GridIndex<'a> {
    points: &'a [Point3],
    cell: f64,
    lo: [i64; 3],
    hi: [i64; 3],
    /// `order[start[c]..start[c + 1]]` are the points in cell `c`.
    start: Vec<u32>,
    order: Vec<u32>,
}

impl<'a> GridIndex<'a> {
    pub const MAX_CELLS: i64 = 1 << 24;

    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cell = cell;
        let (lo, hi) = loop {
            let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
            for p in points {
                for (d, v) in Self::key_of(cell, p).into_iter().enumerate() {
                    lo[d] = lo[d].min(v);
                    hi[d] = hi[d].max(v);
                }
            }
            if points.is_empty() {
                break ([0; 3], [0; 3]);
            }
            let n: i64 = (0..3).map(|d| hi[d] - lo[d] + 1).product();
            if n <= Self::MAX_CELLS {
                break (lo, hi);
            }
            cell *= 2.0;
        };
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        let n = (dims[0] * dims[1] * dims[2]) as usize;
        let flat = |k: [i64; 3]| (((k[0] - lo[0]) * dims[1] + (k[1] - lo[1])) * dims[2] + (k[2] - lo[2])) as usize;
        let mut start = vec![0u32; n + 1];
        let ids: Vec<usize> = points.iter().map(|p| flat(Self::key_of(cell, p))).collect();
        for &c in &ids {
            start[c + 1] += 1;
        }
        for c in 0..n {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        GridIndex {
            points,
            cell,
            lo,
            hi,
            start,
            order,
        }
    }

    fn key_of(cell: f64, p: &Point3) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    fn cell_points(&self, k: [i64; 3]) -> &[u32] {
        let dy = self.hi[1] - self.lo[1] + 1;
        let dz = self.hi[2] - self.lo[2] + 1;
        let c = (((k[0] - self.lo[0]) * dy + (k[1] - self.lo[1])) * dz + (k[2] - self.lo[2])) as usize;
        &self.order[self.start[c] as usize..self.start[c + 1] as usize]
    }

    /// Visits the points of every occupied cell at Chebyshev distance `r` from `c`.
    fn ring(&self, c: [i64; 3], r: i64, mut f: impl FnMut(u32)) {
        let span = |d: usize| ((c[d] - r).max(self.lo[d]), (c[d] + r).min(self.hi[d]));
        let (x0, x1) = span(0);
        let (y0, y1) = span(1);
        let (z0, z1) = span(2);
        for x in x0..=x1 {
            for y in y0..=y1 {
                let shell = (x - c[0]).abs() == r || (y - c[1]).abs() == r;
                if shell {
                    for z in z0..=z1 {
                        self.cell_points([x, y, z]).iter().for_each(|&i| f(i));
                    }
                } else {
                    // r > 0 here, so the two faces are distinct
                    for z in [c[2] - r, c[2] + r] {
                        if z >= z0 && z <= z1 {
                            self.cell_points([x, y, z]).iter().for_each(|&i| f(i));
                        }
                    }
                }
            }
        }
    }

    /// The `k` nearest points as `(index, distance)`, nearest first; ties by index.
    pub fn knn(&self, q: &Point3, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        self.knn_within(q, k, skip, f64::INFINITY)
    }

    /// As [`GridIndex::knn`], restricted to points within `max_d`.
    pub fn knn_within(&self, q: &Point3, k: usize, skip: Option<usize>, max_d: f64) -> Vec<(usize, f64)> {
        let c = Self::key_of(self.cell, q);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if self.points.is_empty() || k == 0 {
            return best;
        }
        let q_key = c;
        // ring that reaches every occupied cell
        let limit = (0..3)
            .map(|d| (q_key[d] - self.lo[d]).abs().max((self.hi[d] - q_key[d]).abs()))
            .max()
            .unwrap_or(0);
        let mut r = 0;
        loop {
            self.ring(c, r, |i| {
                let i = i as usize;
                if Some(i) == skip {
                    return;
                }
                let d = (self.points[i] - q).norm();
                if d > max_d {
                    return;
                }
                let pos = best.partition_point(|&(j, e)| e < d || (e == d && j < i));
                if pos < k {
                    best.insert(pos, (i, d));
                    best.truncate(k);
                }
            });
            // points beyond ring r are at least r cells away
            let reach = r as f64 * self.cell;
            if (best.len() == k && best[k - 1].1 <= reach) || reach > max_d || r >= limit {
                break;
            }
            r += 1;
        }
        best
    }

    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        self.knn(q, 1, None).into_iter().next()
    }

    pub fn nearest_within(&self, q: &Point3, max_d: f64) -> Option<(usize, f64)> {
        self.knn_within(q, 1, None, max_d).into_iter().next()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iter: usize,
    pub tol: f64,
    pub min_points: usize,
    /// Pairs farther apart than this are ignored.
    pub max_pair_distance: f64,
    /// Grid-hash cell edge, about twice the expected point spacing.
    pub cell_size: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iter: 50,
            tol: 1e-6,
            min_points: 100,
            max_pair_distance: f64::INFINITY,
            cell_size: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: RigidTransform3,
    /// Root-mean-square pair distance after the final update.
    pub rmse: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out first.
    pub converged: bool,
    /// Residual measured at the start of each iteration.
    pub residuals: Vec<f64>,
}

/// Least-squares rigid motion taking `src` onto `dst` (paired by index).
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform3> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::DimensionMismatch("kabsch needs equal, non-empty point sets".into()));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let r = v * fix * u.transpose();
    Ok(RigidTransform3 {
        rotation: r,
        translation: cd - r * cs,
    })
}

/// Pairs each point with its nearest target within `max_d`. The residual is
/// the root mean square over all points, with unpaired points counted at
/// `max_d`, so a rigid least-squares update can never increase it.
fn pair(src: &[Point3], index: &GridIndex, max_d: f64) -> (Vec<Point3>, Vec<Point3>, f64) {
    let mut a = Vec::with_capacity(src.len());
    let mut b = Vec::with_capacity(src.len());
    let mut sum = 0.0;
    for p in src {
        match index.nearest_within(p, max_d) {
            Some((j, d)) => {
                a.push(*p);
                b.push(index.points[j]);
                sum += d * d;
            }
            None => sum += max_d * max_d,
        }
    }
    let rms = if a.is_empty() { f64::INFINITY } else { (sum / src.len() as f64).sqrt() };
    (a, b, rms)
}

/// Point-to-point ICP from `init`.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform3,
    params: &IcpParams,
) -> Result<IcpResult> {
    for (name, c) in [("source", source), ("target", target)] {
        if c.len() < params.min_points {
            return Err(Error::InsufficientPoints(format!(
                "{name} cloud has {} points, need {}",
                c.len(),
                params.min_points
            )));
        }
    }
    let index = GridIndex::new(&target.points, params.cell_size);
    let mut t = *init;
    let mut residuals = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let moved: Vec<Point3> = source.points.iter().map(|p| t.apply(p)).collect();
        let (a, b, err) = pair(&moved, &index, params.max_pair_distance);
        residuals.push(err);
        if a.len() < 3 {
            break;
        }
        t = kabsch(&a, &b)?.compose(&t);
        if prev - err < params.tol {
            converged = true;
            break;
        }
        prev = err;
    }
    let moved: Vec<Point3> = source.points.iter().map(|p| t.apply(p)).collect();
    let (_, _, rmse) = pair(&moved, &index, params.max_pair_distance);
    Ok(IcpResult {
        transform: t,
        rmse,
        iterations,
        converged,
        residuals,
    })
}

/// Pair-distance caps used by [`reconstruct_scene`], coarse to fine.
pub const PAIR_SCHEDULE_M: [f64; 3] = [0.3, 0.1, 0.05];

/// Runs [`icp_register`] once per cap in `schedule`, each stage starting
/// where the previous one stopped. Caps are clipped to `params.max_pair_distance`.
/// Residuals of all stages are concatenated.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform3,
    params: &IcpParams,
    schedule: &[f64],
) -> Result<IcpResult> {
    let mut out: Option<IcpResult> = None;
    for &d in schedule {
        let stage = IcpParams {
            max_pair_distance: d.min(params.max_pair_distance),
            ..*params
        };
        let start = out.as_ref().map_or(*init, |o| o.transform);
        let r = icp_register(source, target, &start, &stage)?;
        out = Some(match out {
            None => r,
            Some(mut o) => {
                o.iterations += r.iterations;
                o.residuals.extend(r.residuals);
                IcpResult { residuals: o.residuals, iterations: o.iterations, ..r }
            }
        });
    }
    match out {
        Some(o) => Ok(o),
        None => icp_register(source, target, init, params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Range bound is measured from here.
    pub origin: [f64; 3],
    pub max_range: f64,
    pub k: usize,
    pub sigma: f64,
    pub cell_size: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            origin: [0.0; 3],
            max_range: f64::INFINITY,
            k: 8,
            sigma: 2.0,
            cell_size: 0.05,
        }
    }
}

/// Drops points beyond the range bound, then statistical outliers.
pub fn filter_cloud(cloud: &PointCloud, params: &FilterParams) -> PointCloud {
    let origin = Point3::from(params.origin);
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - origin).norm() <= params.max_range)
        .collect();
    let pts: Vec<Point3> = keep.iter().map(|&i| cloud.points[i]).collect();
    let mut out = PointCloud::new(cloud.frame_id.clone());
    if pts.len() <= params.k || params.k == 0 || params.sigma == f64::INFINITY {
        for &i in &keep {
            out.push(cloud.points[i], cloud.intensity[i]);
        }
        return out;
    }
    let index = GridIndex::new(&pts, params.cell_size);
    let mean_d: Vec<f64> = (0..pts.len())
        .map(|i| {
            let nn = index.knn(&pts[i], params.k, Some(i));
            nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let n = mean_d.len() as f64;
    let mu = mean_d.iter().sum::<f64>() / n;
    let sd = (mean_d.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n).sqrt();
    let cut = mu + params.sigma * sd;
    for (j, &i) in keep.iter().enumerate() {
        if mean_d[j] <= cut {
            out.push(cloud.points[i], cloud.intensity[i]);
        }
    }
    out
}

/// Static scene of a scenario at t = 0: obstacles plus robot bodies.
pub fn static_scene(scenario: &Scenario) -> Result<Vec<Body>> {
    let mut bodies = scene_at(&scenario.obstacles, 0.0);
    for r in 0..scenario.robots.len() {
        let pts = robot_points(scenario, r, 0.0)?;
        bodies.push(robot_body(&pts, 1.0).1);
    }
    Ok(bodies)
}

/// Renders a planar sweep with the sensor at its true pose and merges it.
pub fn sweep_merge(bodies: &[Body], plc: &PlcModel, profiles: &[CurtainProfile]) -> Result<MergedImage> {
    let depth = render_depth(bodies, plc);
    let mut merged = MergedImage::empty(plc.n_cols, plc.n_rows);
    for (f, p) in profiles.iter().enumerate() {
        merged.add(&shade(&depth, plc, p, f as u64, &RenderOptions::default()))?;
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub merged: Vec<MergedImage>,
    /// Filtered per-PLC clouds, back-projected with the calibrated poses.
    pub clouds: Vec<PointCloud>,
    /// Registration of cloud `i + 1` onto cloud 0.
    pub registrations: Vec<IcpResult>,
    pub combined: PointCloud,
}

/// Sweeps every PLC, back-projects, filters and registers the clouds onto the first.
pub fn reconstruct_scene(scenario: &Scenario, interval: f64, icp: &IcpParams) -> Result<Reconstruction> {
    let poses = scenario.require_plc_poses()?;
    let s = &scenario.sensor;
    let bodies = static_scene(scenario)?;
    let mut merged = Vec::new();
    let mut clouds = Vec::new();
    for (i, &pose) in poses.iter().enumerate() {
        let truth = PlcModel::from_params(scenario.true_plc_pose(i)?, s)?;
        let believed = PlcModel::from_params(pose, s)?;
        let sweep = sweep_schedule(s.sweep_min_m, s.sweep_max_m, interval, &truth)?;
        let m = sweep_merge(&bodies, &truth, &sweep)?;
        let cloud = backproject(&m, &believed, 0.5)?;
        let filtered = filter_cloud(
            &cloud,
            &FilterParams {
                origin: [pose.x, pose.y, s.mount_height_m],
                max_range: s.sweep_max_m + s.curtain_thickness_m + s.mount_height_m,
                ..Default::default()
            },
        );
        merged.push(m);
        clouds.push(filtered);
    }
    let mut combined = clouds[0].clone();
    let mut registrations = Vec::new();
    for c in &clouds[1..] {
        let r = icp_refine(c, &clouds[0], &RigidTransform3::identity(), icp, &PAIR_SCHEDULE_M)?;
        combined.extend(&c.transformed(&r.transform));
        registrations.push(r);
    }
    Ok(Reconstruction {
        merged,
        clouds,
        registrations,
        combined,
    })
}
