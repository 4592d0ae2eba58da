//! Light-curtain profiles.
//!
//! A curtain is fully described by one control point per camera column: the
//! range along that column's top-down ray where the laser sheet meets the
//! imaging plane. This module builds profiles for the three uses the system
//! has for them: safety curtains wrapped around robot hulls, planar curtains
//! for sweeps, and slope-limited random curtains. [`interleave`] mixes safety
//! and sweep frames into a single projection schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{convex_hull, offset_convex, ray_polygon_entry, Point2, Polygon2, Pose2D, Ray2, GEOM_EPS};
use crate::layout::SensorParams;

/// Smallest range a control point may take.
pub const MIN_RANGE: f64 = 1e-6;

/// Geometry and timing of one PLC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlcModel {
    pub pose: Pose2D,
    pub fov: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub max_range: f64,
    pub frame_rate: f64,
    pub curtain_thickness: f64,
    pub mount_height: f64,
    pub vertical_fov: f64,
    /// Largest range change between adjacent columns the galvo can follow.
    pub galvo_slope: f64,
}

impl PlcModel {
    pub fn from_params(pose: Pose2D, p: &SensorParams) -> Result<Self> {
        let m = PlcModel {
            pose,
            fov: p.fov_rad,
            n_cols: p.n_cols,
            n_rows: p.n_rows,
            max_range: p.max_range_m,
            frame_rate: p.frame_rate_hz,
            curtain_thickness: p.curtain_thickness_m,
            mount_height: p.mount_height_m,
            vertical_fov: p.vertical_fov_rad,
            galvo_slope: p.galvo_slope_m,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cols < 2 {
            return Err(Error::InvalidArgument("PLC needs at least 2 columns".into()));
        }
        if !(self.fov > 0.0 && self.fov <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument("PLC fov must be in (0, π]".into()));
        }
        if !(self.frame_rate > 0.0) || !(self.curtain_thickness > 0.0) || !(self.max_range > 0.0) {
            return Err(Error::InvalidArgument(
                "frame rate, thickness and range must be positive".into(),
            ));
        }
        if self.n_rows == 0 || !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::InvalidArgument("invalid vertical imaging geometry".into()));
        }
        Ok(())
    }

    /// Column bearing relative to the PLC heading.
    pub fn column_bearing(&self, col: usize) -> f64 {
        -0.5 * self.fov + (col as f64 + 0.5) * (self.fov / self.n_cols as f64)
    }

    /// Column ray in the PLC's own frame.
    pub fn local_ray(&self, col: usize) -> Ray2 {
        Ray2::from_heading(Point2::default(), self.column_bearing(col))
    }

    /// Column whose angular slot contains a local bearing, if inside the fov.
    pub fn column_for_bearing(&self, bearing: f64) -> Option<usize> {
        let u = (bearing + 0.5 * self.fov) / (self.fov / self.n_cols as f64);
        if u < 0.0 || u >= self.n_cols as f64 {
            None
        } else {
            Some(u as usize)
        }
    }

    /// Elevation angle of a pixel row's center; row 0 looks highest.
    pub fn row_elevation(&self, row: usize) -> f64 {
        0.5 * self.vertical_fov - (row as f64 + 0.5) * (self.vertical_fov / self.n_rows as f64)
    }

    /// Height seen by `row` at horizontal range `range`.
    pub fn row_height(&self, row: usize, range: f64) -> f64 {
        self.mount_height + range * self.row_elevation(row).tan()
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

/// Top-down camera ray of column `col` in the world frame.
pub fn camera_ray(plc: &PlcModel, col: usize) -> Result<Ray2> {
    if col >= plc.n_cols {
        return Err(Error::IndexOutOfRange(format!(
            "column {col} outside 0..{}",
            plc.n_cols
        )));
    }
    Ok(Ray2::from_heading(plc.pose.position(), plc.pose.theta + plc.column_bearing(col)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurtainKind {
    Safety,
    Planar,
    Random,
}

/// Control-point range per camera column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurtainProfile {
    pub ranges: Vec<f64>,
    pub kind: CurtainKind,
    pub stamp: u64,
}

impl CurtainProfile {
    /// Control points in the PLC frame.
    pub fn control_points_local(&self, plc: &PlcModel) -> Vec<Point2> {
        self.ranges
            .iter()
            .enumerate()
            .map(|(c, &r)| plc.local_ray(c).at(r))
            .collect()
    }

    pub fn control_points_world(&self, plc: &PlcModel) -> Vec<Point2> {
        self.control_points_local(plc)
            .into_iter()
            .map(|p| plc.pose.to_world(p))
            .collect()
    }
}

/// A safety curtain with the geometry it was derived from (PLC frame).
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyCurtain {
    pub profile: CurtainProfile,
    /// Hull vertices, or the padded segment/point when the input was degenerate.
    pub core: Vec<Point2>,
    /// Offset shell the camera rays were traced against.
    pub shell: Polygon2,
    /// Set when the input points were collinear and a padded capsule was used.
    pub fallback: bool,
    /// Columns whose ray met the shell within range.
    pub hit_columns: Vec<usize>,
}

/// Wraps robot points (PLC frame) in an offset hull and traces every camera ray against it.
///
/// Columns that miss the shell, or meet it beyond `max_range`, are parked at
/// `max_range` so the profile always has one control point per column.
pub fn design_safety_curtain(points: &[Point2], plc: &PlcModel, offset: f64) -> Result<SafetyCurtain> {
    if !(offset > 0.0) || !offset.is_finite() {
        return Err(Error::InvalidArgument(format!("safety offset must be > 0, got {offset}")));
    }
    if points.is_empty() {
        return Err(Error::DegenerateInput("no robot points".into()));
    }
    let (core, shell, fallback) = match convex_hull(points) {
        Ok(hull) => {
            let shell = offset_convex(&hull, offset)?;
            (hull.vertices().to_vec(), shell, false)
        }
        Err(Error::DegenerateInput(_)) => {
            let (a, b) = extreme_pair(points);
            (vec![a, b], capsule(a, b, offset)?, true)
        }
        Err(e) => return Err(e),
    };
    let mut hit_columns = Vec::new();
    let ranges = (0..plc.n_cols)
        .map(|c| match ray_polygon_entry(&plc.local_ray(c), &shell) {
            Some(t) if t <= plc.max_range => {
                hit_columns.push(c);
                t.max(MIN_RANGE)
            }
            _ => plc.max_range,
        })
        .collect();
    Ok(SafetyCurtain {
        profile: CurtainProfile {
            ranges,
            kind: CurtainKind::Safety,
            stamp: 0,
        },
        core,
        shell,
        fallback,
        hit_columns,
    })
}

fn extreme_pair(points: &[Point2]) -> (Point2, Point2) {
    let mut best = (points[0], points[0]);
    let mut d = -1.0;
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i..] {
            let e = p.distance(q);
            if e > d {
                d = e;
                best = (p, q);
            }
        }
    }
    best
}

/// Convex octagon-capped capsule around a segment, containing the radius-`r` tube.
fn capsule(a: Point2, b: Point2, r: f64) -> Result<Polygon2> {
    let rr = r / (std::f64::consts::PI / 8.0).cos();
    let mut pts = Vec::with_capacity(16);
    for c in [a, b] {
        for k in 0..8 {
            let ang = (k as f64 + 0.5) * std::f64::consts::FRAC_PI_4;
            pts.push(c + Point2::from_angle(ang) * rr);
        }
    }
    convex_hull(&pts)
}

/// Control points on the frontal plane `depth` meters ahead of the PLC.
pub fn planar_curtain(depth: f64, plc: &PlcModel) -> Result<CurtainProfile> {
    if !(depth > 0.0 && depth <= plc.max_range) {
        return Err(Error::InvalidArgument(format!(
            "planar depth {depth} outside (0, {}]",
            plc.max_range
        )));
    }
    let ranges = (0..plc.n_cols)
        .map(|c| (depth / plc.column_bearing(c).cos()).min(plc.max_range))
        .collect();
    Ok(CurtainProfile {
        ranges,
        kind: CurtainKind::Planar,
        stamp: 0,
    })
}

/// Planar curtains at `d_min, d_min + interval, ...` up to `d_max`.
pub fn sweep_schedule(d_min: f64, d_max: f64, interval: f64, plc: &PlcModel) -> Result<Vec<CurtainProfile>> {
    if !(d_min < d_max) || !(interval > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sweep needs d_min < d_max and interval > 0 (got {d_min}, {d_max}, {interval})"
        )));
    }
    let steps = ((d_max - d_min) / interval + GEOM_EPS).floor() as u64;
    (0..=steps)
        .map(|i| {
            let mut p = planar_curtain(d_min + i as f64 * interval, plc)?;
            p.stamp = i;
            Ok(p)
        })
        .collect()
}

/// Random curtain with ranges in `(0, max_range]` and adjacent columns at
/// most `plc.galvo_slope` apart.
pub fn random_curtain(plc: &PlcModel, seed: u64) -> CurtainProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = plc.max_range;
    let s = plc.galvo_slope;
    let mut ranges = Vec::with_capacity(plc.n_cols);
    // b - u(b - a) with u in [0, 1) lands in (a, b]
    let draw = |rng: &mut ChaCha8Rng, a: f64, b: f64| b - rng.random::<f64>() * (b - a);
    let mut prev = draw(&mut rng, 0.0, max);
    ranges.push(prev);
    for _ in 1..plc.n_cols {
        let a = (prev - s).max(0.0);
        let b = (prev + s).min(max);
        prev = draw(&mut rng, a, b).max(MIN_RANGE);
        ranges.push(prev);
    }
    CurtainProfile {
        ranges,
        kind: CurtainKind::Random,
        stamp: seed,
    }
}

/// Emits `k` safety curtains, then one sweep curtain, repeating.
///
/// Ends when the safety stream ends (after any sweep frame owed by a complete
/// group); once the sweep stream is exhausted safety frames pass through.
pub fn interleave<S, W>(safety: S, sweep: W, k: usize) -> Result<Interleave<S::IntoIter, W::IntoIter>>
where
    S: IntoIterator<Item = CurtainProfile>,
    W: IntoIterator<Item = CurtainProfile>,
{
    if k == 0 {
        return Err(Error::InvalidArgument("interleave ratio must be >= 1".into()));
    }
    Ok(Interleave {
        safety: safety.into_iter(),
        sweep: sweep.into_iter(),
        k,
        run: 0,
    })
}

pub struct Interleave<S, W> {
    safety: S,
    sweep: W,
    k: usize,
    run: usize,
}

impl<S, W> Iterator for Interleave<S, W>
where
    S: Iterator<Item = CurtainProfile>,
    W: Iterator<Item = CurtainProfile>,
{
    type Item = CurtainProfile;

    fn next(&mut self) -> Option<CurtainProfile> {
        if self.run == self.k {
            self.run = 0;
            if let Some(w) = self.sweep.next() {
                return Some(w);
            }
        }
        let s = self.safety.next()?;
        self.run += 1;
        Some(s)
    }
}
