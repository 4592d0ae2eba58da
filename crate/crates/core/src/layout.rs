//! Scenario data model and JSON I/O.
//!
//! A scenario is one JSON document: workspace bounds, robot footprints, the
//! PLC search grid, optional fixed PLC poses, arm chains with joint scripts,
//! scripted obstacle prisms, and sensor parameters. Field names carry their
//! units (`_m`, `_rad`, `_s`, `_hz`). See the book chapter on the scenario
//! format for the full schema.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geom2d::Pose2D;
use crate::geom2d::{wrap_pi, Point2, Polygon2};
use crate::robotarm::{ArmChain, JointState};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    #[serde(rename = "min_x_m")]
    pub min_x: f64,
    #[serde(rename = "min_y_m")]
    pub min_y: f64,
    #[serde(rename = "max_x_m")]
    pub max_x: f64,
    #[serde(rename = "max_y_m")]
    pub max_y: f64,
}

impl Bounds {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Bounds {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    fn is_valid(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite())
            && self.max_x > self.min_x
            && self.max_y > self.min_y
    }
}

/// A robot's top-down footprint: four corners, counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotFootprint {
    pub id: String,
    #[serde(rename = "vertices_m")]
    pub vertices: Vec<Point2>,
}

impl RobotFootprint {
    pub fn new(id: impl Into<String>, vertices: [Point2; 4]) -> Result<Self> {
        let mut r = RobotFootprint {
            id: id.into(),
            vertices: vertices.to_vec(),
        };
        r.normalize("robot")?;
        Ok(r)
    }

    /// Axis-aligned footprint centered at `(cx, cy)`.
    pub fn square(id: impl Into<String>, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let (hw, hh) = (0.5 * w, 0.5 * h);
        RobotFootprint::new(
            id,
            [
                Point2::new(cx - hw, cy - hh),
                Point2::new(cx + hw, cy - hh),
                Point2::new(cx + hw, cy + hh),
                Point2::new(cx - hw, cy + hh),
            ],
        )
    }

    pub fn polygon(&self) -> Polygon2 {
        Polygon2::from_ccw_unchecked(self.vertices.clone())
    }

    fn normalize(&mut self, path: &str) -> Result<()> {
        let path = format!("{path}(id={})", self.id);
        if self.vertices.len() != 4 {
            return Err(Error::validation(
                format!("{path}.vertices_m"),
                format!("robot footprint needs exactly 4 vertices, got {}", self.vertices.len()),
            ));
        }
        let poly = Polygon2::new(self.vertices.clone())
            .map_err(|e| Error::validation(format!("{path}.vertices_m"), e.to_string()))?;
        if !poly.is_convex() {
            return Err(Error::validation(format!("{path}.vertices_m"), "footprint is not convex"));
        }
        self.vertices = poly.vertices().to_vec();
        Ok(())
    }
}

/// Discretized PLC pose search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub x_bins: usize,
    pub y_bins: usize,
    pub theta_bins: usize,
    pub bounds: Bounds,
}

impl SearchGrid {
    pub fn new(x_bins: usize, y_bins: usize, theta_bins: usize, bounds: Bounds) -> Self {
        SearchGrid {
            x_bins,
            y_bins,
            theta_bins,
            bounds,
        }
    }

    /// Number of distinct poses.
    pub fn len(&self) -> usize {
        self.x_bins * self.y_bins * self.theta_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pose for a flat index in `(ix, iy, itheta)` lexicographic order.
    pub fn pose_at(&self, flat: usize) -> Pose2D {
        let it = flat % self.theta_bins;
        let rest = flat / self.theta_bins;
        let iy = rest % self.y_bins;
        let ix = rest / self.y_bins;
        self.pose_unchecked(ix, iy, it)
    }

    pub fn flat_index(&self, ix: usize, iy: usize, itheta: usize) -> usize {
        (ix * self.y_bins + iy) * self.theta_bins + itheta
    }

    fn pose_unchecked(&self, ix: usize, iy: usize, itheta: usize) -> Pose2D {
        let dx = self.bounds.width() / self.x_bins as f64;
        let dy = self.bounds.height() / self.y_bins as f64;
        Pose2D::new(
            self.bounds.min_x + (ix as f64 + 0.5) * dx,
            self.bounds.min_y + (iy as f64 + 0.5) * dy,
            itheta as f64 * (TAU / self.theta_bins as f64),
        )
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.x_bins == 0 || self.y_bins == 0 || self.theta_bins == 0 {
            return Err(Error::validation(path, "all bin counts must be >= 1"));
        }
        if !self.bounds.is_valid() {
            return Err(Error::validation(format!("{path}.bounds"), "degenerate bounds"));
        }
        Ok(())
    }
}

/// Pose of grid cell `(ix, iy, itheta)`: bin centers in x/y, `itheta * 2π/bins` in heading.
pub fn grid_pose(grid: &SearchGrid, ix: usize, iy: usize, itheta: usize) -> Result<Pose2D> {
    if ix >= grid.x_bins || iy >= grid.y_bins || itheta >= grid.theta_bins {
        return Err(Error::IndexOutOfRange(format!(
            "grid index ({ix}, {iy}, {itheta}) outside {}x{}x{}",
            grid.x_bins, grid.y_bins, grid.theta_bins
        )));
    }
    Ok(grid.pose_unchecked(ix, iy, itheta))
}

/// Physical parameters shared by every PLC in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    /// Full horizontal field of view.
    pub fov_rad: f64,
    pub max_range_m: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    /// Imaging rate for fixed (planar, random) curtains.
    pub frame_rate_hz: f64,
    /// Imaging rate when curtains are re-designed every frame.
    pub dynamic_rate_hz: f64,
    pub curtain_thickness_m: f64,
    pub mount_height_m: f64,
    pub vertical_fov_rad: f64,
    /// Clearance between a robot hull and its safety curtain.
    pub safety_offset_m: f64,
    /// Depth of the fixed curtain used in planar monitoring mode.
    pub planar_depth_m: f64,
    /// Largest range change between adjacent columns of a random curtain.
    pub galvo_slope_m: f64,
    pub sweep_min_m: f64,
    pub sweep_max_m: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            fov_rad: FRAC_PI_2,
            max_range_m: 30.0,
            n_cols: 512,
            n_rows: 640,
            frame_rate_hz: 24.0,
            dynamic_rate_hz: 7.0,
            curtain_thickness_m: 0.02,
            mount_height_m: 1.0,
            vertical_fov_rad: FRAC_PI_3,
            safety_offset_m: 0.10,
            planar_depth_m: 2.0,
            galvo_slope_m: 0.5,
            sweep_min_m: 0.5,
            sweep_max_m: 8.0,
        }
    }
}

impl SensorParams {
    fn validate(&self, path: &str) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(format!("{path}.{field}"), msg))
            }
        };
        check(self.fov_rad > 0.0 && self.fov_rad <= std::f64::consts::PI, "fov_rad", "must be in (0, π]")?;
        check(self.max_range_m > 0.0 && self.max_range_m.is_finite(), "max_range_m", "must be > 0")?;
        check(self.n_cols >= 2, "n_cols", "must be >= 2")?;
        check(self.n_rows >= 1, "n_rows", "must be >= 1")?;
        check(self.frame_rate_hz > 0.0, "frame_rate_hz", "must be > 0")?;
        check(self.dynamic_rate_hz > 0.0, "dynamic_rate_hz", "must be > 0")?;
        check(self.curtain_thickness_m > 0.0, "curtain_thickness_m", "must be > 0")?;
        check(
            self.vertical_fov_rad > 0.0 && self.vertical_fov_rad < std::f64::consts::PI,
            "vertical_fov_rad",
            "must be in (0, π)",
        )?;
        check(self.safety_offset_m > 0.0, "safety_offset_m", "must be > 0")?;
        check(
            self.planar_depth_m > 0.0 && self.planar_depth_m <= self.max_range_m,
            "planar_depth_m",
            "must be in (0, max_range_m]",
        )?;
        check(self.galvo_slope_m >= 0.0, "galvo_slope_m", "must be >= 0")?;
        check(
            self.sweep_min_m > 0.0 && self.sweep_min_m < self.sweep_max_m,
            "sweep_min_m",
            "sweep range must satisfy 0 < min < max",
        )?;
        Ok(())
    }
}

/// One keyframe of an obstacle script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseKey {
    pub t_s: f64,
    #[serde(flatten)]
    pub pose: Pose2D,
}

/// An extruded polygon moving along a keyframed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePrism {
    pub id: String,
    /// Footprint in the obstacle's own frame.
    #[serde(rename = "footprint_m")]
    pub footprint: Vec<Point2>,
    #[serde(rename = "z_min_m")]
    pub z_min: f64,
    #[serde(rename = "z_max_m")]
    pub z_max: f64,
    pub reflectivity: f64,
    pub trajectory: Vec<PoseKey>,
}

impl ObstaclePrism {
    /// A prism that never moves.
    pub fn fixed(
        id: impl Into<String>,
        footprint: Vec<Point2>,
        z_min: f64,
        z_max: f64,
        reflectivity: f64,
    ) -> Self {
        ObstaclePrism {
            id: id.into(),
            footprint,
            z_min,
            z_max,
            reflectivity,
            trajectory: vec![PoseKey {
                t_s: 0.0,
                pose: Pose2D::default(),
            }],
        }
    }

    /// Pose at time `t`, linearly interpolated and clamped at the ends.
    pub fn pose_at(&self, t: f64) -> Pose2D {
        let keys = &self.trajectory;
        if t <= keys[0].t_s {
            return keys[0].pose;
        }
        let last = keys[keys.len() - 1];
        if t >= last.t_s {
            return last.pose;
        }
        let i = keys.partition_point(|k| k.t_s <= t);
        let (a, b) = (keys[i - 1], keys[i]);
        let w = (t - a.t_s) / (b.t_s - a.t_s);
        let dtheta = wrap_pi(b.pose.theta - a.pose.theta);
        Pose2D::new(
            a.pose.x + (b.pose.x - a.pose.x) * w,
            a.pose.y + (b.pose.y - a.pose.y) * w,
            a.pose.theta + dtheta * w,
        )
    }

    /// World-frame footprint at time `t`.
    pub fn footprint_at(&self, t: f64) -> Polygon2 {
        let local = Polygon2::from_ccw_unchecked(self.footprint.clone());
        local.transformed(&self.pose_at(t))
    }

    fn validate(&mut self, path: &str) -> Result<()> {
        let poly = Polygon2::new(self.footprint.clone())
            .map_err(|e| Error::validation(format!("{path}.footprint_m"), e.to_string()))?;
        self.footprint = poly.vertices().to_vec();
        if !(self.z_min < self.z_max) {
            return Err(Error::validation(format!("{path}.z_min_m"), "z_min_m must be < z_max_m"));
        }
        if !(0.0..=1.0).contains(&self.reflectivity) {
            return Err(Error::validation(format!("{path}.reflectivity"), "must be in [0, 1]"));
        }
        if self.trajectory.is_empty() {
            return Err(Error::validation(format!("{path}.trajectory"), "needs at least one keyframe"));
        }
        if self.trajectory.windows(2).any(|w| !(w[1].t_s > w[0].t_s)) {
            return Err(Error::validation(
                format!("{path}.trajectory"),
                "keyframe times must be strictly increasing",
            ));
        }
        Ok(())
    }
}

/// An arm chain mounted at a robot, with its joint-angle script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub robot_id: String,
    pub chain: ArmChain,
    pub trajectory: Vec<JointState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub workspace: Bounds,
    pub robots: Vec<RobotFootprint>,
    pub plc_count: usize,
    pub grid: SearchGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plc_poses: Option<Vec<Pose2D>>,
    /// Offset between calibrated and true PLC poses, per PLC, in the PLC frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_errors: Option<Vec<Pose2D>>,
    #[serde(default)]
    pub sensor: SensorParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arms: Vec<ArmSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstaclePrism>,
}

impl Scenario {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut sc: Scenario = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Checks every invariant and normalizes polygon orientation in place.
    pub fn validate(&mut self) -> Result<()> {
        if !self.workspace.is_valid() {
            return Err(Error::validation("workspace", "degenerate workspace bounds"));
        }
        if self.robots.is_empty() {
            return Err(Error::validation("robots", "at least one robot is required"));
        }
        let mut ids = HashSet::new();
        for (i, r) in self.robots.iter_mut().enumerate() {
            let path = format!("robots[{i}]");
            r.normalize(&path)?;
            if !ids.insert(r.id.clone()) {
                return Err(Error::validation(format!("{path}(id={})", r.id), "duplicate robot id"));
            }
            if let Some(v) = r.vertices.iter().find(|&&v| !self.workspace.contains(v)) {
                return Err(Error::validation(
                    format!("{path}(id={}).vertices_m", r.id),
                    format!("vertex ({}, {}) outside workspace", v.x, v.y),
                ));
            }
        }
        if self.plc_count == 0 {
            return Err(Error::validation("plc_count", "must be >= 1"));
        }
        self.grid.validate("grid")?;
        self.sensor.validate("sensor")?;
        if let Some(poses) = &self.plc_poses {
            if poses.len() != self.plc_count {
                return Err(Error::validation(
                    "plc_poses",
                    format!("expected {} poses, got {}", self.plc_count, poses.len()),
                ));
            }
        }
        if let Some(errs) = &self.calibration_errors {
            if errs.len() != self.plc_count {
                return Err(Error::validation(
                    "calibration_errors",
                    format!("expected {} entries, got {}", self.plc_count, errs.len()),
                ));
            }
        }
        for (i, arm) in self.arms.iter().enumerate() {
            let path = format!("arms[{i}]");
            if !ids.contains(&arm.robot_id) {
                return Err(Error::validation(
                    format!("{path}.robot_id"),
                    format!("unknown robot id `{}`", arm.robot_id),
                ));
            }
            arm.chain
                .validate()
                .map_err(|e| Error::validation(format!("{path}.chain"), e.to_string()))?;
            if arm.trajectory.is_empty() {
                return Err(Error::validation(format!("{path}.trajectory"), "needs at least one keyframe"));
            }
            for (k, js) in arm.trajectory.iter().enumerate() {
                if js.angles.len() != arm.chain.links.len() {
                    return Err(Error::validation(
                        format!("{path}.trajectory[{k}].angles_rad"),
                        format!("expected {} angles, got {}", arm.chain.links.len(), js.angles.len()),
                    ));
                }
            }
            if arm.trajectory.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
                return Err(Error::validation(
                    format!("{path}.trajectory"),
                    "keyframe times must be strictly increasing",
                ));
            }
        }
        let mut obstacle_ids = HashSet::new();
        for (i, o) in self.obstacles.iter_mut().enumerate() {
            let path = format!("obstacles[{i}](id={})", o.id);
            o.validate(&path)?;
            if !obstacle_ids.insert(o.id.clone()) {
                return Err(Error::validation(path, "duplicate obstacle id"));
            }
        }
        Ok(())
    }

    pub fn robot_index(&self, id: &str) -> Option<usize> {
        self.robots.iter().position(|r| r.id == id)
    }

    /// Fixed PLC poses, or a validation error naming the missing field.
    pub fn require_plc_poses(&self) -> Result<&[Pose2D]> {
        self.plc_poses
            .as_deref()
            .ok_or_else(|| Error::validation("plc_poses", "this workflow needs fixed PLC poses"))
    }

    /// True sensor pose: calibrated pose composed with its calibration error.
    pub fn true_plc_pose(&self, i: usize) -> Result<Pose2D> {
        let cal = self.require_plc_poses()?[i];
        Ok(match &self.calibration_errors {
            Some(errs) => {
                let e = errs[i];
                let p = cal.to_world(e.position());
                Pose2D::new(p.x, p.y, cal.theta + e.theta)
            }
            None => cal,
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Validation {
            path: path.display().to_string(),
            message: format!("cannot read scenario: {e}"),
        }
    })?;
    Scenario::from_json_str(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scenario.to_json_string() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn minimal() -> Scenario {
        let ws = Bounds::new(0.0, 0.0, 9.3, 5.9);
        Scenario {
            name: "t".into(),
            notes: None,
            workspace: ws,
            robots: vec![RobotFootprint::square("a", 2.0, 2.0, 0.6, 0.6).unwrap()],
            plc_count: 2,
            grid: SearchGrid::new(10, 10, 20, ws),
            plc_poses: None,
            calibration_errors: None,
            sensor: SensorParams::default(),
            arms: vec![],
            obstacles: vec![],
        }
    }

    #[test]
    fn grid_pose_centers() {
        let g = SearchGrid::new(10, 10, 20, Bounds::new(0., 0., 10., 10.));
        assert_eq!(grid_pose(&g, 0, 0, 0).unwrap(), Pose2D::new(0.5, 0.5, 0.0));
        assert!((grid_pose(&g, 0, 0, 5).unwrap().theta - PI / 2.0).abs() < 1e-12);
        let g = SearchGrid::new(50, 50, 20, Bounds::new(0., 0., 8., 8.));
        let p = grid_pose(&g, 49, 49, 19).unwrap();
        assert!((p.x - 7.92).abs() < 1e-12 && (p.y - 7.92).abs() < 1e-12);
        assert!((p.theta - 19.0 * PI / 10.0).abs() < 1e-12);
        assert!(matches!(grid_pose(&g, 50, 0, 0), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn flat_index_matches_pose_at() {
        let g = SearchGrid::new(3, 4, 5, Bounds::new(0., 0., 3., 4.));
        for ix in 0..3 {
            for iy in 0..4 {
                for it in 0..5 {
                    let f = g.flat_index(ix, iy, it);
                    assert_eq!(g.pose_at(f), grid_pose(&g, ix, iy, it).unwrap());
                }
            }
        }
    }

    #[test]
    fn three_vertex_robot_is_rejected_by_id() {
        let mut sc = minimal();
        sc.robots[0].vertices.pop();
        let err = Scenario::from_json_str(&serde_json::to_string(&sc).unwrap()).unwrap_err();
        match err {
            Error::Validation { path, .. } => assert!(path.contains("id=a"), "{path}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_robot_list_is_rejected() {
        let mut sc = minimal();
        sc.robots.clear();
        assert!(matches!(sc.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(Scenario::from_json_str("{ nope"), Err(Error::Parse(_))));
    }

    #[test]
    fn clockwise_footprint_is_normalized() {
        let mut sc = minimal();
        sc.robots[0].vertices.reverse();
        sc.validate().unwrap();
        assert!(sc.robots[0].polygon().area() > 0.0);
    }

    #[test]
    fn obstacle_interpolation_takes_short_arc() {
        let o = ObstaclePrism {
            id: "o".into(),
            footprint: vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(0., 1.)],
            z_min: 0.0,
            z_max: 1.0,
            reflectivity: 1.0,
            trajectory: vec![
                PoseKey { t_s: 0.0, pose: Pose2D::new(0.0, 0.0, -0.1) },
                PoseKey { t_s: 1.0, pose: Pose2D::new(2.0, 0.0, 0.1) },
            ],
        };
        let p = o.pose_at(0.5);
        assert!((p.x - 1.0).abs() < 1e-12);
        assert!(p.theta.abs() < 1e-12 || (p.theta - TAU).abs() < 1e-12);
    }
}
