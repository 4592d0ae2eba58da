//! Intrusion monitoring on a simulated clock.
//!
//! Each frame samples the scene at its mid-exposure instant and is delivered
//! at the end of its frame period. Delivered frames are thresholded into
//! detections, passed through a per-PLC persistence filter and turned into
//! stop commands for the attributed robot. Stops take effect after a command
//! latency plus a braking latency; a stopped robot freezes its own trajectory
//! clock until a frame arrives with no detection attributed to it.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curtain::{camera_ray, design_safety_curtain, planar_curtain, CurtainKind, CurtainProfile, PlcModel};
use crate::error::{Error, Result};
use crate::geom2d::{convex_hull, Point2, Polygon2};
use crate::layout::Scenario;
use crate::plcsim::{
    ray_intervals, render_depth, scene_at, shade, Body, IntensityImage, Interference, InterferenceModel,
    RenderOptions,
};
use crate::robotarm::{forward_kinematics, sample_trajectory, Point3};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_COMMAND_LATENCY_S: f64 = 0.049;
pub const DEFAULT_BRAKING_LATENCY_S: f64 = 0.283;
pub const DEFAULT_ATTRIBUTION_CAP_M: f64 = 2.0;
/// Height given to robots that have a footprint but no arm.
pub const ROBOT_BODY_HEIGHT_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u64,
    pub columns: Vec<usize>,
    /// World-frame return locations, one per column.
    pub locations: Vec<Point3>,
    pub robot_id: Option<String>,
}

impl Detection {
    pub fn centroid(&self) -> Point3 {
        let n = self.locations.len() as f64;
        let s = self
            .locations
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(s / n)
    }
}

/// Thresholds a frame into a detection, back-projecting each returning column.
pub fn detect(image: &IntensityImage, threshold: f64, plc: &PlcModel) -> Result<Option<Detection>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let mut columns = Vec::new();
    let mut locations = Vec::new();
    for col in 0..image.width {
        let rows: Vec<usize> = image.lit_rows(col, threshold).collect();
        if rows.is_empty() {
            continue;
        }
        let range = image.column_range[col];
        let xy = camera_ray(plc, col)?.at(range);
        let z = rows.iter().map(|&r| plc.row_height(r, range)).sum::<f64>() / rows.len() as f64;
        columns.push(col);
        locations.push(Point3::new(xy.x, xy.y, z));
    }
    if columns.is_empty() {
        return Ok(None);
    }
    Ok(Some(Detection {
        frame: image.frame,
        columns,
        locations,
        robot_id: None,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopEvent {
    /// Stream position that completed the run.
    pub frame: u64,
    pub run_start: u64,
    pub robot_id: Option<String>,
}

/// Streaming form of [`persistence_filter`].
#[derive(Debug, Clone)]
pub struct PersistenceFilter {
    k: usize,
    run: usize,
    run_start: u64,
}

impl PersistenceFilter {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("persistence k must be >= 1".into()));
        }
        Ok(PersistenceFilter { k, run: 0, run_start: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Feeds the frame at stream position `frame`; fires once per run, on its k-th frame.
    pub fn push(&mut self, frame: u64, det: Option<&Detection>) -> Option<StopEvent> {
        match det {
            None => {
                self.run = 0;
                None
            }
            Some(d) => {
                if self.run == 0 {
                    self.run_start = frame;
                }
                self.run += 1;
                (self.run == self.k).then(|| StopEvent {
                    frame,
                    run_start: self.run_start,
                    robot_id: d.robot_id.clone(),
                })
            }
        }
    }
}

pub fn persistence_filter<I>(detections: I, k: usize) -> Result<Vec<StopEvent>>
where
    I: IntoIterator<Item = Option<Detection>>,
{
    let mut f = PersistenceFilter::new(k)?;
    Ok(detections
        .into_iter()
        .enumerate()
        .filter_map(|(i, d)| f.push(i as u64, d.as_ref()))
        .collect())
}

fn hull_distance(poly: &Polygon2, p: Point2) -> f64 {
    poly.signed_distance(p).max(0.0)
}

fn nearest_robot<'a>(det: &Detection, hulls: &'a [(String, Polygon2)]) -> Option<(&'a str, f64)> {
    let c = det.centroid();
    let p = Point2::new(c.x, c.y);
    hulls
        .iter()
        .map(|(id, poly)| (id.as_str(), hull_distance(poly, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
}

/// Id of the hull nearest to the detection centroid; ties go to the smaller id.
pub fn attribute_robot(det: &Detection, hulls: &[(String, Polygon2)]) -> Result<String> {
    nearest_robot(det, hulls)
        .map(|(id, _)| id.to_string())
        .ok_or_else(|| Error::InvalidArgument("attribution needs at least one robot hull".into()))
}

/// Like [`attribute_robot`], but `None` when the nearest hull is farther than `cap`.
pub fn attribute_robot_capped(det: &Detection, hulls: &[(String, Polygon2)], cap: f64) -> Option<String> {
    nearest_robot(det, hulls)
        .filter(|&(_, d)| d <= cap)
        .map(|(id, _)| id.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    /// A fixed frontal curtain per PLC, imaged at the fixed-curtain rate.
    Planar,
    /// Safety curtains re-designed every frame, imaged at the dynamic rate.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: MonitorMode,
    pub threshold: f64,
    pub persistence: usize,
    pub command_latency: f64,
    pub braking_latency: f64,
    pub attribution_cap: f64,
    pub seed: u64,
    /// Shift obstacle scripts by a seeded fraction of a frame period.
    pub randomize_phase: bool,
    pub interference: Option<InterferenceModel>,
    pub render: RenderOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: MonitorMode::Planar,
            threshold: DEFAULT_THRESHOLD,
            persistence: 1,
            command_latency: DEFAULT_COMMAND_LATENCY_S,
            braking_latency: DEFAULT_BRAKING_LATENCY_S,
            attribution_cap: DEFAULT_ATTRIBUTION_CAP_M,
            seed: 0,
            randomize_phase: true,
            interference: None,
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    IntrusionTruth,
    Detection,
    StopIssued,
    RobotStopped,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: i64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
}

impl Event {
    fn at(t_s: f64, kind: EventKind) -> Self {
        Event {
            t_ms: (t_s * 1000.0).round() as i64,
            kind,
            robot_id: None,
            obstacle: None,
            plc: None,
            frame: None,
            columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventTimeline {
    pub events: Vec<Event>,
}

impl EventTimeline {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Times never decrease, and every robot_stopped follows a stop_issued for that robot.
    pub fn is_well_ordered(&self) -> bool {
        if self.events.windows(2).any(|w| w[1].t_ms < w[0].t_ms) {
            return false;
        }
        let mut pending: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.events {
            let id = e.robot_id.as_deref().unwrap_or("");
            match e.kind {
                EventKind::StopIssued => *pending.entry(id).or_default() += 1,
                EventKind::RobotStopped => match pending.get_mut(id) {
                    Some(n) if *n > 0 => *n -= 1,
                    _ => return false,
                },
                _ => {}
            }
        }
        true
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Motion {
    Moving,
    Braking { stop_at: f64 },
    Stopped { since: f64 },
}

#[derive(Debug, Clone)]
struct RobotClock {
    motion: Motion,
    paused: f64,
}

impl RobotClock {
    fn time(&self, t: f64) -> f64 {
        match self.motion {
            Motion::Stopped { since } => since - self.paused,
            _ => t - self.paused,
        }
    }
}

/// World-frame points of a robot at its own script time.
pub fn robot_points(scenario: &Scenario, robot: usize, t: f64) -> Result<Vec<Point3>> {
    let id = &scenario.robots[robot].id;
    let mut pts = Vec::new();
    for arm in scenario.arms.iter().filter(|a| &a.robot_id == id) {
        let state = sample_trajectory(&arm.trajectory, t);
        pts.extend(forward_kinematics(&arm.chain, &state)?);
    }
    if pts.is_empty() {
        for v in &scenario.robots[robot].vertices {
            pts.push(Point3::new(v.x, v.y, 0.0));
            pts.push(Point3::new(v.x, v.y, ROBOT_BODY_HEIGHT_M));
        }
    }
    Ok(pts)
}

fn hull_or_box(points: &[Point2]) -> Polygon2 {
    convex_hull(points).unwrap_or_else(|_| {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let pad = 0.01;
        Polygon2::rect(lo.x - pad, lo.y - pad, hi.x + pad, hi.y + pad).expect("padded box")
    })
}

/// Top-down hull and renderable prism of a robot's points.
pub fn robot_body(points: &[Point3], reflectivity: f64) -> (Polygon2, Body) {
    let flat: Vec<Point2> = points.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let hull = hull_or_box(&flat);
    let z_max = points.iter().map(|p| p.z).fold(0.05, f64::max);
    let body = Body {
        footprint: hull.clone(),
        z_min: 0.0,
        z_max,
        reflectivity,
    };
    (hull, body)
}

/// Per-column minimum over several safety profiles.
fn combine_profiles(profiles: &[CurtainProfile], plc: &PlcModel) -> CurtainProfile {
    let mut ranges = vec![plc.max_range; plc.n_cols];
    for p in profiles {
        for (r, &q) in ranges.iter_mut().zip(&p.ranges) {
            *r = r.min(q);
        }
    }
    CurtainProfile {
        ranges,
        kind: CurtainKind::Safety,
        stamp: 0,
    }
}

/// Whether a prism touches the curtain's thickness band anywhere in the sensor's view.
pub fn touches_curtain(plc: &PlcModel, profile: &CurtainProfile, body: &Body) -> bool {
    let tau = plc.curtain_thickness;
    let (lo_t, hi_t) = ((-0.5 * plc.vertical_fov).tan(), (0.5 * plc.vertical_fov).tan());
    let local: Vec<Point2> = body
        .footprint
        .vertices()
        .iter()
        .map(|&v| plc.pose.to_local(v))
        .collect();
    let near = local.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
    let rmax = profile.ranges.iter().copied().fold(0.0, f64::max);
    if near > rmax + tau && !body.footprint.contains(plc.pose.position()) {
        return false;
    }
    for (col, &r) in profile.ranges.iter().enumerate() {
        let (zl, zh) = (plc.mount_height + r * lo_t, plc.mount_height + r * hi_t);
        if zh < body.z_min || zl > body.z_max {
            continue;
        }
        let ray = camera_ray(plc, col).expect("column in range");
        if ray_intervals(&ray, &body.footprint)
            .iter()
            .any(|&(a, b)| a <= r + tau && b >= r - tau)
        {
            return true;
        }
    }
    false
}

/// Runs the monitoring loop for `duration` seconds of simulated time.
pub fn run_pipeline(scenario: &Scenario, duration: f64, cfg: &PipelineConfig) -> Result<EventTimeline> {
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be >= 0, got {duration}")));
    }
    let poses = scenario.require_plc_poses()?;
    for arm in &scenario.arms {
        if scenario.robot_index(&arm.robot_id).is_none() {
            return Err(Error::validation(
                "arms.robot_id",
                format!("arm refers to unknown robot '{}'", arm.robot_id),
            ));
        }
    }
    let mut sensor = scenario.sensor.clone();
    if cfg.mode == MonitorMode::Dynamic {
        sensor.frame_rate_hz = sensor.dynamic_rate_hz;
    }
    let mut believed = Vec::new();
    let mut actual = Vec::new();
    for (i, &pose) in poses.iter().enumerate() {
        believed.push(PlcModel::from_params(pose, &sensor)?);
        actual.push(PlcModel::from_params(scenario.true_plc_pose(i)?, &sensor)?);
    }
    let period = 1.0 / sensor.frame_rate_hz;
    let phase = if cfg.randomize_phase {
        ChaCha8Rng::seed_from_u64(cfg.seed).random::<f64>() * period
    } else {
        0.0
    };
    let mut interference = match cfg.interference {
        Some(m) => poses
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut mi = m;
                mi.seed = m.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                Interference::new(mi).map(Some)
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut filters = poses
        .iter()
        .map(|_| PersistenceFilter::new(cfg.persistence))
        .collect::<Result<Vec<_>>>()?;

    let planar: Vec<CurtainProfile> = if cfg.mode == MonitorMode::Planar {
        actual
            .iter()
            .map(|p| planar_curtain(sensor.planar_depth_m, p))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let n_robots = scenario.robots.len();
    let mut clocks = vec![
        RobotClock {
            motion: Motion::Moving,
            paused: 0.0,
        };
        n_robots
    ];
    let mut events: Vec<(f64, Event)> = Vec::new();
    let mut touching = vec![false; scenario.obstacles.len()];
    let n_frames = (duration / period + 1e-9).floor() as u64;

    for k in 0..n_frames {
        let t0 = k as f64 * period;
        let t_mid = t0 + 0.5 * period;
        let t_end = t0 + period;
        settle_braking(&mut clocks, scenario, t_mid, &mut events);

        let mut hulls = Vec::with_capacity(n_robots);
        let mut robot_bodies = Vec::with_capacity(n_robots);
        let mut robot_pts = Vec::with_capacity(n_robots);
        for (r, clock) in clocks.iter().enumerate() {
            let pts = robot_points(scenario, r, clock.time(t_mid))?;
            let (hull, body) = robot_body(&pts, 1.0);
            hulls.push((scenario.robots[r].id.clone(), hull));
            robot_bodies.push(body);
            robot_pts.push(pts);
        }

        let mut profiles = Vec::with_capacity(poses.len());
        for (i, plc) in actual.iter().enumerate() {
            let mut profile = match cfg.mode {
                MonitorMode::Planar => planar[i].clone(),
                MonitorMode::Dynamic => {
                    let mut per_robot = Vec::new();
                    for pts in &robot_pts {
                        let local: Vec<Point2> = pts
                            .iter()
                            .map(|p| believed[i].pose.to_local(Point2::new(p.x, p.y)))
                            .collect();
                        per_robot.push(design_safety_curtain(&local, plc, sensor.safety_offset_m)?.profile);
                    }
                    combine_profiles(&per_robot, plc)
                }
            };
            profile.stamp = k;
            profiles.push(profile);
        }

        // ground truth on a 1 ms grid
        let first_ms = (t0 * 1000.0).ceil() as i64;
        let mut ms = first_ms;
        while (ms as f64) < t_end * 1000.0 - 1e-9 {
            let t = ms as f64 / 1000.0;
            for (o, obs) in scenario.obstacles.iter().enumerate() {
                let body = Body {
                    footprint: obs.footprint_at(t + phase),
                    z_min: obs.z_min,
                    z_max: obs.z_max,
                    reflectivity: obs.reflectivity,
                };
                let now = actual
                    .iter()
                    .zip(&profiles)
                    .any(|(plc, prof)| touches_curtain(plc, prof, &body));
                if now && !touching[o] {
                    let mut e = Event::at(t, EventKind::IntrusionTruth);
                    e.obstacle = Some(obs.id.clone());
                    events.push((t, e));
                }
                touching[o] = now;
            }
            ms += 1;
        }

        let mut bodies = scene_at(&scenario.obstacles, t_mid + phase);
        bodies.extend(robot_bodies.iter().cloned());
        let mut attributed: BTreeSet<usize> = BTreeSet::new();
        for (i, plc) in actual.iter().enumerate() {
            let depth = render_depth(&bodies, plc);
            let mut img = shade(&depth, plc, &profiles[i], k, &cfg.render);
            if let Some(Some(gen)) = interference.get_mut(i) {
                gen.apply(&mut img);
            }
            let mut det = detect(&img, cfg.threshold, &believed[i])?;
            let mut targets: Vec<usize> = Vec::new();
            if let Some(d) = det.as_mut() {
                d.robot_id = attribute_robot_capped(d, &hulls, cfg.attribution_cap);
                targets = match &d.robot_id {
                    Some(id) => vec![scenario.robot_index(id).expect("known robot")],
                    None => robots_of_plc(scenario, &believed[i]),
                };
                attributed.extend(targets.iter().copied());
                let mut e = Event::at(t_end, EventKind::Detection);
                e.robot_id = d.robot_id.clone();
                e.plc = Some(i);
                e.frame = Some(k);
                e.columns = Some(d.columns.len());
                events.push((t_end, e));
            }
            if filters[i].push(k, det.as_ref()).is_some() {
                for &r in &targets {
                    if clocks[r].motion != Motion::Moving {
                        continue;
                    }
                    let t_cmd = t_end + cfg.command_latency;
                    let mut e = Event::at(t_cmd, EventKind::StopIssued);
                    e.robot_id = Some(scenario.robots[r].id.clone());
                    e.plc = Some(i);
                    events.push((t_cmd, e));
                    clocks[r].motion = Motion::Braking {
                        stop_at: t_cmd + cfg.braking_latency,
                    };
                }
            }
        }

        settle_braking(&mut clocks, scenario, t_end, &mut events);
        for (r, clock) in clocks.iter_mut().enumerate() {
            if let Motion::Stopped { since } = clock.motion {
                if !attributed.contains(&r) {
                    clock.paused += t_end - since;
                    clock.motion = Motion::Moving;
                    let mut e = Event::at(t_end, EventKind::Resume);
                    e.robot_id = Some(scenario.robots[r].id.clone());
                    events.push((t_end, e));
                }
            }
        }
    }
    settle_braking(&mut clocks, scenario, duration, &mut events);

    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut events: Vec<Event> = events.into_iter().map(|(_, e)| e).collect();
    // rounding to whole milliseconds must not reorder anything
    for i in 1..events.len() {
        if events[i].t_ms < events[i - 1].t_ms {
            events[i].t_ms = events[i - 1].t_ms;
        }
    }
    Ok(EventTimeline { events })
}

fn settle_braking(clocks: &mut [RobotClock], scenario: &Scenario, t: f64, events: &mut Vec<(f64, Event)>) {
    for (r, clock) in clocks.iter_mut().enumerate() {
        if let Motion::Braking { stop_at } = clock.motion {
            if stop_at <= t {
                clock.motion = Motion::Stopped { since: stop_at };
                let mut e = Event::at(stop_at, EventKind::RobotStopped);
                e.robot_id = Some(scenario.robots[r].id.clone());
                events.push((stop_at, e));
            }
        }
    }
}

/// Robots with at least one footprint corner in the PLC's view, or all robots if none are.
fn robots_of_plc(scenario: &Scenario, plc: &PlcModel) -> Vec<usize> {
    let seen: Vec<usize> = scenario
        .robots
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.vertices
                .iter()
                .any(|&v| crate::geom2d::in_fov(&plc.pose, plc.fov, plc.max_range, v))
        })
        .map(|(i, _)| i)
        .collect();
    if seen.is_empty() {
        (0..scenario.robots.len()).collect()
    } else {
        seen
    }
}

/// Delays of one intrusion episode relative to its ground-truth time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLatency {
    pub intrusion_ms: i64,
    pub detection_ms: i64,
    pub stop_issued_ms: i64,
    pub robot_stopped_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub episodes: usize,
    pub detection_ms: f64,
    pub stop_issued_ms: f64,
    pub robot_stopped_ms: f64,
    pub per_episode: Vec<EpisodeLatency>,
}

/// Complete episodes in a timeline: truth, then the next detection, stop and halt.
pub fn episodes(timeline: &EventTimeline) -> Vec<EpisodeLatency> {
    let ev = &timeline.events;
    let find = |from: usize, t: i64, kind: EventKind, robot: Option<&str>| {
        ev[from..]
            .iter()
            .position(|e| {
                e.kind == kind && e.t_ms >= t && robot.map_or(true, |r| e.robot_id.as_deref() == Some(r))
            })
            .map(|i| i + from)
    };
    let mut out = Vec::new();
    for (i, truth) in ev.iter().enumerate() {
        if truth.kind != EventKind::IntrusionTruth {
            continue;
        }
        let Some(d) = find(i, truth.t_ms, EventKind::Detection, None) else { continue };
        let Some(s) = find(d, ev[d].t_ms, EventKind::StopIssued, None) else { continue };
        let Some(h) = find(s, ev[s].t_ms, EventKind::RobotStopped, ev[s].robot_id.as_deref()) else {
            continue;
        };
        out.push(EpisodeLatency {
            intrusion_ms: truth.t_ms,
            detection_ms: ev[d].t_ms - truth.t_ms,
            stop_issued_ms: ev[s].t_ms - truth.t_ms,
            robot_stopped_ms: ev[h].t_ms - truth.t_ms,
        });
    }
    out
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn report_from(per_episode: Vec<EpisodeLatency>) -> Result<LatencyReport> {
    if per_episode.is_empty() {
        return Err(Error::EmptyTimeline);
    }
    let col = |f: fn(&EpisodeLatency) -> i64| {
        let mut v: Vec<f64> = per_episode.iter().map(|e| f(e) as f64).collect();
        median(&mut v)
    };
    Ok(LatencyReport {
        episodes: per_episode.len(),
        detection_ms: col(|e| e.detection_ms),
        stop_issued_ms: col(|e| e.stop_issued_ms),
        robot_stopped_ms: col(|e| e.robot_stopped_ms),
        per_episode,
    })
}

/// Median per-event delays over every complete episode of a timeline.
pub fn latency_report(timeline: &EventTimeline) -> Result<LatencyReport> {
    report_from(episodes(timeline))
}

/// Median delays pooled over the episodes of several timelines.
pub fn latency_report_all<'a, I>(timelines: I) -> Result<LatencyReport>
where
    I: IntoIterator<Item = &'a EventTimeline>,
{
    report_from(timelines.into_iter().flat_map(episodes).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::SensorParams;

    fn plc() -> PlcModel {
        let mut s = SensorParams::default();
        s.n_cols = 65;
        s.n_rows = 9;
        PlcModel::from_params(crate::geom2d::Pose2D::default(), &s).unwrap()
    }

    fn det(frame: u64, x: f64, y: f64) -> Detection {
        Detection {
            frame,
            columns: vec![0],
            locations: vec![Point3::new(x, y, 1.0)],
            robot_id: None,
        }
    }

    #[test]
    fn zero_image_detects_nothing() {
        let p = plc();
        let img = IntensityImage::zeros(0, p.n_cols, p.n_rows, vec![3.0; p.n_cols]);
        assert!(detect(&img, 0.5, &p).unwrap().is_none());
        assert!(detect(&img, 1.0, &p).is_err());
    }

    #[test]
    fn saturated_center_column_lands_on_boresight() {
        let p = plc();
        let mut img = IntensityImage::zeros(0, p.n_cols, p.n_rows, vec![3.0; p.n_cols]);
        img.intensity[4 * p.n_cols + 32] = 1.0;
        let d = detect(&img, 0.5, &p).unwrap().unwrap();
        assert_eq!(d.columns, vec![32]);
        let q = d.locations[0];
        assert!((q.x - 3.0).abs() < 1e-12 && q.y.abs() < 1e-12);
        assert!((q.z - p.mount_height).abs() < 1e-12);
    }

    fn run(len: usize, k: usize) -> Vec<StopEvent> {
        let stream = (0..len).map(|i| Some(det(i as u64, 0.0, 0.0))).chain([None]);
        persistence_filter(stream, k).unwrap()
    }

    #[test]
    fn persistence_cases() {
        assert!(run(4, 5).is_empty());
        let s = run(5, 5);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].run_start, s[0].frame), (0, 4));
        let s = run(1, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].frame, 0);
        assert_eq!(run(9, 5).len(), 1);
        assert!(persistence_filter(Vec::<Option<Detection>>::new(), 0).is_err());
    }

    #[test]
    fn attribution_cases() {
        let a = ("a".to_string(), Polygon2::rect(0.0, 0.0, 1.0, 1.0).unwrap());
        let b = ("b".to_string(), Polygon2::rect(4.0, 0.0, 5.0, 1.0).unwrap());
        assert_eq!(attribute_robot(&det(0, 1.2, 0.5), &[a.clone(), b.clone()]).unwrap(), "a");
        assert_eq!(attribute_robot(&det(0, 2.5, 0.5), &[b.clone(), a.clone()]).unwrap(), "a");
        assert_eq!(attribute_robot(&det(0, 9.0, 9.0), &[b.clone()]).unwrap(), "b");
        assert!(attribute_robot(&det(0, 0.0, 0.0), &[]).is_err());
        assert_eq!(attribute_robot_capped(&det(0, 2.5, 0.5), &[a, b], 1.0), None);
    }

    #[test]
    fn medians() {
        let tl = EventTimeline {
            events: vec![
                Event::at(0.0, EventKind::IntrusionTruth),
                Event::at(0.040, EventKind::Detection),
                Event::at(0.089, EventKind::StopIssued),
                Event::at(0.372, EventKind::RobotStopped),
                Event::at(1.0, EventKind::IntrusionTruth),
                Event::at(1.044, EventKind::Detection),
                Event::at(1.093, EventKind::StopIssued),
                Event::at(1.376, EventKind::RobotStopped),
            ],
        };
        let r = latency_report(&tl).unwrap();
        assert_eq!(r.episodes, 2);
        assert_eq!(r.detection_ms, 42.0);
        assert_eq!(r.stop_issued_ms, 91.0);
        assert_eq!(r.robot_stopped_ms, 374.0);
        assert!(matches!(
            latency_report(&EventTimeline::default()),
            Err(Error::EmptyTimeline)
        ));
    }
}
