//! Simulated PLC returns.
//!
//! The scene is a set of vertical prisms. Rendering happens in two steps: a
//! depth pass finds, for every pixel, the nearest prism surface along that
//! pixel's 3D ray; a shading pass lights the pixels whose nearest surface lies
//! within the curtain thickness of the column's control point. A static scene
//! therefore only needs one depth pass for a whole sweep.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curtain::{camera_ray, CurtainProfile, PlcModel};
use crate::error::{Error, Result};
use crate::geom2d::{Polygon2, Ray2};
use crate::layout::ObstaclePrism;

/// A vertical prism in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub footprint: Polygon2,
    pub z_min: f64,
    pub z_max: f64,
    pub reflectivity: f64,
}

/// Every scripted obstacle posed at time `t`.
pub fn scene_at(obstacles: &[ObstaclePrism], t: f64) -> Vec<Body> {
    obstacles
        .iter()
        .map(|o| Body {
            footprint: o.footprint_at(t),
            z_min: o.z_min,
            z_max: o.z_max,
            reflectivity: o.reflectivity,
        })
        .collect()
}

/// Nearest surface per pixel (row-major, `row * n_cols + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub n_cols: usize,
    pub n_rows: usize,
    /// Horizontal range of the first surface, `f64::INFINITY` where none.
    pub range: Vec<f64>,
    pub reflectivity: Vec<f64>,
}

impl DepthImage {
    pub fn empty(plc: &PlcModel) -> Self {
        let n = plc.n_cols * plc.n_rows;
        DepthImage {
            n_cols: plc.n_cols,
            n_rows: plc.n_rows,
            range: vec![f64::INFINITY; n],
            reflectivity: vec![0.0; n],
        }
    }
}

/// Parameter intervals where a ray is inside a polygon.
pub(crate) fn ray_intervals(ray: &Ray2, poly: &Polygon2) -> Vec<(f64, f64)> {
    let o = ray.origin;
    let d = ray.direction();
    let mut cuts = Vec::new();
    for (a, b) in poly.edges() {
        let e = b - a;
        let denom = d.cross(e);
        if denom == 0.0 {
            continue;
        }
        let ao = a - o;
        let t = ao.cross(e) / denom;
        let s = ao.cross(d) / denom;
        // half-open in s so a ray through a vertex is cut once
        if (0.0..1.0).contains(&s) && t >= 0.0 {
            cuts.push(t);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    if poly.contains_strict(o) {
        out.push((0.0, cuts.first().copied().unwrap_or(f64::INFINITY)));
        i = 1;
    }
    while i + 1 < cuts.len() {
        if cuts[i + 1] > cuts[i] {
            out.push((cuts[i], cuts[i + 1]));
        }
        i += 2;
    }
    out
}

/// Depth pass for one column against a fixed set of bodies.
pub fn render_depth_column(bodies: &[Body], plc: &PlcModel, col: usize, out: &mut DepthImage) {
    let ray = camera_ray(plc, col).expect("column in range");
    let h = plc.mount_height;
    for body in bodies {
        for (a, b) in ray_intervals(&ray, &body.footprint) {
            for row in 0..plc.n_rows {
                let m = plc.row_elevation(row).tan();
                // horizontal ranges at which this row's ray is inside the z-slab
                let (lo, hi) = if m == 0.0 {
                    if h >= body.z_min && h <= body.z_max {
                        (f64::NEG_INFINITY, f64::INFINITY)
                    } else {
                        continue;
                    }
                } else {
                    let r1 = (body.z_min - h) / m;
                    let r2 = (body.z_max - h) / m;
                    (r1.min(r2), r1.max(r2))
                };
                let enter = a.max(lo);
                if enter <= b.min(hi) {
                    let k = row * plc.n_cols + col;
                    if enter < out.range[k] {
                        out.range[k] = enter;
                        out.reflectivity[k] = body.reflectivity;
                    }
                }
            }
        }
    }
}

pub fn render_depth(bodies: &[Body], plc: &PlcModel) -> DepthImage {
    let mut out = DepthImage::empty(plc);
    for col in 0..plc.n_cols {
        render_depth_column(bodies, plc, col, &mut out);
    }
    out
}

/// Sensor-side effects applied while shading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Laser power relative to nominal.
    pub gain: f64,
    /// A stuck galvo: the sheet stays at this range whatever the profile asks.
    pub frozen_range: Option<f64>,
    /// Scale returns by `(1 m / range)^2`, capped at 1.
    pub falloff: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            gain: 1.0,
            frozen_range: None,
            falloff: false,
        }
    }
}

/// Intensity returns of one frame (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityImage {
    pub frame: u64,
    pub width: usize,
    pub height: usize,
    pub intensity: Vec<f64>,
    /// Commanded control-point range per column.
    pub column_range: Vec<f64>,
}

impl IntensityImage {
    pub fn zeros(frame: u64, width: usize, height: usize, column_range: Vec<f64>) -> Self {
        IntensityImage {
            frame,
            width,
            height,
            intensity: vec![0.0; width * height],
            column_range,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.intensity[row * self.width + col]
    }

    pub fn column_max(&self, col: usize) -> f64 {
        (0..self.height).map(|r| self.get(r, col)).fold(0.0, f64::max)
    }

    /// Rows of `col` with intensity at least `threshold`.
    pub fn lit_rows(&self, col: usize, threshold: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.height).filter(move |&r| self.get(r, col) >= threshold)
    }
}

/// Lights pixels whose nearest surface is within the curtain thickness of the control point.
pub fn shade(depth: &DepthImage, plc: &PlcModel, profile: &CurtainProfile, frame: u64, opts: &RenderOptions) -> IntensityImage {
    let mut img = IntensityImage::zeros(frame, plc.n_cols, plc.n_rows, profile.ranges.clone());
    for col in 0..plc.n_cols {
        shade_column(depth, plc, profile, col, opts, &mut img);
    }
    img
}

pub(crate) fn shade_column(
    depth: &DepthImage,
    plc: &PlcModel,
    profile: &CurtainProfile,
    col: usize,
    opts: &RenderOptions,
    img: &mut IntensityImage,
) {
    let control = opts.frozen_range.unwrap_or(profile.ranges[col]);
    let tau = plc.curtain_thickness;
    for row in 0..plc.n_rows {
        let k = row * plc.n_cols + col;
        let hit = depth.range[k];
        if (hit - control).abs() <= tau {
            let mut v = depth.reflectivity[k] * opts.gain;
            if opts.falloff {
                v *= (1.0 / (hit * hit).max(1.0)).min(1.0);
            }
            img.intensity[k] = v.clamp(0.0, 1.0);
        }
    }
}

/// Renders one curtain against a static set of bodies.
pub fn image_curtain(bodies: &[Body], plc: &PlcModel, profile: &CurtainProfile) -> Result<IntensityImage> {
    image_curtain_with(bodies, plc, profile, 0, &RenderOptions::default())
}

pub fn image_curtain_with(
    bodies: &[Body],
    plc: &PlcModel,
    profile: &CurtainProfile,
    frame: u64,
    opts: &RenderOptions,
) -> Result<IntensityImage> {
    if profile.ranges.len() != plc.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "profile has {} columns, PLC has {}",
            profile.ranges.len(),
            plc.n_cols
        )));
    }
    Ok(shade(&render_depth(bodies, plc), plc, profile, frame, opts))
}

/// Sensor interference bursts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceModel {
    /// Chance that a burst starts on a frame where one may start.
    pub burst_probability: f64,
    pub min_burst_frames: u32,
    pub max_burst_frames: u32,
    /// Width of the saturated column span.
    pub burst_columns: usize,
    pub seed: u64,
}

impl InterferenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.min_burst_frames)
            || !(2..=4).contains(&self.max_burst_frames)
            || self.min_burst_frames > self.max_burst_frames
        {
            return Err(Error::InvalidArgument("burst length must lie in 2..=4 frames".into()));
        }
        if !(0.0..=1.0).contains(&self.burst_probability) {
            return Err(Error::InvalidArgument("burst probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Stateful burst generator; one call per frame, in frame order.
///
/// A burst never starts on the frame right after another ends, so two bursts
/// cannot fuse into a longer run.
pub struct Interference {
    model: InterferenceModel,
    rng: ChaCha8Rng,
    remaining: u32,
    cooldown: bool,
    span: Range<usize>,
}

impl Interference {
    pub fn new(model: InterferenceModel) -> Result<Self> {
        model.validate()?;
        Ok(Interference {
            model,
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            remaining: 0,
            cooldown: false,
            span: 0..0,
        })
    }

    /// Saturates the active burst's columns, if any. Returns whether it did.
    pub fn apply(&mut self, img: &mut IntensityImage) -> bool {
        if self.remaining == 0 {
            if self.cooldown {
                self.cooldown = false;
                return false;
            }
            if self.model.burst_probability == 0.0 || self.rng.random::<f64>() >= self.model.burst_probability {
                return false;
            }
            self.remaining = self
                .rng
                .random_range(self.model.min_burst_frames..=self.model.max_burst_frames);
            let w = self.model.burst_columns.clamp(1, img.width);
            let start = self.rng.random_range(0..=img.width - w);
            self.span = start..start + w;
        }
        for row in 0..img.height {
            for col in self.span.clone() {
                img.intensity[row * img.width + col] = 1.0;
            }
        }
        self.remaining -= 1;
        if self.remaining == 0 {
            self.cooldown = true;
        }
        true
    }
}

/// Applies interference bursts to a frame-ordered stream.
pub fn inject_interference<I>(images: I, model: InterferenceModel) -> Result<impl Iterator<Item = IntensityImage>>
where
    I: IntoIterator<Item = IntensityImage>,
{
    let mut gen = Interference::new(model)?;
    Ok(images.into_iter().map(move |mut img| {
        gen.apply(&mut img);
        img
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchdogStatus {
    Healthy,
    MirrorFault,
    PowerFault,
}

/// Where the reference sheet sits and what it should return.
#[derive(Debug, Clone, PartialEq)]
pub struct WatchdogConfig {
    /// Columns covered by the reference sheet.
    pub columns: Range<usize>,
    pub expected_intensity: f64,
    /// Allowed relative deviation from the expected intensity.
    pub band: f64,
    /// A column counts as returning above this intensity.
    pub presence_threshold: f64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        WatchdogConfig {
            columns: 0..16,
            expected_intensity: 1.0,
            band: 0.2,
            presence_threshold: 0.05,
        }
    }
}

/// Checks the reference sheet's return in a frame aimed at it.
pub fn watchdog_check(
    plc: &PlcModel,
    reference_range: f64,
    image: &IntensityImage,
    cfg: &WatchdogConfig,
) -> WatchdogStatus {
    let cols = cfg.columns.start.min(plc.n_cols)..cfg.columns.end.min(plc.n_cols);
    let maxima: Vec<f64> = cols.map(|c| image.column_max(c)).collect();
    let present: Vec<f64> = maxima
        .iter()
        .copied()
        .filter(|&v| v > cfg.presence_threshold)
        .collect();
    if maxima.is_empty() || 2 * present.len() < maxima.len() {
        return WatchdogStatus::MirrorFault;
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let _ = reference_range;
    if (mean - cfg.expected_intensity).abs() > cfg.band * cfg.expected_intensity {
        WatchdogStatus::PowerFault
    } else {
        WatchdogStatus::Healthy
    }
}
