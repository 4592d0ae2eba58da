//! Plain-text and image exports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::curtain::CurtainProfile;
use crate::error::{Error, Result};
use crate::geom2d::Pose2D;
use crate::instrument::CoverageScore;
use crate::layout::Scenario;
use crate::plcsim::IntensityImage;
use crate::recon::PointCloud;
use crate::robotarm::Point3;

/// ASCII PLY with `x y z intensity` vertices.
pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment frame {}", cloud.frame_id)?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z", "intensity"] {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for (p, i) in cloud.points.iter().zip(&cloud.intensity) {
        writeln!(w, "{:.6} {:.6} {:.6} {:.6}", p.x, p.y, p.z, i)?;
    }
    Ok(())
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(f, cloud)?;
    Ok(())
}

/// Reads what [`write_ply`] writes.
pub fn read_ply(text: &str) -> Result<PointCloud> {
    let bad = |m: &str| Error::Parse(format!("ply: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut cloud = PointCloud::new("");
    let mut count = None;
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(f) = line.strip_prefix("comment frame ") {
            cloud.frame_id = f.to_string();
        } else if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad("vertex count"))?);
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("truncated body"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| bad("number")))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(bad("expected 4 values per vertex"));
        }
        cloud.push(Point3::new(v[0], v[1], v[2]), v[3]);
    }
    Ok(cloud)
}

/// Binary 8-bit PGM of values in [0, 1] (row-major).
pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, values: &[f64]) -> std::io::Result<()> {
    assert_eq!(values.len(), width * height, "pixel count");
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)
}

pub fn save_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(f, width, height, values)?;
    Ok(())
}

pub fn profile_csv(profile: &CurtainProfile) -> String {
    let mut s = String::from("col,range_m\n");
    for (c, r) in profile.ranges.iter().enumerate() {
        let _ = writeln!(s, "{c},{r:.6}");
    }
    s
}

/// Per-column range sidecar for a PGM frame.
pub fn column_range_csv(image: &IntensityImage) -> String {
    let mut s = String::from("col,range_m\n");
    for (c, r) in image.column_range.iter().enumerate() {
        let _ = writeln!(s, "{c},{r:.6}");
    }
    s
}

/// Top-down figure: workspace, robot footprints, PLC wedges and counted edges.
pub fn layout_svg(scenario: &Scenario, poses: &[Pose2D], score: Option<&CoverageScore>) -> String {
    let b = &scenario.workspace;
    let px = 600.0 / b.width().max(b.height());
    let (w, h) = (b.width() * px, b.height() * px);
    let tx = |x: f64| (x - b.min_x) * px;
    let ty = |y: f64| h - (y - b.min_y) * px;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#ffffff" stroke="#000000"/>"##);
    let reach = scenario.sensor.max_range_m.min(b.width().hypot(b.height()));
    let fov = scenario.sensor.fov_rad;
    for p in poses {
        let mut d = format!("M {:.2} {:.2}", tx(p.x), ty(p.y));
        for k in 0..=16 {
            let a = p.theta - fov / 2.0 + fov * k as f64 / 16.0;
            let _ = write!(d, " L {:.2} {:.2}", tx(p.x + reach * a.cos()), ty(p.y + reach * a.sin()));
        }
        d.push_str(" Z");
        let _ = writeln!(s, r##"<path d="{d}" fill="#4a90d9" fill-opacity="0.12" stroke="none"/>"##);
    }
    for r in &scenario.robots {
        let pts: Vec<String> = r
            .vertices
            .iter()
            .map(|v| format!("{:.2},{:.2}", tx(v.x), ty(v.y)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#d0d0d0" stroke="#333333" stroke-width="1.5"/>"##,
            pts.join(" ")
        );
    }
    if let Some(score) = score {
        for e in &score.counted_edges {
            let r = &scenario.robots[e.robot];
            let (a, c) = (r.vertices[e.vertices.0], r.vertices[e.vertices.1]);
            let p = poses[e.plc];
            for v in [a, c] {
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#e07b00" stroke-width="1"/>"##,
                    tx(p.x),
                    ty(p.y),
                    tx(v.x),
                    ty(v.y)
                );
            }
        }
        for v in &score.observed_vertices {
            let q = scenario.robots[v.robot].vertices[v.vertex];
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#2e8b57"/>"##, tx(q.x), ty(q.y));
        }
    }
    for (i, p) in poses.iter().enumerate() {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="6" fill="#1f4e8c"/>"##, tx(p.x), ty(p.y));
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">PLC {}</text>"##,
            tx(p.x) + 8.0,
            ty(p.y) - 8.0,
            i + 1
        );
    }
    s.push_str("</svg>\n");
    s
}
