mod common;

use std::f64::consts::{PI, TAU};

use lightcurtain::curtain::{design_safety_curtain, planar_curtain, random_curtain, sweep_schedule, CurtainProfile, CurtainKind, PlcModel};
use lightcurtain::geom2d::{
    convex_hull, offset_convex, ray_polygon_entry, subtended_angle, Point2, Polygon2, Pose2D, Ray2,
};
use lightcurtain::layout::{grid_pose, load_scenario, save_scenario, Bounds, SearchGrid, SensorParams};
use lightcurtain::monitor::{run_pipeline, EventKind, MonitorMode, PipelineConfig};
use lightcurtain::plcsim::{image_curtain, inject_interference, Body, IntensityImage, InterferenceModel};
use lightcurtain::recon::{backproject, icp_register, merge_max, sweep_merge, IcpParams, PointCloud, RigidTransform3};
use lightcurtain::robotarm::{forward_kinematics, project_top_down, ArmChain, Frame, JointState, Link, Point3};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, gift_wrap, strictly_inside};

fn pt() -> impl Strategy<Value = Point2> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn hull() -> impl Strategy<Value = Polygon2> {
    prop::collection::vec(pt(), 3..24).prop_filter_map("degenerate", |v| convex_hull(&v).ok().filter(|h| h.area() > 1e-3))
}

fn pose() -> impl Strategy<Value = Pose2D> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.0..TAU).prop_map(|(x, y, t)| Pose2D::new(x, y, t))
}

fn plc(cols: usize, rows: usize, tau: f64) -> PlcModel {
    let s = SensorParams {
        n_cols: cols,
        n_rows: rows,
        curtain_thickness_m: tau,
        max_range_m: 10.0,
        ..SensorParams::default()
    };
    PlcModel::from_params(Pose2D::default(), &s).unwrap()
}

fn boxes(rng: &mut ChaCha8Rng, n: usize, x: std::ops::Range<f64>) -> Vec<Body> {
    (0..n)
        .map(|_| {
            let (cx, cy) = (rng.random_range(x.clone()), rng.random_range(-2.5..2.5));
            let (w, h) = (rng.random_range(0.2..1.0), rng.random_range(0.2..1.0));
            Body {
                footprint: Polygon2::rect(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).unwrap(),
                z_min: rng.random_range(0.0..0.5),
                z_max: rng.random_range(0.8..2.2),
                reflectivity: rng.random_range(0.6..1.0),
            }
        })
        .collect()
}

fn chain(rng: &mut ChaCha8Rng) -> ArmChain {
    let mut v = |s: f64| [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)];
    let base = Frame {
        translation: v(2.0),
        rpy: v(PI),
    };
    let links = (0..6)
        .map(|_| Link {
            axis: v(1.0),
            transform: Frame {
                translation: v(0.5),
                rpy: v(PI),
            },
        })
        .collect();
    ArmChain::new(base, links)
}

fn angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-PI..PI)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hull_is_idempotent_and_contains_its_input(pts in prop::collection::vec(pt(), 3..40)) {
        if let Ok(h) = convex_hull(&pts) {
            let again = convex_hull(h.vertices()).unwrap();
            prop_assert_eq!(again.vertices(), h.vertices());
            for p in &pts {
                prop_assert!(h.signed_distance(*p) <= 1e-9);
            }
        }
    }

    #[test]
    fn subtended_angle_is_symmetric_and_rigid(v in pt(), a in pt(), b in pt(), g in pose()) {
        prop_assume!(v.distance(a) > 1e-6 && v.distance(b) > 1e-6);
        let ab = subtended_angle(v, a, b).unwrap();
        prop_assert!((ab - subtended_angle(v, b, a).unwrap()).abs() <= 1e-12);
        let moved = subtended_angle(g.to_world(v), g.to_world(a), g.to_world(b)).unwrap();
        prop_assert!((ab - moved).abs() <= 1e-9);
    }

    #[test]
    fn ray_entry_lies_on_the_boundary(poly in hull(), origin in pt(), heading in 0.0..TAU) {
        prop_assume!(poly.signed_distance(origin) > 1e-6);
        let ray = Ray2::from_heading(origin, heading);
        if let Some(t) = ray_polygon_entry(&ray, &poly) {
            prop_assert!(poly.boundary_distance(ray.at(t)) <= 1e-9);
            let eps = 1e-6;
            prop_assert!(!poly.contains(ray.at(t - eps)));
        }
    }

    #[test]
    fn offsets_add(poly in hull(), d1 in 0.0..0.5f64, d2 in 0.0..0.5f64) {
        let once = offset_convex(&poly, d1 + d2).unwrap();
        let twice = offset_convex(&offset_convex(&poly, d1).unwrap(), d2).unwrap();
        prop_assert_eq!(once.len(), twice.len());
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            prop_assert!(a.distance(*b) <= 1e-9, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn grid_poses_are_distinct(
        (nx, ny, nt) in (1usize..12, 1usize..12, 1usize..24),
        a in (0usize..12, 0usize..12, 0usize..24),
        b in (0usize..12, 0usize..12, 0usize..24),
    ) {
        let g = SearchGrid::new(nx, ny, nt, Bounds::new(-3.0, -2.0, 5.0, 4.0));
        let (a, b) = ((a.0 % nx, a.1 % ny, a.2 % nt), (b.0 % nx, b.1 % ny, b.2 % nt));
        prop_assume!(a != b);
        prop_assert_ne!(grid_pose(&g, a.0, a.1, a.2).unwrap(), grid_pose(&g, b.0, b.1, b.2).unwrap());
    }

    #[test]
    fn top_down_projection_keeps_planar_distances(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.0..2.0f64), 2..10),
        x in -5.0..5.0f64,
        y in -5.0..5.0f64,
    ) {
        let p3: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
        let flat = project_top_down(&p3, &Pose2D::new(x, y, 0.0));
        for i in 0..p3.len() {
            for j in 0..p3.len() {
                let d = (p3[i].x - p3[j].x).hypot(p3[i].y - p3[j].y);
                prop_assert!((flat[i].distance(flat[j]) - d).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn planar_range_times_cosine_is_depth(depth in 0.1..10.0f64, cols in 2usize..600) {
        let p = plc(cols, 4, 0.02);
        let prof = planar_curtain(depth, &p).unwrap();
        for (c, &r) in prof.ranges.iter().enumerate() {
            if r < p.max_range {
                prop_assert!((r * p.column_bearing(c).cos() - depth).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn interference_never_exceeds_full_intensity(
        seed in any::<u64>(),
        prob in 0.0..1.0f64,
        lo in 2u32..5,
        extra in 0u32..3,
        width in 1usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<IntensityImage> = (0..30)
            .map(|f| {
                let mut img = IntensityImage::zeros(f, 32, 8, vec![1.0; 32]);
                img.intensity.iter_mut().for_each(|v| *v = rng.random_range(0.0..=1.0));
                img
            })
            .collect();
        let model = InterferenceModel {
            burst_probability: prob,
            min_burst_frames: lo,
            max_burst_frames: (lo + extra).min(4),
            burst_columns: width,
            seed,
        };
        for img in inject_interference(frames, model).unwrap() {
            prop_assert!(img.intensity.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn merge_ignores_order_and_grouping(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse values so ties between frames are common
        let imgs: Vec<IntensityImage> = (0..n)
            .map(|f| {
                let ranges = (0..6).map(|_| [1.0, 2.0, 3.0][rng.random_range(0..3)]).collect();
                let mut img = IntensityImage::zeros(f as u64, 6, 3, ranges);
                img.intensity.iter_mut().for_each(|v| *v = [0.0, 0.5, 1.0][rng.random_range(0..3)]);
                img
            })
            .collect();
        let all = merge_max(&imgs).unwrap();
        let mut rev = imgs.clone();
        rev.reverse();
        prop_assert_eq!(&merge_max(&rev).unwrap(), &all);
        let split = rng.random_range(1..=n);
        let left = merge_max(&imgs[..split]).unwrap();
        let grouped = if split == n { left } else { left.combine(&merge_max(&imgs[split..]).unwrap()).unwrap() };
        prop_assert_eq!(&grouped, &all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenarios_survive_a_save_load_cycle(name in prop::sample::select(vec!["grid_six", "testbed", "latency", "box_room"]), dx in -0.5..0.5f64) {
        let mut sc = fixture(name);
        for r in &mut sc.robots {
            for v in &mut r.vertices {
                v.x += dx;
            }
        }
        sc.workspace.min_x -= 1.0;
        sc.workspace.max_x += 1.0;
        sc.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&sc, &path).unwrap();
        prop_assert_eq!(load_scenario(&path).unwrap(), sc);
    }

    #[test]
    fn earlier_joints_do_not_stretch_later_links(seed in any::<u64>(), upto in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = chain(&mut rng);
        let q0 = angles(&mut rng, 6);
        let mut q1 = q0.clone();
        for q in q1.iter_mut().take(upto + 1) {
            *q = rng.random_range(-PI..PI);
        }
        let a = forward_kinematics(&c, &JointState::new(q0, 0.0)).unwrap();
        let b = forward_kinematics(&c, &JointState::new(q1, 0.0)).unwrap();
        for i in 1..6 {
            prop_assert!(((a[i] - a[i - 1]).norm() - (b[i] - b[i - 1]).norm()).abs() <= 1e-9);
        }
    }

    #[test]
    fn virtual_points_ride_their_link(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = chain(&mut rng);
        let base = Point3::from(Vector3::from(c.base.translation));
        let vps = c.virtual_points();
        let dist = |pts: &[Point3]| -> Vec<f64> {
            vps.iter()
                .enumerate()
                .map(|(k, vp)| {
                    let joint = if vp.link == 0 { base } else { pts[vp.link - 1] };
                    (pts[6 + k] - joint).norm()
                })
                .collect()
        };
        let d0 = dist(&forward_kinematics(&c, &JointState::new(angles(&mut rng, 6), 0.0)).unwrap());
        let d1 = dist(&forward_kinematics(&c, &JointState::new(angles(&mut rng, 6), 0.0)).unwrap());
        for (x, y) in d0.iter().zip(&d1) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn safety_curtain_wraps_the_points(
        pts in prop::collection::vec((1.0..6.0f64, -0.7..0.7f64), 3..16),
        offset in 0.02..0.3f64,
    ) {
        let p = plc(256, 4, 0.02);
        // range and bearing, kept inside the field of view
        let local: Vec<Point2> = pts.iter().map(|&(r, b)| Point2::from_angle(b) * r).collect();
        let sc = design_safety_curtain(&local, &p, offset).unwrap();
        prop_assume!(!sc.fallback && !sc.hit_columns.is_empty());
        let cps = sc.profile.control_points_local(&p);
        let near: Vec<Point2> = sc.hit_columns.iter().map(|&c| cps[c]).collect();
        let h = gift_wrap(&local);
        for q in &near {
            prop_assert!(!strictly_inside(&h, *q));
        }
        let mut poly = near.clone();
        poly.push(p.local_ray(*sc.hit_columns.last().unwrap()).at(p.max_range));
        poly.push(p.local_ray(sc.hit_columns[0]).at(p.max_range));
        for q in &local {
            prop_assert!(strictly_inside(&poly, *q), "{:?}", q);
        }
    }

    #[test]
    fn returns_need_a_surface_at_the_control_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = 1e-3;
        let p = plc(24, 12, tau);
        let bodies = boxes(&mut rng, 4, 1.0..6.0);
        let hits: Vec<Vec<f64>> = (0..p.n_cols)
            .map(|c| (0..p.n_rows).map(|r| march_first_hit(&bodies, &p, c, r)).collect())
            .collect();
        // half the columns aim at a surface seen by some row, the rest at random depths
        let ranges: Vec<f64> = (0..p.n_cols)
            .map(|c| {
                let seen: Vec<f64> = hits[c].iter().copied().filter(|h| h.is_finite()).collect();
                if !seen.is_empty() && rng.random_bool(0.5) {
                    seen[rng.random_range(0..seen.len())]
                } else {
                    rng.random_range(0.5..9.0)
                }
            })
            .collect();
        let prof = CurtainProfile { ranges: ranges.clone(), kind: CurtainKind::Random, stamp: 0 };
        let img = image_curtain(&bodies, &p, &prof).unwrap();
        for c in 0..p.n_cols {
            for r in 0..p.n_rows {
                let gap = (hits[c][r] - ranges[c]).abs();
                if (gap - tau).abs() < 1e-6 {
                    continue;
                }
                prop_assert_eq!(img.get(r, c) > 0.0, gap <= tau, "col {} row {} gap {}", c, r, gap);
            }
        }
    }

    #[test]
    fn nearer_blockers_only_remove_returns(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = plc(48, 24, 0.05);
        let depth = 4.0;
        let prof = planar_curtain(depth, &p).unwrap();
        let scene = boxes(&mut rng, 3, 3.5..7.0);
        let before = image_curtain(&scene, &p, &prof).unwrap();
        let mut more = scene.clone();
        // entirely nearer than the sheet by more than the thickness
        more.extend(boxes(&mut rng, 2, 1.0..2.5));
        let after = image_curtain(&more, &p, &prof).unwrap();
        for (a, b) in after.intensity.iter().zip(&before.intensity) {
            prop_assert!(*a == 0.0 || *a == *b);
        }
    }

    #[test]
    fn residual_never_rises(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut target = PointCloud::new("t");
        for _ in 0..600 {
            target.push(Point3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.6)), 1.0);
        }
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
        let t = RigidTransform3::from_axis_angle(axis, rng.random_range(0.0..0.3), Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0));
        let source = target.transformed(&t);
        let cap = [f64::INFINITY, 0.3, 0.1][rng.random_range(0..3)];
        let params = IcpParams { max_pair_distance: cap, cell_size: 0.1, ..IcpParams::default() };
        let r = icp_register(&source, &target, &RigidTransform3::identity(), &params).unwrap();
        for w in r.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", r.residuals);
        }
        prop_assert!(r.rmse <= r.residuals[r.residuals.len() - 1] + 1e-12);
    }

    #[test]
    fn swept_plane_offset_is_recovered(depth in 1.5..6.0f64, interval in 0.005..0.04f64) {
        let p = plc(32, 16, 0.02);
        let wall = Body {
            footprint: Polygon2::rect(depth, -20.0, depth + 0.5, 20.0).unwrap(),
            z_min: -5.0,
            z_max: 5.0,
            reflectivity: 1.0,
        };
        let sweep = sweep_schedule(1.0, 7.0, interval, &p).unwrap();
        let cloud = backproject(&sweep_merge(&[wall], &p, &sweep).unwrap(), &p, 0.5).unwrap();
        prop_assert!(!cloud.is_empty());
        let mean = cloud.points.iter().map(|q| q.x).sum::<f64>() / cloud.len() as f64;
        prop_assert!((mean - depth).abs() <= p.curtain_thickness + interval / 2.0, "{} vs {}", mean, depth);
    }

    #[test]
    fn timelines_are_well_ordered(seed in any::<u64>(), dynamic in any::<bool>(), k in 1usize..6) {
        let sc = fixture("latency");
        let cfg = PipelineConfig {
            mode: if dynamic { MonitorMode::Dynamic } else { MonitorMode::Planar },
            persistence: k,
            seed,
            ..PipelineConfig::default()
        };
        let tl = run_pipeline(&sc, 6.4, &cfg).unwrap();
        prop_assert!(tl.is_well_ordered());
        // a robot resumes only on a frame where nothing was attributed to it
        let mut stopped = false;
        for e in &tl.events {
            match e.kind {
                EventKind::RobotStopped => stopped = true,
                EventKind::Resume => {
                    prop_assert!(stopped);
                    stopped = false;
                    let blocked = tl.events.iter().any(|d| {
                        d.kind == EventKind::Detection
                            && d.t_ms == e.t_ms
                            && (d.robot_id.is_none() || d.robot_id == e.robot_id)
                    });
                    prop_assert!(!blocked, "resume at {} ms despite a detection", e.t_ms);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn short_bursts_never_stop_the_cell(seed in any::<u64>(), prob in 0.01..0.3f64) {
        let sc = fixture("interference");
        let cfg = PipelineConfig {
            persistence: 5,
            seed,
            interference: Some(InterferenceModel {
                burst_probability: prob,
                min_burst_frames: 2,
                max_burst_frames: 4,
                burst_columns: 16,
                seed,
            }),
            ..PipelineConfig::default()
        };
        let tl = run_pipeline(&sc, 20.0, &cfg).unwrap();
        prop_assert_eq!(tl.count(EventKind::StopIssued), 0);
    }
}

/// First horizontal range at which pixel `(col, row)` enters any body, by fixed steps plus bisection.
fn march_first_hit(bodies: &[Body], p: &PlcModel, col: usize, row: usize) -> f64 {
    let ray = p.local_ray(col);
    let m = p.row_elevation(row).tan();
    let inside = |t: f64| {
        let xy = ray.at(t);
        let z = p.mount_height + m * t;
        bodies.iter().any(|b| z >= b.z_min && z <= b.z_max && b.footprint.contains(xy))
    };
    let step = 1e-3;
    let mut t = 0.0;
    while t < p.max_range {
        if inside(t + step) {
            let (mut lo, mut hi) = (t, t + step);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi;
        }
        t += step;
    }
    f64::INFINITY
}

#[test]
fn random_curtains_stay_in_range_and_slope() {
    let p = plc(64, 4, 0.02);
    for seed in 0..10_000 {
        let c = random_curtain(&p, seed);
        assert!(c.ranges.iter().all(|&r| r > 0.0 && r <= p.max_range), "seed {seed}");
        assert!(c.ranges.windows(2).all(|w| (w[1] - w[0]).abs() <= p.galvo_slope + 1e-12), "seed {seed}");
    }
}
