//! PLC placement: coverage scoring and the search over grid poses.
//!
//! A joint configuration of PLC poses is scored by summing, over PLCs and the
//! robots each one sees, the angle subtended at the PLC by the robot edge
//! formed by its two closest corners. An edge only counts when at least one of
//! its corners has not already been claimed by an earlier PLC, and every robot
//! whose four corners all end up observed earns a flat bonus of
//! [`FULL_COVERAGE_BONUS`]. The bonus dwarfs any single angle (< π), so the
//! search prefers configurations that fully envelop robots.
//!
//! [`sample_search`] draws uniform grid configurations; [`brute_force_search`]
//! enumerates all of them and serves as the reference on small grids.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{in_fov, segment_occluded, subtended_angle, Point2, Polygon2, Pose2D};
use crate::layout::Scenario;

/// Score added for each robot with all four corners observed.
pub const FULL_COVERAGE_BONUS: f64 = 10.0;

/// Default cap on brute-force evaluations.
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 1_000_000_000;

/// Visibility model used while scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub fov: f64,
    pub max_range: f64,
    /// Require the sight line to each corner to miss every robot interior.
    pub occlusion: bool,
}

impl ScoreOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        ScoreOptions {
            fov: scenario.sensor.fov_rad,
            max_range: scenario.sensor.max_range_m,
            occlusion: false,
        }
    }
}

/// A robot corner: index into `Scenario::robots` and corner index 0..4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexRef {
    pub robot: usize,
    pub vertex: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountedEdge {
    pub plc: usize,
    pub robot: usize,
    pub vertices: (usize, usize),
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverageScore {
    /// Sum of counted edge angles plus all bonuses.
    pub angle_sum: f64,
    pub observed_vertices: BTreeSet<VertexRef>,
    pub counted_edges: Vec<CountedEdge>,
    pub full_coverage_bonus_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConfig {
    pub poses: Vec<Pose2D>,
    /// Flat grid index of each pose.
    pub pose_indices: Vec<usize>,
    pub score: CoverageScore,
    pub samples_evaluated: u64,
    pub seed: u64,
}

/// Pre-extracted robot geometry for repeated scoring.
pub struct Scorer {
    corners: Vec<[Point2; 4]>,
    polygons: Vec<Polygon2>,
    opts: ScoreOptions,
}

impl Scorer {
    pub fn new(scenario: &Scenario, opts: ScoreOptions) -> Self {
        let corners = scenario
            .robots
            .iter()
            .map(|r| [r.vertices[0], r.vertices[1], r.vertices[2], r.vertices[3]])
            .collect();
        let polygons = scenario.robots.iter().map(|r| r.polygon()).collect();
        Scorer {
            corners,
            polygons,
            opts,
        }
    }

    pub fn robot_count(&self) -> usize {
        self.corners.len()
    }

    /// Full score with bookkeeping.
    pub fn score(&self, poses: &[Pose2D]) -> CoverageScore {
        let mut observed = vec![false; 4 * self.corners.len()];
        let mut edges = Vec::new();
        let (angle_sum, bonus) = self.walk(poses, &mut observed, |e| edges.push(e));
        let observed_vertices = observed
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .map(|(i, _)| VertexRef {
                robot: i / 4,
                vertex: i % 4,
            })
            .collect();
        CoverageScore {
            angle_sum,
            observed_vertices,
            counted_edges: edges,
            full_coverage_bonus_count: bonus,
        }
    }

    /// Just the scalar score; `scratch` is resized as needed.
    pub fn angle_sum(&self, poses: &[Pose2D], scratch: &mut Vec<bool>) -> f64 {
        scratch.clear();
        scratch.resize(4 * self.corners.len(), false);
        self.walk(poses, scratch, |_| {}).0
    }

    fn walk(
        &self,
        poses: &[Pose2D],
        observed: &mut [bool],
        mut on_edge: impl FnMut(CountedEdge),
    ) -> (f64, usize) {
        let o = &self.opts;
        let mut sum = 0.0;
        for (plc, pose) in poses.iter().enumerate() {
            let eye = pose.position();
            for (r, corners) in self.corners.iter().enumerate() {
                let visible = corners.map(|c| in_fov(pose, o.fov, o.max_range, c));
                if !visible.iter().any(|&v| v) {
                    continue;
                }
                let (a, b) = two_closest(eye, corners);
                if !(visible[a] && visible[b]) {
                    continue;
                }
                if observed[4 * r + a] && observed[4 * r + b] {
                    continue;
                }
                if o.occlusion
                    && (segment_occluded(eye, corners[a], &self.polygons)
                        || segment_occluded(eye, corners[b], &self.polygons))
                {
                    continue;
                }
                let Ok(angle) = subtended_angle(eye, corners[a], corners[b]) else {
                    continue;
                };
                if angle <= 0.0 {
                    continue;
                }
                sum += angle;
                observed[4 * r + a] = true;
                observed[4 * r + b] = true;
                on_edge(CountedEdge {
                    plc,
                    robot: r,
                    vertices: (a.min(b), a.max(b)),
                    angle,
                });
            }
        }
        let mut bonus = 0;
        for r in 0..self.corners.len() {
            if observed[4 * r..4 * r + 4].iter().all(|&v| v) {
                sum += FULL_COVERAGE_BONUS;
                bonus += 1;
            }
        }
        (sum, bonus)
    }
}

/// Indices of the two corners nearest `eye`; ties go to the lower index.
fn two_closest(eye: Point2, corners: &[Point2; 4]) -> (usize, usize) {
    let d = corners.map(|c| eye.distance(c));
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    (order[0], order[1])
}

pub fn score_configuration(scenario: &Scenario, poses: &[Pose2D], opts: &ScoreOptions) -> CoverageScore {
    Scorer::new(scenario, *opts).score(poses)
}

/// Percentage of all robot corners observed by at least one PLC.
pub fn coverage_percentage(score: &CoverageScore, scenario: &Scenario) -> f64 {
    100.0 * score.observed_vertices.len() as f64 / (4 * scenario.robots.len()) as f64
}

/// Grid indices of sample `i` under master `seed`; independent of `n`.
pub fn sample_indices(seed: u64, sample: u64, m: usize, grid_len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    (0..m).map(|_| rng.random_range(0..grid_len)).collect()
}

const CHUNK: u64 = 4096;

#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    index: u64,
}

fn better(a: Candidate, b: Candidate) -> Candidate {
    // higher score wins, then the earlier index
    match a.score.total_cmp(&b.score) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if a.index <= b.index {
                a
            } else {
                b
            }
        }
    }
}

fn argmax_parallel(count: u64, eval: impl Fn(u64, &mut Vec<bool>) -> f64 + Sync) -> Candidate {
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = Vec::new();
            let mut best = Candidate {
                score: f64::NEG_INFINITY,
                index: u64::MAX,
            };
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let s = eval(i, &mut scratch);
                if s > best.score {
                    best = Candidate { score: s, index: i };
                }
            }
            best
        })
        .reduce(
            || Candidate {
                score: f64::NEG_INFINITY,
                index: u64::MAX,
            },
            better,
        )
}

/// Best of `n` uniformly drawn configurations of `m` grid poses.
///
/// Sample `i` draws its poses from its own ChaCha stream keyed by `(seed, i)`,
/// so the result does not depend on thread count and the first `n` samples
/// are the same for every larger `n`.
pub fn sample_search(scenario: &Scenario, m: usize, n: u64, seed: u64, opts: &ScoreOptions) -> Result<BestConfig> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("sample search needs m >= 1 and n >= 1".into()));
    }
    let grid = scenario.grid;
    let scorer = Scorer::new(scenario, *opts);
    let best = argmax_parallel(n, |i, scratch| {
        let poses: Vec<Pose2D> = sample_indices(seed, i, m, grid.len())
            .into_iter()
            .map(|k| grid.pose_at(k))
            .collect();
        scorer.angle_sum(&poses, scratch)
    });
    let pose_indices = sample_indices(seed, best.index, m, grid.len());
    let poses: Vec<Pose2D> = pose_indices.iter().map(|&k| grid.pose_at(k)).collect();
    Ok(BestConfig {
        score: scorer.score(&poses),
        poses,
        pose_indices,
        samples_evaluated: n,
        seed,
    })
}

/// Exact optimum over every ordered tuple of `m` grid poses.
///
/// Ties resolve to the lexicographically smallest index tuple.
pub fn brute_force_search(scenario: &Scenario, m: usize, opts: &ScoreOptions, budget: u64) -> Result<BestConfig> {
    if m == 0 {
        return Err(Error::InvalidArgument("brute force needs m >= 1".into()));
    }
    let grid = scenario.grid;
    let n = grid.len() as u64;
    let total = (n as f64).powi(m as i32);
    if total > budget as f64 {
        return Err(Error::BudgetExceeded {
            evaluations: total,
            budget,
        });
    }
    let total = n.pow(m as u32);
    let decode = |mut k: u64| -> Vec<usize> {
        let mut idx = vec![0usize; m];
        for slot in idx.iter_mut().rev() {
            *slot = (k % n) as usize;
            k /= n;
        }
        idx
    };
    let scorer = Scorer::new(scenario, *opts);
    let best = argmax_parallel(total, |k, scratch| {
        let poses: Vec<Pose2D> = decode(k).into_iter().map(|i| grid.pose_at(i)).collect();
        scorer.angle_sum(&poses, scratch)
    });
    let pose_indices = decode(best.index);
    let poses: Vec<Pose2D> = pose_indices.iter().map(|&k| grid.pose_at(k)).collect();
    Ok(BestConfig {
        score: scorer.score(&poses),
        poses,
        pose_indices,
        samples_evaluated: total,
        seed: 0,
    })
}

/// Smallest PLC count in `2..=max_m` whose best sampled configuration covers
/// every robot corner, or `None`.
pub fn min_plcs(scenario: &Scenario, n: u64, max_m: usize, seed: u64, opts: &ScoreOptions) -> Result<Option<usize>> {
    if max_m < 2 {
        return Err(Error::InvalidArgument("max_m must be >= 2".into()));
    }
    for m in 2..=max_m {
        let best = sample_search(scenario, m, n, seed, opts)?;
        if best.score.observed_vertices.len() == 4 * scenario.robots.len() {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Bounds, RobotFootprint, SearchGrid, SensorParams};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn scenario(robots: Vec<RobotFootprint>, grid: SearchGrid) -> Scenario {
        Scenario {
            name: String::new(),
            notes: None,
            workspace: Bounds::new(-10.0, -10.0, 10.0, 10.0),
            robots,
            plc_count: 1,
            grid,
            plc_poses: None,
            calibration_errors: None,
            sensor: SensorParams::default(),
            arms: vec![],
            obstacles: vec![],
        }
    }

    fn opts() -> ScoreOptions {
        ScoreOptions {
            fov: FRAC_PI_2,
            max_range: 30.0,
            occlusion: false,
        }
    }

    fn unit_robot_at(x: f64, y: f64) -> Scenario {
        let g = SearchGrid::new(1, 1, 1, Bounds::new(-1.0, -1.0, 1.0, 1.0));
        scenario(vec![RobotFootprint::square("r", x, y, 1.0, 1.0).unwrap()], g)
    }

    #[test]
    fn single_plc_sees_near_edge() {
        let sc = unit_robot_at(5.0, 0.0);
        let s = score_configuration(&sc, &[Pose2D::new(0.0, 0.0, 0.0)], &opts());
        let expected = 2.0 * (0.5f64 / 4.5).atan();
        assert!((s.angle_sum - expected).abs() < 1e-12);
        assert!((s.angle_sum - 0.2213).abs() < 1e-4);
        assert_eq!(s.observed_vertices.len(), 2);
        assert_eq!(s.full_coverage_bonus_count, 0);
    }

    #[test]
    fn nothing_in_view() {
        let sc = unit_robot_at(5.0, 0.0);
        let s = score_configuration(&sc, &[Pose2D::new(0.0, 0.0, PI)], &opts());
        assert_eq!(s.angle_sum, 0.0);
        assert!(s.observed_vertices.is_empty() && s.counted_edges.is_empty());
    }

    #[test]
    fn opposite_plcs_earn_one_bonus() {
        let sc = unit_robot_at(0.0, 0.0);
        let poses = [Pose2D::new(-5.0, 0.0, 0.0), Pose2D::new(5.0, 0.0, PI)];
        let s = score_configuration(&sc, &poses, &opts());
        let edge = 2.0 * (0.5f64 / 4.5).atan();
        assert_eq!(s.observed_vertices.len(), 4);
        assert_eq!(s.full_coverage_bonus_count, 1);
        assert!((s.angle_sum - (2.0 * edge + FULL_COVERAGE_BONUS)).abs() < 1e-12);
    }

    #[test]
    fn repeated_edge_is_not_double_counted() {
        let sc = unit_robot_at(5.0, 0.0);
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let once = score_configuration(&sc, &[pose], &opts());
        let twice = score_configuration(&sc, &[pose, pose], &opts());
        assert_eq!(once.angle_sum, twice.angle_sum);
        assert_eq!(twice.counted_edges.len(), 1);
    }

    #[test]
    fn occlusion_hides_a_robot_behind_another() {
        let g = SearchGrid::new(1, 1, 1, Bounds::new(-1.0, -1.0, 1.0, 1.0));
        let sc = scenario(
            vec![
                RobotFootprint::square("near", 3.0, 0.0, 1.0, 2.0).unwrap(),
                RobotFootprint::square("far", 6.0, 0.0, 1.0, 1.0).unwrap(),
            ],
            g,
        );
        let pose = [Pose2D::new(0.0, 0.0, 0.0)];
        let open = score_configuration(&sc, &pose, &opts());
        let mut o = opts();
        o.occlusion = true;
        let blocked = score_configuration(&sc, &pose, &o);
        assert_eq!(open.counted_edges.len(), 2);
        assert_eq!(blocked.counted_edges.len(), 1);
        assert_eq!(blocked.counted_edges[0].robot, 0);
    }

    #[test]
    fn coverage_percentages() {
        let sc = unit_robot_at(0.0, 0.0);
        let mut s = CoverageScore::default();
        assert_eq!(coverage_percentage(&s, &sc), 0.0);
        for v in 0..4 {
            s.observed_vertices.insert(VertexRef { robot: 0, vertex: v });
        }
        assert_eq!(coverage_percentage(&s, &sc), 100.0);
    }

    #[test]
    fn single_sample_is_returned_verbatim() {
        let g = SearchGrid::new(5, 5, 8, Bounds::new(-4.0, -4.0, 4.0, 4.0));
        let sc = scenario(vec![RobotFootprint::square("r", 0.0, 0.0, 1.0, 1.0).unwrap()], g);
        let best = sample_search(&sc, 2, 1, 99, &opts()).unwrap();
        assert_eq!(best.pose_indices, sample_indices(99, 0, 2, g.len()));
        assert_eq!(best.samples_evaluated, 1);
    }

    #[test]
    fn single_cell_grid_brute_force() {
        let sc = unit_robot_at(5.0, 0.0);
        let best = brute_force_search(&sc, 1, &opts(), DEFAULT_BRUTE_FORCE_BUDGET).unwrap();
        assert_eq!(best.poses, vec![Pose2D::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn brute_force_budget() {
        let g = SearchGrid::new(50, 50, 20, Bounds::new(-4.0, -4.0, 4.0, 4.0));
        let sc = scenario(vec![RobotFootprint::square("r", 0.0, 0.0, 1.0, 1.0).unwrap()], g);
        assert!(matches!(
            brute_force_search(&sc, 2, &opts(), DEFAULT_BRUTE_FORCE_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
