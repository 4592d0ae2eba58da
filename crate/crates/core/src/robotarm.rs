//! Serial-chain forward kinematics and top-down projection.
//!
//! A chain is a base frame followed by revolute links. Link `i` first rotates
//! about its joint axis by the joint angle, then applies its fixed link
//! transform; the position reported for link `i` is the origin of the frame
//! after that transform (the next joint, or the tool for the last link).
//! Virtual points ride on the rotated frame of their link, so they keep a
//! constant distance to the joint that drives them.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{Point2, Pose2D};

pub type Point3 = nalgebra::Point3<f64>;

/// Half-width of the default end-effector box used for virtual corner points.
pub const DEFAULT_TOOL_HALF_WIDTH: f64 = 0.05;

/// A rigid transform given as translation plus roll/pitch/yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "translation_m")]
    pub translation: [f64; 3],
    #[serde(rename = "rpy_rad", default)]
    pub rpy: [f64; 3],
}

impl Frame {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Frame {
            translation: [x, y, z],
            rpy: [0.0; 3],
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.translation;
        let [r, p, w] = self.rpy;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_euler_angles(r, p, w),
        )
    }
}

/// One revolute joint and the rigid link it drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub axis: [f64; 3],
    #[serde(flatten)]
    pub transform: Frame,
}

/// A point rigidly attached to a link, in the link's rotated joint frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualPoint {
    pub link: usize,
    #[serde(rename = "offset_m")]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmChain {
    pub base: Frame,
    pub links: Vec<Link>,
    /// `None` selects [`ArmChain::default_virtual_points`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_points: Option<Vec<VirtualPoint>>,
}

/// Joint angles at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    #[serde(rename = "angles_rad")]
    pub angles: Vec<f64>,
    #[serde(rename = "t_s", default)]
    pub timestamp: f64,
}

impl JointState {
    pub fn new(angles: Vec<f64>, timestamp: f64) -> Self {
        JointState { angles, timestamp }
    }
}

impl ArmChain {
    pub fn new(base: Frame, links: Vec<Link>) -> Self {
        ArmChain {
            base,
            links,
            virtual_points: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::InvalidArgument("arm chain needs at least one link".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            let a = Vector3::from(link.axis);
            if !(a.norm() > 0.0) || !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!("link {i} has a degenerate joint axis")));
            }
        }
        for vp in self.virtual_points() {
            if vp.link >= self.links.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "virtual point on link {} but chain has {} links",
                    vp.link,
                    self.links.len()
                )));
            }
        }
        Ok(())
    }

    pub fn virtual_points(&self) -> Vec<VirtualPoint> {
        match &self.virtual_points {
            Some(v) => v.clone(),
            None => self.default_virtual_points(),
        }
    }

    /// Midpoint of every link plus four corners around the tool point.
    pub fn default_virtual_points(&self) -> Vec<VirtualPoint> {
        let mut out: Vec<VirtualPoint> = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let [x, y, z] = l.transform.translation;
                VirtualPoint {
                    link: i,
                    offset: [0.5 * x, 0.5 * y, 0.5 * z],
                }
            })
            .collect();
        let last = self.links.len() - 1;
        let tip = Vector3::from(self.links[last].transform.translation);
        // two directions perpendicular to the last link
        let along = if tip.norm() > 0.0 { tip.normalize() } else { Vector3::x() };
        let helper = if along.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = along.cross(&helper).normalize() * DEFAULT_TOOL_HALF_WIDTH;
        let v = along.cross(&u).normalize() * DEFAULT_TOOL_HALF_WIDTH;
        for (su, sv) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)] {
            let c = tip + u * su + v * sv;
            out.push(VirtualPoint {
                link: last,
                offset: [c.x, c.y, c.z],
            });
        }
        out
    }

    /// Number of points [`forward_kinematics`] returns.
    pub fn point_count(&self) -> usize {
        self.links.len() + self.virtual_points().len()
    }
}

/// World positions of every link end followed by every virtual point.
pub fn forward_kinematics(chain: &ArmChain, state: &JointState) -> Result<Vec<Point3>> {
    if state.angles.len() != chain.links.len() {
        return Err(Error::DimensionMismatch(format!(
            "joint state has {} angles, chain has {} links",
            state.angles.len(),
            chain.links.len()
        )));
    }
    let mut t = chain.base.isometry();
    let mut joint_frames = Vec::with_capacity(chain.links.len());
    let mut points = Vec::with_capacity(chain.point_count());
    for (link, &q) in chain.links.iter().zip(&state.angles) {
        let axis = Unit::new_normalize(Vector3::from(link.axis));
        let rotated = t * UnitQuaternion::from_axis_angle(&axis, q);
        joint_frames.push(rotated);
        t = rotated * link.transform.isometry();
        points.push(t * Point3::origin());
    }
    for vp in chain.virtual_points() {
        let frame = joint_frames.get(vp.link).ok_or_else(|| {
            Error::IndexOutOfRange(format!("virtual point on missing link {}", vp.link))
        })?;
        points.push(frame * Point3::from(vp.offset));
    }
    Ok(points)
}

/// Drops height and expresses each point in the PLC's top-down frame.
pub fn project_top_down(points: &[Point3], plc: &Pose2D) -> Vec<Point2> {
    points
        .iter()
        .map(|p| plc.to_local(Point2::new(p.x, p.y)))
        .collect()
}

/// Linear interpolation of joint angles, clamped at the script ends.
///
/// Keyframe times are the `timestamp` of each state and must increase.
pub fn sample_trajectory(script: &[JointState], t: f64) -> JointState {
    assert!(!script.is_empty(), "trajectory script must not be empty");
    let first = &script[0];
    let last = &script[script.len() - 1];
    if t <= first.timestamp {
        return JointState::new(first.angles.clone(), t);
    }
    if t >= last.timestamp {
        return JointState::new(last.angles.clone(), t);
    }
    let i = script.partition_point(|k| k.timestamp <= t);
    let (a, b) = (&script[i - 1], &script[i]);
    if t == a.timestamp {
        return JointState::new(a.angles.clone(), t);
    }
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    let angles = a
        .angles
        .iter()
        .zip(&b.angles)
        .map(|(x, y)| x + (y - x) * w)
        .collect();
    JointState::new(angles, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn planar_two_link() -> ArmChain {
        let link = Link {
            axis: [0.0, 0.0, 1.0],
            transform: Frame::translation(1.0, 0.0, 0.0),
        };
        let mut c = ArmChain::new(Frame::default(), vec![link, link]);
        c.virtual_points = Some(vec![]);
        c
    }

    fn close(a: Point3, b: [f64; 3]) -> bool {
        (a - Point3::from(b)).norm() < 1e-12
    }

    #[test]
    fn two_link_straight_and_bent() {
        let c = planar_two_link();
        let p = forward_kinematics(&c, &JointState::new(vec![0.0, 0.0], 0.0)).unwrap();
        assert!(close(p[0], [1., 0., 0.]) && close(p[1], [2., 0., 0.]));
        let p = forward_kinematics(&c, &JointState::new(vec![FRAC_PI_2, 0.0], 0.0)).unwrap();
        assert!(close(p[0], [0., 1., 0.]) && close(p[1], [0., 2., 0.]));
    }

    #[test]
    fn wrong_state_length() {
        let c = planar_two_link();
        assert!(matches!(
            forward_kinematics(&c, &JointState::new(vec![0.0], 0.0)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn default_virtual_points_ride_their_links() {
        let mut c = planar_two_link();
        c.virtual_points = None;
        assert_eq!(c.point_count(), 2 + 2 + 4);
        let p = forward_kinematics(&c, &JointState::new(vec![FRAC_PI_2, 0.0], 0.0)).unwrap();
        // midpoint of the first link
        assert!(close(p[2], [0.0, 0.5, 0.0]));
    }

    #[test]
    fn projection_cases() {
        let pts = [Point3::new(1.0, 0.0, 5.0)];
        assert_eq!(project_top_down(&pts, &Pose2D::default()), vec![Point2::new(1.0, 0.0)]);
        let q = project_top_down(&[Point3::new(1.0, 2.0, 0.0)], &Pose2D::new(1.0, 1.0, FRAC_PI_2));
        assert!(q[0].distance(Point2::new(1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn trajectory_sampling() {
        let script = vec![
            JointState::new(vec![0.0], 1.0),
            JointState::new(vec![PI], 3.0),
        ];
        assert_eq!(sample_trajectory(&script, 0.0).angles, vec![0.0]);
        assert!((sample_trajectory(&script, 2.0).angles[0] - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(sample_trajectory(&script, 3.0).angles, vec![PI]);
        assert_eq!(sample_trajectory(&script, 1.0).angles, vec![0.0]);
        assert_eq!(sample_trajectory(&script, 9.0).angles, vec![PI]);
    }
}
