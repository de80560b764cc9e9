//! SE(2) frames and the relative-pose features exchanged between polylines.
//!
//! Every polyline carries its own frame; cross-polyline geometry only ever
//! enters the network through [`RelPose`] values, which is what makes the
//! whole pipeline invariant to rigid transforms of the global frame.

use serde::{Deserialize, Serialize};

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = theta.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// An SE(2) pose: position in meters, heading in radians wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D { x, y, theta: wrap_angle(theta) }
    }

    pub fn identity() -> Self {
        Pose2D { x: 0.0, y: 0.0, theta: 0.0 }
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Pose of frame j expressed in frame i: translation plus the heading
/// difference encoded as cos/sin so it stays continuous at +-pi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPose {
    pub dx: f64,
    pub dy: f64,
    pub cos_dtheta: f64,
    pub sin_dtheta: f64,
}

impl RelPose {
    pub fn features(&self) -> [f64; 4] {
        [self.dx, self.dy, self.cos_dtheta, self.sin_dtheta]
    }
}

/// Express a global point in the given frame: rotate by -theta after
/// removing the frame origin.
pub fn to_frame(point: (f64, f64), frame: &Pose2D) -> (f64, f64) {
    let (dx, dy) = (point.0 - frame.x, point.1 - frame.y);
    let (s, c) = frame.theta.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`to_frame`].
pub fn from_frame(local: (f64, f64), frame: &Pose2D) -> (f64, f64) {
    let (s, c) = frame.theta.sin_cos();
    (frame.x + c * local.0 - s * local.1, frame.y + s * local.0 + c * local.1)
}

/// Rotate a global direction vector (e.g. a velocity) into the frame.
pub fn vector_to_frame(v: (f64, f64), frame: &Pose2D) -> (f64, f64) {
    let (s, c) = frame.theta.sin_cos();
    (c * v.0 + s * v.1, -s * v.0 + c * v.1)
}

/// Relative pose of frame j in frame i.
pub fn rel_pose(frame_i: &Pose2D, frame_j: &Pose2D) -> RelPose {
    let (dx, dy) = to_frame((frame_j.x, frame_j.y), frame_i);
    let dtheta = wrap_angle(frame_j.theta - frame_i.theta);
    RelPose { dx, dy, cos_dtheta: dtheta.cos(), sin_dtheta: dtheta.sin() }
}

/// A global rigid transform: rotate by `rotation` about the origin, then
/// translate.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: 0.0, translation: (0.0, 0.0) }
    }

    pub fn apply_point(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (c * p.0 - s * p.1 + self.translation.0, s * p.0 + c * p.1 + self.translation.1)
    }

    pub fn apply_vector(&self, v: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (c * v.0 - s * v.1, s * v.0 + c * v.1)
    }

    pub fn apply_heading(&self, heading: f64) -> f64 {
        wrap_angle(heading + self.rotation)
    }

    pub fn apply_pose(&self, pose: &Pose2D) -> Pose2D {
        let (x, y) = self.apply_point((pose.x, pose.y));
        Pose2D::new(x, y, pose.theta + self.rotation)
    }

    /// self after other: x -> self(other(x)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let t = self.apply_point(other.translation);
        RigidTransform { rotation: wrap_angle(self.rotation + other.rotation), translation: t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const TOL: f64 = 1e-9;

    #[test]
    fn wrap_lands_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < TOL);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < TOL);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn identity_frame_leaves_points_unchanged() {
        let f = Pose2D::identity();
        assert_eq!(to_frame((2.5, -1.0), &f), (2.5, -1.0));
    }

    #[test]
    fn to_frame_matches_rotation_matrix_oracle() {
        // frame (1,0,pi/2); point (1,1): R(-pi/2) * (0,1) = (1,0)
        let f = Pose2D::new(1.0, 0.0, PI / 2.0);
        let (x, y) = to_frame((1.0, 1.0), &f);
        assert!((x - 1.0).abs() < TOL, "x={x}");
        assert!(y.abs() < TOL, "y={y}");
    }

    #[test]
    fn frame_origin_maps_to_zero() {
        let f = Pose2D::new(-3.0, 7.0, 1.1);
        let (x, y) = to_frame(f.origin(), &f);
        assert!(x.abs() < TOL && y.abs() < TOL);
    }

    #[test]
    fn to_from_frame_round_trip() {
        let f = Pose2D::new(4.0, -2.0, 2.7);
        let p = (13.0, 5.5);
        let back = from_frame(to_frame(p, &f), &f);
        assert!((back.0 - p.0).abs() < TOL && (back.1 - p.1).abs() < TOL);
    }

    #[test]
    fn rel_pose_of_frame_with_itself_is_identity() {
        let f = Pose2D::new(2.0, 3.0, 0.5);
        let r = rel_pose(&f, &f);
        assert!(r.dx.abs() < TOL && r.dy.abs() < TOL);
        assert!((r.cos_dtheta - 1.0).abs() < TOL && r.sin_dtheta.abs() < TOL);
    }

    #[test]
    fn rel_pose_direct_substitution() {
        let i = Pose2D::identity();
        let j = Pose2D::new(3.0, 4.0, PI);
        let r = rel_pose(&i, &j);
        assert!((r.dx - 3.0).abs() < 1e-12);
        assert!((r.dy - 4.0).abs() < 1e-12);
        assert!((r.cos_dtheta + 1.0).abs() < 1e-12);
        assert!(r.sin_dtheta.abs() < 1e-12);
    }

    #[test]
    fn rel_pose_inverse_consistency() {
        // composing j->i with i->j yields the identity transform
        let i = Pose2D::new(1.0, -2.0, 0.8);
        let j = Pose2D::new(-4.0, 6.0, -2.2);
        let rij = rel_pose(&i, &j);
        let rji = rel_pose(&j, &i);
        // apply j->i then i->j to a point expressed in frame j
        let p_local_j = (3.3, -1.2);
        let dtheta_ij = rij.sin_dtheta.atan2(rij.cos_dtheta);
        let in_i = (
            rij.dx + dtheta_ij.cos() * p_local_j.0 - dtheta_ij.sin() * p_local_j.1,
            rij.dy + dtheta_ij.sin() * p_local_j.0 + dtheta_ij.cos() * p_local_j.1,
        );
        let dtheta_ji = rji.sin_dtheta.atan2(rji.cos_dtheta);
        let back = (
            rji.dx + dtheta_ji.cos() * in_i.0 - dtheta_ji.sin() * in_i.1,
            rji.dy + dtheta_ji.sin() * in_i.0 + dtheta_ji.cos() * in_i.1,
        );
        assert!((back.0 - p_local_j.0).abs() < TOL && (back.1 - p_local_j.1).abs() < TOL);
    }

    #[test]
    fn rel_pose_invariant_under_global_rigid_transform() {
        let i = Pose2D::new(1.0, 2.0, 0.3);
        let j = Pose2D::new(-5.0, 0.5, -1.9);
        let base = rel_pose(&i, &j);
        for (rot, t) in [(0.7, (10.0, -3.0)), (PI, (0.0, 100.0)), (-2.4, (-55.5, 0.1))] {
            let g = RigidTransform { rotation: rot, translation: t };
            let r = rel_pose(&g.apply_pose(&i), &g.apply_pose(&j));
            assert!((r.dx - base.dx).abs() < TOL);
            assert!((r.dy - base.dy).abs() < TOL);
            assert!((r.cos_dtheta - base.cos_dtheta).abs() < TOL);
            assert!((r.sin_dtheta - base.sin_dtheta).abs() < TOL);
        }
    }

    #[test]
    fn rel_pose_unchanged_by_two_pi_heading_shift() {
        let i = Pose2D::new(0.0, 0.0, 1.0);
        let j = Pose2D::new(1.0, 1.0, -0.5);
        let j2 = Pose2D::new(1.0, 1.0, -0.5 + 2.0 * PI);
        let (a, b) = (rel_pose(&i, &j), rel_pose(&i, &j2));
        assert!((a.cos_dtheta - b.cos_dtheta).abs() < TOL);
        assert!((a.sin_dtheta - b.sin_dtheta).abs() < TOL);
    }

    #[test]
    fn rigid_identity_and_composition() {
        let id = RigidTransform::identity();
        assert_eq!(id.apply_point((3.0, 4.0)), (3.0, 4.0));

        let a = RigidTransform { rotation: 0.6, translation: (1.0, -2.0) };
        let b = RigidTransform { rotation: -1.3, translation: (4.0, 0.5) };
        let ab = a.compose(&b);
        let p = (2.2, -7.1);
        let via_compose = ab.apply_point(p);
        let via_seq = a.apply_point(b.apply_point(p));
        assert!((via_compose.0 - via_seq.0).abs() < TOL);
        assert!((via_compose.1 - via_seq.1).abs() < TOL);
    }

    #[test]
    fn rigid_transform_preserves_pairwise_distances() {
        let g = RigidTransform { rotation: 1.234, translation: (-9.0, 4.2) };
        let pts: [(f64, f64); 4] = [(0.0, 0.0), (3.0, 4.0), (-1.0, 2.0), (10.0, -10.0)];
        for a in &pts {
            for b in &pts {
                let d0 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                let (ta, tb) = (g.apply_point(*a), g.apply_point(*b));
                let d1 = ((ta.0 - tb.0).powi(2) + (ta.1 - tb.1).powi(2)).sqrt();
                assert!((d0 - d1).abs() < TOL);
            }
        }
    }
}
