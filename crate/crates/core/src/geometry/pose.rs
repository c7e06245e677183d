use super::{Mat3, Obb, Vec3};
use crate::error::{Error, Result};

/// 6-DoF pose of one parallel-jaw gripper plus its jaw opening.
///
/// Gripper frame convention: approach axis +z, closing axis ±x, palm center
/// at the origin. Finger bases sit at (±width/2, 0, 0), tips at
/// (±width/2, 0, finger_length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: f64,
}

impl GraspPose {
    pub fn new(rotation: Mat3, translation: Vec3, width: f64) -> Result<Self> {
        let g = GraspPose {
            rotation,
            translation,
            width,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn identity(width: f64) -> Self {
        GraspPose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Mat3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidArgument("rotation not orthonormal".into()));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("rotation determinant != +1".into()));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::InvalidArgument("non-positive grasp width".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn closing_axis(&self) -> Vec3 {
        self.rotation.column(0).into()
    }

    #[inline]
    pub fn lateral_axis(&self) -> Vec3 {
        self.rotation.column(1).into()
    }

    #[inline]
    pub fn approach_axis(&self) -> Vec3 {
        self.rotation.column(2).into()
    }

    #[inline]
    pub fn transform(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Simplified geometric gripper model: a palm box and two finger boxes.
#[derive(Debug, Clone, Copy)]
pub struct GripperSpec {
    pub max_opening: f64,
    pub finger_length: f64,
    pub finger_thickness: f64,
    pub palm_depth: f64,
    pub palm_width: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            max_opening: 0.08,
            finger_length: 0.06,
            finger_thickness: 0.01,
            palm_depth: 0.02,
            palm_width: 0.09,
        }
    }
}

impl GripperSpec {
    /// Keypoint offsets in the gripper frame for a given jaw opening:
    /// palm center, two finger bases, two finger tips.
    pub fn keypoint_offsets(&self, width: f64) -> [Vec3; 5] {
        let h = width / 2.0;
        let l = self.finger_length;
        [
            Vec3::zeros(),
            Vec3::new(-h, 0.0, 0.0),
            Vec3::new(h, 0.0, 0.0),
            Vec3::new(-h, 0.0, l),
            Vec3::new(h, 0.0, l),
        ]
    }
}

/// The five grasp representation points of a pose: the spec offsets rigidly
/// transformed, with the finger lateral offset scaled to `width/2`.
pub fn gripper_keypoints(g: &GraspPose, spec: &GripperSpec) -> [Vec3; 5] {
    spec.keypoint_offsets(g.width).map(|o| g.transform(o))
}

/// Palm box plus two finger boxes, rigidly placed by the pose.
pub fn gripper_obbs(g: &GraspPose, spec: &GripperSpec) -> Vec<Obb> {
    let axes = g.rotation;
    let t = spec.finger_thickness;
    let palm = Obb {
        center: g.transform(Vec3::new(0.0, 0.0, -spec.palm_depth / 2.0)),
        half_extents: Vec3::new(
            spec.palm_width / 2.0,
            spec.palm_depth / 2.0,
            spec.palm_depth / 2.0,
        ),
        axes,
    };
    let finger = |side: f64| Obb {
        center: g.transform(Vec3::new(side * g.width / 2.0, 0.0, spec.finger_length / 2.0)),
        half_extents: Vec3::new(t / 2.0, t / 2.0, spec.finger_length / 2.0),
        axes,
    };
    vec![palm, finger(-1.0), finger(1.0)]
}

/// Palm volume used for gripper-object collision. The palm's front face in
/// the display model is coplanar with the contact line through the palm
/// center, so any pinching grasp would graze it; the collision volume is
/// recessed by half the palm depth to leave that contact shell as allowed
/// jaw interior.
pub fn palm_collision_box(g: &GraspPose, spec: &GripperSpec) -> Obb {
    let depth = spec.palm_depth / 2.0;
    Obb {
        center: g.transform(Vec3::new(0.0, 0.0, -(spec.palm_depth / 2.0 + depth / 2.0))),
        half_extents: Vec3::new(spec.palm_width / 2.0, spec.palm_depth / 2.0, depth / 2.0),
        axes: g.rotation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::points_in_obbs;
    use crate::geometry::PointCloud;
    use rand::Rng;

    fn random_pose(rng: &mut impl Rng) -> GraspPose {
        let q = nalgebra::UnitQuaternion::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        GraspPose {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
            width: rng.gen_range(0.01..0.08),
        }
    }

    #[test]
    fn identity_keypoints_equal_offsets() {
        let spec = GripperSpec::default();
        let g = GraspPose::identity(0.06);
        let kp = gripper_keypoints(&g, &spec);
        for (k, o) in kp.iter().zip(spec.keypoint_offsets(0.06)) {
            assert!((k - o).norm() < 1e-15);
        }
    }

    #[test]
    fn translation_equivariance() {
        let spec = GripperSpec::default();
        let t = Vec3::new(0.3, -0.2, 0.5);
        let mut g = GraspPose::identity(0.05);
        let base = gripper_keypoints(&g, &spec);
        g.translation = t;
        let moved = gripper_keypoints(&g, &spec);
        for (a, b) in base.iter().zip(moved) {
            assert!((a + t - b).norm() < 1e-15);
        }
    }

    #[test]
    fn flip_about_approach_swaps_fingers() {
        let spec = GripperSpec::default();
        let g = GraspPose::identity(0.05);
        let base = gripper_keypoints(&g, &spec);
        let rot = Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
        let flipped = gripper_keypoints(
            &GraspPose {
                rotation: rot,
                ..g
            },
            &spec,
        );
        assert!((flipped[0] - base[0]).norm() < 1e-15); // palm fixed
        assert!((flipped[1] - base[2]).norm() < 1e-15); // fingers swap
        assert!((flipped[3] - base[4]).norm() < 1e-15);
    }

    #[test]
    fn keypoints_rigid_distance_invariance() {
        let spec = GripperSpec::default();
        let mut rng = crate::rng::stream_rng(1, "pose-test");
        for _ in 0..50 {
            let w = rng.gen_range(0.01..0.08);
            let id = gripper_keypoints(&GraspPose::identity(w), &spec);
            let mut g = random_pose(&mut rng);
            g.width = w;
            g.validate().unwrap();
            let kp = gripper_keypoints(&g, &spec);
            for i in 0..5 {
                for j in 0..5 {
                    let d0 = (id[i] - id[j]).norm();
                    let d1 = (kp[i] - kp[j]).norm();
                    assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn obbs_enclose_keypoints() {
        let spec = GripperSpec::default();
        let mut rng = crate::rng::stream_rng(2, "pose-test");
        for _ in 0..30 {
            let g = random_pose(&mut rng);
            let kp = gripper_keypoints(&g, &spec);
            let boxes = gripper_obbs(&g, &spec);
            let cloud = PointCloud::new(kp.to_vec()).unwrap();
            let mask = points_in_obbs(&cloud, &boxes);
            assert!(mask.iter().all(|&m| m), "keypoints outside gripper boxes");
        }
    }

    #[test]
    fn finger_separation_scales_with_width() {
        let spec = GripperSpec::default();
        let b1 = gripper_obbs(&GraspPose::identity(0.04), &spec);
        let b2 = gripper_obbs(&GraspPose::identity(0.08), &spec);
        let d1 = (b1[1].center - b1[2].center).norm();
        let d2 = (b2[1].center - b2[2].center).norm();
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn palm_box_behind_origin() {
        let spec = GripperSpec::default();
        let boxes = gripper_obbs(&GraspPose::identity(0.05), &spec);
        assert!(boxes[0].center.z < 0.0);
        assert!((boxes[0].center - Vec3::new(0.0, 0.0, -0.01)).norm() < 1e-15);
    }
}
