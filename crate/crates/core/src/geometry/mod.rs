//! Meshes, point clouds, rigid grasp poses, the simplified gripper model,
//! and the collision/containment queries used by pair matching and the
//! coverage metric.

mod cloud;
mod mesh;
mod obb;
mod pose;
mod sampling;

pub use cloud::PointCloud;
pub use mesh::TriMesh;
pub use obb::{collide_obb_mesh, collide_obb_obb, points_in_obbs, Obb};
pub use pose::{gripper_keypoints, gripper_obbs, palm_collision_box, GraspPose, GripperSpec};
pub use sampling::{farthest_point_sampling, sample_surface_points};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
