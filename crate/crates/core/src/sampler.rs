//! Antipodal grasp sampling on triangle meshes with spatial-grid
//! deduplication, producing the ground-truth single-grasp sets that
//! supervise the proposer.

use rand::Rng;

use crate::geometry::{collide_obb_mesh, palm_collision_box, GraspPose, GripperSpec, Mat3, TriMesh, Vec3};
use crate::quality::tangent_basis;
use crate::rng::stream_rng;

#[derive(Debug, Clone)]
pub struct GraspSet {
    pub grasps: Vec<GraspPose>,
    pub source_mesh_id: String,
}

/// Default dedup translation cell as a fraction of object scale.
pub const DEDUP_CELL_DIVISOR: f64 = 20.0;
/// Default dedup approach-axis angular bin in radians (30 degrees).
pub const DEDUP_ANGLE_BIN: f64 = std::f64::consts::PI / 6.0;

/// Outward-oriented normal of triangle `i`: the winding normal, flipped if
/// a probe point just off the face lies inside the volume.
fn outward_normal(mesh: &TriMesh, i: usize, at: Vec3) -> Vec3 {
    let n = mesh.triangle_normal(i);
    let probe = at + n * (1e-6 * mesh.scale);
    if mesh.contains(probe) {
        -n
    } else {
        n
    }
}

pub fn sample_antipodal_grasps(mesh: &TriMesh, k: usize, mu: f64, seed: u64) -> GraspSet {
    sample_antipodal_grasps_with(mesh, k, mu, seed, &GripperSpec::default())
}

/// Draw a surface point, jitter an inward ray inside its friction cone,
/// intersect the mesh for the opposing contact, and accept when both
/// contacts satisfy the antipodal condition and fit in the jaws. Trials run
/// sequentially, so for a fixed seed the first k1 < k2 accepted grasps
/// coincide.
pub fn sample_antipodal_grasps_with(
    mesh: &TriMesh,
    k: usize,
    mu: f64,
    seed: u64,
    spec: &GripperSpec,
) -> GraspSet {
    assert!(k >= 1, "k must be >= 1");
    assert!(mu > 0.0, "mu must be positive");
    let mut rng = stream_rng(seed, "antipodal-sampling");
    let areas = mesh.triangle_areas();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let total = acc;
    let cone_half = mu.atan();
    let cos_cone = cone_half.cos();
    let t_min = 1e-6 * mesh.scale;

    let mut grasps = Vec::with_capacity(k);
    let budget = 400 * k;
    for _ in 0..budget {
        if grasps.len() == k {
            break;
        }
        // surface point, area-uniform
        let u = rng.gen_range(0.0..total);
        let face = cdf.partition_point(|&c| c <= u).min(areas.len() - 1);
        let (a, b, c) = mesh.triangle(&mesh.triangles[face]);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let p = a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2);
        let n1 = outward_normal(mesh, face, p);

        // inward ray jittered inside the friction cone at p
        let theta = 0.95 * cone_half * rng.gen_range(0.0f64..1.0).sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let (t1, t2) = tangent_basis(n1);
        let d = (-n1 * theta.cos() + (t1 * phi.cos() + t2 * phi.sin()) * theta.sin()).normalize();

        let Some(&(t, face2)) = mesh.ray_hits(p, d, t_min).first() else {
            continue;
        };
        if t > spec.max_opening {
            continue;
        }
        let q = p + d * t;
        let n2 = outward_normal(mesh, face2, q);
        if n2.dot(&d) <= 0.0 {
            // ray re-entered the solid instead of exiting through it
            continue;
        }
        // antipodal condition: the contact line lies in both friction cones
        let u_axis = (q - p).normalize();
        if u_axis.dot(&-n1) < cos_cone || u_axis.dot(&n2) < cos_cone {
            continue;
        }

        let width = (t + 0.01).min(spec.max_opening);
        let (b1, b2) = tangent_basis(u_axis);
        // The approach axis is a free wrist rotation about the contact line;
        // most choices bury the palm in the object, so draw until one leaves
        // the hand body clear of the surface.
        for _ in 0..16 {
            let psi = rng.gen_range(0.0..std::f64::consts::TAU);
            let approach = (b1 * psi.cos() + b2 * psi.sin()).normalize();
            let lateral = approach.cross(&u_axis);
            let pose = GraspPose {
                rotation: Mat3::from_columns(&[u_axis, lateral, approach]),
                translation: (p + q) / 2.0,
                width,
            };
            if pose.validate().is_err() {
                continue;
            }
            let palm = palm_collision_box(&pose, spec);
            if collide_obb_mesh(&palm, mesh) || mesh.contains(palm.center) {
                continue;
            }
            grasps.push(pose);
            break;
        }
    }
    GraspSet {
        grasps,
        source_mesh_id: String::new(),
    }
}

fn dedup_key(g: &GraspPose, cell: f64, angle_bin: f64) -> (i64, i64, i64, i64, i64) {
    let t = g.translation;
    let ap = g.approach_axis();
    let theta = ap.z.clamp(-1.0, 1.0).acos();
    let phi = ap.y.atan2(ap.x) + std::f64::consts::PI;
    (
        (t.x / cell).floor() as i64,
        (t.y / cell).floor() as i64,
        (t.z / cell).floor() as i64,
        (theta / angle_bin).floor() as i64,
        (phi / angle_bin).floor() as i64,
    )
}

/// Keep at most one grasp per (translation cell, approach-direction bin);
/// the first grasp inserted into a bucket survives, in input order.
pub fn grid_dedup(set: &GraspSet, cell: f64, angle_bin: f64) -> GraspSet {
    assert!(cell > 0.0 && angle_bin > 0.0, "cell and angle_bin must be positive");
    let mut seen = std::collections::HashSet::new();
    let grasps = set
        .grasps
        .iter()
        .filter(|g| seen.insert(dedup_key(g, cell, angle_bin)))
        .cloned()
        .collect();
    GraspSet {
        grasps,
        source_mesh_id: set.source_mesh_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::grasp_contacts;

    #[test]
    fn cube_grasps_are_antipodal_on_opposing_faces() {
        let mesh = TriMesh::cube(0.04);
        let set = sample_antipodal_grasps(&mesh, 32, 0.5, 11);
        assert!(!set.grasps.is_empty());
        for g in &set.grasps {
            let contacts = grasp_contacts(g, &mesh, 0.5);
            assert_eq!(contacts.len(), 2, "grasp must pinch two contacts");
            let ndot = contacts[0].normal.dot(&contacts[1].normal);
            assert!(ndot < -0.99, "contacts not on opposing faces: {ndot}");
            let span = (contacts[0].point - contacts[1].point).norm();
            assert!(span <= GripperSpec::default().max_opening + 1e-9);
        }
    }

    #[test]
    fn oversized_sphere_yields_nothing() {
        // every friction-cone chord of a 10 cm sphere exceeds the jaws
        let mesh = TriMesh::sphere(0.05, 12, 24);
        let set = sample_antipodal_grasps(&mesh, 8, 0.5, 3);
        assert!(set.grasps.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let mesh = TriMesh::cube(0.04);
        let a = sample_antipodal_grasps(&mesh, 16, 0.5, 42);
        let b = sample_antipodal_grasps(&mesh, 16, 0.5, 42);
        assert_eq!(a.grasps.len(), b.grasps.len());
        for (x, y) in a.grasps.iter().zip(&b.grasps) {
            assert_eq!(x.translation, y.translation);
            assert_eq!(x.rotation, y.rotation);
            assert_eq!(x.width, y.width);
        }
    }

    #[test]
    fn monotone_in_k() {
        let mesh = TriMesh::cube(0.04);
        let small = sample_antipodal_grasps(&mesh, 8, 0.5, 42);
        let large = sample_antipodal_grasps(&mesh, 24, 0.5, 42);
        assert!(large.grasps.len() >= small.grasps.len());
        for (x, y) in small.grasps.iter().zip(&large.grasps) {
            assert_eq!(x.translation, y.translation);
            assert_eq!(x.rotation, y.rotation);
        }
    }

    #[test]
    fn dedup_removes_exact_duplicates_and_keeps_distant() {
        let mesh = TriMesh::cube(0.04);
        let base = sample_antipodal_grasps(&mesh, 4, 0.5, 1);
        assert!(base.grasps.len() >= 2);
        let g0 = base.grasps[0].clone();
        let mut far = g0.clone();
        far.translation += Vec3::new(0.02, 0.0, 0.0);
        let set = GraspSet {
            grasps: vec![g0.clone(), g0.clone(), far],
            source_mesh_id: "t".into(),
        };
        let out = grid_dedup(&set, 0.01, DEDUP_ANGLE_BIN);
        assert_eq!(out.grasps.len(), 2);
        assert_eq!(out.grasps[0].translation, g0.translation);
    }

    #[test]
    fn dedup_matches_brute_force_buckets_and_is_idempotent() {
        let mesh = TriMesh::cube(0.04);
        let set = sample_antipodal_grasps(&mesh, 100, 0.5, 9);
        let cell = mesh.scale / DEDUP_CELL_DIVISOR;
        let out = grid_dedup(&set, cell, DEDUP_ANGLE_BIN);
        let mut buckets: Vec<_> = set
            .grasps
            .iter()
            .map(|g| dedup_key(g, cell, DEDUP_ANGLE_BIN))
            .collect();
        buckets.sort();
        buckets.dedup();
        assert_eq!(out.grasps.len(), buckets.len());
        let again = grid_dedup(&out, cell, DEDUP_ANGLE_BIN);
        assert_eq!(again.grasps.len(), out.grasps.len());
    }
}
