use crate::error::{Error, Result};
use crate::geometry::{GraspPose, TriMesh, Vec3};

/// Surface contact with outward unit normal.
#[derive(Debug, Clone, Copy)]
pub struct Contact {
    pub point: Vec3,
    pub normal: Vec3,
    pub friction_mu: f64,
}

/// 6-D wrench: force plus torque normalized by the object scale.
#[derive(Debug, Clone, Copy)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }
}

/// Deterministic tangent basis for a unit vector.
pub(crate) fn tangent_basis(n: Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&a).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// `m` unit vectors on the friction cone of half-angle atan(mu) about the
/// inward direction `-normal`, equally spaced in azimuth.
pub fn friction_cone_edges(normal: Vec3, mu: f64, m: usize) -> Result<Vec<Vec3>> {
    if normal.norm() < 1e-12 {
        return Err(Error::InvalidArgument("zero contact normal".into()));
    }
    if mu <= 0.0 || m < 3 {
        return Err(Error::InvalidArgument(
            "friction cone needs mu > 0 and m >= 3".into(),
        ));
    }
    let n = normal.normalize();
    let (t1, t2) = tangent_basis(n);
    let half = mu.atan();
    let (s, c) = half.sin_cos();
    Ok((0..m)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / m as f64;
            (-n * c + (t1 * az.cos() + t2 * az.sin()) * s).normalize()
        })
        .collect())
}

/// Realize a parallel-jaw grasp as two opposing surface contacts.
///
/// Casts the closing line through the palm center along the closing axis and
/// keeps the nearest hit on each side within the jaw span. Returns an empty
/// list when either side misses.
pub fn grasp_contacts(g: &GraspPose, mesh: &TriMesh, mu: f64) -> Vec<Contact> {
    let origin = g.translation;
    let axis = g.closing_axis();
    let half_span = g.width / 2.0 + 1e-12;
    let side_contact = |dir: Vec3| -> Option<Contact> {
        let hits = mesh.ray_hits(origin, dir, 1e-12);
        let (t, tri) = hits.into_iter().find(|&(t, _)| t <= half_span)?;
        let mut normal = mesh.triangle_normal(tri);
        // outward: oppose the closing ray
        if normal.dot(&dir) > 0.0 {
            normal = -normal;
        }
        Some(Contact {
            point: origin + dir * t,
            normal,
            friction_mu: mu,
        })
    };
    match (side_contact(axis), side_contact(-axis)) {
        (Some(a), Some(b)) => vec![a, b],
        _ => Vec::new(),
    }
}

/// One wrench per friction-cone edge per contact: `(f, ((p - com) x f) / lambda)`.
pub fn contact_wrenches(
    contacts: &[Contact],
    com: Vec3,
    lambda: f64,
    m: usize,
) -> Result<Vec<Wrench>> {
    if contacts.is_empty() {
        return Err(Error::InvalidArgument("no contacts".into()));
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let mut wrenches = Vec::with_capacity(contacts.len() * m);
    for c in contacts {
        for f in friction_cone_edges(c.normal, c.friction_mu, m)? {
            wrenches.push(Wrench {
                force: f,
                torque: (c.point - com).cross(&f) / lambda,
            });
        }
    }
    Ok(wrenches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;

    #[test]
    fn cone_zero_friction_limit() {
        let edges = friction_cone_edges(Vec3::z(), 1e-9, 4).unwrap();
        for e in edges {
            assert!((e - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn cone_mu_one_fourty_five_degrees() {
        let edges = friction_cone_edges(Vec3::z(), 1.0, 4).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for e in &edges {
            assert!((e.z + inv_sqrt2).abs() < 1e-12);
            assert!((e.xy().norm() - inv_sqrt2).abs() < 1e-12);
        }
        // equally spaced azimuths: pairwise sums of tangential parts cancel
        let sum: Vec3 = edges.iter().sum();
        assert!(sum.xy().norm() < 1e-12);
    }

    #[test]
    fn cone_angle_identity() {
        for mu in [0.2, 0.5, 1.3] {
            let n = Vec3::new(0.3, -0.4, 0.8).normalize();
            for e in friction_cone_edges(n, mu, 8).unwrap() {
                assert!((e.dot(&-n) - mu.atan().cos()).abs() < 1e-12);
                assert!((e.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cone_rejects_bad_input() {
        assert!(friction_cone_edges(Vec3::zeros(), 0.5, 8).is_err());
        assert!(friction_cone_edges(Vec3::z(), 0.5, 2).is_err());
    }

    #[test]
    fn cube_grasp_contacts_antiparallel() {
        let mesh = TriMesh::cube(0.04);
        let g = GraspPose::identity(0.08);
        let contacts = grasp_contacts(&g, &mesh, 0.5);
        assert_eq!(contacts.len(), 2);
        assert!((contacts[0].point.x.abs() - 0.02).abs() < 1e-12);
        assert!((contacts[1].point.x.abs() - 0.02).abs() < 1e-12);
        assert!(contacts[0].normal.dot(&contacts[1].normal) < -0.999999);
    }

    #[test]
    fn missed_grasp_is_empty() {
        let mesh = TriMesh::cube(0.04);
        let g = GraspPose {
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, 1.0),
            width: 0.08,
        };
        assert!(grasp_contacts(&g, &mesh, 0.5).is_empty());
    }

    #[test]
    fn sphere_contacts_antipodal() {
        let mesh = TriMesh::sphere(0.03, 32, 64);
        let g = GraspPose::identity(0.08);
        let contacts = grasp_contacts(&g, &mesh, 0.5);
        assert_eq!(contacts.len(), 2);
        let mid = (contacts[0].point + contacts[1].point) / 2.0;
        assert!(mid.norm() < 1e-6);
        assert!(((contacts[0].point - contacts[1].point).norm() - 0.06).abs() < 1e-4);
    }

    #[test]
    fn wrench_torque_zero_at_com() {
        let c = Contact {
            point: Vec3::new(0.1, 0.2, 0.3),
            normal: Vec3::z(),
            friction_mu: 0.5,
        };
        let w = contact_wrenches(&[c], c.point, 1.0, 6).unwrap();
        assert_eq!(w.len(), 6);
        for wr in w {
            assert!(wr.torque.norm() < 1e-15);
        }
    }

    #[test]
    fn wrench_lambda_scaling() {
        let c = Contact {
            point: Vec3::new(0.1, 0.0, 0.0),
            normal: Vec3::z(),
            friction_mu: 0.5,
        };
        let w1 = contact_wrenches(&[c], Vec3::zeros(), 1.0, 4).unwrap();
        let w2 = contact_wrenches(&[c], Vec3::zeros(), 2.0, 4).unwrap();
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a.force - b.force).norm() == 0.0);
            assert!((a.torque / 2.0 - b.torque).norm() < 1e-18);
        }
    }
}
