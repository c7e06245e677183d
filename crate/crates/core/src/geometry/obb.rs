use super::{Mat3, PointCloud, TriMesh, Vec3};

/// Oriented bounding box. `axes` columns are the box axes (orthonormal).
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub axes: Mat3,
}

impl Obb {
    /// Boundary points count as inside.
    pub fn contains(&self, p: Vec3) -> bool {
        let local = self.axes.transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i] + 1e-12)
    }
}

/// Separating-axis test over the 15 candidate axes of an OBB pair.
pub fn collide_obb_obb(a: &Obb, b: &Obb) -> bool {
    let t = b.center - a.center;
    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(a.axes.column(i).into());
        axes.push(b.axes.column(i).into());
    }
    for i in 0..3 {
        for j in 0..3 {
            let ai: Vec3 = a.axes.column(i).into();
            let bj: Vec3 = b.axes.column(j).into();
            let c = ai.cross(&bj);
            if c.norm() > 1e-12 {
                axes.push(c.normalize());
            }
        }
    }
    for axis in axes {
        let ra: f64 = (0..3)
            .map(|i| {
                let ai: Vec3 = a.axes.column(i).into();
                a.half_extents[i] * ai.dot(&axis).abs()
            })
            .sum();
        let rb: f64 = (0..3)
            .map(|i| {
                let bi: Vec3 = b.axes.column(i).into();
                b.half_extents[i] * bi.dot(&axis).abs()
            })
            .sum();
        if t.dot(&axis).abs() > ra + rb {
            return false;
        }
    }
    true
}

/// Triangle-box separating-axis test in the box frame (13 axes).
fn triangle_intersects_obb(obb: &Obb, a: Vec3, b: Vec3, c: Vec3) -> bool {
    // move into box-local coordinates
    let rt = obb.axes.transpose();
    let v0 = rt * (a - obb.center);
    let v1 = rt * (b - obb.center);
    let v2 = rt * (c - obb.center);
    let h = obb.half_extents;

    let e0 = v1 - v0;
    let e1 = v2 - v1;
    let e2 = v0 - v2;

    // box face normals
    for i in 0..3 {
        let lo = v0[i].min(v1[i]).min(v2[i]);
        let hi = v0[i].max(v1[i]).max(v2[i]);
        if lo > h[i] || hi < -h[i] {
            return false;
        }
    }
    // triangle normal
    let n = e0.cross(&e1);
    if n.norm() > 1e-18 {
        let d = n.dot(&v0);
        let r = h.x * n.x.abs() + h.y * n.y.abs() + h.z * n.z.abs();
        if d.abs() > r {
            return false;
        }
    }
    // 9 edge cross products
    let units = [Vec3::x(), Vec3::y(), Vec3::z()];
    for e in [e0, e1, e2] {
        for u in units {
            let axis = u.cross(&e);
            if axis.norm() < 1e-14 {
                continue;
            }
            let p0 = axis.dot(&v0);
            let p1 = axis.dot(&v1);
            let p2 = axis.dot(&v2);
            let lo = p0.min(p1).min(p2);
            let hi = p0.max(p1).max(p2);
            let r = h.x * axis.x.abs() + h.y * axis.y.abs() + h.z * axis.z.abs();
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

/// True iff any mesh triangle intersects the box.
pub fn collide_obb_mesh(obb: &Obb, mesh: &TriMesh) -> bool {
    mesh.triangles.iter().any(|t| {
        let (a, b, c) = mesh.triangle(t);
        triangle_intersects_obb(obb, a, b, c)
    })
}

/// `mask[i]` is true iff point `i` lies inside at least one box.
pub fn points_in_obbs(cloud: &PointCloud, boxes: &[Obb]) -> Vec<bool> {
    cloud
        .points
        .iter()
        .map(|&p| boxes.iter().any(|b| b.contains(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_box_at(center: Vec3) -> Obb {
        Obb {
            center,
            half_extents: Vec3::new(0.5, 0.5, 0.5),
            axes: Mat3::identity(),
        }
    }

    fn rot_z(angle: f64) -> Mat3 {
        *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), angle).matrix()
    }

    #[test]
    fn identical_boxes_collide() {
        let b = unit_box_at(Vec3::zeros());
        assert!(collide_obb_obb(&b, &b));
    }

    #[test]
    fn distant_boxes_do_not_collide() {
        let a = unit_box_at(Vec3::zeros());
        let b = unit_box_at(Vec3::new(10.0, 0.0, 0.0));
        assert!(!collide_obb_obb(&a, &b));
    }

    #[test]
    fn rotated_box_matches_containment_oracle() {
        // axis-aligned unit box vs the same box rotated 45 deg about z at
        // center distance 1.2 on x, cross-checked by point sampling
        let a = unit_box_at(Vec3::zeros());
        let b = Obb {
            center: Vec3::new(1.2, 0.0, 0.0),
            half_extents: Vec3::new(0.5, 0.5, 0.5),
            axes: rot_z(std::f64::consts::FRAC_PI_4),
        };
        let sat = collide_obb_obb(&a, &b);
        // Monte-Carlo oracle: sample points of b, test membership in a
        let mut rng = crate::rng::stream_rng(3, "obb-oracle");
        let mut any = false;
        for _ in 0..100_000 {
            let local = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let p = b.center + b.axes * local;
            if a.contains(p) {
                any = true;
                break;
            }
        }
        assert_eq!(sat, any);
        // rotated corner reaches x = 1.2 - 0.5*sqrt(2) < 0.5, so they overlap
        assert!(sat);
    }

    #[test]
    fn obb_collision_symmetric() {
        let mut rng = crate::rng::stream_rng(4, "obb-sym");
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| Obb {
                center: Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                half_extents: Vec3::new(
                    rng.gen_range(0.1..0.8),
                    rng.gen_range(0.1..0.8),
                    rng.gen_range(0.1..0.8),
                ),
                axes: rot_z(rng.gen_range(0.0..std::f64::consts::TAU))
                    * *nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), rng.gen_range(0.0..3.0))
                        .matrix(),
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            assert_eq!(collide_obb_obb(&a, &b), collide_obb_obb(&b, &a));
        }
    }

    #[test]
    fn box_containing_mesh_collides() {
        let mesh = TriMesh::cube(0.1);
        let big = Obb {
            center: Vec3::zeros(),
            half_extents: Vec3::new(1.0, 1.0, 1.0),
            axes: Mat3::identity(),
        };
        assert!(collide_obb_mesh(&big, &mesh));
    }

    #[test]
    fn displaced_box_misses_mesh() {
        let mesh = TriMesh::cube(0.1);
        let far = unit_box_at(Vec3::new(5.0, 0.0, 0.0));
        assert!(!collide_obb_mesh(&far, &mesh));
    }

    #[test]
    fn thin_box_grazing_face() {
        // cube face at x = 0.05; thin box overlaps it by 1e-3
        let mesh = TriMesh::cube(0.1);
        let depth = 1e-3;
        let graze = Obb {
            center: Vec3::new(0.05 + 0.01 - depth, 0.0, 0.0),
            half_extents: Vec3::new(0.01, 0.02, 0.02),
            axes: Mat3::identity(),
        };
        assert!(collide_obb_mesh(&graze, &mesh));
        let clear = Obb {
            center: Vec3::new(0.05 + 0.01 + depth, 0.0, 0.0),
            ..graze
        };
        assert!(!collide_obb_mesh(&clear, &mesh));
    }

    #[test]
    fn points_in_obbs_union_semantics() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.4, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let cloud = PointCloud::new(pts).unwrap();
        assert_eq!(points_in_obbs(&cloud, &[]), vec![false, false, false]);
        let b = unit_box_at(Vec3::zeros());
        let single = points_in_obbs(&cloud, &[b]);
        assert_eq!(single, vec![true, true, false]);
        // duplicated overlapping box changes nothing
        assert_eq!(points_in_obbs(&cloud, &[b, b]), single);
        // mask grows monotonically as boxes are appended
        let far = unit_box_at(Vec3::new(2.0, 0.0, 0.0));
        let both = points_in_obbs(&cloud, &[b, far]);
        for (s, t) in single.iter().zip(&both) {
            assert!(!s | t);
        }
    }
}
