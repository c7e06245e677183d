use rand::Rng;

use super::{PointCloud, TriMesh};
#[cfg(test)]
use super::Vec3;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Draw `n` points area-uniformly from the mesh surface. Deterministic for a
/// fixed seed.
pub fn sample_surface_points(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let areas = mesh.triangle_areas();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidMesh("zero surface area".into()));
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = stream_rng(seed, "surface-sampling");
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(0.0..total);
        let ti = cdf.partition_point(|&c| c < u).min(areas.len() - 1);
        let (a, b, c) = mesh.triangle(&mesh.triangles[ti]);
        // uniform barycentric via square-root trick
        let r1: f64 = rng.gen::<f64>();
        let r2: f64 = rng.gen::<f64>();
        let s = r1.sqrt();
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    PointCloud::new(points)
}

/// Greedy farthest-point sampling. Starts at index 0; ties broken by lowest
/// index.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "m must be in 1..={n}, got {m}"
        )));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = 0usize;
    selected.push(current);
    for _ in 1..m {
        let p = cloud.points[current];
        let mut best = 0usize;
        let mut best_d = -1.0;
        for i in 0..n {
            let d = (cloud.points[i] - p).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if selected.len() < n && min_dist[i] > best_d && !selected.contains(&i) {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_points_on_surface() {
        let mesh = TriMesh::cube(1.0);
        let cloud = sample_surface_points(&mesh, 2048, 7).unwrap();
        assert_eq!(cloud.len(), 2048);
        for p in &cloud.points {
            let face_dist = (0..3).map(|i| (p[i].abs() - 0.5).abs()).fold(f64::MAX, f64::min);
            assert!(face_dist < 1e-9, "point off the cube surface: {p:?}");
            assert!(p.amax() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn single_triangle_in_plane() {
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        let cloud = sample_surface_points(&mesh, 3, 1).unwrap();
        for p in &cloud.points {
            assert!(p.z.abs() < 1e-12);
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn face_fractions_match_areas() {
        // all six cube faces have equal area, so each should receive ~1/6
        let mesh = TriMesh::cube(1.0);
        let cloud = sample_surface_points(&mesh, 60_000, 11).unwrap();
        let mut counts = [0usize; 6];
        for p in &cloud.points {
            let mut face = 0;
            let mut best = f64::MAX;
            for i in 0..3 {
                for (s, sign) in [(-0.5f64, 0usize), (0.5, 1)] {
                    let d = (p[i] - s).abs();
                    if d < best {
                        best = d;
                        face = 2 * i + sign;
                    }
                }
            }
            counts[face] += 1;
        }
        for c in counts {
            let frac = c as f64 / 60_000.0;
            assert!(
                (frac - 1.0 / 6.0).abs() < 0.02 / 6.0 + 0.015,
                "face fraction {frac} off 1/6"
            );
            assert!((frac - 1.0 / 6.0).abs() < 1.0 / 6.0 * 0.12);
        }
    }

    #[test]
    fn sampling_deterministic() {
        let mesh = TriMesh::cube(1.0);
        let a = sample_surface_points(&mesh, 128, 3).unwrap();
        let b = sample_surface_points(&mesh, 128, 3).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn fps_collinear_endpoints() {
        let cloud = PointCloud::new(
            (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
        )
        .unwrap();
        assert_eq!(farthest_point_sampling(&cloud, 2).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_full_selection() {
        let cloud = PointCloud::new(
            (0..5).map(|i| Vec3::new(i as f64, 1.0, 0.0)).collect(),
        )
        .unwrap();
        let mut idx = farthest_point_sampling(&cloud, 5).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn fps_square_corners_beat_center() {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
        ])
        .unwrap();
        let mut idx = farthest_point_sampling(&cloud, 4).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_rejects_oversized_m() {
        let cloud = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(farthest_point_sampling(&cloud, 2).is_err());
    }

    #[test]
    fn fps_greedy_matches_brute_force_small() {
        // distinct indices and greedy min-distance maximization, N <= 10
        let mut rng = crate::rng::stream_rng(5, "fps-brute");
        use rand::Rng;
        for _ in 0..20 {
            let n = rng.gen_range(3..=10);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let m = rng.gen_range(2..=n);
            let got = farthest_point_sampling(&cloud, m).unwrap();
            // replay the greedy definition directly
            let mut sel = vec![0usize];
            for _ in 1..m {
                let mut best = usize::MAX;
                let mut best_d = -1.0;
                for i in 0..n {
                    if sel.contains(&i) {
                        continue;
                    }
                    let d = sel
                        .iter()
                        .map(|&s| (pts[i] - pts[s]).norm_squared())
                        .fold(f64::MAX, f64::min);
                    if d > best_d {
                        best_d = d;
                        best = i;
                    }
                }
                sel.push(best);
            }
            assert_eq!(got, sel);
            let distinct: std::collections::HashSet<_> = got.iter().collect();
            assert_eq!(distinct.len(), m);
        }
    }
}
