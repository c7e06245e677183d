use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::Vec3;
use crate::error::{Error, Result};

/// Minimum triangle area kept at load time. Degenerate triangles would
/// produce NaN normals in sampling and contact queries.
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle mesh with derived center of mass and scale.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub center_of_mass: Vec3,
    /// Maximum bounding-box extent.
    pub scale: f64,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidMesh("no vertices".into()));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        for t in &triangles {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle index out of range: {t:?}"
                )));
            }
        }
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = *t;
                let area =
                    0.5 * (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a])).norm();
                area >= MIN_TRIANGLE_AREA
            })
            .collect();
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no non-degenerate triangles".into()));
        }
        let mut mesh = TriMesh {
            vertices,
            triangles,
            center_of_mass: Vec3::zeros(),
            scale: 0.0,
        };
        mesh.center_of_mass = mesh.area_weighted_centroid();
        mesh.scale = mesh.bbox_max_extent();
        Ok(mesh)
    }

    /// Surface-area-weighted centroid, used as the center of mass.
    fn area_weighted_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for t in &self.triangles {
            let (a, b, c) = self.triangle(t);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            acc += (a + b + c) / 3.0 * area;
            total += area;
        }
        acc / total
    }

    fn bbox_max_extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).amax()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    #[inline]
    pub fn triangle(&self, t: &[usize; 3]) -> (Vec3, Vec3, Vec3) {
        (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]])
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = self.triangle(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect()
    }

    /// Unit normal of triangle `i` from its winding order.
    pub fn triangle_normal(&self, i: usize) -> Vec3 {
        let (a, b, c) = self.triangle(&self.triangles[i]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Cast a ray against every triangle; returns `(t, triangle index)` hits
    /// with `t > t_min`, sorted by distance.
    pub fn ray_hits(&self, origin: Vec3, dir: Vec3, t_min: f64) -> Vec<(f64, usize)> {
        let mut hits = Vec::new();
        for (i, tri) in self.triangles.iter().enumerate() {
            let (a, b, c) = self.triangle(tri);
            if let Some(t) = ray_triangle(origin, dir, a, b, c) {
                if t > t_min {
                    hits.push((t, i));
                }
            }
        }
        hits.sort_by(|x, y| x.0.total_cmp(&y.0));
        hits
    }

    /// Ray-parity test for a point in the enclosed volume. Assumes a
    /// watertight mesh; the probe direction avoids axis-aligned edge grazes.
    pub fn contains(&self, p: Vec3) -> bool {
        let dir = Vec3::new(0.2357022603955158, 0.5357837911774321, 0.8112963841460654).normalize();
        self.ray_hits(p, dir, 1e-12).len() % 2 == 1
    }

    /// Axis-aligned unit cube `[-0.5, 0.5]^3` scaled by `size`, 12 triangles.
    pub fn cuboid(size: Vec3) -> Self {
        let h = size / 2.0;
        let v = |x: f64, y: f64, z: f64| Vec3::new(x * h.x, y * h.y, z * h.z);
        let vertices = vec![
            v(-1.0, -1.0, -1.0),
            v(1.0, -1.0, -1.0),
            v(1.0, 1.0, -1.0),
            v(-1.0, 1.0, -1.0),
            v(-1.0, -1.0, 1.0),
            v(1.0, -1.0, 1.0),
            v(1.0, 1.0, 1.0),
            v(-1.0, 1.0, 1.0),
        ];
        // outward winding
        let triangles = vec![
            [0, 2, 1],
            [0, 3, 2], // z = -h
            [4, 5, 6],
            [4, 6, 7], // z = +h
            [0, 1, 5],
            [0, 5, 4], // y = -h
            [3, 6, 2],
            [3, 7, 6], // y = +h
            [0, 4, 7],
            [0, 7, 3], // x = -h
            [1, 2, 6],
            [1, 6, 5], // x = +h
        ];
        TriMesh::new(vertices, triangles).expect("cuboid is a valid mesh")
    }

    pub fn cube(side: f64) -> Self {
        Self::cuboid(Vec3::new(side, side, side))
    }

    /// UV sphere approximation.
    pub fn sphere(radius: f64, rings: usize, segments: usize) -> Self {
        let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
        for r in 1..rings {
            let phi = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let th = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    radius * phi.sin() * th.cos(),
                    radius * phi.sin() * th.sin(),
                    radius * phi.cos(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radius));
        let bottom = vertices.len() - 1;
        let idx = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, idx(1, s), idx(1, s + 1)]);
            triangles.push([bottom, idx(rings - 1, s + 1), idx(rings - 1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                triangles.push([idx(r, s), idx(r + 1, s), idx(r + 1, s + 1)]);
                triangles.push([idx(r, s), idx(r + 1, s + 1), idx(r, s + 1)]);
            }
        }
        TriMesh::new(vertices, triangles).expect("sphere is a valid mesh")
    }

    /// Parse ASCII OBJ. Only `v` and `f` records are used; faces with more
    /// than three vertices are fan-triangulated.
    pub fn from_obj_reader<R: Read>(reader: R) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let mut coord = |name| {
                        fields
                            .next()
                            .ok_or_else(|| {
                                Error::Parse(format!("line {}: missing {name}", lineno + 1))
                            })?
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
                    };
                    let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                    vertices.push(Vec3::new(x, y, z));
                }
                Some("f") => {
                    let idx: Vec<usize> = fields
                        .map(|f| {
                            let first = f.split('/').next().unwrap_or(f);
                            let i: i64 = first
                                .parse()
                                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                            if i > 0 {
                                Ok((i - 1) as usize)
                            } else if i < 0 {
                                Ok((vertices.len() as i64 + i) as usize)
                            } else {
                                Err(Error::Parse(format!("line {}: face index 0", lineno + 1)))
                            }
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::Parse(format!(
                            "line {}: face with fewer than 3 vertices",
                            lineno + 1
                        )));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, triangles)
    }

    pub fn from_obj_file(path: &Path) -> Result<Self> {
        Self::from_obj_reader(std::fs::File::open(path)?)
    }
}

/// Möller–Trumbore. Returns the ray parameter on hit.
pub fn ray_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t.is_finite() {
        Some(t)
    } else {
        None
    }
}
