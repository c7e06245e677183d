use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::Vec3;
use crate::error::{Error, Result};

/// Point cloud of length N ≥ 1.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty point cloud".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ASCII PLY with float x,y,z properties. Extra line segments may be
    /// appended by the writer for visualization; the reader only consumes
    /// vertex records.
    pub fn write_ply<W: Write>(&self, mut w: W, edges: &[(Vec3, Vec3)]) -> Result<()> {
        let nv = self.points.len() + 2 * edges.len();
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {nv}")?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "element edge {}", edges.len())?;
        writeln!(w, "property int vertex1")?;
        writeln!(w, "property int vertex2")?;
        writeln!(w, "end_header")?;
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
        }
        for (a, b) in edges {
            writeln!(w, "{} {} {}", a.x as f32, a.y as f32, a.z as f32)?;
            writeln!(w, "{} {} {}", b.x as f32, b.y as f32, b.z as f32)?;
        }
        for (i, _) in edges.iter().enumerate() {
            let base = self.points.len() + 2 * i;
            writeln!(w, "{} {}", base, base + 1)?;
        }
        Ok(())
    }

    pub fn read_ply<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let magic = lines.next().ok_or(Error::Parse("empty ply".into()))??;
        if magic.trim() != "ply" {
            return Err(Error::Parse("not a ply file".into()));
        }
        let mut n_vertices = None;
        for line in lines.by_ref() {
            let line = line?;
            let line = line.trim().to_string();
            if line.starts_with("element vertex") {
                let n = line
                    .split_whitespace()
                    .nth(2)
                    .ok_or(Error::Parse("bad element vertex".into()))?
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(e.to_string()))?;
                n_vertices = Some(n);
            } else if line == "end_header" {
                break;
            }
        }
        let n = n_vertices.ok_or(Error::Parse("no vertex element".into()))?;
        let mut points = Vec::with_capacity(n);
        for line in lines.take(n) {
            let line = line?;
            let c: Vec<f64> = line
                .split_whitespace()
                .take(3)
                .map(|f| f.parse().map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if c.len() < 3 {
                return Err(Error::Parse("vertex with fewer than 3 coords".into()));
            }
            points.push(Vec3::new(c[0], c[1], c[2]));
        }
        PointCloud::new(points)
    }

    pub fn read_ply_file(path: &Path) -> Result<Self> {
        Self::read_ply(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let cloud = PointCloud::new(vec![
            Vec3::new(0.0, 1.0, 2.0),
            Vec3::new(-0.5, 0.25, 0.125),
        ])
        .unwrap();
        let mut buf = Vec::new();
        cloud.write_ply(&mut buf, &[]).unwrap();
        let back = PointCloud::read_ply(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
    }
}
