//! Triangle meshes and the Wavefront-OBJ subset used for case segments.
//!
//! Only `v x y z` and `f i j k` records are understood (1-based indices,
//! triangles only, millimeters). Blank lines and `#` comments are skipped.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub type Point = Point3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read mesh {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh is degenerate: {0}")]
    Degenerate(String),
}

/// An indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Builds a mesh, rejecting empty meshes, out-of-range indices and
    /// zero-area triangles.
    pub fn new(vertices: Vec<Point>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Degenerate("no triangles".into()));
        }
        for (n, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= vertices.len()) {
                return Err(MeshError::Degenerate(format!(
                    "triangle {n} references a missing vertex"
                )));
            }
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            if (b - a).cross(&(c - a)).norm_squared() == 0.0 {
                return Err(MeshError::Degenerate(format!("triangle {n} has zero area")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn triangle_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, i: usize) -> [Point; 3] {
        self.faces[i].map(|v| self.vertices[v as usize])
    }

    pub fn triangles(&self) -> impl ExactSizeIterator<Item = [Point; 3]> + '_ {
        (0..self.faces.len()).map(|i| self.triangle(i))
    }

    pub fn centroid(&self) -> Point {
        let sum = self.vertices.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.vertices.len() as f64)
    }

    /// Largest distance from `center` to any vertex.
    pub fn radius_about(&self, center: &Point) -> f64 {
        self.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max)
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut parts = raw.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let fields: Vec<&str> = parts.collect();
            let err = |message: String| MeshError::Parse { line, message };
            match tag {
                "v" => {
                    if fields.len() != 3 {
                        return Err(err(format!("vertex needs 3 coordinates, got {}", fields.len())));
                    }
                    let mut xyz = [0.0; 3];
                    for (slot, f) in xyz.iter_mut().zip(&fields) {
                        *slot = f
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| err(format!("bad coordinate {f:?}")))?;
                    }
                    vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
                }
                "f" => {
                    if fields.len() != 3 {
                        return Err(err(format!(
                            "only triangles are supported, got {} indices",
                            fields.len()
                        )));
                    }
                    let mut idx = [0u32; 3];
                    for (slot, f) in idx.iter_mut().zip(&fields) {
                        let i: u32 = f.parse().map_err(|_| err(format!("bad index {f:?}")))?;
                        if i == 0 {
                            return Err(err("indices are 1-based".into()));
                        }
                        *slot = i - 1;
                    }
                    if idx.iter().any(|&i| i as usize >= vertices.len()) {
                        return Err(err("face references a vertex that is not yet defined".into()));
                    }
                    faces.push(idx);
                }
                other => return Err(err(format!("unsupported record {other:?}"))),
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load_obj(path: &Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_obj(&text)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }
}

/// Procedural shapes used by fixtures, benchmarks and tests.
pub mod shapes {
    use super::*;

    /// Geodesic sphere: an icosahedron subdivided `level` times and projected
    /// onto the sphere. Has `20 * 4^level` triangles.
    pub fn icosphere(center: Point, radius: f64, level: u32) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) / 2.0).normalize());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| center + v * radius).collect();
        TriMesh::new(vertices, faces).expect("icosphere is well formed")
    }

    /// Closed prism approximating a cylinder of `radius` from `start` to `end`
    /// with `sides` facets and capped ends.
    pub fn tube(start: Point, end: Point, radius: f64, sides: u32) -> TriMesh {
        assert!(sides >= 3, "a tube needs at least three sides");
        let axis = end - start;
        let dir = axis.normalize();
        let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = dir.cross(&helper).normalize();
        let v = dir.cross(&u);
        let mut vertices = Vec::with_capacity(2 * sides as usize + 2);
        for ring in [start, end] {
            for k in 0..sides {
                let phi = std::f64::consts::TAU * k as f64 / sides as f64;
                vertices.push(ring + (u * phi.cos() + v * phi.sin()) * radius);
            }
        }
        vertices.push(start);
        vertices.push(end);
        let (cap0, cap1) = (2 * sides, 2 * sides + 1);
        let mut faces = Vec::with_capacity(4 * sides as usize);
        for k in 0..sides {
            let k1 = (k + 1) % sides;
            let (a, b, c, d) = (k, k1, sides + k, sides + k1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
            faces.push([cap0, b, a]);
            faces.push([cap1, c, d]);
        }
        TriMesh::new(vertices, faces).expect("tube is well formed")
    }
}
