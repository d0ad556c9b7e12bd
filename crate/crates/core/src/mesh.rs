//! Iso-surface extraction, mesh sampling, PLY I/O and Chamfer distance.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::SdfField;

pub const MIN_RESOLUTION: usize = 8;
const DEGENERATE_AREA: f64 = 1e-12;
/// Crossing positions are kept this far (in edge fractions) from grid
/// samples so that vertices on different edges never coincide.
const EDGE_CLAMP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid resolution must be at least {MIN_RESOLUTION}, got {0}")]
    InvalidResolution(usize),
    #[error("the field has no sign change inside the grid")]
    EmptySurface,
    #[error("point set is empty")]
    EmptySet,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Indices in range and no triangle with area at or below 1e-12.
    pub fn is_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&k| k < n))
            && (0..self.triangles.len()).all(|i| self.triangle_area(i) > DEGENERATE_AREA)
    }

    /// Every directed edge appears exactly once and its reverse exactly
    /// once, i.e. the surface is closed and consistently oriented.
    pub fn is_closed(&self) -> bool {
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }
}

/// Axis-aligned sampling grid with `resolution` samples per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub resolution: usize,
}

impl Grid {
    /// The cube `[-1, 1]^3`.
    pub fn unit(resolution: usize) -> Self {
        Self { min: Vector3::repeat(-1.0), max: Vector3::repeat(1.0), resolution }
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let step = (self.max - self.min) / (self.resolution - 1) as f64;
        self.min + Vector3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z)
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }
}

/// `max(sdf, |p| - radius)`: the field intersected with a ball, so that
/// surfaces the network grows far from the object are cut away.
pub struct BallClipped<'a, F: ?Sized> {
    pub field: &'a F,
    pub radius: f64,
}

impl<F: SdfField + ?Sized> SdfField for BallClipped<'_, F> {
    fn sdf_batch(&self, points: &[Vector3<f64>]) -> Vec<f64> {
        let mut out = self.field.sdf_batch(points);
        for (v, p) in out.iter_mut().zip(points) {
            *v = v.max(p.norm() - self.radius);
        }
        out
    }
}

/// SDF values at every grid sample, x fastest.
pub fn sample_grid<F: SdfField + ?Sized>(field: &F, grid: &Grid) -> Vec<f64> {
    let r = grid.resolution;
    (0..r)
        .into_par_iter()
        .flat_map_iter(|k| {
            let pts: Vec<Vector3<f64>> =
                (0..r).flat_map(|j| (0..r).map(move |i| (i, j))).map(|(i, j)| grid.point(i, j, k)).collect();
            field.sdf_batch(&pts)
        })
        .collect()
}

// Cube corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1). The six
// tetrahedra share the 0-7 diagonal, so neighbouring cubes split their
// common face the same way.
const TETS: [[usize; 4]; 6] =
    [[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7], [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]];

/// Zero level set of `field` over `grid`, triangulated cell by cell with
/// linear interpolation along grid edges.
pub fn marching_cubes<F: SdfField + ?Sized>(field: &F, grid: &Grid) -> Result<Mesh, MeshError> {
    if grid.resolution < MIN_RESOLUTION {
        return Err(MeshError::InvalidResolution(grid.resolution));
    }
    let values = sample_grid(field, grid);
    extract_isosurface(&values, grid)
}

/// Triangulates the zero level set of precomputed grid values.
pub fn extract_isosurface(values: &[f64], grid: &Grid) -> Result<Mesh, MeshError> {
    let r = grid.resolution;
    if r < MIN_RESOLUTION {
        return Err(MeshError::InvalidResolution(r));
    }
    assert_eq!(values.len(), r * r * r);
    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex = |a: usize, b: usize, pa: Vector3<f64>, pb: Vector3<f64>, mesh: &mut Mesh| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            let (sa, sb) = (values[a], values[b]);
            let t = (sa / (sa - sb)).clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
            mesh.vertices.push(pa + (pb - pa) * t);
            (mesh.vertices.len() - 1) as u32
        })
    };
    let mut corner_idx = [0usize; 8];
    let mut corner_pos = [Vector3::zeros(); 8];
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut any_in = false;
                let mut any_out = false;
                for c in 0..8 {
                    let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                    corner_idx[c] = grid.index(i + di, j + dj, k + dk);
                    corner_pos[c] = grid.point(i + di, j + dj, k + dk);
                    if values[corner_idx[c]] < 0.0 {
                        any_in = true;
                    } else {
                        any_out = true;
                    }
                }
                if !(any_in && any_out) {
                    continue;
                }
                for tet in &TETS {
                    let ids = tet.map(|c| corner_idx[c]);
                    let pos = tet.map(|c| corner_pos[c]);
                    let inside: Vec<usize> = (0..4).filter(|&v| values[ids[v]] < 0.0).collect();
                    let outside: Vec<usize> = (0..4).filter(|&v| values[ids[v]] >= 0.0).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let c_in = inside.iter().map(|&v| pos[v]).sum::<Vector3<f64>>() / inside.len() as f64;
                    let c_out = outside.iter().map(|&v| pos[v]).sum::<Vector3<f64>>() / outside.len() as f64;
                    let outward = c_out - c_in;
                    let mut edge = |a: usize, b: usize, mesh: &mut Mesh| vertex(ids[a], ids[b], pos[a], pos[b], mesh);
                    let edges: Vec<(usize, usize)> = match (inside.len(), outside.len()) {
                        (1, 3) | (3, 1) => {
                            let (apex, others) =
                                if inside.len() == 1 { (inside[0], &outside) } else { (outside[0], &inside) };
                            others.iter().map(|&o| (apex, o)).collect()
                        }
                        _ => {
                            let (a, b) = (inside[0], inside[1]);
                            let (c, d) = (outside[0], outside[1]);
                            vec![(a, c), (a, d), (b, d), (b, c)]
                        }
                    };
                    let polygon: Vec<u32> = edges.iter().map(|&(u, v)| edge(u, v, &mut mesh)).collect();
                    // orientation comes from the edge midpoints, which never degenerate
                    let mid: Vec<Vector3<f64>> = edges.iter().map(|&(u, v)| 0.5 * (pos[u] + pos[v])).collect();
                    for w in 1..polygon.len() - 1 {
                        let n = (mid[w] - mid[0]).cross(&(mid[w + 1] - mid[0]));
                        let mut tri = [polygon[0], polygon[w], polygon[w + 1]];
                        if n.dot(&outward) < 0.0 {
                            tri.swap(1, 2);
                        }
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    if mesh.triangles.is_empty() {
        return Err(MeshError::EmptySurface);
    }
    Ok(mesh)
}

/// `n` points distributed uniformly by area over the mesh surface.
pub fn sample_mesh(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>, MeshError> {
    if mesh.is_empty() {
        return Err(MeshError::EmptySet);
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random::<f64>() * total;
            let t = cumulative.partition_point(|&c| c < x).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect())
}

pub fn write_ply(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let io = |source| MeshError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "ply\nformat ascii 1.0")?;
        writeln!(w, "element vertex {}", mesh.vertices.len())?;
        writeln!(w, "property double x\nproperty double y\nproperty double z")?;
        writeln!(w, "element face {}", mesh.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices\nend_header")?;
        for v in &mesh.vertices {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        w.flush()
    };
    body().map_err(io)
}

/// Reads an ASCII PLY with `x y z` as the first vertex properties. Polygons
/// with more than three corners are fan-triangulated.
pub fn read_ply(path: &Path) -> Result<Mesh, MeshError> {
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })?;
    let bad = |message: String| MeshError::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let (mut n_vert, mut n_face, mut vertex_props) = (0usize, 0usize, 0usize);
    let mut current = "";
    loop {
        let line = lines.next().ok_or_else(|| bad("unterminated header".into()))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad(format!("unsupported format {fmt}"))),
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| bad(format!("bad element count {count:?}")))?;
                current = if *name == "vertex" {
                    n_vert = count;
                    "vertex"
                } else if *name == "face" {
                    n_face = count;
                    "face"
                } else {
                    "other"
                };
            }
            ["property", ..] if current == "vertex" => vertex_props += 1,
            _ => {}
        }
    }
    if vertex_props < 3 {
        return Err(bad("vertices need x, y and z".into()));
    }
    let mut mesh = Mesh::default();
    for i in 0..n_vert {
        let line = lines.next().ok_or_else(|| bad(format!("missing vertex {i}")))?;
        let xyz: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|w| w.parse::<f64>().map_err(|_| bad(format!("bad vertex line {line:?}"))))
            .collect::<Result<_, _>>()?;
        if xyz.len() < 3 {
            return Err(bad(format!("short vertex line {line:?}")));
        }
        mesh.vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
    }
    for i in 0..n_face {
        let line = lines.next().ok_or_else(|| bad(format!("missing face {i}")))?;
        let idx: Vec<u32> = line
            .split_whitespace()
            .map(|w| w.parse::<u32>().map_err(|_| bad(format!("bad face line {line:?}"))))
            .collect::<Result<_, _>>()?;
        let Some((&count, rest)) = idx.split_first() else { return Err(bad("empty face line".into())) };
        if rest.len() != count as usize || count < 3 || rest.iter().any(|&k| k as usize >= n_vert) {
            return Err(bad(format!("bad face line {line:?}")));
        }
        for w in 1..rest.len() - 1 {
            mesh.triangles.push([rest[0], rest[w], rest[w + 1]]);
        }
    }
    Ok(mesh)
}

/// Bidirectional Chamfer distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chamfer {
    /// Mean distance from the first set to the second.
    pub acc: f64,
    /// Mean distance from the second set to the first.
    pub comp: f64,
    pub mean: f64,
}

fn distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = a - b;
    (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
}

/// Mean over `from` of the distance to the nearest point of `to`.
fn directed(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let coords: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::<f64, 3>::new_from_slice(&coords).expect("non-empty point set");
    let nearest: Vec<f64> = from
        .par_iter()
        .map(|p| {
            let hit = tree.query(&[p.x, p.y, p.z]).nearest_one::<SquaredEuclidean<f64>>().execute();
            distance(p, &to[hit.item as usize])
        })
        .collect();
    nearest.iter().sum::<f64>() / from.len() as f64
}

pub fn chamfer_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Chamfer, MeshError> {
    if a.is_empty() || b.is_empty() {
        return Err(MeshError::EmptySet);
    }
    let acc = directed(a, b);
    let comp = directed(b, a);
    Ok(Chamfer { acc, comp, mean: (acc + comp) / 2.0 })
}

/// Quadratic reference implementation of [`chamfer_distance`].
pub fn chamfer_brute_force(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Chamfer, MeshError> {
    if a.is_empty() || b.is_empty() {
        return Err(MeshError::EmptySet);
    }
    let directed = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
        from.iter().map(|p| to.iter().map(|q| distance(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>()
            / from.len() as f64
    };
    let acc = directed(a, b);
    let comp = directed(b, a);
    Ok(Chamfer { acc, comp, mean: (acc + comp) / 2.0 })
}
