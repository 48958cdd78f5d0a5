//! Structured triangulations of axis-aligned rectangles.
//!
//! Every grid square is split along its bottom-left to top-right diagonal, so
//! refining `n -> 2n` produces nested meshes. Nesting is what lets the
//! experiment driver transfer coarse solutions into fine spaces exactly.

use std::collections::HashMap;

use crate::error::{Result, StokesError};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rectangle { x0, x1, y0, y1 }
    }

    pub const fn unit_square() -> Self {
        Rectangle::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Side of the rectangle a boundary entity lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    Left,
    Right,
    Bottom,
    Top,
}

impl Marker {
    pub const ALL: [Marker; 4] = [Marker::Left, Marker::Right, Marker::Bottom, Marker::Top];

    pub fn index(self) -> usize {
        match self {
            Marker::Left => 0,
            Marker::Right => 1,
            Marker::Bottom => 2,
            Marker::Top => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    /// Index into [`Mesh::edges`].
    pub edge: usize,
    pub marker: Marker,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: Rectangle,
    /// Cells per unit length.
    pub cells_per_unit: usize,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Unique edges as sorted vertex pairs.
    pub edges: Vec<[usize; 2]>,
    /// Local edge `e` of a triangle joins local vertices `e` and `(e + 1) % 3`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Maximum element diameter.
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStatistics {
    pub h: f64,
    pub min_diameter: f64,
    pub area: f64,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_edges: usize,
    pub n_boundary_edges: usize,
}

fn integral_count(len: f64, n: usize, axis: &str) -> Result<usize> {
    let cells = len * n as f64;
    let rounded = cells.round();
    if rounded < 1.0 || (cells - rounded).abs() > 1e-9 * cells.max(1.0) {
        return Err(StokesError::config(format!(
            "{axis}-extent {len} times {n} cells per unit is not a positive integer"
        )));
    }
    Ok(rounded as usize)
}

impl Mesh {
    /// Grid dimensions `(nx, ny)` for `n` cells per unit, if they are integral.
    pub fn check_cells(domain: &Rectangle, n: usize) -> Result<(usize, usize)> {
        if n == 0 {
            return Err(StokesError::config("cells per unit length must be >= 1"));
        }
        Ok((
            integral_count(domain.x1 - domain.x0, n, "x")?,
            integral_count(domain.y1 - domain.y0, n, "y")?,
        ))
    }

    /// Uniform grid of squares of side `1/n`, each split into two triangles.
    pub fn structured(domain: Rectangle, n: usize) -> Result<Mesh> {
        if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
            return Err(StokesError::config(format!("degenerate domain {domain:?}")));
        }
        if n == 0 {
            return Err(StokesError::config("cells per unit length must be >= 1"));
        }
        let nx = integral_count(domain.x1 - domain.x0, n, "x")?;
        let ny = integral_count(domain.y1 - domain.y0, n, "y")?;
        let dx = (domain.x1 - domain.x0) / nx as f64;
        let dy = (domain.y1 - domain.y0) / ny as f64;

        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { domain.x1 } else { domain.x0 + i as f64 * dx };
                let y = if j == ny { domain.y1 } else { domain.y0 + j as f64 * dy };
                vertices.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v01 = vid(i, j + 1);
                let v11 = vid(i + 1, j + 1);
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let mut edge_ids: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let mut te = [0usize; 3];
            for (e, slot) in te.iter_mut().enumerate() {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                let key = if a < b { [a, b] } else { [b, a] };
                *slot = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
            }
            triangle_edges.push(te);
        }

        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        let mut push_side = |pairs: Vec<[usize; 2]>, marker: Marker| {
            for [a, b] in pairs {
                let key = if a < b { [a, b] } else { [b, a] };
                boundary_edges.push(BoundaryEdge {
                    edge: edge_ids[&key],
                    marker,
                });
            }
        };
        push_side((0..nx).map(|i| [vid(i, 0), vid(i + 1, 0)]).collect(), Marker::Bottom);
        push_side((0..nx).map(|i| [vid(i, ny), vid(i + 1, ny)]).collect(), Marker::Top);
        push_side((0..ny).map(|j| [vid(0, j), vid(0, j + 1)]).collect(), Marker::Left);
        push_side((0..ny).map(|j| [vid(nx, j), vid(nx, j + 1)]).collect(), Marker::Right);

        let mut mesh = Mesh {
            domain,
            cells_per_unit: n,
            nx,
            ny,
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary_edges,
            h: 0.0,
        };
        mesh.h = (0..mesh.triangles.len())
            .map(|t| mesh.diameter(t))
            .fold(0.0, f64::max);
        Ok(mesh)
    }

    /// Grid spacing `1/n`, the label used for experiment levels.
    pub fn grid_spacing(&self) -> f64 {
        1.0 / self.cells_per_unit as f64
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let p = self.triangle_coords(t);
        let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        d(p[0], p[1]).max(d(p[1], p[2])).max(d(p[2], p[0]))
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    pub fn statistics(&self) -> MeshStatistics {
        let min_diameter = (0..self.n_triangles())
            .map(|t| self.diameter(t))
            .fold(f64::INFINITY, f64::min);
        let area = (0..self.n_triangles()).map(|t| self.signed_area(t)).sum();
        MeshStatistics {
            h: self.h,
            min_diameter,
            area,
            n_vertices: self.n_vertices(),
            n_triangles: self.n_triangles(),
            n_edges: self.n_edges(),
            n_boundary_edges: self.boundary_edges.len(),
        }
    }

    /// Finds the triangle containing `p` and its barycentric coordinates.
    /// Points on shared edges resolve to one of the adjacent triangles.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let d = self.domain;
        let tol = 1e-12 * (d.x1 - d.x0).max(d.y1 - d.y0);
        if p[0] < d.x0 - tol || p[0] > d.x1 + tol || p[1] < d.y0 - tol || p[1] > d.y1 + tol {
            return None;
        }
        let dx = (d.x1 - d.x0) / self.nx as f64;
        let dy = (d.y1 - d.y0) / self.ny as f64;
        let fx = (p[0] - d.x0) / dx;
        let fy = (p[1] - d.y0) / dy;
        let i = (fx.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.floor().max(0.0) as usize).min(self.ny - 1);
        let (lx, ly) = (fx - i as f64, fy - j as f64);
        let cell = j * self.nx + i;
        let t = if ly <= lx { 2 * cell } else { 2 * cell + 1 };
        Some((t, self.barycentric(t, p)))
    }

    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [p0, p1, p2] = self.triangle_coords(t);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((p[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p[1] - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (p[1] - p0[1]) - (p[0] - p0[0]) * (p1[1] - p0[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Markers of the rectangle sides the point lies on (0, 1 or 2 of them).
    pub fn markers_at(&self, p: [f64; 2]) -> Vec<Marker> {
        let d = self.domain;
        let tol = 1e-12 * (d.x1 - d.x0).max(d.y1 - d.y0);
        let mut out = Vec::with_capacity(2);
        if (p[0] - d.x0).abs() <= tol {
            out.push(Marker::Left);
        }
        if (p[0] - d.x1).abs() <= tol {
            out.push(Marker::Right);
        }
        if (p[1] - d.y0).abs() <= tol {
            out.push(Marker::Bottom);
        }
        if (p[1] - d.y1).abs() <= tol {
            out.push(Marker::Top);
        }
        out
    }
}
