//! Taylor–Hood (P2–P1) degree-of-freedom maps and reference-element basis.
//!
//! Scalar P2 dofs are numbered vertices first, then edge midpoints. The
//! velocity vector stacks the x-component block before the y-component block,
//! so velocity dof `c * n_scalar + s` is component `c` of scalar dof `s`.
//! Pressure dofs coincide with mesh vertices.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mesh::{Marker, Mesh};
use crate::sparse::{SparseOperator, TripletBuilder};

/// Constant Dirichlet velocity per rectangle side (indexed by [`Marker::index`]).
///
/// A support point on two sides (a corner) takes the common value if the
/// sides agree and zero otherwise, so a moving lid never reaches the corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletSpec {
    pub values: [[f64; 2]; 4],
}

impl DirichletSpec {
    pub fn no_slip() -> Self {
        DirichletSpec {
            values: [[0.0; 2]; 4],
        }
    }

    pub fn lid(velocity: [f64; 2]) -> Self {
        let mut spec = DirichletSpec::no_slip();
        spec.values[Marker::Top.index()] = velocity;
        spec
    }

    pub fn value_on(&self, markers: &[Marker]) -> [f64; 2] {
        match markers {
            [] => [0.0; 2],
            [first, rest @ ..] => {
                let v = self.values[first.index()];
                if rest.iter().all(|m| self.values[m.index()] == v) {
                    v
                } else {
                    [0.0; 2]
                }
            }
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|v| v[0] == 0.0 && v[1] == 0.0)
    }
}

/// How the pressure zero-mean condition is enforced in saddle solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PressureMean {
    #[serde(rename = "lagrange_multiplier")]
    LagrangeMultiplier,
    #[serde(rename = "post_subtraction")]
    PostSubtraction,
}

/// Affine map data for one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the three barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
    pub coords: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(coords: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = coords;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
        let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        ElementGeometry {
            area: 0.5 * det,
            grad_bary: [g0, g1, g2],
            coords,
        }
    }

    pub fn point(&self, bary: &[f64; 3]) -> [f64; 2] {
        let c = &self.coords;
        [
            bary[0] * c[0][0] + bary[1] * c[1][0] + bary[2] * c[2][0],
            bary[0] * c[0][1] + bary[1] * c[1][1] + bary[2] * c[2][1],
        ]
    }
}

/// Values and physical gradients of the local shape functions at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasisEval {
    pub p2: [f64; 6],
    pub p2_grad: [[f64; 2]; 6],
    pub p1: [f64; 3],
    pub p1_grad: [[f64; 2]; 3],
}

/// P2 shape function values at barycentric point `l` (geometry independent).
pub fn p2_values(l: &[f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Evaluates the local basis at barycentric point `l`.
///
/// Local P2 nodes 0..3 are the vertices, node `3 + e` the midpoint of local
/// edge `e` joining vertices `e` and `(e + 1) % 3`.
pub fn eval_local_basis(geom: &ElementGeometry, l: &[f64; 3]) -> BasisEval {
    let g = &geom.grad_bary;
    let mut out = BasisEval::default();
    for i in 0..3 {
        out.p1[i] = l[i];
        out.p1_grad[i] = g[i];
        out.p2[i] = l[i] * (2.0 * l[i] - 1.0);
        let s = 4.0 * l[i] - 1.0;
        out.p2_grad[i] = [s * g[i][0], s * g[i][1]];
    }
    for e in 0..3 {
        let (a, b) = (e, (e + 1) % 3);
        out.p2[3 + e] = 4.0 * l[a] * l[b];
        out.p2_grad[3 + e] = [
            4.0 * (l[b] * g[a][0] + l[a] * g[b][0]),
            4.0 * (l[b] * g[a][1] + l[a] * g[b][1]),
        ];
    }
    out
}

#[derive(Debug, Clone)]
pub struct TaylorHoodSpace {
    pub mesh: Arc<Mesh>,
    /// Scalar P2 dofs per triangle (3 vertices, 3 edge midpoints).
    pub scalar_dofs: Vec<[usize; 6]>,
    /// Support point of every scalar P2 dof.
    pub scalar_points: Vec<[f64; 2]>,
    /// Constrained velocity dofs with their prescribed values, sorted by index.
    pub dirichlet_dofs: Vec<(usize, f64)>,
    pub is_dirichlet: Vec<bool>,
    pub dirichlet: DirichletSpec,
    pub pressure_mean: PressureMean,
}

impl TaylorHoodSpace {
    pub fn new(mesh: Arc<Mesh>, dirichlet: DirichletSpec) -> Self {
        let nv = mesh.n_vertices();
        let scalar_dofs = mesh
            .triangles
            .iter()
            .zip(&mesh.triangle_edges)
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();
        let mut scalar_points = mesh.vertices.clone();
        scalar_points.extend((0..mesh.n_edges()).map(|e| mesh.edge_midpoint(e)));

        let n_scalar = scalar_points.len();
        let mut on_boundary = vec![false; n_scalar];
        for be in &mesh.boundary_edges {
            let [a, b] = mesh.edges[be.edge];
            on_boundary[a] = true;
            on_boundary[b] = true;
            on_boundary[nv + be.edge] = true;
        }
        let mut is_dirichlet = vec![false; 2 * n_scalar];
        let mut dirichlet_dofs = Vec::new();
        for c in 0..2 {
            for s in (0..n_scalar).filter(|&s| on_boundary[s]) {
                let markers = mesh.markers_at(scalar_points[s]);
                let v = dirichlet.value_on(&markers);
                is_dirichlet[c * n_scalar + s] = true;
                dirichlet_dofs.push((c * n_scalar + s, v[c]));
            }
        }

        TaylorHoodSpace {
            mesh,
            scalar_dofs,
            scalar_points,
            dirichlet_dofs,
            is_dirichlet,
            dirichlet,
            pressure_mean: PressureMean::LagrangeMultiplier,
        }
    }

    pub fn with_pressure_mean(mut self, mode: PressureMean) -> Self {
        self.pressure_mean = mode;
        self
    }

    pub fn n_scalar(&self) -> usize {
        self.scalar_points.len()
    }

    pub fn velocity_dim(&self) -> usize {
        2 * self.n_scalar()
    }

    pub fn pressure_dim(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn pressure_dofs(&self, t: usize) -> [usize; 3] {
        self.mesh.triangles[t]
    }

    pub fn geometry(&self, t: usize) -> ElementGeometry {
        ElementGeometry::new(self.mesh.triangle_coords(t))
    }

    pub fn eval_basis(&self, t: usize, bary: &[f64; 3]) -> BasisEval {
        eval_local_basis(&self.geometry(t), bary)
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate(&self, field: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let ns = self.n_scalar();
        let mut out = vec![0.0; 2 * ns];
        for (s, p) in self.scalar_points.iter().enumerate() {
            let v = field(*p);
            out[s] = v[0];
            out[ns + s] = v[1];
        }
        out
    }

    /// Nodal P1 interpolant of a scalar field.
    pub fn interpolate_pressure(&self, field: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.mesh.vertices.iter().map(|p| field(*p)).collect()
    }

    /// Overwrites constrained entries with their Dirichlet values.
    pub fn apply_dirichlet(&self, u: &mut [f64]) {
        for &(d, v) in &self.dirichlet_dofs {
            u[d] = v;
        }
    }

    /// Velocity value at a physical point, `None` outside the domain.
    pub fn eval_velocity(&self, u: &[f64], p: [f64; 2]) -> Option<[f64; 2]> {
        let (t, bary) = self.mesh.locate(p)?;
        let b = self.eval_basis(t, &bary);
        let ns = self.n_scalar();
        let dofs = &self.scalar_dofs[t];
        let mut v = [0.0; 2];
        for (i, &s) in dofs.iter().enumerate() {
            v[0] += b.p2[i] * u[s];
            v[1] += b.p2[i] * u[ns + s];
        }
        Some(v)
    }

    pub fn eval_pressure(&self, p: &[f64], x: [f64; 2]) -> Option<f64> {
        let (t, bary) = self.mesh.locate(x)?;
        let dofs = self.pressure_dofs(t);
        Some((0..3).map(|i| bary[i] * p[dofs[i]]).sum())
    }

    /// Transfers a velocity field from `from` into this space by nodal
    /// evaluation; exact when `from` is a nested coarsening of this mesh.
    pub fn transfer_velocity(&self, from: &TaylorHoodSpace, u: &[f64]) -> Vec<f64> {
        self.interpolate(|x| from.eval_velocity(u, x).expect("point inside domain"))
    }

    pub fn transfer_pressure(&self, from: &TaylorHoodSpace, p: &[f64]) -> Vec<f64> {
        self.interpolate_pressure(|x| from.eval_pressure(p, x).expect("point inside domain"))
    }
}

/// Sparse nodal-interpolation maps from a coarser space into a finer one.
#[derive(Debug, Clone)]
pub struct Transfer {
    /// Scalar P2 map, applied to each velocity component.
    pub scalar: SparseOperator,
    pub pressure: SparseOperator,
}

impl Transfer {
    /// Exact when `from` is a nested coarsening of `to`.
    pub fn new(from: &TaylorHoodSpace, to: &TaylorHoodSpace) -> Self {
        let mut sb = TripletBuilder::with_capacity(to.n_scalar(), from.n_scalar(), 6 * to.n_scalar());
        for (r, x) in to.scalar_points.iter().enumerate() {
            let (t, bary) = from.mesh.locate(*x).expect("point inside domain");
            for (c, v) in from.scalar_dofs[t].iter().zip(p2_values(&bary)) {
                if v != 0.0 {
                    sb.push(r, *c, v);
                }
            }
        }
        let mut pb = TripletBuilder::with_capacity(to.pressure_dim(), from.pressure_dim(), 3 * to.pressure_dim());
        for (r, x) in to.mesh.vertices.iter().enumerate() {
            let (t, bary) = from.mesh.locate(*x).expect("point inside domain");
            for (c, v) in from.pressure_dofs(t).iter().zip(bary) {
                if v != 0.0 {
                    pb.push(r, *c, v);
                }
            }
        }
        Transfer {
            scalar: sb.finalize(),
            pressure: pb.finalize(),
        }
    }

    pub fn velocity(&self, u: &[f64]) -> Vec<f64> {
        let (nf, nt) = (self.scalar.ncols, self.scalar.nrows);
        let mut out = self.scalar.mul_vec(&u[..nf]);
        out.extend(self.scalar.mul_vec(&u[nf..]));
        debug_assert_eq!(out.len(), 2 * nt);
        out
    }

    pub fn pressure(&self, p: &[f64]) -> Vec<f64> {
        self.pressure.mul_vec(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rectangle;
    use crate::quadrature::QuadratureRule;

    fn space(n: usize, spec: DirichletSpec) -> TaylorHoodSpace {
        TaylorHoodSpace::new(
            Arc::new(Mesh::structured(Rectangle::unit_square(), n).unwrap()),
            spec,
        )
    }

    #[test]
    fn dimensions() {
        let s = space(1, DirichletSpec::no_slip());
        assert_eq!(s.velocity_dim(), 18);
        assert_eq!(s.pressure_dim(), 4);
        let s = space(2, DirichletSpec::no_slip());
        assert_eq!(s.velocity_dim(), 50);
        assert_eq!(s.pressure_dim(), 9);
    }

    #[test]
    fn homogeneous_dirichlet_covers_boundary() {
        let s = space(2, DirichletSpec::no_slip());
        // 8 boundary vertices + 8 boundary midpoints, two components
        assert_eq!(s.dirichlet_dofs.len(), 32);
        assert!(s.dirichlet_dofs.iter().all(|&(_, v)| v == 0.0));
        let ns = s.n_scalar();
        for (sd, p) in s.scalar_points.iter().enumerate() {
            let on_bdry = p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
            assert_eq!(s.is_dirichlet[sd], on_bdry);
            assert_eq!(s.is_dirichlet[ns + sd], on_bdry);
        }
    }

    #[test]
    fn lid_skips_corners() {
        let s = space(2, DirichletSpec::lid([1.0, 0.0]));
        let ns = s.n_scalar();
        for &(d, v) in &s.dirichlet_dofs {
            let p = s.scalar_points[d % ns];
            let interior_top = p[1] == 1.0 && p[0] > 0.0 && p[0] < 1.0;
            let expected = if d < ns && interior_top { 1.0 } else { 0.0 };
            assert_eq!(v, expected, "dof {d} at {p:?}");
        }
    }

    #[test]
    fn partition_of_unity_and_lagrange_property() {
        let s = space(3, DirichletSpec::no_slip());
        for t in [0, 5, 11] {
            for bary in QuadratureRule::degree4().points {
                let b = s.eval_basis(t, &bary);
                assert!((b.p2.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                assert!((b.p1.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let gsum = b.p2_grad.iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
                assert!(gsum[0].abs() < 1e-12 && gsum[1].abs() < 1e-12);
            }
            let b = s.eval_basis(t, &[1.0, 0.0, 0.0]);
            assert_eq!(b.p2, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            let b = s.eval_basis(t, &[0.5, 0.5, 0.0]);
            assert_eq!(b.p2, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = space(2, DirichletSpec::no_slip());
        let t = 3;
        let geom = s.geometry(t);
        let l = [0.2, 0.3, 0.5];
        let x = geom.point(&l);
        let b = s.eval_basis(t, &l);
        let eps = 1e-6;
        for dir in 0..2 {
            let mut xp = x;
            xp[dir] += eps;
            let mut xm = x;
            xm[dir] -= eps;
            let bp = s.eval_basis(t, &s.mesh.barycentric(t, xp));
            let bm = s.eval_basis(t, &s.mesh.barycentric(t, xm));
            for i in 0..6 {
                let fd = (bp.p2[i] - bm.p2[i]) / (2.0 * eps);
                assert!((fd - b.p2_grad[i][dir]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn interpolation_of_constants_and_quadratics() {
        let s = space(3, DirichletSpec::no_slip());
        let u = s.interpolate(|_| [1.0, 0.0]);
        let ns = s.n_scalar();
        assert!(u[..ns].iter().all(|&v| v == 1.0));
        assert!(u[ns..].iter().all(|&v| v == 0.0));

        let quad = |p: [f64; 2]| [p[0] * p[0] - 2.0 * p[0] * p[1] + 0.5, 3.0 * p[1] * p[1] + p[0]];
        let u = s.interpolate(quad);
        for x in [[0.13, 0.71], [0.5, 0.5], [0.99, 0.01]] {
            let v = s.eval_velocity(&u, x).unwrap();
            let e = quad(x);
            assert!((v[0] - e[0]).abs() < 1e-13 && (v[1] - e[1]).abs() < 1e-13);
        }
        let lin = |p: [f64; 2]| 2.0 * p[0] - p[1] + 0.25;
        let p = s.interpolate_pressure(lin);
        for x in [[0.13, 0.71], [0.37, 0.2]] {
            assert!((s.eval_pressure(&p, x).unwrap() - lin(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn nested_transfer_is_exact() {
        let coarse = space(2, DirichletSpec::no_slip());
        let fine = space(4, DirichletSpec::no_slip());
        let u = coarse.interpolate(|p| [p[0].sin(), p[1] * p[0]]);
        let uf = fine.transfer_velocity(&coarse, &u);
        for x in [[0.1, 0.2], [0.77, 0.4], [0.3, 0.9]] {
            let a = coarse.eval_velocity(&u, x).unwrap();
            let b = fine.eval_velocity(&uf, x).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn transfer_matrix_matches_pointwise_transfer() {
        let coarse = space(2, DirichletSpec::no_slip());
        let fine = space(4, DirichletSpec::no_slip());
        let u = coarse.interpolate(|p| [p[0].cos(), p[1] - p[0] * p[0]]);
        let p = coarse.interpolate_pressure(|x| x[0] * x[1]);
        let tr = Transfer::new(&coarse, &fine);
        let a = tr.velocity(&u);
        let b = fine.transfer_velocity(&coarse, &u);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
        let pa = tr.pressure(&p);
        let pb = fine.transfer_pressure(&coarse, &p);
        assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-14));
    }
}
