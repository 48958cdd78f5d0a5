//! Assembly of the mixed-form operators and load vectors.
//!
//! `M` and `A` are the velocity mass and stiffness (`(u, v)` and
//! `(grad u, grad v)`), `D` is the divergence form `(div v, q)` with shape
//! `#pressure x #velocity`, and `Mp` the P1 pressure mass. Operators are
//! stored without Dirichlet elimination; constraints are applied by the
//! saddle solver.

use std::sync::Arc;

use crate::error::{Result, StokesError};
use crate::femspace::{eval_local_basis, TaylorHoodSpace};
use crate::quadrature::QuadratureRule;
use crate::saddle::{SaddleSolver, SaddleSystem};
use crate::sparse::{SparseOperator, TripletBuilder};

pub type ForceFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;

/// Body force `f(x, t)`.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant([f64; 2]),
    Field { f: ForceFn, time_dependent: bool },
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, fmt: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => write!(fmt, "Zero"),
            Forcing::Constant(c) => write!(fmt, "Constant({c:?})"),
            Forcing::Field { time_dependent, .. } => {
                write!(fmt, "Field {{ time_dependent: {time_dependent} }}")
            }
        }
    }
}

impl Forcing {
    pub fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            Forcing::Zero => [0.0; 2],
            Forcing::Constant(c) => *c,
            Forcing::Field { f, .. } => f(x, t),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Forcing::Field { time_dependent: true, .. })
    }

    /// Approximates `int_{t_n}^{t_n + k} (f(s), v) ds`: left endpoint for
    /// time-independent forces (exact), midpoint rule otherwise.
    pub fn step_load(&self, space: &TaylorHoodSpace, t_n: f64, k: f64) -> Vec<f64> {
        if matches!(self, Forcing::Zero) {
            return vec![0.0; space.velocity_dim()];
        }
        let t = if self.is_time_dependent() { t_n + 0.5 * k } else { t_n };
        let mut load = assemble_load(space, |x, s| self.eval(x, s), t);
        load.iter_mut().for_each(|v| *v *= k);
        load
    }
}

pub struct AssembledSystem {
    pub space: Arc<TaylorHoodSpace>,
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    pub div: SparseOperator,
    pub pressure_mass: SparseOperator,
    pub nu: f64,
    /// `(1, psi_q)` for every pressure basis function.
    pub mean_weights: Vec<f64>,
}

pub fn assemble_system(space: Arc<TaylorHoodSpace>, nu: f64) -> Result<AssembledSystem> {
    if !(nu > 0.0) {
        return Err(StokesError::config(format!("viscosity must be positive, got {nu}")));
    }
    let rule = QuadratureRule::degree4();
    let ns = space.n_scalar();
    let nu_dim = space.velocity_dim();
    let np = space.pressure_dim();
    let nt = space.mesh.n_triangles();
    let mut mass = TripletBuilder::with_capacity(nu_dim, nu_dim, 72 * nt);
    let mut stiff = TripletBuilder::with_capacity(nu_dim, nu_dim, 72 * nt);
    let mut div = TripletBuilder::with_capacity(np, nu_dim, 36 * nt);
    let mut pmass = TripletBuilder::with_capacity(np, np, 9 * nt);

    for t in 0..nt {
        let geom = space.geometry(t);
        let jac = 2.0 * geom.area;
        let mut me = [[0.0; 6]; 6];
        let mut ae = [[0.0; 6]; 6];
        // de[c][a][i] = int d_c phi_i psi_a
        let mut de = [[[0.0; 6]; 3]; 2];
        let mut pe = [[0.0; 3]; 3];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let b = eval_local_basis(&geom, l);
            let wq = w * jac;
            for i in 0..6 {
                for j in 0..6 {
                    me[i][j] += wq * b.p2[i] * b.p2[j];
                    ae[i][j] += wq
                        * (b.p2_grad[i][0] * b.p2_grad[j][0] + b.p2_grad[i][1] * b.p2_grad[j][1]);
                }
                for a in 0..3 {
                    de[0][a][i] += wq * b.p2_grad[i][0] * b.p1[a];
                    de[1][a][i] += wq * b.p2_grad[i][1] * b.p1[a];
                }
            }
            for a in 0..3 {
                for c in 0..3 {
                    pe[a][c] += wq * b.p1[a] * b.p1[c];
                }
            }
        }
        let sd = &space.scalar_dofs[t];
        let pd = space.pressure_dofs(t);
        for comp in 0..2 {
            let off = comp * ns;
            for i in 0..6 {
                for j in 0..6 {
                    mass.push(off + sd[i], off + sd[j], me[i][j]);
                    stiff.push(off + sd[i], off + sd[j], ae[i][j]);
                }
                for a in 0..3 {
                    div.push(pd[a], off + sd[i], de[comp][a][i]);
                }
            }
        }
        for a in 0..3 {
            for c in 0..3 {
                pmass.push(pd[a], pd[c], pe[a][c]);
            }
        }
    }

    let pressure_mass = pmass.finalize();
    let mean_weights = pressure_mass.mul_vec(&vec![1.0; np]);
    Ok(AssembledSystem {
        space,
        mass: mass.finalize(),
        stiffness: stiff.finalize(),
        div: div.finalize(),
        pressure_mass,
        nu,
        mean_weights,
    })
}

/// Quadrature approximation of `(f(., t), phi_i)` for every velocity basis function.
pub fn assemble_load(
    space: &TaylorHoodSpace,
    f: impl Fn([f64; 2], f64) -> [f64; 2],
    t: f64,
) -> Vec<f64> {
    let rule = QuadratureRule::degree4();
    let ns = space.n_scalar();
    let mut load = vec![0.0; 2 * ns];
    for tri in 0..space.mesh.n_triangles() {
        let geom = space.geometry(tri);
        let jac = 2.0 * geom.area;
        let sd = &space.scalar_dofs[tri];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let b = eval_local_basis(&geom, l);
            let fx = f(geom.point(l), t);
            let wq = w * jac;
            for i in 0..6 {
                load[sd[i]] += wq * fx[0] * b.p2[i];
                load[ns + sd[i]] += wq * fx[1] * b.p2[i];
            }
        }
    }
    load
}

/// `||u_h - exact||_{L2}` with the given quadrature rule.
pub fn velocity_l2_error(
    space: &TaylorHoodSpace,
    u: &[f64],
    exact: impl Fn([f64; 2]) -> [f64; 2],
    rule: &QuadratureRule,
) -> f64 {
    let ns = space.n_scalar();
    let table: Vec<[f64; 6]> = rule.points.iter().map(crate::femspace::p2_values).collect();
    let mut acc = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let geom = space.geometry(t);
        let sd = &space.scalar_dofs[t];
        for ((l, w), phi) in rule.points.iter().zip(&rule.weights).zip(&table) {
            let mut uh = [0.0; 2];
            for i in 0..6 {
                uh[0] += phi[i] * u[sd[i]];
                uh[1] += phi[i] * u[ns + sd[i]];
            }
            let ue = exact(geom.point(l));
            acc += w * 2.0 * geom.area * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
        }
    }
    acc.sqrt()
}

impl AssembledSystem {
    /// `K = M + k nu A`
    pub fn step_operator(&self, k: f64) -> SparseOperator {
        self.mass.add_scaled(1.0, &self.stiffness, k * self.nu)
    }

    /// `||u||_{L2}^2` via the mass matrix.
    pub fn l2_norm_sq(&self, u: &[f64]) -> f64 {
        self.mass.bilinear(u, u)
    }

    /// `|u|_{H1}^2` via the stiffness matrix.
    pub fn h1_seminorm_sq(&self, u: &[f64]) -> f64 {
        self.stiffness.bilinear(u, u)
    }

    pub fn pressure_l2_norm_sq(&self, p: &[f64]) -> f64 {
        self.pressure_mass.bilinear(p, p)
    }

    /// `(1, p)` divided by the domain area.
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        let total: f64 = self.mean_weights.iter().sum();
        p.iter().zip(&self.mean_weights).map(|(a, w)| a * w).sum::<f64>() / total
    }

    /// Discrete L2 projection of `u0` onto the weakly divergence-free
    /// subspace carrying the space's Dirichlet values.
    pub fn l2_project_div_free(
        &self,
        u0: impl Fn([f64; 2]) -> [f64; 2],
        solver: SaddleSolver,
    ) -> Result<Vec<f64>> {
        let rhs = assemble_load(&self.space, |x, _| u0(x), 0.0);
        let sys = SaddleSystem::new(&self.mass, &self.div, 1.0, &self.space, &self.mean_weights, solver)?;
        Ok(sys.solve(&rhs)?.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::DirichletSpec;
    use crate::mesh::{Mesh, Rectangle};

    fn system(n: usize) -> AssembledSystem {
        let mesh = Arc::new(Mesh::structured(Rectangle::unit_square(), n).unwrap());
        let space = Arc::new(TaylorHoodSpace::new(mesh, DirichletSpec::no_slip()));
        assemble_system(space, 1.0).unwrap()
    }

    /// Scalar P1 stiffness on the unit right triangle, by hand:
    /// grad l0 = (-1,-1), grad l1 = (1,0), grad l2 = (0,1), area 1/2.
    #[test]
    fn p1_stiffness_on_reference_triangle() {
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let geom = crate::femspace::ElementGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let rule = QuadratureRule::degree4();
        let mut k = [[0.0; 3]; 3];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let b = eval_local_basis(&geom, l);
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] += w * 2.0 * geom.area
                        * (b.p1_grad[i][0] * b.p1_grad[j][0] + b.p1_grad[i][1] * b.p1_grad[j][1]);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mass_sums_to_twice_area() {
        let s = system(3);
        let total: f64 = s.mass.values.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
        let ptotal: f64 = s.pressure_mass.values.iter().sum();
        assert!((ptotal - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let s = system(3);
        let ones = vec![1.0; s.space.velocity_dim()];
        let r = s.stiffness.mul_vec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn operators_symmetric() {
        let s = system(4);
        for op in [&s.mass, &s.stiffness, &s.pressure_mass] {
            assert!(op.symmetry_defect() <= 1e-12 * op.max_abs());
        }
    }

    #[test]
    fn divergence_of_constants_vanishes() {
        let s = system(3);
        let u = s.space.interpolate(|_| [0.7, -1.3]);
        assert!(s.div.mul_vec(&u).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn total_divergence_equals_boundary_flux() {
        let s = system(4);
        // u = (x, 0): flux through the right side is 1
        let u = s.space.interpolate(|p| [p[0], 0.0]);
        let flux: f64 = s.div.mul_vec(&u).iter().sum();
        assert!((flux - 1.0).abs() < 1e-12);
        // zero on the boundary => zero flux
        let u = s.space.interpolate(|p| {
            let b = p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
            [b, 2.0 * b]
        });
        let flux: f64 = s.div.mul_vec(&u).iter().sum();
        assert!(flux.abs() < 1e-12);
    }

    #[test]
    fn constant_load_matches_mass() {
        let s = system(3);
        let c = [2.0, -0.5];
        let load = assemble_load(&s.space, |_, _| c, 0.0);
        let ones = s.space.interpolate(|_| c);
        let m1 = s.mass.mul_vec(&ones);
        for (a, b) in load.iter().zip(&m1) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(Forcing::Zero.step_load(&s.space, 0.0, 0.1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assembly_is_deterministic() {
        let a = system(3);
        let b = system(3);
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.stiffness, b.stiffness);
        assert_eq!(a.div, b.div);
    }

    #[test]
    fn rejects_nonpositive_viscosity() {
        let mesh = Arc::new(Mesh::structured(Rectangle::unit_square(), 1).unwrap());
        let space = Arc::new(TaylorHoodSpace::new(mesh, DirichletSpec::no_slip()));
        assert!(assemble_system(space, 0.0).is_err());
    }

    #[test]
    fn div_free_projection_is_idempotent() {
        let sys = system(4);
        let solver = SaddleSolver::default();
        let once = sys
            .l2_project_div_free(|p| [p[0] * (1.0 - p[0]) * p[1], (p[0] + p[1]).sin()], solver)
            .unwrap();
        let div = sys.div.mul_vec(&once);
        assert!(div.iter().all(|d| d.abs() < 1e-10));
        let space = Arc::clone(&sys.space);
        let twice = sys
            .l2_project_div_free(|p| space.eval_velocity(&once, p).unwrap(), solver)
            .unwrap();
        let diff = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff:e}");
    }
}
