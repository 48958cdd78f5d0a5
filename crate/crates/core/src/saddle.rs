//! Solvers for the constrained saddle-point system
//!
//! ```text
//! [ K   s D^T ] [u]   [F]
//! [ D     0   ] [p] = [0]
//! ```
//!
//! with Dirichlet rows of `u` fixed and the pressure normalized to zero
//! mean. `s` is the pressure scale (the time step in the Euler–Maruyama
//! step, 1 for projections); the returned pressure is unscaled.

use dyn_stack::{MemBuffer, MemStack};
use serde::{Deserialize, Serialize};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::solvers::Llt;
use faer::{Conj, Mat, Par, Side};

use crate::error::{Result, StokesError};
use crate::femspace::{PressureMean, TaylorHoodSpace};
use crate::sparse::{norm_inf, to_faer, SparseOperator, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleStrategy {
    #[serde(rename = "direct_sparse")]
    DirectSparse,
    #[serde(rename = "uzawa_cg")]
    UzawaCg,
    #[serde(rename = "artificial_compressibility")]
    ArtificialCompressibility,
}

impl SaddleStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SaddleStrategy::DirectSparse => "direct_sparse",
            SaddleStrategy::UzawaCg => "uzawa_cg",
            SaddleStrategy::ArtificialCompressibility => "artificial_compressibility",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct_sparse" | "direct" => Some(SaddleStrategy::DirectSparse),
            "uzawa_cg" | "uzawa" => Some(SaddleStrategy::UzawaCg),
            "artificial_compressibility" | "ac" => Some(SaddleStrategy::ArtificialCompressibility),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleSolver {
    pub strategy: SaddleStrategy,
    /// Relative residual tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SaddleSolver {
    fn default() -> Self {
        SaddleSolver {
            strategy: SaddleStrategy::DirectSparse,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    /// `||D u||_inf` of the returned velocity.
    pub divergence: f64,
}

enum Backend {
    Direct {
        factor: QuasiDefiniteLdlt,
        matrix: SparseOperator,
    },
    Uzawa {
        llt: Llt<usize, f64>,
    },
    Compressibility {
        llt: Llt<usize, f64>,
        rho: f64,
    },
}

/// A factorized saddle operator, reusable across right-hand sides.
pub struct SaddleSystem {
    solver: SaddleSolver,
    scale: f64,
    nu: usize,
    np: usize,
    free: Vec<usize>,
    dirichlet: Vec<(usize, f64)>,
    /// `D` restricted to free velocity columns, indexed by free position.
    div_free: SparseOperator,
    div: SparseOperator,
    /// `K_{:,b} g` over all velocity rows.
    lift_u: Vec<f64>,
    /// `D_{:,b} g`
    lift_p: Vec<f64>,
    mean_weights: Vec<f64>,
    backend: Backend,
}

fn llt_solve(llt: &Llt<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let mut x = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    llt.solve_in_place(x.as_mut());
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

impl SaddleSystem {
    pub fn new(
        velocity_block: &SparseOperator,
        div: &SparseOperator,
        scale: f64,
        space: &TaylorHoodSpace,
        mean_weights: &[f64],
        solver: SaddleSolver,
    ) -> Result<Self> {
        let nu = velocity_block.nrows;
        let np = div.nrows;
        let mut free_pos = vec![None; nu];
        let mut free = Vec::new();
        for (d, pos) in free_pos.iter_mut().enumerate() {
            if !space.is_dirichlet[d] {
                *pos = Some(free.len());
                free.push(d);
            }
        }
        let mut g = vec![0.0; nu];
        for &(d, v) in &space.dirichlet_dofs {
            g[d] = v;
        }
        let lift_u = velocity_block.mul_vec(&g);
        let lift_p = div.mul_vec(&g);

        let mut db = TripletBuilder::new(np, free.len());
        for q in 0..np {
            for (c, v) in div.row(q) {
                if let Some(fc) = free_pos[c] {
                    db.push(q, fc, v);
                }
            }
        }
        let div_free = db.finalize();

        let mut kb = TripletBuilder::new(free.len(), free.len());
        for (fr, &r) in free.iter().enumerate() {
            for (c, v) in velocity_block.row(r) {
                if let Some(fc) = free_pos[c] {
                    kb.push(fr, fc, v);
                }
            }
        }
        let k_free = kb.finalize();

        let backend = match solver.strategy {
            SaddleStrategy::DirectSparse => {
                let with_mult = space.pressure_mean == PressureMean::LagrangeMultiplier;
                let nf = free.len();
                let n = nf + np + usize::from(with_mult);
                let mut t = TripletBuilder::with_capacity(n, n, k_free.nnz() + 2 * div_free.nnz() + 2 * np);
                for (r, c, v) in k_free.to_triplets() {
                    t.push(r, c, v);
                }
                for q in 0..np {
                    for (c, v) in div_free.row(q) {
                        t.push(c, nf + q, scale * v);
                        t.push(nf + q, c, scale * v);
                    }
                    if with_mult {
                        t.push(nf + q, nf + np, scale * mean_weights[q]);
                        t.push(nf + np, nf + q, scale * mean_weights[q]);
                    }
                }
                let matrix = t.finalize();
                // quasi-definite shift of the constraint block; removed again
                // by iterative refinement against `matrix`
                let delta = 1e-8 * scale * scale;
                let mut shifted = matrix.to_triplets();
                for q in 0..np {
                    shifted.push((nf + q, nf + q, -delta * mean_weights[q]));
                }
                if with_mult {
                    let total: f64 = mean_weights.iter().sum();
                    shifted.push((nf + np, nf + np, delta * total));
                }
                // the multiplier joins the primal block
                let mut signs = vec![1i8; n];
                signs[nf..nf + np].iter_mut().for_each(|s| *s = -1);
                let factor = QuasiDefiniteLdlt::new(n, &shifted, &signs)?;
                Backend::Direct { factor, matrix }
            }
            SaddleStrategy::UzawaCg => {
                let llt = to_faer(free.len(), free.len(), &k_free.to_triplets())?
                    .sp_cholesky(Side::Lower)
                    .map_err(|e| StokesError::solver(format!("Cholesky failed: {e:?}"), 0, f64::NAN))?;
                Backend::Uzawa { llt }
            }
            SaddleStrategy::ArtificialCompressibility => {
                let rho = 1e4;
                let mut t = TripletBuilder::new(free.len(), free.len());
                for (r, c, v) in k_free.to_triplets() {
                    t.push(r, c, v);
                }
                for q in 0..np {
                    let row: Vec<(usize, f64)> = div_free.row(q).collect();
                    let w = rho / mean_weights[q];
                    for &(i, di) in &row {
                        for &(j, dj) in &row {
                            t.push(i, j, w * di * dj);
                        }
                    }
                }
                let aug = t.finalize();
                let llt = to_faer(free.len(), free.len(), &aug.to_triplets())?
                    .sp_cholesky(Side::Lower)
                    .map_err(|e| StokesError::solver(format!("Cholesky failed: {e:?}"), 0, f64::NAN))?;
                Backend::Compressibility { llt, rho }
            }
        };

        Ok(SaddleSystem {
            solver,
            scale,
            nu,
            np,
            free,
            dirichlet: space.dirichlet_dofs.clone(),
            div_free,
            div: div.clone(),
            lift_u,
            lift_p,
            mean_weights: mean_weights.to_vec(),
            backend,
        })
    }

    pub fn solver(&self) -> &SaddleSolver {
        &self.solver
    }

    fn remove_mean(&self, p: &mut [f64]) {
        let total: f64 = self.mean_weights.iter().sum();
        let mean = p.iter().zip(&self.mean_weights).map(|(a, w)| a * w).sum::<f64>() / total;
        p.iter_mut().for_each(|v| *v -= mean);
    }

    /// Solves for the velocity load `f` (full velocity length) with `D u = 0`.
    pub fn solve(&self, f: &[f64]) -> Result<SaddleSolution> {
        self.solve_constrained(f, &vec![0.0; self.np])
    }

    /// Solves with the constraint `D u = g`; `g` must be orthogonal to the
    /// constants when the Dirichlet data carry no net flux.
    pub fn solve_constrained(&self, f: &[f64], g: &[f64]) -> Result<SaddleSolution> {
        assert_eq!(f.len(), self.nu);
        assert_eq!(g.len(), self.np);
        let (mut u, mut p, iterations) = match &self.backend {
            Backend::Direct { factor, matrix } => self.solve_direct(factor, matrix, f, g)?,
            Backend::Uzawa { llt } => self.solve_uzawa(llt, f, g)?,
            Backend::Compressibility { llt, rho } => self.solve_compressibility(llt, *rho, f, g)?,
        };
        for &(d, v) in &self.dirichlet {
            u[d] = v;
        }
        self.remove_mean(&mut p);
        let divergence = norm_inf(&self.div.mul_vec(&u).iter().zip(g).map(|(a, b)| a - b).collect::<Vec<_>>());
        if !divergence.is_finite() || p.iter().any(|v| !v.is_finite()) {
            return Err(StokesError::solver("non-finite solution", iterations, divergence));
        }
        Ok(SaddleSolution {
            u,
            p,
            iterations,
            divergence,
        })
    }

    fn solve_direct(
        &self,
        factor: &QuasiDefiniteLdlt,
        matrix: &SparseOperator,
        f: &[f64],
        g: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let n = matrix.nrows;
        let nf = self.free.len();
        let (ff, c) = self.free_rhs(f, g);
        let mut b = vec![0.0; n];
        b[..nf].copy_from_slice(&ff);
        for q in 0..self.np {
            b[nf + q] = self.scale * c[q];
        }
        let bnorm = norm_inf(&b);
        if bnorm == 0.0 {
            return Ok((self.expand(&vec![0.0; nf]), vec![0.0; self.np], 0));
        }
        let mut sol = b.clone();
        factor.solve_in_place(&mut sol);

        let mut iterations = 1;
        let mut resid;
        loop {
            let ax = matrix.mul_vec(&sol);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            resid = norm_inf(&r) / bnorm;
            if resid <= self.solver.tolerance || iterations >= 8 {
                break;
            }
            let mut dx = r;
            factor.solve_in_place(&mut dx);
            for (s, d) in sol.iter_mut().zip(&dx) {
                *s += d;
            }
            iterations += 1;
        }
        if resid > self.solver.tolerance {
            return Err(StokesError::solver("direct solve residual above tolerance", iterations, resid));
        }
        let u = self.expand(&sol[..nf]);
        let p = sol[nf..nf + self.np].to_vec();
        Ok((u, p, iterations))
    }

    fn free_rhs(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ff: Vec<f64> = self.free.iter().map(|&d| f[d] - self.lift_u[d]).collect();
        let c: Vec<f64> = self.lift_p.iter().zip(g).map(|(l, gi)| gi - l).collect();
        (ff, c)
    }

    fn expand(&self, uf: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.nu];
        for (i, &d) in self.free.iter().enumerate() {
            u[d] = uf[i];
        }
        u
    }

    fn solve_uzawa(&self, llt: &Llt<usize, f64>, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (ff, c) = self.free_rhs(f, g);
        let s = self.scale;
        let apply_schur = |p: &[f64]| -> Vec<f64> {
            let y = llt_solve(llt, &self.div_free.mul_transpose_vec(p));
            self.div_free.mul_vec(&y)
        };
        let kinv_f = llt_solve(llt, &ff);
        let dk = self.div_free.mul_vec(&kinv_f);
        let b: Vec<f64> = dk.iter().zip(&c).map(|(a, ci)| (a - ci) / s).collect();
        let precond = |r: &[f64]| -> Vec<f64> {
            r.iter().zip(&self.mean_weights).map(|(ri, w)| ri / w).collect()
        };

        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut p = vec![0.0; self.np];
        let mut iterations = 0;
        if bnorm > 0.0 {
            let mut r = b.clone();
            let mut z = precond(&r);
            let mut d = z.clone();
            let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            loop {
                let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rn <= self.solver.tolerance * bnorm {
                    break;
                }
                if iterations >= self.solver.max_iterations {
                    return Err(StokesError::solver("Uzawa-CG did not converge", iterations, rn / bnorm));
                }
                let sd = apply_schur(&d);
                let dsd: f64 = d.iter().zip(&sd).map(|(a, b)| a * b).sum();
                let alpha = rz / dsd;
                for i in 0..self.np {
                    p[i] += alpha * d[i];
                    r[i] -= alpha * sd[i];
                }
                z = precond(&r);
                let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..self.np {
                    d[i] = z[i] + beta * d[i];
                }
                iterations += 1;
            }
        }
        self.remove_mean(&mut p);
        let dtp = self.div_free.mul_transpose_vec(&p);
        let rhs: Vec<f64> = ff.iter().zip(&dtp).map(|(a, b)| a - s * b).collect();
        let uf = llt_solve(llt, &rhs);
        Ok((self.expand(&uf), p, iterations))
    }

    fn solve_compressibility(
        &self,
        llt: &Llt<usize, f64>,
        rho: f64,
        f: &[f64],
        g: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (ff, c) = self.free_rhs(f, g);
        let s = self.scale;
        let r = rho / s;
        let wc: Vec<f64> = c.iter().zip(&self.mean_weights).map(|(ci, w)| rho * ci / w).collect();
        let lift = self.div_free.mul_transpose_vec(&wc);
        let dmax = self.div_free.max_abs();
        let mut p = vec![0.0; self.np];
        let mut iterations = 0;
        loop {
            let dtp = self.div_free.mul_transpose_vec(&p);
            let rhs: Vec<f64> = (0..ff.len()).map(|i| ff[i] - s * dtp[i] + lift[i]).collect();
            let uf = llt_solve(llt, &rhs);
            let du: Vec<f64> = self
                .div_free
                .mul_vec(&uf)
                .iter()
                .zip(&c)
                .map(|(a, b)| a - b)
                .collect();
            let mut dp_max: f64 = 0.0;
            for q in 0..self.np {
                let dp = r * du[q] / self.mean_weights[q];
                p[q] += dp;
                dp_max = dp_max.max(dp.abs());
            }
            self.remove_mean(&mut p);
            iterations += 1;
            let div_scale = (dmax * norm_inf(&uf)).max(f64::MIN_POSITIVE);
            let p_scale = norm_inf(&p).max(f64::MIN_POSITIVE);
            let div_rel = norm_inf(&du) / div_scale;
            if div_rel <= self.solver.tolerance && dp_max <= self.solver.tolerance * p_scale {
                // final velocity consistent with the converged pressure
                let dtp = self.div_free.mul_transpose_vec(&p);
                let rhs: Vec<f64> = (0..ff.len()).map(|i| ff[i] - s * dtp[i] + lift[i]).collect();
                return Ok((self.expand(&llt_solve(llt, &rhs)), p, iterations));
            }
            if iterations >= self.solver.max_iterations {
                return Err(StokesError::solver(
                    "artificial compressibility did not converge",
                    iterations,
                    div_rel,
                ));
            }
        }
    }
}

/// Sparse `L D L^T` of a symmetric quasi-definite matrix (AMD ordering).
struct QuasiDefiniteLdlt {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl QuasiDefiniteLdlt {
    fn new(n: usize, entries: &[(usize, usize, f64)], signs: &[i8]) -> Result<Self> {
        let a = to_faer(n, n, entries)?;
        let fail = |what: String| StokesError::solver(what, 0, f64::NAN);
        let symbolic = factorize_symbolic_cholesky(
            a.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| fail(format!("symbolic factorization failed: {e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                a.as_ref(),
                Side::Lower,
                LdltRegularization {
                    dynamic_regularization_signs: Some(signs),
                    dynamic_regularization_delta: 1e-12,
                    dynamic_regularization_epsilon: 1e-300,
                },
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| fail(format!("LDLT factorization failed: {e:?}")))?;
        Ok(QuasiDefiniteLdlt { symbolic, values })
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            x.as_mut(),
            Par::Seq,
            MemStack::new(&mut mem),
        );
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = x[(i, 0)];
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::assembly::{assemble_system, AssembledSystem};
    use crate::femspace::DirichletSpec;
    use crate::mesh::{Mesh, Rectangle};
    use crate::rng::CounterNormal;

    fn system(n: usize, dirichlet: DirichletSpec, mean: PressureMean) -> AssembledSystem {
        let mesh = Arc::new(Mesh::structured(Rectangle::unit_square(), n).unwrap());
        let space = Arc::new(TaylorHoodSpace::new(mesh, dirichlet).with_pressure_mean(mean));
        assemble_system(space, 1.0).unwrap()
    }

    fn normals(stream: u64, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        CounterNormal::new(11, stream).fill_normals(0, &mut v);
        v
    }

    fn step_system(sys: &AssembledSystem, k: f64, strategy: SaddleStrategy) -> SaddleSystem {
        let solver = SaddleSolver {
            strategy,
            ..SaddleSolver::default()
        };
        SaddleSystem::new(&sys.step_operator(k), &sys.div, k, &sys.space, &sys.mean_weights, solver).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn max_abs(a: &[f64]) -> f64 {
        a.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            SaddleStrategy::DirectSparse,
            SaddleStrategy::UzawaCg,
            SaddleStrategy::ArtificialCompressibility,
        ] {
            assert_eq!(SaddleStrategy::parse(s.name()), Some(s));
        }
        assert_eq!(SaddleStrategy::parse("gmres"), None);
    }

    #[test]
    fn strategies_agree_on_lid_problem() {
        let sys = system(4, DirichletSpec::lid([1.0, 0.0]), PressureMean::LagrangeMultiplier);
        let f = normals(1, sys.space.velocity_dim());
        let k = 0.01;
        let reference = step_system(&sys, k, SaddleStrategy::DirectSparse).solve(&f).unwrap();
        let tol = SaddleSolver::default().tolerance;
        for strategy in [SaddleStrategy::UzawaCg, SaddleStrategy::ArtificialCompressibility] {
            let s = step_system(&sys, k, strategy).solve(&f).unwrap();
            let du = max_diff(&s.u, &reference.u) / max_abs(&reference.u);
            let dp = max_diff(&s.p, &reference.p) / max_abs(&reference.p);
            assert!(du <= 10.0 * tol, "{}: velocity {du:e}", strategy.name());
            assert!(dp <= 10.0 * tol, "{}: pressure {dp:e}", strategy.name());
            assert!(s.divergence <= 1e-8, "{}: divergence {:e}", strategy.name(), s.divergence);
        }
    }

    #[test]
    fn mean_modes_agree() {
        let f = {
            let sys = system(3, DirichletSpec::no_slip(), PressureMean::LagrangeMultiplier);
            normals(2, sys.space.velocity_dim())
        };
        let solve = |mean| {
            let sys = system(3, DirichletSpec::no_slip(), mean);
            let s = step_system(&sys, 0.1, SaddleStrategy::DirectSparse).solve(&f).unwrap();
            assert!(sys.pressure_mean(&s.p).abs() < 1e-12);
            s
        };
        let a = solve(PressureMean::LagrangeMultiplier);
        let b = solve(PressureMean::PostSubtraction);
        assert!(max_diff(&a.u, &b.u) < 1e-10 * max_abs(&a.u));
        assert!(max_diff(&a.p, &b.p) < 1e-9 * max_abs(&a.p));
    }

    /// Dense bordered KKT system on the free velocity dofs, with the mean
    /// constraint as an extra multiplier row.
    #[test]
    fn direct_matches_dense_oracle() {
        let sys = system(2, DirichletSpec::no_slip(), PressureMean::LagrangeMultiplier);
        let (k, s) = (0.05, 0.05);
        let kmat = sys.step_operator(k);
        let space = &sys.space;
        let free: Vec<usize> = (0..space.velocity_dim()).filter(|&d| !space.is_dirichlet[d]).collect();
        let (nf, np) = (free.len(), space.pressure_dim());
        let n = nf + np + 1;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, &di) in free.iter().enumerate() {
            for (j, &dj) in free.iter().enumerate() {
                a[(i, j)] = kmat.get(di, dj);
            }
            for q in 0..np {
                let d = sys.div.get(q, di);
                a[(i, nf + q)] = s * d;
                a[(nf + q, i)] = d;
            }
        }
        for q in 0..np {
            a[(nf + q, n - 1)] = sys.mean_weights[q];
            a[(n - 1, nf + q)] = sys.mean_weights[q];
        }
        let f = normals(3, space.velocity_dim());
        let mut b = DVector::<f64>::zeros(n);
        for (i, &d) in free.iter().enumerate() {
            b[i] = f[d];
        }
        let x = a.lu().solve(&b).unwrap();
        let sol = step_system(&sys, k, SaddleStrategy::DirectSparse).solve(&f).unwrap();
        for (i, &d) in free.iter().enumerate() {
            assert!((sol.u[d] - x[i]).abs() < 1e-10, "u[{d}]");
        }
        for q in 0..np {
            assert!((sol.p[q] - x[nf + q]).abs() < 1e-8, "p[{q}]");
        }
    }

    #[test]
    fn constrained_solve_hits_prescribed_divergence() {
        let sys = system(3, DirichletSpec::no_slip(), PressureMean::LagrangeMultiplier);
        let np = sys.space.pressure_dim();
        let mut g = normals(4, np);
        let mean = g.iter().sum::<f64>() / np as f64;
        g.iter_mut().for_each(|v| *v -= mean);
        g.iter_mut().for_each(|v| *v *= 1e-2);
        let f = vec![0.0; sys.space.velocity_dim()];
        for strategy in [
            SaddleStrategy::DirectSparse,
            SaddleStrategy::UzawaCg,
            SaddleStrategy::ArtificialCompressibility,
        ] {
            let s = step_system(&sys, 1.0, strategy).solve_constrained(&f, &g).unwrap();
            assert!(s.divergence < 1e-9, "{}: {:e}", strategy.name(), s.divergence);
        }
    }

    #[test]
    fn lid_values_are_imposed() {
        let sys = system(4, DirichletSpec::lid([1.0, 0.0]), PressureMean::LagrangeMultiplier);
        let f = vec![0.0; sys.space.velocity_dim()];
        let s = step_system(&sys, 0.1, SaddleStrategy::DirectSparse).solve(&f).unwrap();
        let mut expected = vec![0.0; sys.space.velocity_dim()];
        sys.space.apply_dirichlet(&mut expected);
        for d in (0..expected.len()).filter(|&d| sys.space.is_dirichlet[d]) {
            assert_eq!(s.u[d], expected[d]);
        }
        assert!(max_abs(&s.u) > 0.5);
        assert!(s.divergence < 1e-10);
    }
}
