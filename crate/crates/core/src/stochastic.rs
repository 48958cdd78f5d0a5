//! Truncated Q-Wiener noise: eigenpairs, Brownian paths and the noise load.
//!
//! The noise is `W(t) = sum_m sqrt(lambda_m) q_m beta_m(t)` over modes
//! `m = (j, k)`, `1 <= j, k <= M`, with independent scalar Brownian motions
//! `beta_m`. Paths store the Brownian increments of every fine step in a
//! binary tree of partial sums: an increment over a dyadic-aligned block is
//! the stored sum of its two halves, so coarse and fine time steps see
//! bit-identical Brownian values at shared grid times.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assembly::AssembledSystem;
use crate::error::{Result, StokesError};
use crate::femspace::{p2_values, TaylorHoodSpace};
use crate::quadrature::QuadratureRule;
use crate::rng::CounterNormal;

/// The Test-1 field `g_{j,k}` with amplitude `c`.
pub fn g_field(j: usize, k: usize, c: f64, p: [f64; 2]) -> [f64; 2] {
    let (x, y) = (p[0], p[1]);
    let (jf, kf) = (j as f64 * PI, k as f64 * PI);
    [
        c * ((jf * x).sin() + (jf * x).powi(3)) * (-kf * y).exp(),
        c * ((jf * y).cos() + (jf * y).powi(3)) * (-kf * x).exp(),
    ]
}

/// `||g_{j,k}||_{L2}` by degree-4 quadrature of the exact field on the mesh.
pub fn g_norm_by_quadrature(space: &TaylorHoodSpace, j: usize, k: usize, c: f64) -> f64 {
    let rule = QuadratureRule::degree4();
    let mut acc = 0.0;
    for t in 0..space.mesh.n_triangles() {
        let geom = space.geometry(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let g = g_field(j, k, c, geom.point(l));
            acc += w * 2.0 * geom.area * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    acc.sqrt()
}

/// How the covariance eigenvalues follow from `||g_{j,k}||`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenvalueRule {
    /// `lambda_{j,k} = ||g_{j,k}|| / (j + k)^2`
    #[serde(rename = "norm_over_square")]
    NormOverSquare,
    /// `lambda_{j,k} = 1 / ((j + k)^2 ||g_{j,k}||)`
    #[serde(rename = "inverse_norm")]
    InverseNorm,
}

impl EigenvalueRule {
    pub fn name(self) -> &'static str {
        match self {
            EigenvalueRule::NormOverSquare => "norm_over_square",
            EigenvalueRule::InverseNorm => "inverse_norm",
        }
    }

    pub fn eigenvalue(self, j: usize, k: usize, g_norm: f64) -> f64 {
        let w = ((j + k) * (j + k)) as f64;
        match self {
            EigenvalueRule::NormOverSquare => g_norm / w,
            EigenvalueRule::InverseNorm if g_norm > 0.0 => 1.0 / (w * g_norm),
            EigenvalueRule::InverseNorm => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QWienerBasis {
    pub truncation: usize,
    pub amplitude: f64,
    /// `(j, k)` per mode, row-major in `j`.
    pub modes: Vec<(usize, usize)>,
    pub lambdas: Vec<f64>,
    /// Velocity coefficients of each normalized basis field `q_m`.
    pub fields: Vec<Vec<f64>>,
}

impl QWienerBasis {
    /// Modes `1 <= j, k <= truncation` with `q_{j,k} = I_h g / ||I_h g||`.
    pub fn build(
        space: &TaylorHoodSpace,
        system: &AssembledSystem,
        truncation: usize,
        c: f64,
        rule: EigenvalueRule,
    ) -> Result<Self> {
        if truncation == 0 {
            return Err(StokesError::config("noise truncation must be >= 1"));
        }
        let mut modes = Vec::with_capacity(truncation * truncation);
        let mut lambdas = Vec::with_capacity(truncation * truncation);
        let mut fields = Vec::with_capacity(truncation * truncation);
        for j in 1..=truncation {
            for k in 1..=truncation {
                modes.push((j, k));
                let gnorm = g_norm_by_quadrature(space, j, k, c);
                lambdas.push(rule.eigenvalue(j, k, gnorm));
                let mut q = space.interpolate(|p| g_field(j, k, c, p));
                let qn = system.l2_norm_sq(&q).sqrt();
                if qn > 0.0 {
                    q.iter_mut().for_each(|v| *v /= qn);
                }
                fields.push(q);
            }
        }
        Ok(QWienerBasis {
            truncation,
            amplitude: c,
            modes,
            lambdas,
            fields,
        })
    }

    /// A basis from explicit eigenpairs (fields are used as given).
    pub fn from_modes(lambdas: Vec<f64>, fields: Vec<Vec<f64>>) -> Self {
        assert_eq!(lambdas.len(), fields.len());
        let modes = (1..=lambdas.len()).map(|m| (m, 1)).collect();
        QWienerBasis {
            truncation: lambdas.len(),
            amplitude: 1.0,
            modes,
            lambdas,
            fields,
        }
    }

    /// Replaces the eigenvalues, e.g. to share one covariance across meshes.
    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Self {
        assert_eq!(lambdas.len(), self.lambdas.len());
        self.lambdas = lambdas;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// `sum_m lambda_m`, the trace of the truncated covariance.
    pub fn trace(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    /// Velocity coefficients of `sum_m increment_m q_m`.
    pub fn combine(&self, increment: &[f64]) -> Vec<f64> {
        let n = self.fields.first().map_or(0, Vec::len);
        let mut w = vec![0.0; n];
        for (q, &a) in self.fields.iter().zip(increment) {
            if a != 0.0 {
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi += a * qi;
                }
            }
        }
        w
    }

    /// Gram matrix `(q_m, q_n)` (row-major).
    pub fn gram(&self, system: &AssembledSystem) -> Vec<f64> {
        let n = self.n_modes();
        let mq: Vec<Vec<f64>> = self.fields.iter().map(|q| system.mass.mul_vec(q)).collect();
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                g[a * n + b] = crate::sparse::dot(&self.fields[a], &mq[b]);
            }
        }
        g
    }
}

/// Identifies the random stream of one Monte Carlo realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub seed: u64,
    pub realization: u64,
}

/// Brownian increments of every mode on a uniform fine grid.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub stream: StreamId,
    pub fine_step: f64,
    pub n_steps: usize,
    pub n_modes: usize,
    /// `levels[l][b * n_modes + m]`: increment of mode `m` over fine steps
    /// `[b 2^l, (b + 1) 2^l)`.
    levels: Vec<Vec<f64>>,
}

impl BrownianPath {
    /// Draw `(step, mode)` is counter index `step * n_modes + mode` of the
    /// realization's stream.
    pub fn generate(stream: StreamId, fine_step: f64, n_steps: usize, n_modes: usize) -> Self {
        let mut draws = vec![0.0; n_steps * n_modes];
        CounterNormal::new(stream.seed, stream.realization).fill_normals(0, &mut draws);
        Self::from_draws(stream, fine_step, n_steps, n_modes, draws)
    }

    /// Builds a path from standard normal draws laid out step-major.
    pub fn from_draws(stream: StreamId, fine_step: f64, n_steps: usize, n_modes: usize, mut draws: Vec<f64>) -> Self {
        assert_eq!(draws.len(), n_steps * n_modes);
        let scale = fine_step.sqrt();
        draws.iter_mut().for_each(|v| *v *= scale);
        let mut levels = vec![draws];
        loop {
            let prev = levels.last().unwrap();
            let blocks = prev.len() / n_modes.max(1) / 2;
            if blocks == 0 || n_modes == 0 {
                break;
            }
            let mut next = vec![0.0; blocks * n_modes];
            for b in 0..blocks {
                for m in 0..n_modes {
                    next[b * n_modes + m] = prev[2 * b * n_modes + m] + prev[(2 * b + 1) * n_modes + m];
                }
            }
            levels.push(next);
        }
        BrownianPath {
            stream,
            fine_step,
            n_steps,
            n_modes,
            levels,
        }
    }

    pub fn final_time(&self) -> f64 {
        self.n_steps as f64 * self.fine_step
    }

    /// Converts a time to a fine-grid index, rejecting off-grid times.
    pub fn grid_index(&self, t: f64) -> Option<usize> {
        let x = t / self.fine_step;
        let r = x.round();
        ((x - r).abs() <= 1e-9 * x.abs().max(1.0) && r >= 0.0).then_some(r as usize)
    }

    /// Brownian increments `beta_m(t_b) - beta_m(t_a)` for fine steps `[a, b)`.
    pub fn beta_increment_steps(&self, a: usize, b: usize) -> Vec<f64> {
        assert!(a <= b && b <= self.n_steps);
        let nm = self.n_modes;
        let mut out = vec![0.0; nm];
        let mut first = true;
        let mut pos = a;
        while pos < b {
            // largest aligned dyadic block starting at `pos` inside [pos, b)
            let mut level = 0;
            while level + 1 < self.levels.len() {
                let size = 1usize << (level + 1);
                if pos % size == 0 && pos + size <= b {
                    level += 1;
                } else {
                    break;
                }
            }
            let block = pos >> level;
            let src = &self.levels[level][block * nm..(block + 1) * nm];
            if first {
                out.copy_from_slice(src);
                first = false;
            } else {
                for (o, s) in out.iter_mut().zip(src) {
                    *o += s;
                }
            }
            pos += 1 << level;
        }
        out
    }

    pub fn beta_increment(&self, t_a: f64, t_b: f64) -> Result<Vec<f64>> {
        let (a, b) = self.aligned(t_a, t_b)?;
        Ok(self.beta_increment_steps(a, b))
    }

    fn aligned(&self, t_a: f64, t_b: f64) -> Result<(usize, usize)> {
        let err = || StokesError::Alignment {
            t_a,
            t_b,
            fine_step: self.fine_step,
        };
        let a = self.grid_index(t_a).ok_or_else(err)?;
        let b = self.grid_index(t_b).ok_or_else(err)?;
        if b <= a || b > self.n_steps {
            return Err(err());
        }
        Ok((a, b))
    }

    /// The same path with every draw after fine step `from` replaced.
    pub fn with_tail_replaced(&self, from: usize, seed: u64) -> Self {
        let nm = self.n_modes;
        let mut draws: Vec<f64> = self.levels[0].iter().map(|v| v / self.fine_step.sqrt()).collect();
        let mut alt = CounterNormal::new(seed ^ 0x5eed, self.stream.realization);
        alt.fill_normals(0, &mut draws[from * nm..]);
        Self::from_draws(self.stream, self.fine_step, self.n_steps, nm, draws)
    }

    /// The same path with every increment multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for level in &mut out.levels {
            level.iter_mut().for_each(|v| *v *= factor);
        }
        out
    }
}

/// Per-mode noise increments `sqrt(lambda_m) (beta_m(t_b) - beta_m(t_a))`.
pub fn sample_increment(path: &BrownianPath, basis: &QWienerBasis, t_a: f64, t_b: f64) -> Result<Vec<f64>> {
    let (a, b) = path.aligned(t_a, t_b)?;
    Ok(scale_increment(basis, path.beta_increment_steps(a, b)))
}

pub(crate) fn scale_increment(basis: &QWienerBasis, mut beta: Vec<f64>) -> Vec<f64> {
    assert_eq!(beta.len(), basis.n_modes());
    for (b, l) in beta.iter_mut().zip(&basis.lambdas) {
        *b *= l.sqrt();
    }
    beta
}

/// Diffusion coefficient `B(u)`, acting componentwise on the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "zero")]
    Zero,
    #[serde(rename = "additive_one")]
    AdditiveOne,
    #[serde(rename = "sqrt_u2_plus_1")]
    SqrtU2Plus1,
    #[serde(rename = "linear_u")]
    LinearU,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Zero => "zero",
            NoiseKind::AdditiveOne => "additive_one",
            NoiseKind::SqrtU2Plus1 => "sqrt_u2_plus_1",
            NoiseKind::LinearU => "linear_u",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(NoiseKind::Zero),
            "additive_one" => Some(NoiseKind::AdditiveOne),
            "sqrt_u2_plus_1" => Some(NoiseKind::SqrtU2Plus1),
            "linear_u" => Some(NoiseKind::LinearU),
            _ => None,
        }
    }

    /// Lipschitz constant of `u -> B(u)` (componentwise).
    pub fn lipschitz_constant(self) -> f64 {
        match self {
            NoiseKind::Zero | NoiseKind::AdditiveOne => 0.0,
            NoiseKind::SqrtU2Plus1 | NoiseKind::LinearU => 1.0,
        }
    }

    /// Constant `C` in `|B(u)| <= C (1 + |u|)`.
    pub fn growth_constant(self) -> f64 {
        match self {
            NoiseKind::Zero => 0.0,
            _ => 1.0,
        }
    }

    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            NoiseKind::Zero => 0.0,
            NoiseKind::AdditiveOne => 1.0,
            NoiseKind::SqrtU2Plus1 => (u * u + 1.0).sqrt(),
            NoiseKind::LinearU => u,
        }
    }
}

/// `(B(u_h) sum_m increment_m q_m, v_h)` for every velocity basis function.
pub fn assemble_stochastic_load(
    system: &AssembledSystem,
    basis: &QWienerBasis,
    noise: NoiseKind,
    u: &[f64],
    increment: &[f64],
) -> Vec<f64> {
    let space = &*system.space;
    let n = space.velocity_dim();
    match noise {
        NoiseKind::Zero => return vec![0.0; n],
        NoiseKind::AdditiveOne => return system.mass.mul_vec(&basis.combine(increment)),
        _ => {}
    }
    let w = basis.combine(increment);
    let rule = QuadratureRule::degree4();
    let table: Vec<[f64; 6]> = rule.points.iter().map(p2_values).collect();
    let ns = space.n_scalar();
    let mut load = vec![0.0; n];
    for t in 0..space.mesh.n_triangles() {
        let jac = 2.0 * space.mesh.signed_area(t);
        let sd = &space.scalar_dofs[t];
        for (phi, wq) in table.iter().zip(&rule.weights) {
            let mut uh = [0.0; 2];
            let mut wh = [0.0; 2];
            for i in 0..6 {
                uh[0] += phi[i] * u[sd[i]];
                uh[1] += phi[i] * u[ns + sd[i]];
                wh[0] += phi[i] * w[sd[i]];
                wh[1] += phi[i] * w[ns + sd[i]];
            }
            let s0 = wq * jac * noise.apply(uh[0]) * wh[0];
            let s1 = wq * jac * noise.apply(uh[1]) * wh[1];
            for i in 0..6 {
                load[sd[i]] += s0 * phi[i];
                load[ns + sd[i]] += s1 * phi[i];
            }
        }
    }
    load
}

#[derive(Debug, Clone, Copy)]
pub struct IsometryReport {
    pub n_samples: usize,
    pub sample_mean: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub z_score: f64,
}

/// Monte Carlo check of `E ||int_0^T dW||^2 = T sum_m lambda_m ||q_m||^2`.
pub fn ito_isometry_check(
    basis: &QWienerBasis,
    system: &AssembledSystem,
    final_time: f64,
    fine_steps: usize,
    n_samples: usize,
    seed: u64,
) -> IsometryReport {
    let n = basis.n_modes();
    let gram = basis.gram(system);
    let fine = final_time / fine_steps as f64;
    let analytic = final_time
        * basis
            .lambdas
            .iter()
            .enumerate()
            .map(|(m, l)| l * gram[m * n + m])
            .sum::<f64>();
    let samples: Vec<f64> = (0..n_samples)
        .map(|s| {
            let path = BrownianPath::generate(
                StreamId {
                    seed,
                    realization: s as u64,
                },
                fine,
                fine_steps,
                n,
            );
            let inc = scale_increment(basis, path.beta_increment_steps(0, fine_steps));
            let mut acc = 0.0;
            for a in 0..n {
                let row: f64 = (0..n).map(|b| gram[a * n + b] * inc[b]).sum();
                acc += inc[a] * row;
            }
            acc
        })
        .collect();
    let ns = n_samples as f64;
    let mean = samples.iter().sum::<f64>() / ns;
    let var = if n_samples > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ns - 1.0)
    } else {
        0.0
    };
    let std_error = (var / ns).sqrt();
    let z_score = if std_error > 0.0 {
        (mean - analytic) / std_error
    } else if mean == analytic {
        0.0
    } else {
        f64::INFINITY
    };
    IsometryReport {
        n_samples,
        sample_mean: mean,
        analytic,
        std_error,
        z_score,
    }
}
