//! The fully discrete Euler–Maruyama step
//!
//! ```text
//! (u^{n+1}, v) + k nu a(u^{n+1}, v) + k b(v, p^{n+1})
//!     = (u^n, v) + int_{t_n}^{t_{n+1}} (f, v) + (B(u^n) dW_{n+1}, v)
//! b(u^{n+1}, q) = 0
//! ```
//!
//! and trajectories built from it.

use std::sync::Arc;

use crate::assembly::{AssembledSystem, Forcing};
use crate::error::{Result, StokesError};
use crate::saddle::{SaddleSolver, SaddleSystem};
use crate::stochastic::{assemble_stochastic_load, sample_increment, BrownianPath, NoiseKind, QWienerBasis};

/// Largest accepted `||D u^{n+1}||_inf` after a step.
pub const DIVERGENCE_LIMIT: f64 = 1e-8;

/// Everything that defines the equation on one mesh.
#[derive(Clone)]
pub struct Problem {
    pub system: Arc<AssembledSystem>,
    pub basis: Arc<QWienerBasis>,
    pub noise: NoiseKind,
    pub forcing: Forcing,
}

/// The factorized step matrix of one `(k, h)` level.
pub struct StepOperator {
    pub k: f64,
    saddle: SaddleSystem,
    force_load: Option<Vec<f64>>,
}

impl StepOperator {
    pub fn new(problem: &Problem, k: f64, solver: SaddleSolver) -> Result<Self> {
        if !(k > 0.0) {
            return Err(StokesError::config(format!("time step must be positive, got {k}")));
        }
        let sys = &problem.system;
        let saddle = SaddleSystem::new(&sys.step_operator(k), &sys.div, k, &sys.space, &sys.mean_weights, solver)?;
        let force_load = (!problem.forcing.is_time_dependent()).then(|| problem.forcing.step_load(&sys.space, 0.0, k));
        Ok(StepOperator { k, saddle, force_load })
    }

    pub fn solver(&self) -> &SaddleSolver {
        self.saddle.solver()
    }
}

#[derive(Debug, Clone)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    pub k: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// `k sum_{m <= n} p^m`
    pub p_timeavg: Vec<f64>,
    /// `||D u^n||_inf`
    pub divergence: f64,
}

impl SchemeState {
    pub fn initial(u0: Vec<f64>, pressure_dim: usize, k: f64) -> Self {
        SchemeState {
            n: 0,
            t: 0.0,
            k,
            u: u0,
            p: vec![0.0; pressure_dim],
            p_timeavg: vec![0.0; pressure_dim],
            divergence: 0.0,
        }
    }
}

/// Advances `state` by one step of size `op.k`, driven by `path`.
pub fn em_step(state: &SchemeState, problem: &Problem, op: &StepOperator, path: &BrownianPath) -> Result<SchemeState> {
    let sys = &problem.system;
    let k = op.k;
    let t_next = (state.n + 1) as f64 * k;
    let mut rhs = sys.mass.mul_vec(&state.u);
    match &op.force_load {
        Some(load) => rhs.iter_mut().zip(load).for_each(|(r, l)| *r += l),
        None => {
            let load = problem.forcing.step_load(&sys.space, state.t, k);
            rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
        }
    }
    if problem.noise != NoiseKind::Zero {
        let inc = sample_increment(path, &problem.basis, state.t, t_next)?;
        let load = assemble_stochastic_load(sys, &problem.basis, problem.noise, &state.u, &inc);
        rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
    }
    let sol = op.saddle.solve(&rhs)?;
    if !(sol.divergence <= DIVERGENCE_LIMIT) {
        return Err(StokesError::Invariant(format!(
            "step {} at k = {k}: ||D u||_inf = {:.3e} exceeds {DIVERGENCE_LIMIT:e}",
            state.n + 1,
            sol.divergence
        )));
    }
    let mut p_timeavg = state.p_timeavg.clone();
    p_timeavg.iter_mut().zip(&sol.p).for_each(|(a, p)| *a += k * p);
    Ok(SchemeState {
        n: state.n + 1,
        t: t_next,
        k,
        u: sol.u,
        p: sol.p,
        p_timeavg,
        divergence: sol.divergence,
    })
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<SchemeState>,
    pub final_state: SchemeState,
    /// Largest `||D u^n||_inf` over all steps.
    pub max_divergence: f64,
    /// `max_n ||u^n||^2 + nu k sum_n |u^n|_{H1}^2`
    pub energy: f64,
}

/// Runs `N = T / k` steps from `u0`, recording states at `snapshot_times`.
pub fn run_trajectory(
    problem: &Problem,
    op: &StepOperator,
    u0: &[f64],
    path: &BrownianPath,
    final_time: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    let k = op.k;
    let steps = steps_for(final_time, k)?;
    let ratio = steps_for(k, path.fine_step)
        .map_err(|_| StokesError::config(format!("time step {k} is not a multiple of the path step {}", path.fine_step)))?;
    if steps * ratio > path.n_steps {
        return Err(StokesError::config(format!(
            "path covers {} but the trajectory needs {final_time}",
            path.final_time()
        )));
    }
    let mut wanted = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        wanted.push(steps_for(t, k).map_err(|_| StokesError::config(format!("snapshot time {t} is off the k = {k} grid")))?);
    }

    let sys = &problem.system;
    let mut state = SchemeState::initial(u0.to_vec(), sys.space.pressure_dim(), k);
    let mut snapshots = Vec::new();
    if wanted.contains(&0) {
        snapshots.push(state.clone());
    }
    let mut max_l2 = sys.l2_norm_sq(&state.u);
    let mut grad_sum = 0.0;
    let mut max_divergence: f64 = 0.0;
    for _ in 0..steps {
        state = em_step(&state, problem, op, path)?;
        max_divergence = max_divergence.max(state.divergence);
        max_l2 = max_l2.max(sys.l2_norm_sq(&state.u));
        grad_sum += sys.h1_seminorm_sq(&state.u);
        if wanted.contains(&state.n) {
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory {
        snapshots,
        final_state: state,
        max_divergence,
        energy: max_l2 + sys.nu * k * grad_sum,
    })
}

/// `T / k` as an integer, rejecting non-integral ratios.
pub fn steps_for(final_time: f64, k: f64) -> Result<usize> {
    let x = final_time / k;
    let r = x.round();
    if r < 0.0 || (x - r).abs() > 1e-9 * r.max(1.0) {
        return Err(StokesError::config(format!("{final_time} is not an integer multiple of {k}")));
    }
    Ok(r as usize)
}
