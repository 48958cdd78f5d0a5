//! Monte Carlo error studies on coupled Brownian paths, stability checks and
//! the discrete inf-sup estimator.
//!
//! Every study compares trajectories at several `(k, h)` levels against a
//! reference level driven by the same Brownian path. Coarse-mesh solutions are
//! transferred into the reference space (the meshes are nested, so the
//! transfer is exact) and all norms are evaluated there.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assembly::{assemble_system, velocity_l2_error, AssembledSystem, Forcing};
use crate::config::{ExperimentConfig, InitialCondition};
use crate::error::{Result, StokesError};
use crate::femspace::{DirichletSpec, TaylorHoodSpace, Transfer};
use crate::mesh::{Mesh, Rectangle};
use crate::quadrature::QuadratureRule;
use crate::saddle::{SaddleSolver, SaddleSystem};
use crate::stepper::{em_step, run_trajectory, steps_for, Problem, SchemeState, StepOperator};
use crate::stochastic::{ito_isometry_check, BrownianPath, IsometryReport, NoiseKind, QWienerBasis, StreamId};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// One `(k, h = 1 / cells)` discretization level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub k: f64,
    pub cells: usize,
}

impl Level {
    pub fn new(k: f64, cells: usize) -> Self {
        Level { k, cells }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }
}

/// Mesh, space, operators and noise basis on one mesh.
pub struct Discretization {
    pub space: Arc<TaylorHoodSpace>,
    pub problem: Problem,
}

impl Discretization {
    pub fn system(&self) -> &AssembledSystem {
        &self.problem.system
    }

    pub fn initial_velocity(&self, initial: InitialCondition) -> Vec<f64> {
        match initial {
            InitialCondition::Zero => vec![0.0; self.space.velocity_dim()],
        }
    }
}

/// Builds the discretization of `cfg` with `cells` cells per unit length.
/// `lambdas` overrides the covariance eigenvalues computed on this mesh.
pub fn discretize(cfg: &ExperimentConfig, cells: usize, lambdas: Option<&[f64]>) -> Result<Discretization> {
    let mesh = Arc::new(Mesh::structured(cfg.problem.rectangle(), cells)?);
    let space = Arc::new(TaylorHoodSpace::new(mesh, cfg.problem.dirichlet()).with_pressure_mean(cfg.solver.pressure_mean));
    let system = Arc::new(assemble_system(space.clone(), cfg.problem.nu)?);
    let n = &cfg.noise;
    let mut basis = QWienerBasis::build(&space, &system, n.truncation, n.amplitude, n.eigenvalues)?;
    if let Some(l) = lambdas {
        basis = basis.with_lambdas(l.to_vec());
    }
    let forcing = match cfg.problem.force {
        [0.0, 0.0] => Forcing::Zero,
        f => Forcing::Constant(f),
    };
    Ok(Discretization {
        space,
        problem: Problem {
            system,
            basis: Arc::new(basis),
            noise: n.kind,
            forcing,
        },
    })
}

/// Running sums of a non-negative sample, here a squared error norm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: usize,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// `sqrt(mean)`, the Monte Carlo estimate of the root-mean-square error.
    pub fn root_mean(&self) -> f64 {
        self.mean().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    /// 95% interval for [`Self::root_mean`]: normal approximation on the
    /// mean, delta method for the square root.
    pub fn confidence_interval(&self) -> (f64, f64) {
        let r = self.root_mean();
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let half = Z95 * self.std_error() / (2.0 * r);
        ((r - half).max(0.0), r + half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Statistic {
    /// Final-time velocity, L2 norm.
    AU,
    /// Final-time velocity, H1 seminorm.
    BU,
    /// Time-averaged pressure `k sum_n p^n`, L2 norm.
    AP,
    /// Final-time pressure, L2 norm.
    BP,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [Statistic::AU, Statistic::BU, Statistic::AP, Statistic::BP];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::AU => "AU",
            Statistic::BU => "BU",
            Statistic::AP => "AP",
            Statistic::BP => "BP",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: Level,
    /// Largest element diameter of the level's mesh.
    pub h_diameter: f64,
    pub accumulators: [Accumulator; 4],
}

impl LevelStats {
    pub fn get(&self, s: Statistic) -> &Accumulator {
        &self.accumulators[s.index()]
    }

    pub fn estimate(&self, s: Statistic) -> f64 {
        self.get(s).root_mean()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub study: String,
    pub seed: u64,
    pub n_p: usize,
    pub reference: Level,
    pub levels: Vec<LevelStats>,
    /// Largest `||D u^n||_inf` seen in any step of any trajectory.
    pub max_divergence: f64,
}

impl ErrorStats {
    /// Error of `s` against `k` for every level.
    pub fn series(&self, s: Statistic) -> Vec<(f64, f64)> {
        self.levels.iter().map(|l| (l.level.k, l.estimate(s))).collect()
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub statistic: String,
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square of the log-space residuals.
    pub residual: f64,
}

impl RateReport {
    pub fn fit(statistic: &str, points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 3 {
            return Err(StokesError::config(format!(
                "a rate for {statistic} needs at least 3 levels, got {}",
                points.len()
            )));
        }
        if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && y.is_finite())) {
            return Err(StokesError::config(format!(
                "cannot fit a rate for {statistic} through the non-positive point ({x}, {y})"
            )));
        }
        let n = points.len() as f64;
        let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx == 0.0 {
            return Err(StokesError::config(format!("levels for {statistic} share a single abscissa")));
        }
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        Ok(RateReport {
            statistic: statistic.to_string(),
            points: points.to_vec(),
            slope,
            intercept,
            residual: (ss / n).sqrt(),
        })
    }
}

/// Whether the error grew between the last two levels (by decreasing `k`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailDiagnostic {
    pub au_increasing: bool,
    pub ap_increasing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub stats: ErrorStats,
    pub rates: Vec<RateReport>,
    pub tail: Option<TailDiagnostic>,
}

impl StudyReport {
    pub fn rate(&self, s: Statistic) -> Option<&RateReport> {
        self.rates.iter().find(|r| r.statistic == s.name())
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| StokesError::config(format!("cannot build a pool of {threads} threads: {e}")))
}

/// Runs `work` for realizations `0..n_p` on `threads` threads (0 = all
/// cores) and hands the results to `sink` in realization order.
fn for_each_realization<T: Send>(
    n_p: usize,
    threads: usize,
    work: impl Fn(u64) -> Result<T> + Sync,
    mut sink: impl FnMut(u64, T) -> Result<()>,
) -> Result<()> {
    const CHUNK: usize = 256;
    let pool = thread_pool(threads)?;
    let mut start = 0;
    while start < n_p {
        let end = (start + CHUNK).min(n_p);
        let chunk: Vec<T> = pool.install(|| (start..end).into_par_iter().map(|r| work(r as u64)).collect::<Result<_>>())?;
        for (i, item) in chunk.into_iter().enumerate() {
            sink((start + i) as u64, item)?;
        }
        start = end;
    }
    Ok(())
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn misaligned(what: &str, k: f64, base: f64) -> StokesError {
    StokesError::config(format!("{what} step {k} is not an integer multiple of the reference step {base}"))
}

/// Coupled Monte Carlo comparison of `levels` against `reference`.
pub fn run_coupled_study(
    cfg: &ExperimentConfig,
    study: &str,
    levels: &[Level],
    reference: Level,
    threads: usize,
) -> Result<ErrorStats> {
    let t_final = cfg.problem.final_time;
    let n_fine = steps_for(t_final, reference.k)?;
    for l in levels {
        steps_for(l.k, reference.k).map_err(|_| misaligned("level", l.k, reference.k))?;
        steps_for(t_final, l.k)?;
        if reference.cells % l.cells != 0 {
            return Err(StokesError::config(format!(
                "mesh 1/{} is not nested in the reference mesh 1/{}",
                l.cells, reference.cells
            )));
        }
    }

    let ref_disc = discretize(cfg, reference.cells, None)?;
    let lambdas = ref_disc.problem.basis.lambdas.clone();
    let mut discs: BTreeMap<usize, Discretization> = BTreeMap::new();
    let mut transfers: BTreeMap<usize, Transfer> = BTreeMap::new();
    for l in levels {
        if l.cells != reference.cells && !discs.contains_key(&l.cells) {
            let d = discretize(cfg, l.cells, Some(&lambdas))?;
            transfers.insert(l.cells, Transfer::new(&d.space, &ref_disc.space));
            discs.insert(l.cells, d);
        }
    }
    let disc_of = |cells: usize| discs.get(&cells).unwrap_or(&ref_disc);

    let solver = cfg.solver.saddle();
    let ref_op = StepOperator::new(&ref_disc.problem, reference.k, solver)?;
    let ops = levels
        .iter()
        .map(|l| StepOperator::new(&disc_of(l.cells).problem, l.k, solver))
        .collect::<Result<Vec<_>>>()?;
    let u0: BTreeMap<usize, Vec<f64>> = std::iter::once(reference.cells)
        .chain(levels.iter().map(|l| l.cells))
        .map(|c| (c, disc_of(c).initial_velocity(cfg.problem.initial)))
        .collect();

    let ref_sys = ref_disc.system();
    let n_modes = ref_disc.problem.basis.n_modes();
    let seed = cfg.monte_carlo.seed;

    let realization = |r: u64| -> Result<(Vec<[f64; 4]>, f64)> {
        let stream = StreamId { seed, realization: r };
        let path = BrownianPath::generate(stream, reference.k, n_fine, n_modes);
        let reference_run = run_trajectory(&ref_disc.problem, &ref_op, &u0[&reference.cells], &path, t_final, &[])?;
        let rs = &reference_run.final_state;
        let mut max_div = reference_run.max_divergence;
        let mut errors = Vec::with_capacity(levels.len());
        for (l, op) in levels.iter().zip(&ops) {
            if *l == reference {
                errors.push([0.0; 4]);
                continue;
            }
            let run = run_trajectory(&disc_of(l.cells).problem, op, &u0[&l.cells], &path, t_final, &[])?;
            max_div = max_div.max(run.max_divergence);
            let s = run.final_state;
            let (u, p, pa) = match transfers.get(&l.cells) {
                Some(tr) => (tr.velocity(&s.u), tr.pressure(&s.p), tr.pressure(&s.p_timeavg)),
                None => (s.u, s.p, s.p_timeavg),
            };
            let du = diff(&rs.u, &u);
            errors.push([
                ref_sys.l2_norm_sq(&du),
                ref_sys.h1_seminorm_sq(&du),
                ref_sys.pressure_l2_norm_sq(&diff(&rs.p_timeavg, &pa)),
                ref_sys.pressure_l2_norm_sq(&diff(&rs.p, &p)),
            ]);
        }
        Ok((errors, max_div))
    };

    let mut stats: Vec<LevelStats> = levels
        .iter()
        .map(|l| LevelStats {
            level: *l,
            h_diameter: disc_of(l.cells).space.mesh.h,
            accumulators: [Accumulator::default(); 4],
        })
        .collect();
    let mut max_divergence: f64 = 0.0;
    let n_p = cfg.monte_carlo.n_p;
    for_each_realization(n_p, threads, realization, |_, (errors, div)| {
        max_divergence = max_divergence.max(div);
        for (ls, e) in stats.iter_mut().zip(errors) {
            for (acc, v) in ls.accumulators.iter_mut().zip(e) {
                acc.push(v);
            }
        }
        Ok(())
    })?;
    if let Some(ls) = stats.iter().find(|ls| ls.accumulators.iter().any(|a| a.count != n_p)) {
        return Err(StokesError::Invariant(format!(
            "level k = {} collected {} of {n_p} realizations",
            ls.level.k, ls.accumulators[0].count
        )));
    }
    Ok(ErrorStats {
        study: study.to_string(),
        seed,
        n_p,
        reference,
        levels: stats,
        max_divergence,
    })
}

fn fit_rates(stats: &ErrorStats) -> Vec<RateReport> {
    if stats.levels.len() < 3 {
        return Vec::new();
    }
    Statistic::ALL
        .iter()
        .filter_map(|&s| RateReport::fit(s.name(), &stats.series(s)).ok())
        .collect()
}

fn missing(section: &str) -> StokesError {
    StokesError::config(format!("the configuration has no [levels.{section}] section"))
}

/// Fixed mesh, errors of each `k` against the finest step `k0`.
pub fn run_temporal_study(cfg: &ExperimentConfig, threads: usize) -> Result<StudyReport> {
    let c = cfg.levels.temporal.as_ref().ok_or_else(|| missing("temporal"))?;
    let levels: Vec<Level> = c.k.iter().map(|&k| Level::new(k, c.cells_per_unit)).collect();
    let stats = run_coupled_study(cfg, "temporal", &levels, Level::new(c.k0, c.cells_per_unit), threads)?;
    Ok(StudyReport {
        rates: fit_rates(&stats),
        stats,
        tail: None,
    })
}

/// `k ~ h` pairs against a finer reference pair.
pub fn run_balanced_study(cfg: &ExperimentConfig, threads: usize) -> Result<StudyReport> {
    let c = cfg.levels.balanced.as_ref().ok_or_else(|| missing("balanced"))?;
    let levels: Vec<Level> = c.pairs.iter().map(|&(k, n)| Level::new(k, n)).collect();
    let stats = run_coupled_study(cfg, "balanced", &levels, Level::new(c.reference.0, c.reference.1), threads)?;
    Ok(StudyReport {
        rates: fit_rates(&stats),
        stats,
        tail: None,
    })
}

/// Coarse fixed mesh, decreasing `k`, against a fine reference.
pub fn run_fixed_h_study(cfg: &ExperimentConfig, threads: usize) -> Result<StudyReport> {
    let c = cfg.levels.fixed_h.as_ref().ok_or_else(|| missing("fixed_h"))?;
    let mut ks = c.k.clone();
    ks.sort_by(|a, b| b.total_cmp(a));
    let levels: Vec<Level> = ks.iter().map(|&k| Level::new(k, c.cells_per_unit)).collect();
    let stats = run_coupled_study(cfg, "fixed_h", &levels, Level::new(c.reference.0, c.reference.1), threads)?;
    let tail = match stats.levels.as_slice() {
        [.., a, b] => Some(TailDiagnostic {
            au_increasing: b.estimate(Statistic::AU) >= a.estimate(Statistic::AU),
            ap_increasing: b.estimate(Statistic::AP) >= a.estimate(Statistic::AP),
        }),
        _ => None,
    };
    Ok(StudyReport {
        rates: Vec::new(),
        stats,
        tail,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub coarse: Level,
    pub fine: Level,
    pub n_p: usize,
    /// Mean of `max_n ||u^n||^2 + nu k sum_n |u^n|_{H1}^2` over realizations.
    pub coarse_mean: f64,
    pub fine_mean: f64,
    /// `fine_mean / coarse_mean`
    pub ratio: f64,
    /// Largest per-realization ratio.
    pub worst_ratio: f64,
    pub max_divergence: f64,
}

/// Discrete energy of the same realizations at two levels.
pub fn run_energy_study(cfg: &ExperimentConfig, coarse: Level, fine: Level, threads: usize) -> Result<EnergyReport> {
    let t_final = cfg.problem.final_time;
    let fine_step = coarse.k.min(fine.k);
    for l in [coarse, fine] {
        steps_for(l.k, fine_step).map_err(|_| misaligned("energy level", l.k, fine_step))?;
    }
    let n_fine = steps_for(t_final, fine_step)?;
    let fine_disc = discretize(cfg, fine.cells, None)?;
    let lambdas = fine_disc.problem.basis.lambdas.clone();
    let coarse_disc = discretize(cfg, coarse.cells, Some(&lambdas))?;
    let solver = cfg.solver.saddle();
    let setups = [
        (&coarse_disc, StepOperator::new(&coarse_disc.problem, coarse.k, solver)?),
        (&fine_disc, StepOperator::new(&fine_disc.problem, fine.k, solver)?),
    ];
    let n_modes = lambdas.len();
    let seed = cfg.monte_carlo.seed;
    let work = |r: u64| -> Result<([f64; 2], f64)> {
        let path = BrownianPath::generate(StreamId { seed, realization: r }, fine_step, n_fine, n_modes);
        let mut e = [0.0; 2];
        let mut div: f64 = 0.0;
        for (slot, (d, op)) in e.iter_mut().zip(&setups) {
            let u0 = d.initial_velocity(cfg.problem.initial);
            let run = run_trajectory(&d.problem, op, &u0, &path, t_final, &[])?;
            *slot = run.energy;
            div = div.max(run.max_divergence);
        }
        Ok((e, div))
    };
    let (mut sc, mut sf, mut worst, mut max_div) = (0.0, 0.0, 0.0f64, 0.0f64);
    let n_p = cfg.monte_carlo.n_p;
    for_each_realization(n_p, threads, work, |_, ([c, f], d)| {
        sc += c;
        sf += f;
        if c > 0.0 {
            worst = worst.max(f / c);
        }
        max_div = max_div.max(d);
        Ok(())
    })?;
    let coarse_mean = sc / n_p as f64;
    let fine_mean = sf / n_p as f64;
    Ok(EnergyReport {
        coarse,
        fine,
        n_p,
        coarse_mean,
        fine_mean,
        ratio: if coarse_mean > 0.0 { fine_mean / coarse_mean } else { f64::INFINITY },
        worst_ratio: worst,
        max_divergence: max_div,
    })
}

/// Divergence-free field `curl psi` on a rectangle `[a, b] x [c, d]` with
/// `psi = (x-a)^2 (x-b)^2 (y-c)^2 (y-d)^2`, pressure `sin(pi x) cos(pi y)`
/// and the matching Stokes force.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub domain: Rectangle,
}

/// `X(x) = s^2 t^2` with `s = x - a`, `t = x - b`, and its first three derivatives.
fn bump(x: f64, a: f64, b: f64) -> [f64; 4] {
    let (s, t) = (x - a, x - b);
    [
        s * s * t * t,
        2.0 * s * t * (s + t),
        2.0 * (s * s + 4.0 * s * t + t * t),
        12.0 * (s + t),
    ]
}

impl Manufactured {
    pub fn new(domain: Rectangle) -> Self {
        Manufactured { domain }
    }

    fn factors(&self, p: [f64; 2]) -> ([f64; 4], [f64; 4]) {
        let r = &self.domain;
        (bump(p[0], r.x0, r.x1), bump(p[1], r.y0, r.y1))
    }

    pub fn velocity(&self, p: [f64; 2]) -> [f64; 2] {
        let (x, y) = self.factors(p);
        [x[0] * y[1], -x[1] * y[0]]
    }

    pub fn pressure(&self, p: [f64; 2]) -> f64 {
        (PI * p[0]).sin() * (PI * p[1]).cos()
    }

    /// `-nu Laplace(u) + grad(p)`
    pub fn force(&self, nu: f64, p: [f64; 2]) -> [f64; 2] {
        let (x, y) = self.factors(p);
        let lap = [x[2] * y[1] + x[0] * y[3], -(x[3] * y[0] + x[1] * y[2])];
        let (sx, cx) = (PI * p[0]).sin_cos();
        let (sy, cy) = (PI * p[1]).sin_cos();
        [-nu * lap[0] + PI * cx * cy, -nu * lap[1] - PI * sx * sy]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub cells: Vec<usize>,
    /// `||u_h - u||_{L2}` at the discrete steady state.
    pub errors: Vec<f64>,
    pub rate: RateReport,
    pub max_divergence: f64,
}

/// Steps the noise-free scheme to its steady state on `domain` and
/// measures the velocity error against the manufactured solution.
pub fn deterministic_order_check(domain: Rectangle, cells: &[usize], solver: SaddleSolver) -> Result<OrderReport> {
    const NU: f64 = 1.0;
    const K: f64 = 1.0;
    let mut errors = Vec::with_capacity(cells.len());
    let mut max_div: f64 = 0.0;
    let rule = QuadratureRule::collapsed_gauss(6);
    let exact = Manufactured::new(domain);
    for &n in cells {
        let mesh = Arc::new(Mesh::structured(domain, n)?);
        let space = Arc::new(TaylorHoodSpace::new(mesh, DirichletSpec::no_slip()));
        let system = Arc::new(assemble_system(space.clone(), NU)?);
        let problem = Problem {
            system: system.clone(),
            basis: Arc::new(QWienerBasis::from_modes(Vec::new(), Vec::new())),
            noise: NoiseKind::Zero,
            forcing: Forcing::Field {
                f: Arc::new(move |x, _| exact.force(NU, x)),
                time_dependent: false,
            },
        };
        let op = StepOperator::new(&problem, K, solver)?;
        let path = BrownianPath::from_draws(StreamId { seed: 0, realization: 0 }, K, 0, 0, Vec::new());
        let mut u0 = space.interpolate(|x| exact.velocity(x));
        space.apply_dirichlet(&mut u0);
        let mut state = SchemeState::initial(u0, space.pressure_dim(), K);
        let mut converged = false;
        for _ in 0..500 {
            let next = em_step(&state, &problem, &op, &path)?;
            max_div = max_div.max(next.divergence);
            let change = system.l2_norm_sq(&diff(&next.u, &state.u)).sqrt();
            let size = system.l2_norm_sq(&next.u).sqrt();
            state = next;
            if change <= 1e-13 * size.max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(StokesError::solver("steady state not reached", state.n, f64::NAN));
        }
        errors.push(velocity_l2_error(&space, &state.u, |x| exact.velocity(x), &rule));
    }
    let points: Vec<(f64, f64)> = cells.iter().zip(&errors).map(|(&n, &e)| (1.0 / n as f64, e)).collect();
    let rate = RateReport::fit("velocity_l2", &points)?;
    Ok(OrderReport {
        cells: cells.to_vec(),
        errors,
        rate,
        max_divergence: max_div,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfSupEstimate {
    pub gamma: f64,
    /// Smallest nonzero eigenvalue of `D A^{-1} D^T q = lambda Mp q`.
    pub lambda_min: f64,
    pub iterations: usize,
    /// Ritz residual of the extremal pair, relative to its eigenvalue.
    pub residual: f64,
}

/// Estimates the discrete inf-sup constant. Inverse iteration on the pressure
/// Schur complement, accelerated by Lanczos with full reorthogonalization in
/// the `Mp` inner product; the constant pressure mode is deflated throughout.
pub fn estimate_discrete_infsup(system: &AssembledSystem, solver: SaddleSolver) -> Result<InfSupEstimate> {
    const TOL: f64 = 1e-10;
    const MIN_ITER: usize = 20;
    let mut space = (*system.space).clone();
    space.dirichlet_dofs.iter_mut().for_each(|d| d.1 = 0.0);
    let schur = SaddleSystem::new(&system.stiffness, &system.div, 1.0, &space, &system.mean_weights, solver)?;
    let np = space.pressure_dim();
    let mp = &system.pressure_mass;
    let w = &system.mean_weights;
    let total: f64 = w.iter().sum();
    let deflate = |x: &mut [f64]| {
        let m = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
        x.iter_mut().for_each(|v| *v -= m);
    };
    let zero_u = vec![0.0; space.velocity_dim()];
    // x -> S^{-1} Mp x
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let sol = schur.solve_constrained(&zero_u, &mp.mul_vec(x))?;
        let mut y: Vec<f64> = sol.p.iter().map(|v| -v).collect();
        deflate(&mut y);
        Ok(y)
    };

    let dim = np.saturating_sub(1);
    if dim == 0 {
        return Err(StokesError::config("the pressure space has no zero-mean functions"));
    }
    let mut v = vec![0.0; np];
    crate::rng::CounterNormal::new(0x1a5c_205e, 0).fill_normals(0, &mut v);
    deflate(&mut v);
    let nrm = mp.bilinear(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = dim.min(solver.max_iterations.max(50));
    let mut theta = 0.0;
    let mut residual = f64::INFINITY;
    for j in 0..max_iter {
        let mut r = apply(&basis[j])?;
        alpha.push(mp.bilinear(&r, &basis[j]));
        for _ in 0..2 {
            for q in &basis {
                let c = mp.bilinear(&r, q);
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let b = mp.bilinear(&r, &r).sqrt();
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |a, c| {
            if a == c {
                alpha[a]
            } else if a + 1 == c {
                beta[a]
            } else if c + 1 == a {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (imax, &tmax) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty tridiagonal");
        theta = tmax;
        residual = (b * eig.eigenvectors[(m - 1, imax)]).abs() / theta.abs().max(1e-300);
        let settled = residual <= TOL && m >= dim.min(MIN_ITER);
        if settled || b <= 1e-14 * theta.abs() || m == dim {
            return Ok(InfSupEstimate {
                gamma: (1.0 / theta).sqrt(),
                lambda_min: 1.0 / theta,
                iterations: m,
                residual,
            });
        }
        beta.push(b);
        r.iter_mut().for_each(|x| *x /= b);
        basis.push(r);
    }
    Err(StokesError::solver(
        format!("inf-sup eigen-iteration stalled at theta = {theta:.6e}"),
        max_iter,
        residual,
    ))
}

/// Inf-sup estimates on the configured meshes, in configuration order.
pub fn run_infsup(cfg: &ExperimentConfig) -> Result<Vec<(usize, InfSupEstimate)>> {
    let c = cfg.levels.infsup.as_ref().ok_or_else(|| missing("infsup"))?;
    let mut out = Vec::with_capacity(c.cells_per_unit.len());
    for &n in &c.cells_per_unit {
        let mesh = Arc::new(Mesh::structured(cfg.problem.rectangle(), n)?);
        let space = Arc::new(TaylorHoodSpace::new(mesh, DirichletSpec::no_slip()));
        let system = assemble_system(space, cfg.problem.nu)?;
        out.push((n, estimate_discrete_infsup(&system, cfg.solver.saddle())?));
    }
    Ok(out)
}

/// Statistical check of the Ito isometry for the configured noise basis.
pub fn run_isometry(cfg: &ExperimentConfig) -> Result<IsometryReport> {
    let c = cfg.levels.isometry.as_ref().ok_or_else(|| missing("isometry"))?;
    let d = discretize(cfg, c.cells_per_unit, None)?;
    Ok(ito_isometry_check(
        &d.problem.basis,
        d.system(),
        cfg.problem.final_time,
        c.fine_steps,
        c.samples,
        cfg.monte_carlo.seed,
    ))
}

pub struct CavityResult {
    pub discretization: Discretization,
    pub n_p: usize,
    pub mean_u: Vec<f64>,
    pub mean_p: Vec<f64>,
    /// Final `(u, p)` of the first realizations.
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
    pub max_divergence: f64,
}

impl CavityResult {
    /// `int (d u_y / dx - d u_x / dy)` of the mean field over the interior
    /// square `[a, 1-a]^2`, by a midpoint rule on probe points.
    pub fn mean_vorticity(&self, margin: f64, probes: usize) -> f64 {
        let space = &self.discretization.space;
        let r = space.mesh.domain;
        let (x0, x1) = (r.x0 + margin * (r.x1 - r.x0), r.x1 - margin * (r.x1 - r.x0));
        let (y0, y1) = (r.y0 + margin * (r.y1 - r.y0), r.y1 - margin * (r.y1 - r.y0));
        // circulation around the boundary of the sub-square equals the vorticity integral
        let mut circ = 0.0;
        let seg = |a: [f64; 2], b: [f64; 2]| -> f64 {
            let mut s = 0.0;
            for i in 0..probes {
                let t = (i as f64 + 0.5) / probes as f64;
                let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let u = space.eval_velocity(&self.mean_u, p).unwrap_or([0.0; 2]);
                s += u[0] * (b[0] - a[0]) + u[1] * (b[1] - a[1]);
            }
            s / probes as f64
        };
        circ += seg([x0, y0], [x1, y0]);
        circ += seg([x1, y0], [x1, y1]);
        circ += seg([x1, y1], [x0, y1]);
        circ += seg([x0, y1], [x0, y0]);
        circ
    }
}

/// Mean final fields of the cavity problem over `n_p` realizations.
pub fn run_cavity(cfg: &ExperimentConfig, threads: usize) -> Result<CavityResult> {
    let c = cfg.levels.cavity.as_ref().ok_or_else(|| missing("cavity"))?;
    let t_final = cfg.problem.final_time;
    let n_steps = steps_for(t_final, c.k)?;
    let disc = discretize(cfg, c.cells_per_unit, None)?;
    let op = StepOperator::new(&disc.problem, c.k, cfg.solver.saddle())?;
    let u0 = disc.initial_velocity(cfg.problem.initial);
    let n_modes = disc.problem.basis.n_modes();
    let seed = cfg.monte_carlo.seed;
    let work = |r: u64| -> Result<SchemeState> {
        let path = BrownianPath::generate(StreamId { seed, realization: r }, c.k, n_steps, n_modes);
        let run = run_trajectory(&disc.problem, &op, &u0, &path, t_final, &[])?;
        let mut s = run.final_state;
        s.divergence = run.max_divergence;
        Ok(s)
    };
    let mut sum_u = vec![0.0; disc.space.velocity_dim()];
    let mut sum_p = vec![0.0; disc.space.pressure_dim()];
    let mut samples = Vec::new();
    let mut max_div: f64 = 0.0;
    let n_p = cfg.monte_carlo.n_p;
    for_each_realization(n_p, threads, work, |r, s| {
        sum_u.iter_mut().zip(&s.u).for_each(|(a, b)| *a += b);
        sum_p.iter_mut().zip(&s.p).for_each(|(a, b)| *a += b);
        max_div = max_div.max(s.divergence);
        if (r as usize) < c.samples {
            samples.push((s.u, s.p));
        }
        Ok(())
    })?;
    let scale = 1.0 / n_p as f64;
    sum_u.iter_mut().for_each(|v| *v *= scale);
    sum_p.iter_mut().for_each(|v| *v *= scale);
    Ok(CavityResult {
        discretization: disc,
        n_p,
        mean_u: sum_u,
        mean_p: sum_p,
        samples,
        max_divergence: max_div,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, TemporalConfig};
    use crate::stochastic::EigenvalueRule;

    fn tiny(kind: NoiseKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("test1-desk").unwrap();
        cfg.problem.domain = [0.0, 1.0, 0.0, 1.0];
        cfg.noise.kind = kind;
        cfg.noise.truncation = 2;
        cfg.noise.eigenvalues = EigenvalueRule::InverseNorm;
        cfg.monte_carlo.n_p = 4;
        cfg.levels.temporal = Some(TemporalConfig {
            cells_per_unit: 2,
            k: vec![0.25, 0.125],
            k0: 0.0625,
        });
        cfg
    }

    #[test]
    fn accumulator_interval_brackets_estimate() {
        let mut a = Accumulator::default();
        for x in [1.0, 4.0, 9.0, 16.0] {
            a.push(x);
        }
        assert_eq!(a.mean(), 7.5);
        assert_eq!(a.root_mean(), 7.5f64.sqrt());
        let var = [1.0f64, 4.0, 9.0, 16.0].iter().map(|x| (x - 7.5).powi(2)).sum::<f64>() / 3.0;
        assert!((a.std_error() - (var / 4.0).sqrt()).abs() < 1e-12);
        let (lo, hi) = a.confidence_interval();
        assert!(lo <= a.root_mean() && a.root_mean() <= hi);
        assert!((hi - a.root_mean() - Z95 * a.std_error() / (2.0 * a.root_mean())).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = [0.5, 0.25, 0.125, 0.0625].iter().map(|&k: &f64| (k, 3.0 * k.sqrt())).collect();
        let r = RateReport::fit("AU", &pts).unwrap();
        assert!((r.slope - 0.5).abs() < 1e-12);
        assert!((r.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(r.residual < 1e-12);
        assert!(RateReport::fit("AU", &pts[..2]).is_err());
    }

    #[test]
    fn self_comparison_is_exactly_zero() {
        let cfg = tiny(NoiseKind::SqrtU2Plus1);
        let stats = run_coupled_study(&cfg, "t", &[Level::new(0.0625, 2)], Level::new(0.0625, 2), 1).unwrap();
        for s in Statistic::ALL {
            assert_eq!(stats.levels[0].estimate(s), 0.0);
        }
    }

    #[test]
    fn misaligned_level_is_a_config_error() {
        let cfg = tiny(NoiseKind::AdditiveOne);
        let e = run_coupled_study(&cfg, "t", &[Level::new(0.1, 2)], Level::new(0.0625, 2), 1);
        assert!(matches!(e, Err(StokesError::Config(_))));
    }

    #[test]
    fn coupled_errors_match_brute_force() {
        let mut cfg = tiny(NoiseKind::SqrtU2Plus1);
        cfg.monte_carlo.n_p = 2;
        let levels = [Level::new(0.25, 1), Level::new(0.125, 2)];
        let reference = Level::new(0.0625, 2);
        let stats = run_coupled_study(&cfg, "t", &levels, reference, 1).unwrap();

        let fine = discretize(&cfg, 2, None).unwrap();
        let coarse = discretize(&cfg, 1, Some(&fine.problem.basis.lambdas)).unwrap();
        let nm = fine.problem.basis.n_modes();
        let solver = cfg.solver.saddle();
        let mut sums = [[0.0; 4]; 2];
        for r in 0..2u64 {
            let path = BrownianPath::generate(StreamId { seed: cfg.monte_carlo.seed, realization: r }, 0.0625, 16, nm);
            let zero_f = vec![0.0; fine.space.velocity_dim()];
            let op = StepOperator::new(&fine.problem, 0.0625, solver).unwrap();
            let rf = run_trajectory(&fine.problem, &op, &zero_f, &path, 1.0, &[]).unwrap().final_state;
            for (i, l) in levels.iter().enumerate() {
                let d = if l.cells == 1 { &coarse } else { &fine };
                let op = StepOperator::new(&d.problem, l.k, solver).unwrap();
                let zero = vec![0.0; d.space.velocity_dim()];
                let s = run_trajectory(&d.problem, &op, &zero, &path, 1.0, &[]).unwrap().final_state;
                // pointwise evaluation on the fine space's nodes
                let u = fine.space.interpolate(|x| d.space.eval_velocity(&s.u, x).unwrap());
                let p = fine.space.interpolate_pressure(|x| d.space.eval_pressure(&s.p, x).unwrap());
                let pa = fine.space.interpolate_pressure(|x| d.space.eval_pressure(&s.p_timeavg, x).unwrap());
                let fs = fine.system();
                let du = diff(&rf.u, &u);
                sums[i][0] += fs.mass.bilinear(&du, &du);
                sums[i][1] += fs.stiffness.bilinear(&du, &du);
                let dpa = diff(&rf.p_timeavg, &pa);
                sums[i][2] += fs.pressure_mass.bilinear(&dpa, &dpa);
                let dp = diff(&rf.p, &p);
                sums[i][3] += fs.pressure_mass.bilinear(&dp, &dp);
            }
        }
        for (i, ls) in stats.levels.iter().enumerate() {
            for s in Statistic::ALL {
                let expect = (sums[i][s.index()] / 2.0).sqrt();
                let got = ls.estimate(s);
                assert!((got - expect).abs() <= 1e-10 * expect.max(1e-12), "{} level {i}: {got} vs {expect}", s.name());
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_statistics() {
        let cfg = tiny(NoiseKind::SqrtU2Plus1);
        let a = run_temporal_study(&cfg, 1).unwrap();
        let b = run_temporal_study(&cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manufactured_force_is_consistent() {
        // central differences of the closed forms
        let h = 1e-4;
        let nu = 0.7;
        for (dom, pts) in [
            (Rectangle::unit_square(), [[0.3, 0.6], [0.81, 0.17]]),
            (Rectangle::new(-1.0, 1.0, -1.0, 1.0), [[-0.4, 0.55], [0.9, -0.2]]),
        ] {
            let m = Manufactured::new(dom);
            for p in pts {
                let lap = |c: usize| {
                    let f = |q: [f64; 2]| m.velocity(q)[c];
                    (f([p[0] + h, p[1]]) + f([p[0] - h, p[1]]) + f([p[0], p[1] + h]) + f([p[0], p[1] - h]) - 4.0 * f(p))
                        / (h * h)
                };
                let gp = [
                    (m.pressure([p[0] + h, p[1]]) - m.pressure([p[0] - h, p[1]])) / (2.0 * h),
                    (m.pressure([p[0], p[1] + h]) - m.pressure([p[0], p[1] - h])) / (2.0 * h),
                ];
                let f = m.force(nu, p);
                for c in 0..2 {
                    assert!((f[c] - (-nu * lap(c) + gp[c])).abs() < 1e-4 * (1.0 + f[c].abs()));
                }
                let div = (m.velocity([p[0] + h, p[1]])[0] - m.velocity([p[0] - h, p[1]])[0] + m.velocity([p[0], p[1] + h])[1]
                    - m.velocity([p[0], p[1] - h])[1])
                    / (2.0 * h);
                assert!(div.abs() < 1e-7);
            }
            for t in [0.0, 0.3, 1.0] {
                let on = [dom.x0 + t * (dom.x1 - dom.x0), dom.y0];
                assert_eq!(m.velocity(on), [0.0, 0.0]);
            }
        }
    }

    fn dense_infsup(system: &AssembledSystem) -> f64 {
        let space = &system.space;
        let free: Vec<usize> = (0..space.velocity_dim()).filter(|&d| !space.is_dirichlet[d]).collect();
        let np = space.pressure_dim();
        let a = system.stiffness.to_dense();
        let d = system.div.to_dense();
        let af = DMatrix::from_fn(free.len(), free.len(), |i, j| a[free[i]][free[j]]);
        let df = DMatrix::from_fn(np, free.len(), |i, j| d[i][free[j]]);
        let mp = DMatrix::from_vec(np, np, system.pressure_mass.to_dense().into_iter().flatten().collect());
        let s = &df * af.try_inverse().unwrap() * df.transpose();
        let l = mp.cholesky().unwrap().l();
        let li = l.try_inverse().unwrap();
        let c = &li * s * li.transpose();
        let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        assert!(ev[0].abs() < 1e-10, "constant pressure mode missing: {}", ev[0]);
        ev[1].sqrt()
    }

    #[test]
    fn infsup_matches_dense_oracle() {
        for n in [2, 3] {
            let mesh = Arc::new(Mesh::structured(Rectangle::unit_square(), n).unwrap());
            let space = Arc::new(TaylorHoodSpace::new(mesh, DirichletSpec::no_slip()));
            let system = assemble_system(space, 1.0).unwrap();
            let est = estimate_discrete_infsup(&system, SaddleSolver::default()).unwrap();
            let oracle = dense_infsup(&system);

            assert!((est.gamma - oracle).abs() < 1e-6, "n = {n}: {} vs {oracle}", est.gamma);
            assert!(est.gamma > 0.0);
        }
    }

    #[test]
    fn deterministic_order_is_cubic() {
        let r = deterministic_order_check(Rectangle::unit_square(), &[2, 4, 8], SaddleSolver::default()).unwrap();
        assert!(r.rate.slope > 2.5, "slope {}", r.rate.slope);
        assert!(r.max_divergence <= crate::stepper::DIVERGENCE_LIMIT);
    }

    #[test]
    fn zero_noise_zero_force_gives_zero_errors() {
        let mut cfg = tiny(NoiseKind::Zero);
        cfg.problem.force = [0.0, 0.0];
        let r = run_temporal_study(&cfg, 1).unwrap();
        for l in &r.stats.levels {
            for s in Statistic::ALL {
                assert_eq!(l.estimate(s), 0.0);
            }
        }
        assert!(r.rates.is_empty());
    }
}
