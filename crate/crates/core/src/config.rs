//! Experiment configuration: TOML sections, presets and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, StokesError};
use crate::femspace::{DirichletSpec, PressureMean};
use crate::mesh::Rectangle;
use crate::saddle::{SaddleSolver, SaddleStrategy};
use crate::stepper::steps_for;
use crate::stochastic::{EigenvalueRule, NoiseKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    #[serde(rename = "no_slip")]
    NoSlip,
    /// Prescribed velocity on the open top side, zero elsewhere.
    #[serde(rename = "lid")]
    Lid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialCondition {
    #[serde(rename = "zero")]
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// `[x0, x1, y0, y1]`
    pub domain: [f64; 4],
    pub nu: f64,
    pub final_time: f64,
    /// Constant body force.
    pub force: [f64; 2],
    pub initial: InitialCondition,
    pub boundary: Boundary,
    pub lid_velocity: [f64; 2],
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            domain: [-1.0, 1.0, -1.0, 1.0],
            nu: 1.0,
            final_time: 1.0,
            force: [1.0, 1.0],
            initial: InitialCondition::Zero,
            boundary: Boundary::NoSlip,
            lid_velocity: [1.0, 0.0],
        }
    }
}

impl ProblemConfig {
    pub fn rectangle(&self) -> Rectangle {
        let [x0, x1, y0, y1] = self.domain;
        Rectangle::new(x0, x1, y0, y1)
    }

    pub fn dirichlet(&self) -> DirichletSpec {
        match self.boundary {
            Boundary::NoSlip => DirichletSpec::no_slip(),
            Boundary::Lid => DirichletSpec::lid(self.lid_velocity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Amplitude `c` of the basis fields.
    pub amplitude: f64,
    /// Modes `1 <= j, k <= truncation`.
    pub truncation: usize,
    pub eigenvalues: EigenvalueRule,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::SqrtU2Plus1,
            amplitude: 0.1,
            truncation: 10,
            eigenvalues: EigenvalueRule::NormOverSquare,
        }
    }
}

/// Fixed mesh, several time steps, all compared with the step `k0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalConfig {
    /// Grid spacing `h = 1 / cells_per_unit`.
    pub cells_per_unit: usize,
    pub k: Vec<f64>,
    pub k0: f64,
}

/// `(k, cells_per_unit)` pairs compared with a finer reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancedConfig {
    pub pairs: Vec<(f64, usize)>,
    pub reference: (f64, usize),
}

/// Fixed coarse mesh, decreasing time steps, finer reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHConfig {
    pub cells_per_unit: usize,
    pub k: Vec<f64>,
    pub reference: (f64, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub cells_per_unit: usize,
    pub k: f64,
    /// Number of single realizations exported next to the mean field.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfSupConfig {
    pub cells_per_unit: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsometryConfig {
    pub cells_per_unit: usize,
    pub samples: usize,
    pub fine_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal: Option<TemporalConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balanced: Option<BalancedConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_h: Option<FixedHConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infsup: Option<InfSupConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isometry: Option<IsometryConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub n_p: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { n_p: 200, seed: 20240917 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub strategy: SaddleStrategy,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pressure_mean: PressureMean,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SaddleSolver::default();
        SolverConfig {
            strategy: s.strategy,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            pressure_mean: PressureMean::LagrangeMultiplier,
        }
    }
}

impl SolverConfig {
    pub fn saddle(&self) -> SaddleSolver {
        SaddleSolver {
            strategy: self.strategy,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub levels: LevelsConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

pub const PRESETS: [&str; 4] = ["test1", "test1-desk", "cavity", "cavity-desk"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| StokesError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StokesError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// First 16 hex digits of the SHA-256 of the emitted configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.emit().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "test1" => Self::test1(),
            "test1-desk" => Self::test1_desk(),
            "cavity" => Self::cavity(),
            "cavity-desk" => {
                let mut c = Self::cavity();
                c.monte_carlo.n_p = 100;
                c
            }
            _ => {
                return Err(StokesError::config(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn test1() -> Self {
        ExperimentConfig {
            problem: ProblemConfig::default(),
            noise: NoiseConfig::default(),
            levels: LevelsConfig {
                temporal: Some(TemporalConfig {
                    cells_per_unit: 40,
                    k: vec![1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0, 1.0 / 320.0, 1.0 / 640.0],
                    k0: 1.0 / 10240.0,
                }),
                balanced: Some(BalancedConfig {
                    pairs: vec![(1.0 / 10.0, 8), (1.0 / 20.0, 16), (1.0 / 40.0, 32)],
                    reference: (1.0 / 80.0, 32),
                }),
                fixed_h: Some(FixedHConfig {
                    cells_per_unit: 20,
                    k: vec![1.0 / 20.0, 1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0, 1.0 / 320.0],
                    reference: (1.0 / 320.0, 40),
                }),
                cavity: None,
                infsup: Some(InfSupConfig {
                    cells_per_unit: vec![8, 16, 32],
                }),
                isometry: Some(IsometryConfig {
                    cells_per_unit: 16,
                    samples: 10_000,
                    fine_steps: 16,
                }),
            },
            monte_carlo: MonteCarloConfig {
                n_p: 6000,
                ..Default::default()
            },
            solver: SolverConfig {
                strategy: SaddleStrategy::ArtificialCompressibility,
                ..Default::default()
            },
            output: OutputConfig::default(),
        }
    }

    fn test1_desk() -> Self {
        ExperimentConfig {
            problem: ProblemConfig::default(),
            noise: NoiseConfig {
                eigenvalues: EigenvalueRule::InverseNorm,
                ..Default::default()
            },
            levels: LevelsConfig {
                temporal: Some(TemporalConfig {
                    cells_per_unit: 16,
                    k: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
                    k0: 1.0 / 512.0,
                }),
                balanced: Some(BalancedConfig {
                    pairs: vec![(1.0 / 8.0, 8), (1.0 / 16.0, 16), (1.0 / 32.0, 32)],
                    reference: (1.0 / 64.0, 32),
                }),
                fixed_h: Some(FixedHConfig {
                    cells_per_unit: 8,
                    k: vec![1.0 / 16.0, 1.0 / 64.0, 1.0 / 256.0],
                    reference: (1.0 / 256.0, 16),
                }),
                cavity: None,
                infsup: Some(InfSupConfig {
                    cells_per_unit: vec![8, 16],
                }),
                isometry: Some(IsometryConfig {
                    cells_per_unit: 8,
                    samples: 10_000,
                    fine_steps: 16,
                }),
            },
            monte_carlo: MonteCarloConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }

    fn cavity() -> Self {
        ExperimentConfig {
            problem: ProblemConfig {
                domain: [0.0, 1.0, 0.0, 1.0],
                force: [0.0, 0.0],
                boundary: Boundary::Lid,
                ..Default::default()
            },
            noise: NoiseConfig {
                kind: NoiseKind::AdditiveOne,
                amplitude: 1.0,
                ..Default::default()
            },
            levels: LevelsConfig {
                cavity: Some(CavityConfig {
                    cells_per_unit: 20,
                    k: 0.005,
                    samples: 3,
                }),
                ..Default::default()
            },
            monte_carlo: MonteCarloConfig {
                n_p: 5000,
                ..Default::default()
            },
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(StokesError::config(m));
        let p = &self.problem;
        let [x0, x1, y0, y1] = p.domain;
        if !(x1 > x0 && y1 > y0) {
            return err(format!("problem.domain = {:?} is not a proper rectangle", p.domain));
        }
        if !(p.nu > 0.0) {
            return err(format!("problem.nu = {} must be positive", p.nu));
        }
        if !(p.final_time > 0.0) {
            return err(format!("problem.final_time = {} must be positive", p.final_time));
        }
        if self.noise.truncation == 0 {
            return err("noise.truncation must be at least 1".into());
        }
        if self.monte_carlo.n_p == 0 {
            return err("monte_carlo.n_p must be at least 1".into());
        }
        if !(self.solver.tolerance > 0.0) {
            return err(format!("solver.tolerance = {} must be positive", self.solver.tolerance));
        }
        let l = &self.levels;
        if l.temporal.is_none()
            && l.balanced.is_none()
            && l.fixed_h.is_none()
            && l.cavity.is_none()
            && l.infsup.is_none()
            && l.isometry.is_none()
        {
            return err("levels: at least one study section is required".into());
        }
        let t = p.final_time;
        let check_k = |key: &str, k: f64| -> Result<()> {
            if !(k > 0.0) {
                return err(format!("{key} = {k} must be positive"));
            }
            steps_for(t, k).map_err(|_| StokesError::config(format!("{key} = {k} does not divide problem.final_time = {t}")))?;
            Ok(())
        };
        let check_multiple = |key: &str, k: f64, base_key: &str, base: f64| -> Result<()> {
            steps_for(k, base)
                .map_err(|_| StokesError::config(format!("{key} = {k} is not a multiple of {base_key} = {base}")))?;
            Ok(())
        };
        let check_cells = |key: &str, n: usize| -> Result<()> {
            let r = self.problem.rectangle();
            crate::mesh::Mesh::check_cells(&r, n).map(|_| ()).map_err(|_| {
                StokesError::config(format!("{key} = {n} gives a non-integral cell count on {:?}", p.domain))
            })
        };
        if let Some(c) = &l.temporal {
            check_cells("levels.temporal.cells_per_unit", c.cells_per_unit)?;
            check_k("levels.temporal.k0", c.k0)?;
            if c.k.is_empty() {
                return err("levels.temporal.k must not be empty".into());
            }
            for (i, &k) in c.k.iter().enumerate() {
                let key = format!("levels.temporal.k[{i}]");
                check_k(&key, k)?;
                check_multiple(&key, k, "levels.temporal.k0", c.k0)?;
            }
        }
        if let Some(c) = &l.balanced {
            let (kr, nr) = c.reference;
            check_k("levels.balanced.reference", kr)?;
            check_cells("levels.balanced.reference", nr)?;
            if c.pairs.is_empty() {
                return err("levels.balanced.pairs must not be empty".into());
            }
            for (i, &(k, n)) in c.pairs.iter().enumerate() {
                let key = format!("levels.balanced.pairs[{i}]");
                check_k(&key, k)?;
                check_multiple(&key, k, "levels.balanced.reference", kr)?;
                check_cells(&key, n)?;
                if nr % n != 0 {
                    return err(format!("{key}: mesh 1/{n} is not nested in the reference mesh 1/{nr}"));
                }
            }
        }
        if let Some(c) = &l.fixed_h {
            let (kr, nr) = c.reference;
            check_k("levels.fixed_h.reference", kr)?;
            check_cells("levels.fixed_h.cells_per_unit", c.cells_per_unit)?;
            check_cells("levels.fixed_h.reference", nr)?;
            if nr % c.cells_per_unit != 0 {
                return err(format!(
                    "levels.fixed_h: mesh 1/{} is not nested in the reference mesh 1/{nr}",
                    c.cells_per_unit
                ));
            }
            if c.k.is_empty() {
                return err("levels.fixed_h.k must not be empty".into());
            }
            for (i, &k) in c.k.iter().enumerate() {
                let key = format!("levels.fixed_h.k[{i}]");
                check_k(&key, k)?;
                check_multiple(&key, k, "levels.fixed_h.reference", kr)?;
            }
        }
        if let Some(c) = &l.cavity {
            check_cells("levels.cavity.cells_per_unit", c.cells_per_unit)?;
            check_k("levels.cavity.k", c.k)?;
        }
        if let Some(c) = &l.infsup {
            for (i, &n) in c.cells_per_unit.iter().enumerate() {
                check_cells(&format!("levels.infsup.cells_per_unit[{i}]"), n)?;
            }
        }
        if let Some(c) = &l.isometry {
            check_cells("levels.isometry.cells_per_unit", c.cells_per_unit)?;
            if c.samples < 2 || c.fine_steps == 0 {
                return err("levels.isometry needs samples >= 2 and fine_steps >= 1".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let text = cfg.emit();
            assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn test1_preset_values() {
        let c = ExperimentConfig::preset("test1").unwrap();
        assert_eq!(c.noise.amplitude, 0.1);
        assert_eq!(c.noise.truncation, 10);
        assert_eq!(c.problem.nu, 1.0);
        assert_eq!(c.problem.final_time, 1.0);
        assert_eq!(c.noise.kind, NoiseKind::SqrtU2Plus1);
        assert_eq!(c.problem.initial, InitialCondition::Zero);
        assert_eq!(c.monte_carlo.n_p, 6000);
    }

    #[test]
    fn cavity_preset_values() {
        let c = ExperimentConfig::preset("cavity").unwrap();
        assert_eq!(c.problem.force, [0.0, 0.0]);
        assert_eq!(c.problem.boundary, Boundary::Lid);
        assert_eq!(c.problem.lid_velocity, [1.0, 0.0]);
        assert_eq!(c.noise.kind, NoiseKind::AdditiveOne);
        assert_eq!(c.noise.amplitude, 1.0);
        let cav = c.levels.cavity.unwrap();
        assert_eq!((cav.cells_per_unit, cav.k), (20, 0.005));
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(ExperimentConfig::parse("").is_err());
        let e = ExperimentConfig::parse("[levels]\n").unwrap_err().to_string();
        assert!(e.contains("levels"), "{e}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut text = ExperimentConfig::preset("test1-desk").unwrap().emit();
        text = text.replace("[noise]", "[noise]\nbogus_key = 3");
        let e = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("bogus_key"), "{e}");
    }

    #[test]
    fn misaligned_levels_are_rejected() {
        let mut c = ExperimentConfig::preset("test1-desk").unwrap();
        c.levels.temporal.as_mut().unwrap().k.push(0.3);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("levels.temporal.k[4]"), "{e}");
        let mut c = ExperimentConfig::preset("test1-desk").unwrap();
        c.levels.temporal.as_mut().unwrap().k0 = 3.0 / 512.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset("test1-desk").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.monte_carlo.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
