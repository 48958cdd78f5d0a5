use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::Utc;
use clap::{Parser, Subcommand};

use stoch_stokes::config::{ExperimentConfig, PRESETS};
use stoch_stokes::experiment::{self, Level, Statistic, StudyReport};
use stoch_stokes::io::{self, ArtifactHeader, CsvRow, Manifest, RunStatus};
use stoch_stokes::{Result, StokesError};

#[derive(Parser)]
#[command(name = "stoch-stokes", version, about = "Euler–Maruyama / Taylor–Hood experiments for the stochastic Stokes equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file (overrides --preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in configuration: test1, test1-desk, cavity, cavity-desk.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Master seed of the Monte Carlo streams.
    #[arg(long, global = true, env = "STOCH_STOKES_SEED")]
    seed: Option<u64>,

    /// Number of Monte Carlo realizations.
    #[arg(long, global = true)]
    np: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for the realizations (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Fixed mesh, errors of several k against k0.
    Temporal,
    /// k ~ h pairs against a finer reference pair.
    Balanced,
    /// Coarse fixed mesh, decreasing k.
    FixedH,
    /// Lid-driven cavity: mean fields and sample realizations as VTK.
    Cavity,
    /// Discrete inf-sup constants of the configured meshes.
    Infsup,
    /// Monte Carlo check of the Ito isometry for the noise basis.
    Isometry,
    /// Print the effective configuration and exit.
    ShowConfig,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Temporal => "temporal",
            Command::Balanced => "balanced",
            Command::FixedH => "fixed_h",
            Command::Cavity => "cavity",
            Command::Infsup => "infsup",
            Command::Isometry => "isometry",
            Command::ShowConfig => "show_config",
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            Command::Cavity => "cavity-desk",
            _ => "test1-desk",
        }
    }
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset(cli.command.default_preset())?,
    };
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.seed = seed;
    }
    if let Some(np) = cli.np {
        cfg.monte_carlo.n_p = np;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_study(r: &StudyReport) {
    let st = &r.stats;
    println!(
        "{} study: N_p = {}, reference (k, h) = ({}, 1/{})",
        st.study, st.n_p, st.reference.k, st.reference.cells
    );
    println!("{:>12} {:>6} {:>12} {:>12} {:>12} {:>12}", "k", "1/h", "AU", "BU", "AP", "BP");
    for l in &st.levels {
        println!(
            "{:>12.6e} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            l.level.k,
            l.level.cells,
            l.estimate(Statistic::AU),
            l.estimate(Statistic::BU),
            l.estimate(Statistic::AP),
            l.estimate(Statistic::BP)
        );
    }
    for rate in &r.rates {
        println!("slope {}: {:.4} (residual {:.2e})", rate.statistic, rate.slope, rate.residual);
    }
    if let Some(t) = r.tail {
        println!("tail increasing: AU {} AP {}", t.au_increasing, t.ap_increasing);
    }
    println!("max ||D u||_inf = {:.3e}", st.max_divergence);
}

fn run(cli: &Cli, cfg: &ExperimentConfig, header: &ArtifactHeader, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let dir = &cfg.output.directory;
    let csv = |name: &str, rows: &[CsvRow], artifacts: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join(name);
        io::write_csv_file(&path, header, rows)?;
        artifacts.push(path);
        Ok(())
    };
    let threads = cli.threads;
    match cli.command {
        Command::Temporal | Command::Balanced | Command::FixedH => {
            let report = match cli.command {
                Command::Temporal => experiment::run_temporal_study(cfg, threads)?,
                Command::Balanced => experiment::run_balanced_study(cfg, threads)?,
                _ => experiment::run_fixed_h_study(cfg, threads)?,
            };
            csv(&format!("{}.csv", cli.command.name()), &io::study_rows(&report), artifacts)?;
            print_study(&report);
        }
        Command::Infsup => {
            let est = experiment::run_infsup(cfg)?;
            csv("infsup.csv", &io::infsup_rows(&est), artifacts)?;
            for (n, e) in &est {
                println!("1/h = {n:>4}: gamma_h = {:.6} ({} iterations)", e.gamma, e.iterations);
            }
        }
        Command::Isometry => {
            let c = cfg.levels.isometry.as_ref().expect("validated");
            let r = experiment::run_isometry(cfg)?;
            let level = Level::new(cfg.problem.final_time / c.fine_steps as f64, c.cells_per_unit);
            csv("isometry.csv", &io::isometry_rows(level, &r), artifacts)?;
            println!(
                "E||W(T)||^2: sample {:.6e} vs analytic {:.6e}, z = {:.3} over {} samples",
                r.sample_mean, r.analytic, r.z_score, r.n_samples
            );
        }
        Command::Cavity => {
            let r = experiment::run_cavity(cfg, threads)?;
            let space = &r.discretization.space;
            let path = dir.join("cavity_mean.vtk");
            io::write_vtk_file(&path, header, space, &r.mean_u, &r.mean_p)?;
            artifacts.push(path);
            for (i, (u, p)) in r.samples.iter().enumerate() {
                let path = dir.join(format!("cavity_sample_{}.vtk", i + 1));
                io::write_vtk_file(&path, header, space, u, p)?;
                artifacts.push(path);
            }
            let circulation = r.mean_vorticity(0.1, 400);
            let rows = vec![
                CsvRow {
                    study: "cavity".into(),
                    k: cfg.levels.cavity.as_ref().map(|c| c.k),
                    h: Some(space.mesh.grid_spacing()),
                    n_p: Some(r.n_p),
                    statistic: "mean_interior_circulation".into(),
                    value: circulation,
                    ci: None,
                    h_diameter: Some(space.mesh.h),
                },
                CsvRow {
                    study: "cavity".into(),
                    k: cfg.levels.cavity.as_ref().map(|c| c.k),
                    h: Some(space.mesh.grid_spacing()),
                    n_p: Some(r.n_p),
                    statistic: "max_divergence".into(),
                    value: r.max_divergence,
                    ci: None,
                    h_diameter: Some(space.mesh.h),
                },
            ];
            csv("cavity.csv", &rows, artifacts)?;
            println!(
                "cavity: N_p = {}, interior circulation of the mean field {:.4e}, max ||D u||_inf = {:.3e}",
                r.n_p, circulation, r.max_divergence
            );
        }
        Command::ShowConfig => {}
    }
    Ok(())
}

fn write_config_echo(dir: &Path, cfg: &ExperimentConfig, header: &ArtifactHeader, command: &str) -> Result<PathBuf> {
    let path = dir.join(format!("config_{command}.toml"));
    std::fs::write(&path, format!("# {}\n{}", header.line(), cfg.emit()))?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, StokesError::Config(_)) && cli.preset.is_some() {
                eprintln!("known presets: {}", PRESETS.join(", "));
            }
            return ExitCode::from(2);
        }
    };
    let header = ArtifactHeader {
        seed: cfg.monte_carlo.seed,
        config_hash: cfg.hash(),
    };
    if cli.command == Command::ShowConfig {
        print!("# {}\n{}", header.line(), cfg.emit());
        return ExitCode::SUCCESS;
    }
    let dir = cfg.output.directory.clone();
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    let name = cli.command.name();
    println!("# {}", header.line());
    print!("{}", cfg.emit());
    println!();

    let started = Utc::now();
    let clock = Instant::now();
    let mut artifacts = Vec::new();
    let result = write_config_echo(&dir, &cfg, &header, name).and_then(|p| {
        artifacts.push(p);
        run(&cli, &cfg, &header, &mut artifacts)
    });
    let manifest = Manifest {
        command: name.to_string(),
        header,
        git_describe: io::git_describe(),
        started,
        finished: Utc::now(),
        wall_clock: clock.elapsed(),
        threads: cli.threads,
        status: if result.is_ok() { RunStatus::Completed } else { RunStatus::Failed },
        error: result.as_ref().err().map(|e| e.to_string()),
        artifacts,
    };
    let manifest_path = dir.join(format!("manifest_{name}.txt"));
    if let Err(e) = manifest.write(&manifest_path) {
        eprintln!("error: cannot write {}: {e}", manifest_path.display());
    }
    match result {
        Ok(()) => {
            println!("artifacts in {} ({:.1} s)", dir.display(), manifest.wall_clock.as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
