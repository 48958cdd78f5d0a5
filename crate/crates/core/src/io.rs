//! Artifact writers: statistics CSV, legacy VTK fields, run manifest.
//!
//! Every artifact opens with a header naming the seed and the configuration
//! hash, so a file can always be traced back to the run that produced it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};

use crate::error::{Result, StokesError};
use crate::experiment::{InfSupEstimate, Level, Statistic, StudyReport};
use crate::femspace::TaylorHoodSpace;
use crate::stochastic::IsometryReport;

pub const CSV_COLUMNS: [&str; 10] = [
    "study",
    "k",
    "h",
    "n_p",
    "statistic",
    "value",
    "ci_low",
    "ci_high",
    "seed",
    "h_diameter",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactHeader {
    pub fn line(&self) -> String {
        format!("stoch-stokes seed={} config_hash={}", self.seed, self.config_hash)
    }
}

/// One CSV row; `None` fields are written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub study: String,
    pub k: Option<f64>,
    pub h: Option<f64>,
    pub n_p: Option<usize>,
    pub statistic: String,
    pub value: f64,
    pub ci: Option<(f64, f64)>,
    pub h_diameter: Option<f64>,
}

impl CsvRow {
    fn scalar(study: &str, statistic: &str, value: f64) -> Self {
        CsvRow {
            study: study.to_string(),
            k: None,
            h: None,
            n_p: None,
            statistic: statistic.to_string(),
            value,
            ci: None,
            h_diameter: None,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Per-level AU/BU/AP/BP rows followed by the fitted rates
/// (`slope_AU`, `intercept_AU`, `residual_AU`, ...).
pub fn study_rows(report: &StudyReport) -> Vec<CsvRow> {
    let st = &report.stats;
    let mut rows = Vec::new();
    for ls in &st.levels {
        for s in Statistic::ALL {
            let acc = ls.get(s);
            rows.push(CsvRow {
                study: st.study.clone(),
                k: Some(ls.level.k),
                h: Some(ls.level.h()),
                n_p: Some(acc.count),
                statistic: s.name().to_string(),
                value: acc.root_mean(),
                ci: Some(acc.confidence_interval()),
                h_diameter: Some(ls.h_diameter),
            });
        }
    }
    let common_h = match st.levels.first() {
        Some(first) if st.levels.iter().all(|l| l.level.cells == first.level.cells) => Some(first.level.h()),
        _ => None,
    };
    for r in &report.rates {
        for (what, value) in [("slope", r.slope), ("intercept", r.intercept), ("residual", r.residual)] {
            rows.push(CsvRow {
                h: common_h,
                n_p: Some(st.n_p),
                ..CsvRow::scalar(&st.study, &format!("{what}_{}", r.statistic), value)
            });
        }
    }
    if let Some(t) = report.tail {
        for (what, flag) in [("tail_increasing_AU", t.au_increasing), ("tail_increasing_AP", t.ap_increasing)] {
            rows.push(CsvRow {
                h: common_h,
                n_p: Some(st.n_p),
                ..CsvRow::scalar(&st.study, what, if flag { 1.0 } else { 0.0 })
            });
        }
    }
    rows.push(CsvRow {
        n_p: Some(st.n_p),
        ..CsvRow::scalar(&st.study, "max_divergence", st.max_divergence)
    });
    rows
}

pub fn infsup_rows(estimates: &[(usize, InfSupEstimate)]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for (n, e) in estimates {
        let h = Some(1.0 / *n as f64);
        rows.push(CsvRow {
            h,
            ..CsvRow::scalar("infsup", "gamma", e.gamma)
        });
        rows.push(CsvRow {
            h,
            ..CsvRow::scalar("infsup", "lambda_min", e.lambda_min)
        });
        rows.push(CsvRow {
            h,
            ..CsvRow::scalar("infsup", "ritz_residual", e.residual)
        });
    }
    rows
}

pub fn isometry_rows(level: Level, r: &IsometryReport) -> Vec<CsvRow> {
    let base = CsvRow {
        k: Some(level.k),
        h: Some(level.h()),
        n_p: Some(r.n_samples),
        ..CsvRow::scalar("isometry", "", 0.0)
    };
    let half = 1.959_963_984_540_054 * r.std_error;
    vec![
        CsvRow {
            statistic: "sample_mean".into(),
            value: r.sample_mean,
            ci: Some((r.sample_mean - half, r.sample_mean + half)),
            ..base.clone()
        },
        CsvRow {
            statistic: "analytic".into(),
            value: r.analytic,
            ..base.clone()
        },
        CsvRow {
            statistic: "z_score".into(),
            value: r.z_score,
            ..base
        },
    ]
}

pub fn write_csv<W: Write>(out: W, header: &ArtifactHeader, rows: &[CsvRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# {}", header.line())?;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| StokesError::Io(std::io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        let (lo, hi) = match r.ci {
            Some((a, b)) => (num(a), num(b)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.study.clone(),
            opt(r.k),
            opt(r.h),
            r.n_p.map(|n| n.to_string()).unwrap_or_default(),
            r.statistic.clone(),
            num(r.value),
            lo,
            hi,
            header.seed.to_string(),
            opt(r.h_diameter),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, header: &ArtifactHeader, rows: &[CsvRow]) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), header, rows)
}

/// Legacy ASCII VTK of a Taylor–Hood field: every triangle is split into
/// four P1 sub-triangles on the P2 nodes; the P1 pressure is evaluated at
/// the edge midpoints.
pub fn write_vtk<W: Write>(
    mut out: W,
    header: &ArtifactHeader,
    space: &TaylorHoodSpace,
    u: &[f64],
    p: &[f64],
) -> Result<()> {
    let mesh = &space.mesh;
    let ns = space.n_scalar();
    let nv = mesh.n_vertices();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", header.line())?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {ns} double")?;
    for q in &space.scalar_points {
        writeln!(out, "{:.17e} {:.17e} 0", q[0], q[1])?;
    }
    let n_cells = 4 * mesh.n_triangles();
    writeln!(out, "CELLS {n_cells} {}", 4 * n_cells)?;
    for d in &space.scalar_dofs {
        // local edge e joins vertices e and e+1; its midpoint is d[3 + e]
        let [v0, v1, v2, m01, m12, m20] = *d;
        for [a, b, c] in [[v0, m01, m20], [m01, v1, m12], [m20, m12, v2], [m01, m12, m20]] {
            writeln!(out, "3 {a} {b} {c}")?;
        }
    }
    writeln!(out, "CELL_TYPES {n_cells}")?;
    for _ in 0..n_cells {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {ns}")?;
    writeln!(out, "VECTORS velocity double")?;
    for s in 0..ns {
        writeln!(out, "{:.17e} {:.17e} 0", u[s], u[ns + s])?;
    }
    writeln!(out, "SCALARS pressure double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for s in 0..ns {
        let value = if s < nv {
            p[s]
        } else {
            let [a, b] = mesh.edges[s - nv];
            0.5 * (p[a] + p[b])
        };
        writeln!(out, "{value:.17e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_vtk_file(path: &Path, header: &ArtifactHeader, space: &TaylorHoodSpace, u: &[f64], p: &[f64]) -> Result<()> {
    write_vtk(BufWriter::new(File::create(path)?), header, space, u, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Some artifacts may be missing or partial.
    Failed,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub header: ArtifactHeader,
    pub git_describe: String,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub wall_clock: Duration,
    pub threads: usize,
    pub status: RunStatus,
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!("# {}\n", self.header.line());
        s += &format!("command = {}\n", self.command);
        s += &format!("seed = {}\n", self.header.seed);
        s += &format!("config_hash = {}\n", self.header.config_hash);
        s += &format!("git_describe = {}\n", self.git_describe);
        s += &format!("started = {}\n", self.started.to_rfc3339());
        s += &format!("finished = {}\n", self.finished.to_rfc3339());
        s += &format!("wall_clock_seconds = {:.3}\n", self.wall_clock.as_secs_f64());
        s += &format!("threads = {}\n", self.threads);
        let status = match self.status {
            RunStatus::Completed => "completed",
            RunStatus::Failed => "failed (outputs may be partial)",
        };
        s += &format!("status = {status}\n");
        if let Some(e) = &self.error {
            s += &format!("error = {e}\n");
        }
        for a in &self.artifacts {
            s += &format!("artifact = {}\n", a.display());
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::DirichletSpec;
    use crate::mesh::{Mesh, Rectangle};
    use std::sync::Arc;

    fn header() -> ArtifactHeader {
        ArtifactHeader {
            seed: 17,
            config_hash: "00ff00ff00ff00ff".into(),
        }
    }

    #[test]
    fn csv_round_trips_values_exactly() {
        let rows = vec![
            CsvRow {
                study: "temporal".into(),
                k: Some(0.125),
                h: Some(1.0 / 16.0),
                n_p: Some(200),
                statistic: "AU".into(),
                value: 0.1 + 0.2,
                ci: Some((0.25, 1.0 / 3.0)),
                h_diameter: Some(2f64.sqrt() / 16.0),
            },
            CsvRow::scalar("temporal", "slope_AU", 0.4999),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &header(), &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# stoch-stokes seed=17 config_hash=00ff00ff00ff00ff\n"));
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0][5].parse::<f64>().unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(recs[0][7].parse::<f64>().unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(&recs[0][8], "17");
        assert_eq!(&recs[1][1], "");
    }

    #[test]
    fn vtk_counts_are_consistent() {
        let mesh = Arc::new(Mesh::structured(Rectangle::unit_square(), 2).unwrap());
        let space = TaylorHoodSpace::new(mesh, DirichletSpec::lid([1.0, 0.0]));
        let mut u = vec![0.0; space.velocity_dim()];
        space.apply_dirichlet(&mut u);
        let p: Vec<f64> = space.mesh.vertices.iter().map(|v| v[0] + 2.0 * v[1]).collect();
        let mut buf = Vec::new();
        write_vtk(&mut buf, &header(), &space, &u, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert!(lines[1].contains("seed=17"));
        assert!(text.contains("POINTS 25 double"));
        assert!(text.contains("CELLS 32 128"));
        // pressure at midpoints is the linear function itself
        let start = lines.iter().position(|l| l.starts_with("LOOKUP_TABLE")).unwrap() + 1;
        for (s, q) in space.scalar_points.iter().enumerate() {
            let v: f64 = lines[start + s].parse().unwrap();
            assert!((v - (q[0] + 2.0 * q[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn manifest_records_seed_and_status() {
        let now = Utc::now();
        let m = Manifest {
            command: "temporal".into(),
            header: header(),
            git_describe: "abc123".into(),
            started: now,
            finished: now,
            wall_clock: Duration::from_millis(1500),
            threads: 2,
            status: RunStatus::Failed,
            error: Some("boom".into()),
            artifacts: vec![PathBuf::from("a.csv")],
        };
        let s = m.render();
        assert!(s.starts_with("# stoch-stokes seed=17"));
        assert!(s.contains("seed = 17\n"));
        assert!(s.contains("wall_clock_seconds = 1.500"));
        assert!(s.contains("status = failed"));
        assert!(s.contains("artifact = a.csv"));
    }
}
