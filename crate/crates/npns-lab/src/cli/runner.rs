//! Experiment drivers: dispatch a validated configuration to the right
//! computation and write its outputs — a manifest naming everything, CSV
//! tables with fixed schemas, and SVG plots. Outputs carry no timestamps or
//! other ambient state, so repeated runs of one configuration are
//! byte-identical.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cli::config::{resolve, ConfigError, ExperimentConfig, Kind, Resolved};
use crate::cli::svg::{emit_svg, AxesSpec, Series, SvgError};
use crate::diagnostics::{decay_fit, interior_sup, DiagError, DiagnosticsRecord};
use crate::grid::{BoundaryValues, Grid};
use crate::npns::{simulate, SimSetup};
use crate::pb::{epsilon_sweep, pb_solve, GridPolicy};

/// Nonlinear tolerance for the equilibrium solves driven from configs. Fixed
/// rather than configurable: one value keeps every table reproducible, and
/// it sits above the energy-resolution floor of the damped descent on the
/// grids the experiments use.
pub const PB_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("diagnostics failed: {0}")]
    Diag(#[from] DiagError),
    #[error("{}: line {line}: {reason}", path.display())]
    Csv { path: PathBuf, line: usize, reason: String },
}

/// Whether the computation behind a run delivered what the config asked for.
/// Plumbing failures (bad config, unwritable output) are `CliError`s instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub status: RunStatus,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    kind: &'static str,
    config: &'a ExperimentConfig,
    grid_hash: String,
    outputs: &'a [String],
    status: String,
}

fn grid_hash(grid: &Grid) -> String {
    let mut desc = format!("dim={};", grid.dim);
    for a in 0..grid.dim {
        desc.push_str(&format!("extent{a}={:.17e};cells{a}={};", grid.extents[a], grid.cells[a]));
    }
    let mut hasher = Sha256::new();
    hasher.update(desc.as_bytes());
    format!("sha256:{:x}", hasher.finalize())
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, content.as_bytes()).map_err(|source| CliError::Io { path, source })
}

fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    grid: &Grid,
    outputs: &[String],
    status: &str,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.experiment.kind.name(),
        config: cfg,
        grid_hash: grid_hash(grid),
        outputs,
        status: status.to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir, "manifest.json", &format!("{json}\n"))
}

/// Render diagnostics records with the fixed simulation schema.
pub fn records_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = DiagnosticsRecord::COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let cells: Vec<String> = r.values().iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Run a validated configuration: write the manifest (first), the tables and
/// plots, then the manifest again with the outcome. Solver-level failures
/// are reported in the returned status and the manifest, not as errors, so
/// partial outputs stay on disk for inspection.
pub fn run(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<RunOutcome, CliError> {
    let resolved = resolve(cfg)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|source| CliError::Io { path: out_dir.to_path_buf(), source })?;
    write_manifest(out_dir, cfg, &resolved.grid, &[], "running")?;

    let (files, status) = match resolved.kind {
        Kind::PbSolve => drive_pb_solve(&resolved, out_dir)?,
        Kind::Sweep => drive_sweep(&resolved, out_dir, workers.max(1))?,
        Kind::Simulate => drive_simulate(&resolved, out_dir)?,
        Kind::DecayStudy => drive_decay_study(&resolved, out_dir)?,
    };

    let status_text = match &status {
        RunStatus::Ok => "ok".to_string(),
        RunStatus::Failed(reason) => format!("failed: {reason}"),
    };
    write_manifest(out_dir, cfg, &resolved.grid, &files, &status_text)?;
    Ok(RunOutcome { out_dir: out_dir.to_path_buf(), files, status })
}

fn drive_pb_solve(r: &Resolved, dir: &Path) -> Result<(Vec<String>, RunStatus), CliError> {
    let variant = r.variant.as_ref().expect("resolution supplies the equilibrium problem");
    let w = r.w.boundary_values(&r.grid);
    match pb_solve(&r.grid, variant, r.params.epsilon, &w, PB_TOL) {
        Ok(sol) => {
            let sup = interior_sup(&sol.rho, r.margin)?;
            let (ci, cj) = r.grid.center_cell();
            let mut csv = String::from("eps,interior_sup_rho,energy,phi_center,iters,converged\n");
            csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
                r.params.epsilon,
                sup,
                sol.energy,
                sol.phi.at(ci, cj),
                sol.iterations,
                sol.converged
            ));
            write_file(dir, "pb_solve.csv", &csv)?;
            let status = if sol.converged {
                RunStatus::Ok
            } else {
                RunStatus::Failed(format!(
                    "equilibrium solve did not converge (residual {:e} after {} iterations)",
                    sol.residual_linf, sol.iterations
                ))
            };
            Ok((vec!["pb_solve.csv".into()], status))
        }
        Err(e) => Ok((Vec::new(), RunStatus::Failed(format!("equilibrium solve failed: {e}")))),
    }
}

fn drive_sweep(
    r: &Resolved,
    dir: &Path,
    workers: usize,
) -> Result<(Vec<String>, RunStatus), CliError> {
    let variant = r.variant.as_ref().expect("resolution supplies the equilibrium problem");
    let wall = r.w.clone();
    let w_fn = move |g: &Grid| -> BoundaryValues { wall.boundary_values(g) };
    let report = match epsilon_sweep(
        &r.grid,
        variant,
        &r.eps_list,
        r.margin,
        GridPolicy::RefineToResolve,
        &w_fn,
        workers,
        PB_TOL,
    ) {
        Ok(report) => report,
        Err(e) => return Ok((Vec::new(), RunStatus::Failed(format!("sweep failed: {e}")))),
    };
    write_file(dir, "sweep.csv", &report.to_csv())?;
    let mut files = vec!["sweep.csv".to_string()];
    let unconverged = report.entries.iter().filter(|e| !e.converged).count();

    let series = [Series {
        label: "interior sup |rho|".into(),
        points: report.entries.iter().map(|e| (e.eps, e.interior_sup_rho)).collect(),
    }];
    let axes = AxesSpec {
        title: "Interior charge versus permittivity".into(),
        x_label: "epsilon".into(),
        y_label: "interior sup |rho|".into(),
        log_x: true,
        log_y: true,
    };
    match emit_svg(&series, &axes) {
        Ok(svg) => {
            write_file(dir, "sweep.svg", &svg)?;
            files.push("sweep.svg".to_string());
        }
        // Placeholder rows from failed entries can leave nothing to plot;
        // the failure is already reported through the status.
        Err(_) if unconverged > 0 => {}
        Err(e) => return Err(e.into()),
    }

    let status = if unconverged == 0 {
        RunStatus::Ok
    } else {
        RunStatus::Failed(format!(
            "{unconverged} of {} sweep entries did not converge",
            report.entries.len()
        ))
    };
    Ok((files, status))
}

fn sim_setup(r: &Resolved) -> SimSetup {
    SimSetup {
        grid: r.grid,
        params: r.params,
        bc: r.bc.clone(),
        fluid: r.fluid,
        time: *r.time.as_ref().expect("dynamic kinds carry a time grid"),
        margin: r.margin,
    }
}

fn drive_simulate(r: &Resolved, dir: &Path) -> Result<(Vec<String>, RunStatus), CliError> {
    let init = r.init.as_ref().expect("dynamic kinds carry initial fields");
    let setup = sim_setup(r);
    match simulate(&setup, init.c1.clone(), init.c2.clone(), init.u.clone()) {
        Ok(traj) => {
            write_file(dir, "simulate.csv", &records_csv(&traj.records))?;
            let status = if traj.completed {
                RunStatus::Ok
            } else {
                RunStatus::Failed(format!(
                    "run stopped at t={}: {}",
                    traj.final_state.t,
                    traj.failure.unwrap_or_else(|| "unknown step failure".into())
                ))
            };
            Ok((vec!["simulate.csv".into()], status))
        }
        Err(e) => Ok((Vec::new(), RunStatus::Failed(format!("simulation failed: {e}")))),
    }
}

fn drive_decay_study(r: &Resolved, dir: &Path) -> Result<(Vec<String>, RunStatus), CliError> {
    let init = r.init.as_ref().expect("dynamic kinds carry initial fields");
    let setup = sim_setup(r);
    let traj = match simulate(&setup, init.c1.clone(), init.c2.clone(), init.u.clone()) {
        Ok(t) => t,
        Err(e) => {
            return Ok((Vec::new(), RunStatus::Failed(format!("simulation failed: {e}"))))
        }
    };
    write_file(dir, "trajectory.csv", &records_csv(&traj.records))?;
    let mut files = vec!["trajectory.csv".to_string()];
    if !traj.completed {
        let reason = format!(
            "run stopped at t={}: {}",
            traj.final_state.t,
            traj.failure.unwrap_or_else(|| "unknown step failure".into())
        );
        return Ok((files, RunStatus::Failed(reason)));
    }

    let series: Vec<(f64, f64)> = traj.records.iter().map(|rec| (rec.t, rec.rho_l2)).collect();
    let fit = match decay_fit(&series, r.fit_window) {
        Ok(fit) => fit,
        Err(e) => {
            return Ok((files, RunStatus::Failed(format!("decay fit failed: {e}"))))
        }
    };
    let mut fit_csv = String::from("lambda,c,window_t0,window_t1,fit_residual,n_points\n");
    fit_csv.push_str(&format!(
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
        fit.lambda, fit.c, fit.window.0, fit.window.1, fit.residual, fit.n_points
    ));
    write_file(dir, "fit.csv", &fit_csv)?;
    files.push("fit.csv".to_string());

    let fitted: Vec<(f64, f64)> =
        series.iter().map(|&(t, _)| (t, fit.c * (-fit.lambda * t).exp())).collect();
    let svg = emit_svg(
        &[
            Series { label: "measured charge norm".into(), points: series },
            Series { label: "fitted exponential".into(), points: fitted },
        ],
        &AxesSpec {
            title: "Charge decay".into(),
            x_label: "t".into(),
            y_label: "charge L2 norm".into(),
            log_x: false,
            log_y: true,
        },
    )?;
    write_file(dir, "decay.svg", &svg)?;
    files.push("decay.svg".to_string());
    Ok((files, RunStatus::Ok))
}

// ---------------------------------------------------------------------------
// CSV reading (plot subcommand)
// ---------------------------------------------------------------------------

/// A CSV table read back for plotting. Cells that are not numbers (the
/// boolean convergence column, say) become NaN and are skipped by the plot.
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn parse_csv(path: &Path, text: &str) -> Result<CsvTable, CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Csv {
        path: path.to_path_buf(),
        line: 1,
        reason: "empty file".into(),
    })?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<f64> =
            line.split(',').map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN)).collect();
        if cells.len() != columns.len() {
            return Err(CliError::Csv {
                path: path.to_path_buf(),
                line: i + 2,
                reason: format!("expected {} cells, got {}", columns.len(), cells.len()),
            });
        }
        rows.push(cells);
    }
    Ok(CsvTable { columns, rows })
}

/// Plot chosen columns of a CSV table; the figure lands in `out_dir` named
/// after the table.
pub fn plot_csv(
    csv_path: &Path,
    x_col: Option<&str>,
    y_cols: &[String],
    log_x: bool,
    log_y: bool,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|source| CliError::Io { path: csv_path.to_path_buf(), source })?;
    let table = parse_csv(csv_path, &text)?;
    let missing = |name: &str| CliError::Csv {
        path: csv_path.to_path_buf(),
        line: 1,
        reason: format!("no column named `{name}` (have: {})", table.columns.join(", ")),
    };
    let x_name = x_col.unwrap_or_else(|| table.columns[0].as_str());
    let xs = table.column(x_name).ok_or_else(|| missing(x_name))?;
    let mut series = Vec::new();
    for name in y_cols {
        let ys = table.column(name).ok_or_else(|| missing(name))?;
        series.push(Series {
            label: name.clone(),
            points: xs.iter().cloned().zip(ys).collect(),
        });
    }
    let svg = emit_svg(
        &series,
        &AxesSpec {
            title: csv_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "table".into()),
            x_label: x_name.to_string(),
            y_label: y_cols.join(", "),
            log_x,
            log_y,
        },
    )?;
    std::fs::create_dir_all(out_dir)
        .map_err(|source| CliError::Io { path: out_dir.to_path_buf(), source })?;
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let out = out_dir.join(format!("{}.svg", stem.unwrap_or_else(|| "plot".into())));
    std::fs::write(&out, svg.as_bytes())
        .map_err(|source| CliError::Io { path: out.clone(), source })?;
    Ok(out)
}
